#include "tlm/frames.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>

namespace tlm {

Frame flip_horizontal(const Frame& f) {
  return {f.r.rowwise().reverse(), f.g.rowwise().reverse(), f.b.rowwise().reverse()};
}

Frame flip_vertical(const Frame& f) {
  return {f.r.colwise().reverse(), f.g.colwise().reverse(), f.b.colwise().reverse()};
}

SalienceProfile salience(const TactileVideo& video, double fraction) {
  const auto n = std::ptrdiff_t(video.frames.size());
  require(n >= 2, "salience: insufficient frames in video '" + video.video_id + "'");
  require(fraction > 0.0 && fraction <= 1.0, "salience: fraction must be in (0, 1]");

  SalienceProfile profile;
  profile.video_id = video.video_id;
  profile.scores.assign(std::size_t(n), 0.0);
  for (std::ptrdiff_t i = 1; i < n; ++i)
    profile.scores[std::size_t(i)] =
        frame_abs_diff(video.frames[std::size_t(i)], video.frames[std::size_t(i - 1)]);

  const auto take = std::ptrdiff_t(std::ceil(fraction * double(n - 1)));
  std::vector<int> order(std::size_t(n - 1));
  for (std::ptrdiff_t i = 0; i < n - 1; ++i) order[std::size_t(i)] = int(i + 1);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double sa = profile.scores[std::size_t(a)], sb = profile.scores[std::size_t(b)];
    return sa != sb ? sa > sb : a < b;
  });
  profile.salient_indices.assign(order.begin(), order.begin() + take);
  std::sort(profile.salient_indices.begin(), profile.salient_indices.end());
  return profile;
}

std::vector<int> sample_train_indices(const SalienceProfile& profile, int k, Rng& rng) {
  const auto n = std::ptrdiff_t(profile.salient_indices.size());
  require(k >= 1, "sample_train: k must be positive");
  if (n < k)
    fail("sample_train: only " + std::to_string(n) + " salient frames for k=" + std::to_string(k) +
         "; lower k or the salience fraction");
  const std::vector<int> picks = rng.sample_without_replacement(int(n), k);
  std::vector<int> out;
  out.reserve(std::size_t(k));
  for (int p : picks) out.push_back(profile.salient_indices[std::size_t(p)]);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> sample_eval_indices(const SalienceProfile& profile, int video_length, int k,
                                     EvalSpan span) {
  require(k >= 1, "sample_eval: k must be positive");
  require(!profile.salient_indices.empty(), "sample_eval: no salient indices");
  if (span == EvalSpan::salient) {
    // Uniform positions over the salient subset itself.
    const auto n = std::ptrdiff_t(profile.salient_indices.size());
    if (n < k)
      fail("sample_eval: only " + std::to_string(n) + " salient frames for k=" +
           std::to_string(k));
    std::vector<int> out;
    out.reserve(std::size_t(k));
    for (int j = 0; j < k; ++j) {
      const double pos = k == 1 ? 0.0 : double(j) * double(n - 1) / double(k - 1);
      out.push_back(profile.salient_indices[std::size_t(std::floor(pos + 0.5))]);
    }
    return out;
  }
  const int f = profile.salient_indices.front();
  require(video_length > f, "sample_eval: video_length does not reach the first salient frame");
  const int L = video_length - 1;
  if (L - f < k - 1) fail("sample_eval: video too short after first salient frame");
  std::vector<int> out;
  out.reserve(std::size_t(k));
  for (int j = 0; j < k; ++j) {
    const double pos = k == 1 ? double(f) : f + double(j) * double(L - f) / double(k - 1);
    out.push_back(int(std::floor(pos + 0.5)));
  }
  return out;
}

namespace {

FrameSequence gather(const TactileVideo& video, std::vector<int> indices) {
  FrameSequence seq;
  seq.video_id = video.video_id;
  seq.frames.reserve(indices.size());
  for (int i : indices) {
    require(i >= 0 && std::size_t(i) < video.frames.size(), "frame index out of range");
    seq.frames.push_back(video.frames[std::size_t(i)]);
  }
  seq.indices = std::move(indices);
  return seq;
}

}  // namespace

FrameSequence sample_train(const TactileVideo& video, const SalienceProfile& profile, int k,
                           Rng& rng) {
  return gather(video, sample_train_indices(profile, k, rng));
}

FrameSequence sample_eval(const TactileVideo& video, const SalienceProfile& profile, int k,
                          EvalSpan span) {
  return gather(video, sample_eval_indices(profile, int(video.frames.size()), k, span));
}

FrameSequence augment(const FrameSequence& seq, Rng& rng) {
  require(!seq.frames.empty(), "augment: empty sequence");
  const bool flip_h = rng.bernoulli(0.5);
  const bool flip_v = rng.bernoulli(0.5);
  FrameSequence out;
  out.video_id = seq.video_id;
  out.indices = seq.indices;
  out.frames.reserve(seq.frames.size());
  for (const Frame& f : seq.frames) {
    Frame g = f;
    if (flip_h) g = flip_horizontal(g);
    if (flip_v) g = flip_vertical(g);
    out.frames.push_back(std::move(g));
  }
  return out;
}

void write_salience_json(const std::filesystem::path& path, const SalienceProfile& profile) {
  nlohmann::json j;
  j["video_id"] = profile.video_id;
  j["scores"] = profile.scores;
  j["salient_indices"] = profile.salient_indices;
  write_text_file(path, j.dump() + "\n");
}

SalienceProfile read_salience_json(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail(path.string() + ": invalid JSON: " + e.what());
  }
  SalienceProfile out;
  try {
    out.video_id = j.at("video_id").get<std::string>();
    out.scores = j.at("scores").get<std::vector<double>>();
    out.salient_indices = j.at("salient_indices").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    fail(path.string() + ": bad salience cache: " + e.what());
  }
  return out;
}

}  // namespace tlm
