#include "tlm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "tlm/png_io.hpp"

namespace tlm {

namespace {

// Per-category render levels, index = category level 0/1/2.
constexpr std::array<double, 3> kPressAmplitude = {1.0, 0.45, 0.12};   // soft deforms most
constexpr std::array<double, 3> kNoiseAmplitude = {0.01, 0.12, 0.30};  // rough is noisiest

double shrink_toward_mid(double value, double mid, double separation) {
  return mid + (value - mid) * separation;
}

double jittered(double value, double noise_level, Rng& rng) {
  const double factor = std::clamp(1.0 + 0.08 * noise_level * rng.normal(), 0.75, 1.25);
  return value * factor;
}

struct Blob {
  double cx, cy, radius;
};

struct VideoRender {
  double amplitude = 0;          // press-envelope peak, red channel
  double cx = 0, cy = 0, sigma = 0;  // dome geometry
  Eigen::MatrixXf noise;         // static green-channel pattern, amplitude applied
  std::vector<Blob> blobs;       // blue channel
};

VideoRender plan_video(const PropertyLabels& labels, const SynthConfig& cfg, Rng& rng) {
  const int S = cfg.image_size;
  VideoRender plan;

  const double base_a = shrink_toward_mid(kPressAmplitude[std::size_t(int(labels.hardness))],
                                          kPressAmplitude[1], cfg.class_separation);
  plan.amplitude = jittered(base_a, cfg.noise_level, rng);
  plan.cx = S / 2.0 + rng.uniform(-S / 8.0, S / 8.0);
  plan.cy = S / 2.0 + rng.uniform(-S / 8.0, S / 8.0);
  plan.sigma = S / 4.0 * std::clamp(1.0 + 0.05 * cfg.noise_level * rng.normal(), 0.85, 1.15);

  const double base_n = shrink_toward_mid(kNoiseAmplitude[std::size_t(int(labels.roughness))],
                                          kNoiseAmplitude[1], cfg.class_separation);
  const double amp_n = jittered(base_n, cfg.noise_level, rng);
  plan.noise.resize(S, S);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) plan.noise(y, x) = float(amp_n * rng.uniform(-1.0, 1.0));

  switch (labels.bumpiness) {
    case Bumpiness::no_bumps: break;
    case Bumpiness::small_bumps: {
      // One blob per quadrant; spacing guarantees the blobs never merge, so
      // each stays under the 1/4-frame radius guideline.
      for (int qy = 0; qy < 2; ++qy)
        for (int qx = 0; qx < 2; ++qx) {
          Blob b;
          b.radius = S * rng.uniform(0.10, 0.16);
          b.cx = (2 * qx + 1) * S / 4.0 + rng.uniform(-S / 16.0, S / 16.0);
          b.cy = (2 * qy + 1) * S / 4.0 + rng.uniform(-S / 16.0, S / 16.0);
          plan.blobs.push_back(b);
        }
      break;
    }
    case Bumpiness::big_bumps: {
      Blob b;
      b.radius = S * rng.uniform(0.30, 0.38);
      const double slack = std::max(0.0, S / 2.0 - b.radius - 1.0);
      b.cx = S / 2.0 + rng.uniform(-slack, slack);
      b.cy = S / 2.0 + rng.uniform(-slack, slack);
      plan.blobs.push_back(b);
      break;
    }
  }
  return plan;
}

Frame render_frame(const VideoRender& plan, int t, int total_frames, int S) {
  Frame f = Frame::zero(S, S);
  const double a =
      plan.amplitude * std::sin(M_PI * double(t) / double(std::max(1, total_frames - 1)));
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const double dx = x - plan.cx, dy = y - plan.cy;
      const double dome = std::exp(-(dx * dx + dy * dy) / (2.0 * plan.sigma * plan.sigma));
      f.r(y, x) = float(0.05 + a * dome);
      f.g(y, x) = 0.5f + plan.noise(y, x);
      double b = 0.1;
      for (const Blob& blob : plan.blobs) {
        const double bx = x - blob.cx, by = y - blob.cy;
        if (bx * bx + by * by <= blob.radius * blob.radius) b = 0.9;
      }
      f.b(y, x) = float(b);
    }
  return f;
}

int flip_adjacent(int level, Rng& rng) {
  if (level == 0) return 1;
  if (level == 2) return 1;
  return rng.bernoulli(0.5) ? 0 : 2;
}

std::array<int, 3> rate_property(int true_level, double flip_prob, Rng& rng) {
  // Condition on the aggregate matching the assigned label so the label
  // quotas stay exact; raters still disagree on individual triples.
  for (int attempt = 0; attempt < 10000; ++attempt) {
    std::array<int, 3> out{};
    for (int a = 0; a < 3; ++a)
      out[std::size_t(a)] =
          rng.bernoulli(flip_prob) ? flip_adjacent(true_level, rng) : true_level;
    if (aggregate_ratings({out.begin(), out.end()}, "synth", "synth") == true_level) return out;
  }
  fail("synth: annotator noise cannot preserve the assigned label");
}

std::vector<int> allocate_levels(int n, const std::array<double, 3>& proportions, Rng& rng) {
  const std::array<int, 3> counts = quota_allocate(n, proportions);
  std::vector<int> levels;
  levels.reserve(std::size_t(n));
  for (int c = 0; c < 3; ++c) levels.insert(levels.end(), std::size_t(counts[std::size_t(c)]), c);
  rng.shuffle(levels);
  return levels;
}

}  // namespace

std::array<int, 3> quota_allocate(int n, const std::array<double, 3>& proportions) {
  require(n >= 0, "quota_allocate: negative n");
  const double sum = proportions[0] + proportions[1] + proportions[2];
  require(std::abs(sum - 1.0) <= 1e-9, "quota_allocate: proportions must sum to 1");
  std::array<int, 3> counts{};
  std::array<double, 3> frac{};
  int assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = n * proportions[i];
    counts[i] = int(std::floor(exact + 1e-9));
    frac[i] = exact - counts[i];
    assigned += counts[i];
  }
  std::array<std::size_t, 3> order = {0, 1, 2};
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return frac[a] != frac[b] ? frac[a] > frac[b] : a < b;
  });
  for (int r = 0; r < n - assigned; ++r) counts[order[std::size_t(r % 3)]] += 1;
  return counts;
}

CorpusIndex generate_corpus(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  require(cfg.n_objects >= 1, "synth: n_objects must be positive");
  require(cfg.frames_per_video >= 2, "synth: frames_per_video must be at least 2");
  require(cfg.videos_per_object >= 1, "synth: videos_per_object must be positive");
  require(cfg.image_size >= 12,
          "synth: image size too small, bump blob radius would exceed the frame");
  require(cfg.annotator_flip_prob >= 0.0 && cfg.annotator_flip_prob <= 0.5,
          "synth: annotator_flip_prob must be in [0, 0.5]");
  require(cfg.class_separation > 0.0 && cfg.class_separation <= 1.0,
          "synth: class_separation must be in (0,1]");
  require(cfg.noise_level >= 0.0, "synth: noise_level must be non-negative");
  if (std::filesystem::exists(out_dir) && !std::filesystem::is_empty(out_dir))
    fail("synth: output directory not empty: " + out_dir.string());
  std::filesystem::create_directories(out_dir);

  // Published category marginals (object counts out of 74).
  const std::array<double, 3> uniform = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  const std::array<double, 3> paper_h = {26.0 / 74, 14.0 / 74, 34.0 / 74};
  const std::array<double, 3> paper_r = {36.0 / 74, 16.0 / 74, 22.0 / 74};
  const std::array<double, 3> paper_b = {26.0 / 74, 34.0 / 74, 14.0 / 74};

  Rng root(cfg.seed);
  Rng rng_h = root.child(1), rng_r = root.child(2), rng_b = root.child(3);
  const std::vector<int> levels_h =
      allocate_levels(cfg.n_objects, cfg.paper_marginals ? paper_h : uniform, rng_h);
  const std::vector<int> levels_r =
      allocate_levels(cfg.n_objects, cfg.paper_marginals ? paper_r : uniform, rng_r);
  const std::vector<int> levels_b =
      allocate_levels(cfg.n_objects, cfg.paper_marginals ? paper_b : uniform, rng_b);

  std::ostringstream objects_csv, annotations_csv;
  objects_csv << "object_id,display_name,sample_name,material,part_of\n";
  annotations_csv << "sample_name,h1,h2,h3,r1,r2,r3,b1,b2,b3\n";

  const std::array<Material, 9> materials = {
      Material::fabric, Material::food,   Material::leather, Material::metal,  Material::paper,
      Material::plastic, Material::rubber, Material::silicone, Material::wood};
  std::vector<std::string> sample_names;

  for (int i = 0; i < cfg.n_objects; ++i) {
    char suffix[16];
    std::snprintf(suffix, sizeof suffix, "%03d", i);
    const std::string name = std::string("synth_") + suffix;
    sample_names.push_back(name);
    objects_csv << name << ",a synthetic block " << suffix << "," << name << ","
                << to_string(materials[std::size_t(i) % materials.size()]) << ",\n";

    const PropertyLabels truth = labels_from_levels(
        levels_h[std::size_t(i)], levels_r[std::size_t(i)], levels_b[std::size_t(i)]);
    Rng obj_rng = root.child(1000 + std::uint64_t(i));

    Rng rate_rng = obj_rng.child(1);
    const auto h = rate_property(int(truth.hardness), cfg.annotator_flip_prob, rate_rng);
    const auto r = rate_property(int(truth.roughness), cfg.annotator_flip_prob, rate_rng);
    const auto b = rate_property(int(truth.bumpiness), cfg.annotator_flip_prob, rate_rng);
    annotations_csv << name;
    for (int v : h) annotations_csv << ',' << v;
    for (int v : r) annotations_csv << ',' << v;
    for (int v : b) annotations_csv << ',' << v;
    annotations_csv << '\n';

    for (int v = 0; v < cfg.videos_per_object; ++v) {
      Rng vid_rng = obj_rng.child(100 + std::uint64_t(v));
      const VideoRender plan = plan_video(truth, cfg, vid_rng);
      char vid[16];
      std::snprintf(vid, sizeof vid, "vid_%02d", v);
      const std::filesystem::path dir = out_dir / "videos" / name / vid;
      for (int t = 0; t < cfg.frames_per_video; ++t)
        write_png_rgb(dir / frame_file_name(t),
                      render_frame(plan, t, cfg.frames_per_video, cfg.image_size));
    }
  }

  write_text_file(out_dir / "objects.csv", objects_csv.str());
  write_text_file(out_dir / "annotations.csv", annotations_csv.str());
  write_splits_json(out_dir / "splits.json", make_splits(sample_names, cfg.split_ratios, cfg.seed));

  CorpusIndex corpus = load_corpus(out_dir);
  for (VideoRef& ref : corpus.videos) ref.source = VideoSource::synthetic;
  validate_corpus(corpus);
  return corpus;
}

namespace {

// Area of the largest 4-connected component of mask.
int largest_component(const std::vector<std::uint8_t>& mask, int rows, int cols) {
  std::vector<std::uint8_t> seen(mask.size(), 0);
  std::vector<int> stack;
  int best = 0;
  for (int start = 0; start < rows * cols; ++start) {
    if (!mask[std::size_t(start)] || seen[std::size_t(start)]) continue;
    int area = 0;
    stack.assign(1, start);
    seen[std::size_t(start)] = 1;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      area += 1;
      const int y = p / cols, x = p % cols;
      const std::array<int, 4> ny = {y - 1, y + 1, y, y};
      const std::array<int, 4> nx = {x, x, x - 1, x + 1};
      for (int d = 0; d < 4; ++d) {
        const int yy = ny[std::size_t(d)], xx = nx[std::size_t(d)];
        if (yy < 0 || yy >= rows || xx < 0 || xx >= cols) continue;
        const int q = yy * cols + xx;
        if (mask[std::size_t(q)] && !seen[std::size_t(q)]) {
          seen[std::size_t(q)] = 1;
          stack.push_back(q);
        }
      }
    }
    best = std::max(best, area);
  }
  return best;
}

}  // namespace

PropertyLabels oracle_classify(const TactileVideo& video) {
  require(video.frames.size() >= 2, "oracle_classify: need at least 2 frames");
  const Eigen::Index rows = video.frames[0].rows(), cols = video.frames[0].cols();

  // Red: total temporal variation per pixel. The press envelope rises and
  // falls once, so this telescopes to twice the peak deformation.
  double stat_h = 0;
  for (std::size_t t = 1; t < video.frames.size(); ++t)
    stat_h += double((video.frames[t].r - video.frames[t - 1].r).cwiseAbs().mean());
  const int h = stat_h > 0.5 ? 0 : stat_h > 0.18 ? 1 : 2;

  // Green: mean adjacent-pixel difference of the static noise pattern.
  const Eigen::MatrixXf& g = video.frames[0].g;
  const double stat_r =
      double((g.leftCols(cols - 1) - g.rightCols(cols - 1)).cwiseAbs().mean());
  const int r = stat_r > 0.125 ? 2 : stat_r > 0.03 ? 1 : 0;

  // Blue: area of the largest bright blob against the quarter-frame disk.
  const Eigen::MatrixXf& bl = video.frames[0].b;
  std::vector<std::uint8_t> mask(std::size_t(rows * cols), 0);
  for (Eigen::Index y = 0; y < rows; ++y)
    for (Eigen::Index x = 0; x < cols; ++x)
      mask[std::size_t(y * cols + x)] = bl(y, x) > 0.5f ? 1 : 0;
  const int area = largest_component(mask, int(rows), int(cols));
  const double quarter_disk = M_PI * double(rows) * double(cols) / 16.0;
  const int b = area == 0 ? 0 : double(area) <= quarter_disk ? 1 : 2;

  return labels_from_levels(h, r, b);
}

}  // namespace tlm
