#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <map>

#include "tlm/frames.hpp"
#include "tlm/synth.hpp"

using namespace tlm;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "tlm_synth_tests" / name;
  fs::remove_all(dir);
  return dir;
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    out[fs::relative(e.path(), root).string()] = std::move(bytes);
  }
  return out;
}

SynthConfig small_config() {
  SynthConfig cfg;
  cfg.n_objects = 6;
  cfg.frames_per_video = 12;
  cfg.videos_per_object = 2;
  cfg.image_size = 16;
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST_CASE("quota allocation follows largest remainders") {
  CHECK(quota_allocate(10, {1.0 / 3, 1.0 / 3, 1.0 / 3}) == std::array<int, 3>{4, 3, 3});
  CHECK(quota_allocate(9, {1.0 / 3, 1.0 / 3, 1.0 / 3}) == std::array<int, 3>{3, 3, 3});
  CHECK(quota_allocate(74, {26.0 / 74, 14.0 / 74, 34.0 / 74}) == std::array<int, 3>{26, 14, 34});
  CHECK(quota_allocate(0, {0.5, 0.25, 0.25}) == std::array<int, 3>{0, 0, 0});
  // 7 * (0.5, 0.25, 0.25) = (3.5, 1.75, 1.75): remainders 0.5, 0.75, 0.75
  // send the two leftover items to indices 1 and 2.
  CHECK(quota_allocate(7, {0.5, 0.25, 0.25}) == std::array<int, 3>{3, 2, 2});
  CHECK_THROWS_AS(quota_allocate(5, {0.5, 0.2, 0.2}), Error);
}

TEST_CASE("generation is deterministic and satisfies downstream preconditions") {
  const fs::path a = temp_dir("det_a"), b = temp_dir("det_b");
  const SynthConfig cfg = small_config();
  const CorpusIndex ca = generate_corpus(cfg, a);
  const CorpusIndex cb = generate_corpus(cfg, b);

  SUBCASE("bitwise-identical output trees") {
    const auto ta = read_tree(a), tb = read_tree(b);
    REQUIRE(ta.size() == tb.size());
    for (const auto& [rel, bytes] : ta) {
      CAPTURE(rel);
      REQUIRE(tb.count(rel) == 1);
      CHECK(bytes == tb.at(rel));
    }
  }

  SUBCASE("index shape and validity") {
    CHECK(ca.objects.size() == 6);
    CHECK(ca.videos.size() == 12);
    CHECK_NOTHROW(validate_corpus(ca));
    for (const VideoRef& ref : ca.videos) {
      CHECK(ref.frame_count == cfg.frames_per_video);
      CHECK(ref.source == VideoSource::synthetic);
    }
  }

  SUBCASE("videos satisfy the frame-processing preconditions") {
    const TactileVideo video = load_video(ca.videos.front());
    REQUIRE(video.frames.size() >= 2);
    for (const Frame& f : video.frames) {
      CHECK(f.rows() == cfg.image_size);
      CHECK(f.cols() == cfg.image_size);
    }
    CHECK_NOTHROW(salience(video));
  }

  SUBCASE("refuses a non-empty output directory") {
    CHECK_THROWS_WITH_AS(generate_corpus(cfg, a), doctest::Contains("not empty"), Error);
  }

  CHECK(cb.objects.size() == ca.objects.size());
}

TEST_CASE("perfect annotators give perfect reliability") {
  SynthConfig cfg = small_config();
  cfg.annotator_flip_prob = 0.0;
  cfg.videos_per_object = 1;
  cfg.frames_per_video = 4;
  const CorpusIndex corpus = generate_corpus(cfg, temp_dir("icc"));
  for (int prop = 0; prop < 3; ++prop) {
    Eigen::MatrixXd m(corpus.annotations.size(), 3);
    Eigen::Index row = 0;
    for (const auto& [name, t] : corpus.annotations) {
      (void)name;
      const auto& a = prop == 0 ? t.hardness : prop == 1 ? t.roughness : t.bumpiness;
      for (Eigen::Index j = 0; j < 3; ++j) m(row, j) = a[std::size_t(j)];
      ++row;
    }
    CHECK(icc3k(m) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("pixel-statistic oracle recovers the rendered labels") {
  SynthConfig cfg;
  cfg.n_objects = 60;
  cfg.frames_per_video = 24;
  cfg.videos_per_object = 1;
  cfg.image_size = 32;
  cfg.seed = 3;
  cfg.annotator_flip_prob = 0.0;  // labels equal the rendered truth
  const CorpusIndex corpus = generate_corpus(cfg, temp_dir("oracle"));

  int correct = 0, total = 0;
  for (const VideoRef& ref : corpus.videos) {
    const PropertyLabels got = oracle_classify(load_video(ref));
    const PropertyLabels want = corpus.labels.at(ref.sample_name);
    correct += got == want ? 1 : 0;
    total += 1;
  }
  CAPTURE(correct);
  CAPTURE(total);
  CHECK(double(correct) / double(total) >= 0.95);
}

TEST_CASE("paper marginals land within five percentage points") {
  SynthConfig cfg;
  cfg.n_objects = 74;
  cfg.frames_per_video = 2;
  cfg.videos_per_object = 1;
  cfg.image_size = 16;
  cfg.seed = 5;
  cfg.paper_marginals = true;
  const CorpusIndex corpus = generate_corpus(cfg, temp_dir("marginals"));
  const PropertyStats st = property_stats(corpus);

  // Annotator noise is conditioned to preserve labels, so at n=74 the counts
  // equal the published object counts exactly.
  CHECK(st.hardness_counts == std::array<int, 3>{26, 14, 34});
  CHECK(st.roughness_counts == std::array<int, 3>{36, 16, 22});
  CHECK(st.bumpiness_counts == std::array<int, 3>{26, 34, 14});

  const std::array<std::array<double, 3>, 3> targets = {{
      {35.14, 18.92, 45.95},  // soft / moderately hard / hard
      {48.65, 21.62, 29.73},  // smooth / slightly rough / rough
      {35.14, 45.95, 18.92},  // no bumps / small bumps / big bumps
  }};
  const std::array<const std::array<double, 3>*, 3> actual = {&st.hardness_pct, &st.roughness_pct,
                                                              &st.bumpiness_pct};
  for (int p = 0; p < 3; ++p)
    for (int c = 0; c < 3; ++c) {
      CAPTURE(p);
      CAPTURE(c);
      CHECK(std::abs((*actual[std::size_t(p)])[std::size_t(c)] -
                     targets[std::size_t(p)][std::size_t(c)]) <= 5.0);
    }
}

TEST_CASE("infeasible configurations are rejected up front") {
  SynthConfig cfg = small_config();
  cfg.image_size = 8;
  CHECK_THROWS_WITH_AS(generate_corpus(cfg, temp_dir("bad_size")),
                       doctest::Contains("blob radius"), Error);
  SynthConfig cfg2 = small_config();
  cfg2.frames_per_video = 1;
  CHECK_THROWS_AS(generate_corpus(cfg2, temp_dir("bad_frames")), Error);
  SynthConfig cfg3 = small_config();
  cfg3.class_separation = 0.0;
  CHECK_THROWS_AS(generate_corpus(cfg3, temp_dir("bad_sep")), Error);
  SynthConfig cfg4 = small_config();
  cfg4.annotator_flip_prob = 0.9;
  CHECK_THROWS_AS(generate_corpus(cfg4, temp_dir("bad_flip")), Error);
}
