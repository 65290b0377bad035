#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <set>

#include "tlm/corpus.hpp"

using namespace tlm;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "tlm_corpus_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

AnnotationTriple triple(std::array<int, 3> h, std::array<int, 3> r, std::array<int, 3> b) {
  return {"sample", h, r, b};
}

}  // namespace

TEST_CASE("aggregation rounds the rater mean onto categories") {
  CHECK(aggregate_annotations(triple({2, 2, 2}, {0, 0, 0}, {0, 0, 0})).hardness == Hardness::hard);
  CHECK(aggregate_annotations(triple({1, 0, 2}, {0, 0, 0}, {0, 0, 0})).hardness ==
        Hardness::moderately_hard);
  CHECK(aggregate_annotations(triple({0, 0, 1}, {0, 0, 0}, {0, 0, 0})).hardness == Hardness::soft);
  CHECK(aggregate_annotations(triple({0, 0, 0}, {2, 1, 2}, {0, 0, 0})).roughness ==
        Roughness::rough);
  CHECK(aggregate_annotations(triple({0, 0, 0}, {0, 0, 0}, {1, 1, 0})).bumpiness ==
        Bumpiness::small_bumps);

  SUBCASE("permutation invariance over all orderings") {
    std::array<int, 3> h = {0, 1, 2};
    std::sort(h.begin(), h.end());
    const auto base = aggregate_annotations(triple(h, {0, 1, 1}, {2, 2, 0}));
    do {
      std::array<int, 3> r = {0, 1, 1}, b = {2, 2, 0};
      std::sort(r.begin(), r.end());
      std::sort(b.begin(), b.end());
      do {
        CHECK(aggregate_annotations(triple(h, r, b)) == base);
      } while (std::next_permutation(r.begin(), r.end()));
    } while (std::next_permutation(h.begin(), h.end()));
  }

  SUBCASE("bad rating names the sample and property") {
    AnnotationTriple t = triple({0, 5, 0}, {0, 0, 0}, {0, 0, 0});
    t.sample_name = "baseball";
    CHECK_THROWS_WITH_AS(aggregate_annotations(t),
                         doctest::Contains("baseball"), Error);
    CHECK_THROWS_WITH_AS(aggregate_annotations(t), doctest::Contains("hardness"), Error);
  }

  SUBCASE("generalized counts round half away from zero") {
    CHECK(aggregate_ratings({1, 2}, "s", "p") == 2);       // mean 1.5
    CHECK(aggregate_ratings({0, 1}, "s", "p") == 1);       // mean 0.5
    CHECK(aggregate_ratings({0, 0, 1, 1}, "s", "p") == 1); // mean 0.5
    CHECK(aggregate_ratings({0, 0, 0, 1}, "s", "p") == 0); // mean 0.25
  }
}

TEST_CASE("icc3k matches hand-computed two-way ANOVA oracles") {
  // Perfect consistency across raters.
  Eigen::MatrixXd perfect(3, 3);
  perfect << 0, 0, 0, 1, 1, 1, 2, 2, 2;
  CHECK(icc3k(perfect) == doctest::Approx(1.0).epsilon(1e-12));

  // 4x3 with one discordant cell. By hand: SS_rows = 25/4, SS_cols = 1/6,
  // SS_total = 83/12, so MS_rows = 25/12, MS_err = 1/12, ICC = 24/25.
  Eigen::MatrixXd m1(4, 3);
  m1 << 0, 0, 0, 1, 1, 2, 2, 2, 2, 1, 1, 1;
  CHECK(std::abs(icc3k(m1) - 0.96) < 1e-9);

  // 5x3 mixed matrix. By hand: MS_rows = 1.6, MS_err = 0.4, ICC = 0.75.
  Eigen::MatrixXd m2(5, 3);
  m2 << 2, 1, 2, 0, 0, 1, 1, 2, 2, 0, 1, 0, 2, 2, 1;
  CHECK(std::abs(icc3k(m2) - 0.75) < 1e-9);

  SUBCASE("consistency ICC ignores location and positive scale") {
    Rng rng(3);
    Eigen::MatrixXd m(7, 4);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(0.0, 2.0);
    const double base = icc3k(m);
    CHECK(icc3k((m.array() + 17.5).matrix()) == doctest::Approx(base).epsilon(1e-9));
    CHECK(icc3k((m.array() * 3.25).matrix()) == doctest::Approx(base).epsilon(1e-9));
  }

  SUBCASE("degenerate and undersized inputs are rejected") {
    Eigen::MatrixXd flat(2, 3);
    flat << 1, 1, 1, 1, 1, 1;
    CHECK_THROWS_WITH_AS(icc3k(flat), doctest::Contains("degenerate"), Error);
    CHECK_THROWS_AS(icc3k(Eigen::MatrixXd::Zero(1, 3)), Error);
    CHECK_THROWS_AS(icc3k(Eigen::MatrixXd::Zero(3, 1)), Error);
  }
}

TEST_CASE("make_splits allocates floor sizes with the remainder to train") {
  std::vector<std::string> names;
  for (int i = 0; i < 74; ++i) names.push_back("obj_" + std::to_string(i));
  const SplitAssignment s = make_splits(names, {0.8, 0.1, 0.1}, 7);
  CHECK(s.train.size() == 60);
  CHECK(s.val.size() == 7);
  CHECK(s.test.size() == 7);

  SUBCASE("partition property") {
    std::set<std::string> seen;
    for (const auto* part : {&s.train, &s.val, &s.test})
      for (const auto& n : *part) CHECK(seen.insert(n).second);
    CHECK(seen.size() == names.size());
  }

  SUBCASE("exact division") {
    std::vector<std::string> ten(names.begin(), names.begin() + 10);
    const SplitAssignment t = make_splits(ten, {0.8, 0.1, 0.1}, 0);
    CHECK(t.train.size() == 8);
    CHECK(t.val.size() == 1);
    CHECK(t.test.size() == 1);
  }

  SUBCASE("determinism and seed sensitivity") {
    std::vector<std::string> twenty(names.begin(), names.begin() + 20);
    const SplitAssignment a = make_splits(twenty, {0.8, 0.1, 0.1}, 42);
    const SplitAssignment b = make_splits(twenty, {0.8, 0.1, 0.1}, 42);
    CHECK(a.train == b.train);
    CHECK(a.val == b.val);
    CHECK(a.test == b.test);
    bool any_differ = false;
    for (std::uint64_t seed = 43; seed < 48; ++seed) {
      const SplitAssignment c = make_splits(twenty, {0.8, 0.1, 0.1}, seed);
      if (c.train != a.train || c.val != a.val || c.test != a.test) any_differ = true;
    }
    CHECK(any_differ);
  }

  SUBCASE("input order does not matter") {
    std::vector<std::string> shuffled = names;
    Rng rng(9);
    rng.shuffle(shuffled);
    const SplitAssignment t = make_splits(shuffled, {0.8, 0.1, 0.1}, 7);
    CHECK(t.train == s.train);
    CHECK(t.val == s.val);
    CHECK(t.test == s.test);
  }

  CHECK_THROWS_WITH_AS(make_splits({}, {0.8, 0.1, 0.1}, 0), doctest::Contains("empty"), Error);
  CHECK_THROWS_WITH_AS(make_splits(names, {0.5, 0.3, 0.1}, 0), doctest::Contains("sum"), Error);
}

TEST_CASE("property_stats counts categories and combinations") {
  CorpusIndex corpus;
  corpus.labels["a"] = labels_from_levels(0, 0, 0);

  SUBCASE("single object") {
    const PropertyStats st = property_stats(corpus);
    CHECK(st.total == 1);
    CHECK(st.hardness_counts == std::array<int, 3>{1, 0, 0});
    CHECK(st.hardness_pct[0] == doctest::Approx(100.0));
    CHECK(st.combination(0, 0, 0) == 1);
    int sum = 0;
    for (int c : st.combination_counts) sum += c;
    CHECK(sum == 1);
  }

  SUBCASE("constructed corpus with known proportions") {
    corpus.labels.clear();
    // 8 objects: 3 soft, 1 moderately hard, 4 hard; varied roughness/bumps.
    corpus.labels["o1"] = labels_from_levels(0, 0, 0);
    corpus.labels["o2"] = labels_from_levels(0, 1, 1);
    corpus.labels["o3"] = labels_from_levels(0, 2, 2);
    corpus.labels["o4"] = labels_from_levels(1, 0, 1);
    corpus.labels["o5"] = labels_from_levels(2, 0, 0);
    corpus.labels["o6"] = labels_from_levels(2, 0, 0);
    corpus.labels["o7"] = labels_from_levels(2, 1, 2);
    corpus.labels["o8"] = labels_from_levels(2, 2, 1);
    const PropertyStats st = property_stats(corpus);
    CHECK(st.total == 8);
    CHECK(st.hardness_counts == std::array<int, 3>{3, 1, 4});
    CHECK(st.roughness_counts == std::array<int, 3>{4, 2, 2});
    CHECK(st.bumpiness_counts == std::array<int, 3>{3, 3, 2});
    CHECK(st.hardness_pct[0] == doctest::Approx(37.5));
    CHECK(st.hardness_pct[1] == doctest::Approx(12.5));
    CHECK(st.combination(2, 0, 0) == 2);
    CHECK(st.combination(0, 1, 1) == 1);
    CHECK(st.combination(1, 1, 1) == 0);
    for (const auto& pct : {st.hardness_pct, st.roughness_pct, st.bumpiness_pct})
      CHECK(std::abs(pct[0] + pct[1] + pct[2] - 100.0) <= 0.02);
  }

  SUBCASE("rounding to two decimals") {
    corpus.labels.clear();
    corpus.labels["x"] = labels_from_levels(0, 0, 0);
    corpus.labels["y"] = labels_from_levels(1, 0, 0);
    corpus.labels["z"] = labels_from_levels(2, 0, 0);
    const PropertyStats st = property_stats(corpus);
    CHECK(st.hardness_pct[0] == doctest::Approx(33.33).epsilon(1e-12));
  }
}

TEST_CASE("reference corpus loads, validates, and reproduces known statistics") {
  const CorpusIndex corpus = load_corpus("data/paper_corpus");
  validate_corpus(corpus);
  CHECK(corpus.objects.size() == 87);  // 74 annotated samples + 13 containers
  CHECK(corpus.annotations.size() == 74);
  CHECK(corpus.labels.size() == 74);
  CHECK(corpus.splits.train.size() == 60);
  CHECK(corpus.splits.val.size() == 7);
  CHECK(corpus.splits.test.size() == 7);

  SUBCASE("aggregated label spot checks") {
    auto label = [&](const std::string& name) {
      auto it = corpus.labels.find(name);
      REQUIRE(it != corpus.labels.end());
      return it->second;
    };
    CHECK(label("baseball").hardness == Hardness::hard);
    CHECK(label("baseball").roughness == Roughness::rough);
    CHECK(label("baseball").bumpiness == Bumpiness::no_bumps);
    CHECK(label("rubber_bands").hardness == Hardness::moderately_hard);
    CHECK(label("steel_wool").hardness == Hardness::soft);
    CHECK(label("microfiber_cloth").hardness == Hardness::moderately_hard);
    CHECK(label("microfiber_cloth").bumpiness == Bumpiness::small_bumps);
  }

  SUBCASE("parts reference their containers") {
    const ObjectRecord* bristles = corpus.find_object("hairbrush_bristles");
    REQUIRE(bristles != nullptr);
    REQUIRE(bristles->part_of.has_value());
    const ObjectRecord* brush = corpus.find_object_by_id(*bristles->part_of);
    REQUIRE(brush != nullptr);
    CHECK_FALSE(brush->material.has_value());
    CHECK(bristles->material.has_value());
  }

  SUBCASE("per-property reliability matches the independent ANOVA oracle") {
    Eigen::MatrixXd h(74, 3), r(74, 3), b(74, 3);
    Eigen::Index row = 0;
    for (const auto& [name, t] : corpus.annotations) {
      (void)name;
      for (Eigen::Index j = 0; j < 3; ++j) {
        h(row, j) = t.hardness[std::size_t(j)];
        r(row, j) = t.roughness[std::size_t(j)];
        b(row, j) = t.bumpiness[std::size_t(j)];
      }
      ++row;
    }
    CHECK(std::abs(icc3k(h) - 0.8930575035063113) < 1e-9);
    CHECK(std::abs(icc3k(r) - 0.9788734591980027) < 1e-9);
    CHECK(std::abs(icc3k(b) - 0.7733511422254973) < 1e-9);
  }
}

TEST_CASE("loaders report the first offending row") {
  const fs::path dir = temp_dir("bad_rows");

  SUBCASE("unknown material") {
    write_text_file(dir / "objects.csv",
                    "object_id,display_name,sample_name,material,part_of\n"
                    "a,an a,a,fabric,\n"
                    "b,a b,b,glass,\n");
    write_text_file(dir / "annotations.csv", "sample_name,h1,h2,h3,r1,r2,r3,b1,b2,b3\n");
    CHECK_THROWS_WITH_AS(load_corpus(dir), doctest::Contains("row 3"), Error);
  }

  SUBCASE("wrong column count") {
    write_text_file(dir / "objects.csv",
                    "object_id,display_name,sample_name,material,part_of\n"
                    "a,an a,a,fabric\n");
    write_text_file(dir / "annotations.csv", "sample_name,h1,h2,h3,r1,r2,r3,b1,b2,b3\n");
    CHECK_THROWS_WITH_AS(load_corpus(dir), doctest::Contains("5 columns"), Error);
  }

  SUBCASE("non-integer rating") {
    write_text_file(dir / "objects.csv",
                    "object_id,display_name,sample_name,material,part_of\n"
                    "a,an a,a,fabric,\n");
    write_text_file(dir / "annotations.csv",
                    "sample_name,h1,h2,h3,r1,r2,r3,b1,b2,b3\n"
                    "a,1,x,1,0,0,0,0,0,0\n");
    CHECK_THROWS_WITH_AS(load_corpus(dir), doctest::Contains("not an integer"), Error);
  }

  SUBCASE("duplicate annotation row") {
    write_text_file(dir / "objects.csv",
                    "object_id,display_name,sample_name,material,part_of\n"
                    "a,an a,a,fabric,\n");
    write_text_file(dir / "annotations.csv",
                    "sample_name,h1,h2,h3,r1,r2,r3,b1,b2,b3\n"
                    "a,1,1,1,0,0,0,0,0,0\n"
                    "a,1,1,1,0,0,0,0,0,0\n");
    CHECK_THROWS_WITH_AS(load_corpus(dir), doctest::Contains("duplicate"), Error);
  }
}

TEST_CASE("validate_corpus enforces the index invariants") {
  CorpusIndex corpus;
  corpus.objects.push_back({"a", "an a", "a", Material::fabric, std::nullopt});
  corpus.objects.push_back({"b", "a b", "b", Material::metal, std::nullopt});
  corpus.annotations["a"] = {"a", {1, 1, 1}, {0, 0, 0}, {2, 2, 2}};
  corpus.annotations["b"] = {"b", {0, 0, 0}, {1, 1, 1}, {0, 0, 0}};
  for (const auto& [name, t] : corpus.annotations) corpus.labels[name] = aggregate_annotations(t);
  corpus.splits.train = {"a"};
  corpus.splits.test = {"b"};
  CHECK_NOTHROW(validate_corpus(corpus));

  SUBCASE("duplicate sample_name") {
    corpus.objects.push_back({"c", "a c", "a", Material::wood, std::nullopt});
    CHECK_THROWS_WITH_AS(validate_corpus(corpus), doctest::Contains("duplicate sample_name"),
                         Error);
  }
  SUBCASE("dangling part_of") {
    corpus.objects[0].part_of = "nope";
    CHECK_THROWS_WITH_AS(validate_corpus(corpus), doctest::Contains("part_of"), Error);
  }
  SUBCASE("split entry not annotated") {
    corpus.splits.val = {"ghost"};
    CHECK_THROWS_WITH_AS(validate_corpus(corpus), doctest::Contains("ghost"), Error);
  }
  SUBCASE("sample in two splits") {
    corpus.splits.val = {"a"};
    CHECK_THROWS_WITH_AS(validate_corpus(corpus), doctest::Contains("two splits"), Error);
  }
  SUBCASE("annotated sample missing from splits") {
    corpus.splits.test.clear();
    CHECK_THROWS_WITH_AS(validate_corpus(corpus), doctest::Contains("missing from splits"), Error);
  }
  SUBCASE("missing splits tolerated only when allowed") {
    corpus.splits = {};
    CHECK_THROWS_AS(validate_corpus(corpus), Error);
    CHECK_NOTHROW(validate_corpus(corpus, /*require_splits=*/false));
  }
}

TEST_CASE("splits survive a json round trip") {
  const fs::path dir = temp_dir("splits");
  SplitAssignment s;
  s.train = {"a", "b"};
  s.val = {"c"};
  s.test = {"d"};
  write_splits_json(dir / "splits.json", s);
  const SplitAssignment t = read_splits_json(dir / "splits.json");
  CHECK(t.train == s.train);
  CHECK(t.val == s.val);
  CHECK(t.test == s.test);

  write_text_file(dir / "broken.json", "{\"train\": 3}");
  CHECK_THROWS_AS(read_splits_json(dir / "broken.json"), Error);
}
