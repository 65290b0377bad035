#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "tlm/eval.hpp"

using namespace tlm;

namespace {

std::filesystem::path temp_dir(const std::string& leaf) {
  auto p = std::filesystem::temp_directory_path() / "tlm_eval_tests" / leaf;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

GroundTruth opd_truth(int h, int r, int b) {
  GroundTruth t;
  t.labels = labels_from_levels(h, r, b);
  return t;
}

}  // namespace

TEST_CASE("structured descriptions parse back to their labels") {
  for (int h = 0; h < 3; ++h) {
    for (int r = 0; r < 3; ++r) {
      for (int b = 0; b < 3; ++b) {
        const PropertyLabels labels = labels_from_levels(h, r, b);
        const auto parsed = parse_opd(structured_description(labels));
        REQUIRE(parsed.has_value());
        CHECK(*parsed == labels);
      }
    }
  }
}

TEST_CASE("opd parsing follows the reference description format") {
  auto p = parse_opd("Overall, it presents a moderately hard and smooth surface with no bumps.");
  REQUIRE(p.has_value());
  CHECK(p->levels() == std::array<int, 3>{1, 0, 0});

  p = parse_opd("presents a hard and rough surface with big bumps.");
  REQUIRE(p.has_value());
  CHECK(p->levels() == std::array<int, 3>{2, 2, 2});

  p = parse_opd("presents a moderately hard and slightly rough surface with small bumps");
  REQUIRE(p.has_value());
  CHECK(p->levels() == std::array<int, 3>{1, 1, 1});

  CHECK(!parse_opd("It is very soft.").has_value());
  CHECK(!parse_opd("").has_value());
  CHECK(!parse_opd("presents a hard or rough surface with big bumps.").has_value());
  CHECK(!parse_opd("presents a hardened and rough surface with big bumps.").has_value());
  CHECK(!parse_opd("presents a hard and rough surface with tiny bumps.").has_value());

  p = parse_opd("PRESENTS A SOFT AND SMOOTH SURFACE WITH SMALL BUMPS.");
  REQUIRE(p.has_value());
  CHECK(p->levels() == std::array<int, 3>{0, 0, 1});

  // Several description sentences: the last one wins.
  p = parse_opd(
      "First object: Overall, it presents a soft and smooth surface with no bumps. "
      "Second object: Overall, it presents a hard and rough surface with big bumps.");
  REQUIRE(p.has_value());
  CHECK(p->levels() == std::array<int, 3>{2, 2, 2});
}

TEST_CASE("choice parsing prefers the conclusion and falls back to standalone options") {
  const std::vector<char> abc = {'a', 'b', 'c'};
  CHECK(parse_choice("Conclusion: b) is the smoothest.", abc) == 'b');
  CHECK(parse_choice("The most suitable object is a), because it is softer.",
                     {'a', 'b'}) == 'a');
  CHECK(parse_choice("conclusion: C) is the bumpiest.", abc) == 'c');
  CHECK(!parse_choice("I cannot tell.", abc).has_value());
  CHECK(parse_choice("I think b) fits best.", abc) == 'b');
  CHECK(!parse_choice("Please grab) it.", {'b'}).has_value());
  CHECK(parse_choice("Conclusion: a) no wait. Conclusion: c) is right.", abc) == 'c');
  CHECK(!parse_choice("Conclusion: c) is best.", {'a', 'b'}).has_value());
  CHECK(parse_choice("a) looks right but Conclusion: b) is the softest.", abc) == 'b');
}

TEST_CASE("yes/no parsing keys on the conclusion sentence") {
  CHECK(parse_yesno("First object: Overall, it presents a hard and rough surface "
                    "with big bumps. Second object: Overall, it presents a soft "
                    "and smooth surface with no bumps. Conclusion: Yes, the first "
                    "object is harder.") == true);
  CHECK(parse_yesno("Conclusion: No, the first object is not rougher.") == false);
  CHECK(parse_yesno("Conclusion: No.") == false);
  CHECK(!parse_yesno("Maybe.").has_value());
  CHECK(parse_yesno("Yes, it is.") == true);
  CHECK(parse_yesno("  no") == false);
  CHECK(!parse_yesno("Nothing here.").has_value());
  CHECK(!parse_yesno("Conclusion: nonsense.").has_value());
  CHECK(parse_yesno("Conclusion: Yes. Conclusion: No.") == false);
}

TEST_CASE("object matching parses only bijections onto the candidates") {
  const std::array<std::string, 3> candidates = {
      "a cotton ball", "a mandarin orange", "a roll of masking tape"};
  auto m = parse_pom(
      "Conclusion: a) is a roll of masking tape, b) is a cotton ball and c) is "
      "a mandarin orange.",
      candidates);
  REQUIRE(m.has_value());
  CHECK((*m)[0] == "a roll of masking tape");
  CHECK((*m)[1] == "a cotton ball");
  CHECK((*m)[2] == "a mandarin orange");

  CHECK(!parse_pom("a) is a cotton ball, b) is a cotton ball and c) is a "
                   "mandarin orange.",
                   candidates)
             .has_value());
  CHECK(!parse_pom("a) is a cotton ball and b) is a mandarin orange.", candidates)
             .has_value());
  CHECK(!parse_pom("nothing useful", candidates).has_value());

  const std::array<std::string, 3> nested = {"a pad", "a pad of steel wool",
                                             "a sponge"};
  m = parse_pom("a) is a pad of steel wool, b) is a pad and c) is a sponge.", nested);
  REQUIRE(m.has_value());
  CHECK((*m)[0] == "a pad of steel wool");
  CHECK((*m)[1] == "a pad");
  CHECK((*m)[2] == "a sponge");

  CHECK(!parse_pom("a) is a padded mat, b) is a pad of steel wool and c) is a "
                   "sponge.",
                   nested)
             .has_value());
}

TEST_CASE("random baselines converge to the analytic answer-space values") {
  for (TaskKind task : {TaskKind::OPD, TaskKind::PC, TaskKind::PSS, TaskKind::POM,
                        TaskKind::PSR}) {
    const double analytic = analytic_baseline(task);
    const double mc = mc_baseline(task);
    CAPTURE(to_string(task));
    CHECK(std::abs(mc - analytic) < 1.0);
    CHECK(mc == mc_baseline(task));
  }
  CHECK(std::abs(analytic_baseline(TaskKind::OPD) - 100.0 / 27.0) < 1e-12);
  CHECK(std::abs(analytic_baseline(TaskKind::POM) - 100.0 / 6.0) < 1e-12);
  CHECK(std::abs(mc_baseline(TaskKind::POM, 10000) - 100.0 / 6.0) < 1.0);
  CHECK_THROWS_WITH((void)mc_baseline(TaskKind::OPD, 0),
                    "eval: baseline trials must be positive");
}

TEST_CASE("scoring tallies accuracy, parse failures and confusion") {
  std::vector<GroundTruth> truths = {opd_truth(0, 0, 0), opd_truth(1, 1, 1),
                                     opd_truth(2, 2, 2), opd_truth(0, 1, 2)};
  std::vector<ParsedAnswer> answers = {
      parse_response(TaskKind::OPD,
                     "Overall, it presents a soft and smooth surface with no bumps.",
                     truths[0]),
      parse_response(TaskKind::OPD,
                     "Overall, it presents a moderately hard and slightly rough "
                     "surface with small bumps.",
                     truths[1]),
      parse_response(TaskKind::OPD,
                     "Overall, it presents a soft and rough surface with big bumps.",
                     truths[2]),
      parse_response(TaskKind::OPD, "I have no idea.", truths[3])};

  const TaskReport report = score(TaskKind::OPD, answers, truths);
  CHECK(report.n == 4);
  CHECK(report.correct == 2);
  CHECK(report.accuracy == 50.0);
  CHECK(report.parse_failures == 1);
  CHECK(report.parse_failure_rate == 25.0);
  REQUIRE(report.per_property.has_value());
  CHECK((*report.per_property)[0] == 50.0);   // hardness: rows 0,1 right
  CHECK((*report.per_property)[1] == 75.0);   // roughness: rows 0,1,2 right
  CHECK((*report.per_property)[2] == 75.0);   // bumpiness: rows 0,1,2 right
  REQUIRE(report.confusion.has_value());
  const auto& hard = (*report.confusion)[0];
  CHECK(hard[0][0] == 1);
  CHECK(hard[1][1] == 1);
  CHECK(hard[2][0] == 1);  // hard object described as soft
  int total = 0;
  for (const auto& row : hard)
    for (int cell : row) total += cell;
  CHECK(total == 3);  // the parse failure never enters the grid
  CHECK(report.random_baseline == doctest::Approx(100.0 / 27.0));
}

TEST_CASE("scoring is order-invariant") {
  std::vector<GroundTruth> truths;
  std::vector<ParsedAnswer> answers;
  for (int i = 0; i < 9; ++i) {
    GroundTruth t;
    t.option = char('a' + i % 3);
    truths.push_back(t);
    const std::string text = i % 2 == 0
                                 ? "Conclusion: " + std::string(1, char('a' + i % 3)) +
                                       ") is the softest."
                                 : "Conclusion: b) is the softest.";
    answers.push_back(parse_response(TaskKind::PSS, text, t));
  }
  const auto before = to_json(score(TaskKind::PSS, answers, truths)).dump();

  std::vector<std::size_t> order = {5, 2, 8, 0, 6, 3, 1, 7, 4};
  std::vector<GroundTruth> truths2;
  std::vector<ParsedAnswer> answers2;
  for (std::size_t i : order) {
    truths2.push_back(truths[i]);
    answers2.push_back(answers[i]);
  }
  CHECK(to_json(score(TaskKind::PSS, answers2, truths2)).dump() == before);
}

TEST_CASE("score validates input alignment") {
  GroundTruth t;
  t.option = 'a';
  ParsedAnswer a = parse_response(TaskKind::PSS, "Conclusion: a) is the softest.", t);
  CHECK_THROWS_WITH((void)score(TaskKind::PSS, {a}, {}),
                    "eval: 1 answers but 0 ground truths");
  CHECK_THROWS_WITH((void)score(TaskKind::PSR, {a}, {t}),
                    "eval: answer 0 belongs to task PSS, expected PSR");
}

TEST_CASE("perfect and empty runs score cleanly") {
  GroundTruth t;
  t.yes = true;
  const auto a = parse_response(TaskKind::PC, "Conclusion: Yes, it is harder.", t);
  const TaskReport full = score(TaskKind::PC, {a, a, a}, {t, t, t});
  CHECK(full.accuracy == 100.0);
  CHECK(full.parse_failure_rate == 0.0);

  const TaskReport empty = score(TaskKind::PC, {}, {});
  CHECK(empty.n == 0);
  CHECK(empty.accuracy == 0.0);
  CHECK(empty.parse_failure_rate == 0.0);
}

TEST_CASE("pc reports both baseline readings") {
  GroundTruth t;
  t.yes = false;
  const auto a = parse_response(TaskKind::PC, "Conclusion: No, it is not.", t);
  const TaskReport report = score(TaskKind::PC, {a}, {t});
  CHECK(report.random_baseline == 50.0);
  REQUIRE(report.alternate_baseline.has_value());
  CHECK(*report.alternate_baseline == doctest::Approx(100.0 / 3.0));
  const auto j = to_json(report);
  CHECK(j.contains("baseline_note"));
  CHECK(j.contains("alternate_baseline"));

  GroundTruth ts;
  ts.option = 'a';
  const auto b = parse_response(TaskKind::PSS, "Conclusion: a) is the softest.", ts);
  CHECK(!score(TaskKind::PSS, {b}, {ts}).alternate_baseline.has_value());
  CHECK(!to_json(score(TaskKind::PSS, {b}, {ts})).contains("baseline_note"));
}

TEST_CASE("reports serialize deterministically") {
  std::vector<GroundTruth> truths = {opd_truth(0, 0, 0), opd_truth(1, 1, 1)};
  std::vector<ParsedAnswer> answers = {
      parse_response(TaskKind::OPD,
                     "Overall, it presents a soft and smooth surface with no bumps.",
                     truths[0]),
      parse_response(TaskKind::OPD, "broken", truths[1])};
  GroundTruth tr;
  tr.option = 'b';
  const auto psr = parse_response(TaskKind::PSR, "The most suitable object is b), "
                                                 "because it grips.",
                                  tr);
  const std::vector<TaskReport> reports = {score(TaskKind::OPD, answers, truths),
                                           score(TaskKind::PSR, {psr}, {tr})};

  const auto dir = temp_dir("reports");
  write_report_json(dir / "one.json", reports);
  write_report_json(dir / "two.json", reports);
  const std::string one = read_text_file(dir / "one.json");
  CHECK(one == read_text_file(dir / "two.json"));
  CHECK(one.find("\"task\"") != std::string::npos);

  const auto parsed = nlohmann::json::parse(one);
  REQUIRE(parsed.at("tasks").size() == 2);
  CHECK(parsed.at("tasks")[0].at("task") == "OPD");
  CHECK(parsed.at("tasks")[0].at("accuracy").get<double>() == 50.0);
  CHECK(parsed.at("tasks")[0].contains("confusion"));
  CHECK(parsed.at("tasks")[1].at("task") == "PSR");
  CHECK(parsed.at("tasks")[1].at("accuracy").get<double>() == 100.0);

  write_report_csv(dir / "summary.csv", reports);
  const std::string csv = read_text_file(dir / "summary.csv");
  const std::string want_header =
      "task,n,accuracy,parse_failure_rate,random_baseline,mc_baseline\n";
  REQUIRE(csv.rfind(want_header, 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(csv.find("OPD,2,50.00,50.00,3.70,") != std::string::npos);
  CHECK(csv.find("PSR,1,100.00,0.00,50.00,") != std::string::npos);
}
