#pragma once

// Response parsing and scoring for the five tasks, with analytic and
// Monte-Carlo random baselines and deterministic JSON/CSV reports.

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tlm/tasks.hpp"

namespace tlm {

// Every parser is total: failures come back as a value, never an exception,
// and score as incorrect.
struct ParsedAnswer {
  TaskKind task = TaskKind::OPD;
  bool parse_ok = false;
  std::string raw;
  std::optional<PropertyLabels> labels;                // OPD
  std::optional<bool> yes;                             // PC
  std::optional<char> option;                          // PSS, PSR
  std::optional<std::array<std::string, 3>> matching;  // POM: letter -> name
};

// Last occurrence of "presents a {h} and {r} surface with {b}" with
// case-insensitive category phrases; longer phrases win over their prefixes.
std::optional<PropertyLabels> parse_opd(const std::string& response);

// "Conclusion: x)", then "the most suitable object is x)", then the first
// standalone "x)" among the allowed options.
std::optional<char> parse_choice(const std::string& response,
                                 const std::vector<char>& options);

// "Conclusion: Yes/No", falling back to a leading yes/no token.
std::optional<bool> parse_yesno(const std::string& response);

// "x) is {name}" per option letter against the three listed candidate
// names; the result must be a bijection onto the candidates.
std::optional<std::array<std::string, 3>> parse_pom(
    const std::string& response, const std::array<std::string, 3>& candidates);

// Dispatches to the task's parser; POM/PSR option spaces come from truth.
ParsedAnswer parse_response(TaskKind task, const std::string& response,
                            const GroundTruth& truth);

// Exact-match scoring of one parsed answer; parse failures are incorrect.
bool answer_correct(const ParsedAnswer& answer, const GroundTruth& truth);

// counts[truth_level][predicted_level]; parse failures are not placeable in
// a 3x3 grid and are excluded here (they still count as incorrect).
using ConfusionMatrix = std::array<std::array<int, 3>, 3>;

struct TaskReport {
  TaskKind task = TaskKind::OPD;
  int n = 0;
  int correct = 0;
  int parse_failures = 0;
  double accuracy = 0.0;            // percent
  double parse_failure_rate = 0.0;  // percent
  double random_baseline = 0.0;     // analytic percent for the answer space
  double mc_baseline = 0.0;         // Monte-Carlo estimate, fixed seed
  // OPD only: per-property accuracy and confusion, order h/r/b.
  std::optional<std::array<double, 3>> per_property;
  std::optional<std::array<ConfusionMatrix, 3>> confusion;
  // PC only: the binary answer space gives 50; a ternary space would give
  // 33.33. Which one published comparison tables assume is unknown, so both
  // are reported.
  std::optional<double> alternate_baseline;
};

double analytic_baseline(TaskKind task);

// 10^5 paired uniform draws over the task's answer space, seeded from the
// task name so reports are byte-stable across runs.
double mc_baseline(TaskKind task, int trials = 100000);

TaskReport score(TaskKind task, const std::vector<ParsedAnswer>& answers,
                 const std::vector<GroundTruth>& truths);

nlohmann::json to_json(const TaskReport& report);
nlohmann::json report_to_json(const std::vector<TaskReport>& reports);
std::string report_to_csv(const std::vector<TaskReport>& reports);
void write_report_json(const std::filesystem::path& path,
                       const std::vector<TaskReport>& reports);
void write_report_csv(const std::filesystem::path& path,
                      const std::vector<TaskReport>& reports);

}  // namespace tlm
