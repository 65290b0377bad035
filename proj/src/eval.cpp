#include "tlm/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>

namespace tlm {

namespace {

std::string lowercase(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return char(std::tolower(c)); });
  return out;
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

// Matches one phrase of the group at `pos`, longest phrase first so
// "moderately hard" is never misread as "hard". Returns the level or -1.
int match_phrase(const std::string& lower, std::size_t& pos,
                 const std::vector<std::pair<std::string, int>>& phrases) {
  for (const auto& [phrase, level] : phrases) {
    if (lower.compare(pos, phrase.size(), phrase) == 0) {
      pos += phrase.size();
      return level;
    }
  }
  return -1;
}

bool match_literal(const std::string& lower, std::size_t& pos, const std::string& lit) {
  if (lower.compare(pos, lit.size(), lit) != 0) return false;
  pos += lit.size();
  return true;
}

}  // namespace

std::optional<PropertyLabels> parse_opd(const std::string& response) {
  static const std::vector<std::pair<std::string, int>> kHard = {
      {"moderately hard", 1}, {"hard", 2}, {"soft", 0}};
  static const std::vector<std::pair<std::string, int>> kRough = {
      {"slightly rough", 1}, {"rough", 2}, {"smooth", 0}};
  static const std::vector<std::pair<std::string, int>> kBump = {
      {"no bumps", 0}, {"small bumps", 1}, {"big bumps", 2}};

  const std::string lower = lowercase(response);
  const std::string anchor = "presents a ";
  std::optional<PropertyLabels> last;
  for (std::size_t at = lower.find(anchor); at != std::string::npos;
       at = lower.find(anchor, at + 1)) {
    std::size_t pos = at + anchor.size();
    const int h = match_phrase(lower, pos, kHard);
    if (h < 0 || !match_literal(lower, pos, " and ")) continue;
    const int r = match_phrase(lower, pos, kRough);
    if (r < 0 || !match_literal(lower, pos, " surface with ")) continue;
    const int b = match_phrase(lower, pos, kBump);
    if (b < 0) continue;
    last = labels_from_levels(h, r, b);
  }
  return last;
}

std::optional<char> parse_choice(const std::string& response,
                                 const std::vector<char>& options) {
  const std::string lower = lowercase(response);
  auto allowed = [&](char c) {
    return std::find(options.begin(), options.end(), c) != options.end();
  };
  auto scan_keyword = [&](const std::string& keyword) -> std::optional<char> {
    std::optional<char> found;
    for (std::size_t at = lower.find(keyword); at != std::string::npos;
         at = lower.find(keyword, at + 1)) {
      const std::size_t p = at + keyword.size();
      if (p + 1 < lower.size() && allowed(lower[p]) && lower[p + 1] == ')') {
        found = lower[p];
      }
    }
    return found;
  };

  if (auto c = scan_keyword("conclusion: ")) return c;
  if (auto c = scan_keyword("the most suitable object is ")) return c;
  for (std::size_t i = 0; i + 1 < lower.size(); ++i) {
    if (allowed(lower[i]) && lower[i + 1] == ')' &&
        (i == 0 || !is_word_char(lower[i - 1]))) {
      return lower[i];
    }
  }
  return std::nullopt;
}

std::optional<bool> parse_yesno(const std::string& response) {
  const std::string lower = lowercase(response);
  auto word_at = [&](std::size_t p, const std::string& word) {
    return lower.compare(p, word.size(), word) == 0 &&
           (p + word.size() == lower.size() || !is_word_char(lower[p + word.size()]));
  };

  const std::string anchor = "conclusion: ";
  std::optional<bool> last;
  for (std::size_t at = lower.find(anchor); at != std::string::npos;
       at = lower.find(anchor, at + 1)) {
    const std::size_t p = at + anchor.size();
    if (word_at(p, "yes")) last = true;
    if (word_at(p, "no")) last = false;
  }
  if (last) return last;

  std::size_t start = 0;
  while (start < lower.size() && std::isspace(static_cast<unsigned char>(lower[start])))
    ++start;
  if (word_at(start, "yes")) return true;
  if (word_at(start, "no")) return false;
  return std::nullopt;
}

std::optional<std::array<std::string, 3>> parse_pom(
    const std::string& response, const std::array<std::string, 3>& candidates) {
  const std::string lower = lowercase(response);
  std::array<std::string, 3> names_lower;
  std::vector<int> by_length = {0, 1, 2};
  for (int i = 0; i < 3; ++i) names_lower[std::size_t(i)] = lowercase(candidates[std::size_t(i)]);
  std::sort(by_length.begin(), by_length.end(), [&](int a, int b) {
    return names_lower[std::size_t(a)].size() > names_lower[std::size_t(b)].size();
  });

  std::array<int, 3> picked = {-1, -1, -1};
  for (int letter = 0; letter < 3; ++letter) {
    const std::string anchor = std::string(1, char('a' + letter)) + ") is ";
    for (std::size_t at = lower.find(anchor); at != std::string::npos;
         at = lower.find(anchor, at + 1)) {
      if (at > 0 && is_word_char(lower[at - 1])) continue;
      const std::size_t p = at + anchor.size();
      for (int idx : by_length) {
        const std::string& name = names_lower[std::size_t(idx)];
        if (lower.compare(p, name.size(), name) != 0) continue;
        if (p + name.size() < lower.size() && is_word_char(lower[p + name.size()]))
          continue;
        picked[std::size_t(letter)] = idx;
        break;
      }
    }
  }

  for (int letter = 0; letter < 3; ++letter) {
    if (picked[std::size_t(letter)] < 0) return std::nullopt;
    for (int other = 0; other < letter; ++other) {
      if (picked[std::size_t(letter)] == picked[std::size_t(other)]) return std::nullopt;
    }
  }
  std::array<std::string, 3> out;
  for (int letter = 0; letter < 3; ++letter) {
    out[std::size_t(letter)] = candidates[std::size_t(picked[std::size_t(letter)])];
  }
  return out;
}

ParsedAnswer parse_response(TaskKind task, const std::string& response,
                            const GroundTruth& truth) {
  ParsedAnswer out;
  out.task = task;
  out.raw = response;
  switch (task) {
    case TaskKind::OPD:
      out.labels = parse_opd(response);
      out.parse_ok = out.labels.has_value();
      break;
    case TaskKind::PC:
      out.yes = parse_yesno(response);
      out.parse_ok = out.yes.has_value();
      break;
    case TaskKind::PSS:
      out.option = parse_choice(response, {'a', 'b', 'c'});
      out.parse_ok = out.option.has_value();
      break;
    case TaskKind::POM:
      require(truth.candidates.has_value(),
              "eval: POM ground truth lacks the candidate listing");
      out.matching = parse_pom(response, *truth.candidates);
      out.parse_ok = out.matching.has_value();
      break;
    case TaskKind::PSR:
      out.option = parse_choice(response, {'a', 'b'});
      out.parse_ok = out.option.has_value();
      break;
  }
  return out;
}

double analytic_baseline(TaskKind task) {
  switch (task) {
    case TaskKind::OPD: return 100.0 / 27.0;
    case TaskKind::PC: return 50.0;
    case TaskKind::PSS: return 100.0 / 3.0;
    case TaskKind::POM: return 100.0 / 6.0;
    case TaskKind::PSR: return 50.0;
  }
  fail("unreachable task kind");
}

double mc_baseline(TaskKind task, int trials) {
  require(trials > 0, "eval: baseline trials must be positive");
  Rng rng(fnv1a("baseline-" + to_string(task)));
  int hits = 0;
  std::vector<int> perm_a = {0, 1, 2};
  std::vector<int> perm_b = {0, 1, 2};
  for (int t = 0; t < trials; ++t) {
    switch (task) {
      case TaskKind::OPD:
        hits += rng.below(27) == rng.below(27);
        break;
      case TaskKind::PC:
      case TaskKind::PSR:
        hits += rng.below(2) == rng.below(2);
        break;
      case TaskKind::PSS:
        hits += rng.below(3) == rng.below(3);
        break;
      case TaskKind::POM: {
        rng.shuffle(perm_a);
        rng.shuffle(perm_b);
        hits += perm_a == perm_b;
        break;
      }
    }
  }
  return 100.0 * double(hits) / double(trials);
}

bool answer_correct(const ParsedAnswer& answer, const GroundTruth& truth) {
  if (!answer.parse_ok) return false;
  switch (answer.task) {
    case TaskKind::OPD:
      require(truth.labels.has_value(), "eval: OPD ground truth lacks labels");
      return *answer.labels == *truth.labels;
    case TaskKind::PC:
      require(truth.yes.has_value(), "eval: PC ground truth lacks the answer");
      return *answer.yes == *truth.yes;
    case TaskKind::PSS:
    case TaskKind::PSR:
      require(truth.option.has_value(), "eval: ground truth lacks the option letter");
      return *answer.option == *truth.option;
    case TaskKind::POM:
      require(truth.matching.has_value(), "eval: POM ground truth lacks the matching");
      return *answer.matching == *truth.matching;
  }
  fail("unreachable task kind");
}

TaskReport score(TaskKind task, const std::vector<ParsedAnswer>& answers,
                 const std::vector<GroundTruth>& truths) {
  require(answers.size() == truths.size(),
          "eval: " + std::to_string(answers.size()) + " answers but " +
              std::to_string(truths.size()) + " ground truths");
  TaskReport report;
  report.task = task;
  report.n = int(answers.size());
  report.random_baseline = analytic_baseline(task);
  report.mc_baseline = mc_baseline(task);
  if (task == TaskKind::PC) report.alternate_baseline = 100.0 / 3.0;
  if (task == TaskKind::OPD) {
    report.per_property = std::array<double, 3>{0.0, 0.0, 0.0};
    ConfusionMatrix zero = {};
    report.confusion = std::array<ConfusionMatrix, 3>{zero, zero, zero};
  }

  std::array<int, 3> property_correct = {0, 0, 0};
  for (std::size_t i = 0; i < answers.size(); ++i) {
    require(answers[i].task == task, "eval: answer " + std::to_string(i) +
                                         " belongs to task " +
                                         to_string(answers[i].task) + ", expected " +
                                         to_string(task));
    if (!answers[i].parse_ok) ++report.parse_failures;
    if (answer_correct(answers[i], truths[i])) ++report.correct;
    if (task == TaskKind::OPD && answers[i].parse_ok) {
      const auto truth_levels = truths[i].labels->levels();
      const auto pred_levels = answers[i].labels->levels();
      for (int p = 0; p < 3; ++p) {
        property_correct[std::size_t(p)] +=
            truth_levels[std::size_t(p)] == pred_levels[std::size_t(p)];
        (*report.confusion)[std::size_t(p)][std::size_t(truth_levels[std::size_t(p)])]
                           [std::size_t(pred_levels[std::size_t(p)])] += 1;
      }
    }
  }
  if (report.n > 0) {
    report.accuracy = 100.0 * double(report.correct) / double(report.n);
    report.parse_failure_rate =
        100.0 * double(report.parse_failures) / double(report.n);
    if (task == TaskKind::OPD) {
      for (int p = 0; p < 3; ++p) {
        (*report.per_property)[std::size_t(p)] =
            100.0 * double(property_correct[std::size_t(p)]) / double(report.n);
      }
    }
  }
  return report;
}

nlohmann::json to_json(const TaskReport& report) {
  nlohmann::json j = {{"task", to_string(report.task)},
                      {"n", report.n},
                      {"correct", report.correct},
                      {"parse_failures", report.parse_failures},
                      {"accuracy", report.accuracy},
                      {"parse_failure_rate", report.parse_failure_rate},
                      {"random_baseline", report.random_baseline},
                      {"mc_baseline", report.mc_baseline}};
  if (report.per_property) {
    j["per_property"] = {{"hardness", (*report.per_property)[0]},
                         {"roughness", (*report.per_property)[1]},
                         {"bumpiness", (*report.per_property)[2]}};
  }
  if (report.confusion) {
    const char* names[3] = {"hardness", "roughness", "bumpiness"};
    nlohmann::json c;
    for (int p = 0; p < 3; ++p) {
      nlohmann::json rows = nlohmann::json::array();
      for (int t = 0; t < 3; ++t) {
        rows.push_back((*report.confusion)[std::size_t(p)][std::size_t(t)]);
      }
      c[names[p]] = rows;
    }
    j["confusion"] = c;
  }
  if (report.alternate_baseline) {
    j["alternate_baseline"] = *report.alternate_baseline;
    j["baseline_note"] =
        "answers are binary yes/no, giving 50; 33.33 corresponds to a ternary "
        "answer space; which space published comparison figures assume is unknown";
  }
  return j;
}

nlohmann::json report_to_json(const std::vector<TaskReport>& reports) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& report : reports) tasks.push_back(to_json(report));
  return {{"tasks", tasks}};
}

std::string report_to_csv(const std::vector<TaskReport>& reports) {
  std::string out = "task,n,accuracy,parse_failure_rate,random_baseline,mc_baseline\n";
  for (const auto& report : reports) {
    char line[160];
    std::snprintf(line, sizeof(line), "%s,%d,%.2f,%.2f,%.2f,%.2f\n",
                  to_string(report.task).c_str(), report.n, report.accuracy,
                  report.parse_failure_rate, report.random_baseline,
                  report.mc_baseline);
    out += line;
  }
  return out;
}

void write_report_json(const std::filesystem::path& path,
                       const std::vector<TaskReport>& reports) {
  write_text_file(path, report_to_json(reports).dump(2) + "\n");
}

void write_report_csv(const std::filesystem::path& path,
                      const std::vector<TaskReport>& reports) {
  write_text_file(path, report_to_csv(reports));
}

}  // namespace tlm
