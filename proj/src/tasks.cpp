#include "tlm/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "tlm/tokenizer.hpp"

namespace tlm {

namespace {

// Prompt template lists. The placeholder triple "<tact_start> <img_tokens>
// <tact_end>" marks one tactile video; comparison template [2] glues
// "<img_tokens><tact_end>" and is kept that way deliberately. The original
// object-match listing had unclosed markers in its first entry; those are
// normalized here because downstream splicing needs well-formed brackets.

const std::array<std::string, 2> kOpdTemplates = {
    "Describe the physical properties of <tact_start> <img_tokens> <tact_end>.",
    "How does this tactile video <tact_start> <img_tokens> <tact_end> feel?",
};

const std::array<std::string, 4> kPcTemplates = {
    "Is the object in the tactile video <tact_start> <img_tokens> <tact_end> <more_property> "
    "than the one in <tact_start> <img_tokens> <tact_end>? Describe both objects before "
    "answering.",
    "Is the object in <tact_start> <img_tokens> <tact_end> <more_property> than the object in "
    "<tact_start> <img_tokens> <tact_end>? Describe both objects before answering.",
    "Is the object in the tactile video <tact_start> <img_tokens><tact_end> <less_property> "
    "than the one in <tact_start> <img_tokens> <tact_end>? Describe both objects before "
    "answering.",
    "Is the object in <tact_start> <img_tokens> <tact_end> <less_property> than the object in "
    "<tact_start> <img_tokens> <tact_end>? Describe both objects before answering.",
};

const std::array<std::string, 4> kPssTemplates = {
    "Given three tactile videos: a) <tact_start> <img_tokens> <tact_end>, b) <tact_start> "
    "<img_tokens> <tact_end>, c) <tact_start> <img_tokens> <tact_end>. Describe each object "
    "and then select the <most_property>.",
    "You have tactile videos of one object each: a) <tact_start> <img_tokens> <tact_end>, b) "
    "<tact_start> <img_tokens> <tact_end>, c) <tact_start> <img_tokens> <tact_end>. Describe "
    "each object and then select the <most_property> object.",
    "Given these tactile videos: a) <tact_start> <img_tokens> <tact_end>, b) <tact_start> "
    "<img_tokens> <tact_end>, c) <tact_start> <img_tokens> <tact_end>. Describe each object "
    "and then select the <least_property>.",
    "You have tactile videos of one object each: a) <tact_start> <img_tokens> <tact_end>, b) "
    "<tact_start> <img_tokens> <tact_end>, c) <tact_start> <img_tokens> <tact_end>. Describe "
    "each object and then select the <least_property> object.",
};

const std::array<std::string, 2> kPomTemplates = {
    "Given three tactile videos: a) <tact_start> <img_tokens> <tact_end>, b) <tact_start> "
    "<img_tokens> <tact_end>, c) <tact_start> <img_tokens> <tact_end>. Describe the object in "
    "each video, then match each video to one of the following objects in alphabetical order: "
    "1) <object>, 2) <object>, 3) <object>.",
    "You have tactile videos of one object each: a) <tact_start> <img_tokens> <tact_end>, b) "
    "<tact_start> <img_tokens> <tact_end>, c) <tact_start> <img_tokens> <tact_end>. Describe "
    "the object in each video, then match each video to one of the following objects in "
    "alphabetical order: 1) <object>, 2) <object>, 3) <object>.",
};

const std::string kPsrDescribe =
    "Describe these two tactile videos: a) <tact_start> <img_tokens> <tact_end>, b) "
    "<tact_start> <img_tokens> <tact_end>.";

const std::string kPsrTemplate =
    "<scenario_question>. Select only one most appropriate object for this scenario based on "
    "physical property descriptions of the two objects. Use the format 'The most suitable "
    "object is x), because xxx'";

void replace_first(std::string& text, const std::string& slot, const std::string& value) {
  const auto at = text.find(slot);
  require(at != std::string::npos, "task template: missing slot " + slot);
  text.replace(at, slot.size(), value);
}

int count_occurrences(const std::string& text, const std::string& needle) {
  int n = 0;
  for (auto at = text.find(needle); at != std::string::npos; at = text.find(needle, at + 1)) ++n;
  return n;
}

int level_of(const PropertyLabels& labels, Property p) {
  return labels.levels()[std::size_t(p)];
}

}  // namespace

std::string to_string(TaskKind task) {
  switch (task) {
    case TaskKind::OPD: return "OPD";
    case TaskKind::PC: return "PC";
    case TaskKind::PSS: return "PSS";
    case TaskKind::POM: return "POM";
    case TaskKind::PSR: return "PSR";
  }
  fail("unreachable task kind");
}

TaskKind task_from_string(const std::string& s) {
  if (s == "OPD") return TaskKind::OPD;
  if (s == "PC") return TaskKind::PC;
  if (s == "PSS") return TaskKind::PSS;
  if (s == "POM") return TaskKind::POM;
  if (s == "PSR") return TaskKind::PSR;
  fail("unknown task kind: " + s);
}

std::string to_string(Property p) {
  switch (p) {
    case Property::hardness: return "hardness";
    case Property::roughness: return "roughness";
    case Property::bumpiness: return "bumpiness";
  }
  fail("unreachable property");
}

Property property_from_string(const std::string& s) {
  if (s == "hardness") return Property::hardness;
  if (s == "roughness") return Property::roughness;
  if (s == "bumpiness") return Property::bumpiness;
  fail("unknown property: " + s);
}

int scenario_score(const ScenarioSpec& spec, const PropertyLabels& labels) {
  require(!spec.properties.empty(), "scenario '" + spec.id + "' selects no properties");
  int score = 0;
  bool first = true;
  for (const Property p : spec.properties) {
    const int level = level_of(labels, p);
    if (spec.combine == ScenarioSpec::Combine::max) {
      score = first ? level : std::max(score, level);
    } else {
      score += level;
    }
    first = false;
  }
  return score;
}

int scenario_select(const ScenarioSpec& spec, const PropertyLabels& a,
                    const PropertyLabels& b) {
  const int sa = scenario_score(spec, a);
  const int sb = scenario_score(spec, b);
  if (sa == sb) return -1;
  const bool a_wins = spec.prefer == ScenarioSpec::Prefer::lower ? sa < sb : sa > sb;
  return a_wins ? 0 : 1;
}

const std::vector<ScenarioSpec>& shipped_scenarios() {
  static const std::vector<ScenarioSpec> scenarios = {
      {"non-stick-pan",
       "Which object is most suitable for removing stains from a non-stick pan without "
       "scratching it?",
       {Property::hardness, Property::roughness},
       ScenarioSpec::Combine::max,
       ScenarioSpec::Prefer::lower},
      {"wet-grip",
       "Which object would be most easily grippable when wet and slippery?",
       {Property::roughness, Property::bumpiness},
       ScenarioSpec::Combine::sum,
       ScenarioSpec::Prefer::higher},
      {"break-ice",
       "In an emergency, which of the objects above can be used to break through thin ice "
       "covering a car outside?",
       {Property::hardness},
       ScenarioSpec::Combine::sum,
       ScenarioSpec::Prefer::higher},
  };
  return scenarios;
}

nlohmann::json to_json(const ScenarioSpec& spec) {
  nlohmann::json props = nlohmann::json::array();
  for (const Property p : spec.properties) props.push_back(to_string(p));
  return {{"id", spec.id},
          {"question", spec.question},
          {"properties", props},
          {"combine", spec.combine == ScenarioSpec::Combine::max ? "max" : "sum"},
          {"prefer", spec.prefer == ScenarioSpec::Prefer::lower ? "lower" : "higher"}};
}

ScenarioSpec scenario_from_json(const nlohmann::json& j) {
  ScenarioSpec spec;
  spec.id = j.at("id").get<std::string>();
  spec.question = j.at("question").get<std::string>();
  for (const auto& p : j.at("properties")) {
    spec.properties.push_back(property_from_string(p.get<std::string>()));
  }
  const std::string combine = j.at("combine").get<std::string>();
  require(combine == "max" || combine == "sum", "scenario: combine must be max or sum");
  spec.combine = combine == "max" ? ScenarioSpec::Combine::max : ScenarioSpec::Combine::sum;
  const std::string prefer = j.at("prefer").get<std::string>();
  require(prefer == "lower" || prefer == "higher", "scenario: prefer must be lower or higher");
  spec.prefer = prefer == "lower" ? ScenarioSpec::Prefer::lower : ScenarioSpec::Prefer::higher;
  require(!spec.properties.empty(), "scenario '" + spec.id + "' selects no properties");
  return spec;
}

std::vector<ScenarioSpec> read_scenarios_json(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail("scenarios: cannot parse " + path.string() + ": " + e.what());
  }
  std::vector<ScenarioSpec> out;
  for (const auto& item : j.at("scenarios")) out.push_back(scenario_from_json(item));
  require(!out.empty(), "scenarios: " + path.string() + " lists no scenarios");
  return out;
}

std::string structured_description(const PropertyLabels& labels) {
  return "Overall, it presents a " + phrase(labels.hardness) + " and " +
         phrase(labels.roughness) + " surface with " + phrase(labels.bumpiness) + ".";
}

ConversationSample build_opd(const LabeledVideo& video, Rng& template_rng) {
  ConversationSample s;
  s.task = TaskKind::OPD;
  s.turns.push_back({"user", kOpdTemplates[template_rng.below(kOpdTemplates.size())]});
  s.turns.push_back({"assistant", structured_description(video.labels)});
  s.video_refs = {video.video_id};
  s.ground_truth.labels = video.labels;
  return s;
}

ConversationSample build_pc(const LabeledVideo& first, const LabeledVideo& second,
                            Property property, bool more_form, Rng& template_rng,
                            const AdjectiveTable& adjectives) {
  require(first.video_id != second.video_id, "pc: the two videos must be different");
  const auto& entry = adjectives.of(property);
  const std::string adjective = more_form ? entry.more : entry.less;
  const std::size_t base = more_form ? 0 : 2;
  std::string user = kPcTemplates[base + template_rng.below(2)];
  replace_first(user, more_form ? "<more_property>" : "<less_property>", adjective);

  const int l1 = level_of(first.labels, property);
  const int l2 = level_of(second.labels, property);
  const bool yes = more_form ? l1 > l2 : l1 < l2;

  std::string target = "First object: " + structured_description(first.labels) +
                       " Second object: " + structured_description(second.labels) +
                       " Conclusion: ";
  target += yes ? "Yes, the first object is " + adjective + "."
                : "No, the first object is not " + adjective + ".";

  ConversationSample s;
  s.task = TaskKind::PC;
  s.turns = {{"user", user}, {"assistant", target}};
  s.video_refs = {first.video_id, second.video_id};
  s.ground_truth.yes = yes;
  s.ground_truth.property = property;
  s.ground_truth.adjective = adjective;
  return s;
}

ConversationSample build_pss(const std::array<LabeledVideo, 3>& videos, Property property,
                             bool most_form, Rng& template_rng,
                             const AdjectiveTable& adjectives) {
  std::array<int, 3> levels{};
  for (int i = 0; i < 3; ++i) levels[std::size_t(i)] = level_of(videos[std::size_t(i)].labels, property);
  int best = 0;
  for (int i = 1; i < 3; ++i) {
    const bool beats = most_form ? levels[std::size_t(i)] > levels[std::size_t(best)]
                                 : levels[std::size_t(i)] < levels[std::size_t(best)];
    if (beats) best = i;
  }
  for (int i = 0; i < 3; ++i) {
    require(i == best || levels[std::size_t(i)] != levels[std::size_t(best)],
            "pss: no unique " + std::string(most_form ? "maximum" : "minimum") + " of " +
                to_string(property) + " among the three videos");
  }

  const auto& entry = adjectives.of(property);
  const std::string superlative = most_form ? entry.most : entry.least;
  const std::size_t base = most_form ? 0 : 2;
  std::string user = kPssTemplates[base + template_rng.below(2)];
  replace_first(user, most_form ? "<most_property>" : "<least_property>", superlative);

  std::string target;
  for (int i = 0; i < 3; ++i) {
    target += std::string(1, char('a' + i)) + ") " +
              structured_description(videos[std::size_t(i)].labels) + " ";
  }
  target += "Conclusion: " + std::string(1, char('a' + best)) + ") is the " + superlative + ".";

  ConversationSample s;
  s.task = TaskKind::PSS;
  s.turns = {{"user", user}, {"assistant", target}};
  for (const auto& v : videos) s.video_refs.push_back(v.video_id);
  s.ground_truth.option = char('a' + best);
  s.ground_truth.property = property;
  s.ground_truth.adjective = superlative;
  return s;
}

ConversationSample build_pom(const std::array<LabeledVideo, 3>& videos, Rng& template_rng) {
  std::array<std::string, 3> candidates;
  for (int i = 0; i < 3; ++i) candidates[std::size_t(i)] = videos[std::size_t(i)].display_name;
  std::sort(candidates.begin(), candidates.end());
  require(candidates[0] != candidates[1] && candidates[1] != candidates[2],
          "pom: the three objects must be distinct");

  std::string user = kPomTemplates[template_rng.below(kPomTemplates.size())];
  for (const auto& name : candidates) replace_first(user, "<object>", name);

  std::string target;
  for (int i = 0; i < 3; ++i) {
    target += std::string(1, char('a' + i)) + ") " +
              structured_description(videos[std::size_t(i)].labels) + " ";
  }
  target += "Conclusion: a) is " + videos[0].display_name + ", b) is " +
            videos[1].display_name + " and c) is " + videos[2].display_name + ".";

  ConversationSample s;
  s.task = TaskKind::POM;
  s.turns = {{"user", user}, {"assistant", target}};
  for (const auto& v : videos) s.video_refs.push_back(v.video_id);
  std::array<std::string, 3> matching;
  for (int i = 0; i < 3; ++i) matching[std::size_t(i)] = videos[std::size_t(i)].display_name;
  s.ground_truth.matching = matching;
  s.ground_truth.candidates = candidates;
  return s;
}

ConversationSample build_psr(const LabeledVideo& a, const LabeledVideo& b,
                             const ScenarioSpec& scenario) {
  const int winner = scenario_select(scenario, a.labels, b.labels);
  require(winner >= 0,
          "psr: scenario '" + scenario.id + "' does not distinguish the pair");

  // The scenario question carries its own terminal punctuation, so the
  // template's period after the slot folds into it.
  std::string question = kPsrTemplate;
  const char last = scenario.question.empty() ? '\0' : scenario.question.back();
  if (last == '?' || last == '.' || last == '!') {
    replace_first(question, "<scenario_question>.", scenario.question);
  } else {
    replace_first(question, "<scenario_question>", scenario.question);
  }

  ConversationSample s;
  s.task = TaskKind::PSR;
  s.turns = {{"user", kPsrDescribe},
             {"assistant", "a) " + structured_description(a.labels) + " b) " +
                               structured_description(b.labels)},
             {"user", question}};
  s.video_refs = {a.video_id, b.video_id};
  s.ground_truth.option = winner == 0 ? 'a' : 'b';
  s.ground_truth.scenario_id = scenario.id;
  return s;
}

void validate(const ConversationSample& sample) {
  require(!sample.turns.empty(), "task sample: no turns");
  for (std::size_t i = 0; i < sample.turns.size(); ++i) {
    const std::string& role = sample.turns[i].role;
    require(role == "user" || role == "assistant", "task sample: unknown role " + role);
    const std::string expected = i % 2 == 0 ? "user" : "assistant";
    require(role == expected, "task sample: turn " + std::to_string(i) + " should be " +
                                  expected + ", found " + role);
  }
  int placeholders = 0;
  for (const auto& turn : sample.turns) {
    if (turn.role == "user") placeholders += count_occurrences(turn.text, kImgTokens);
  }
  require(placeholders == int(sample.video_refs.size()),
          "task sample: " + std::to_string(placeholders) + " tactile placeholders for " +
              std::to_string(sample.video_refs.size()) + " video refs");

  const auto& gt = sample.ground_truth;
  switch (sample.task) {
    case TaskKind::OPD:
      require(sample.video_refs.size() == 1 && gt.labels.has_value(),
              "task sample: malformed OPD ground truth");
      break;
    case TaskKind::PC:
      require(sample.video_refs.size() == 2 && gt.yes.has_value() && gt.property.has_value() &&
                  gt.adjective.has_value(),
              "task sample: malformed PC ground truth");
      break;
    case TaskKind::PSS:
      require(sample.video_refs.size() == 3 && gt.option.has_value() &&
                  *gt.option >= 'a' && *gt.option <= 'c' && gt.property.has_value(),
              "task sample: malformed PSS ground truth");
      break;
    case TaskKind::POM: {
      require(sample.video_refs.size() == 3 && gt.matching.has_value() &&
                  gt.candidates.has_value(),
              "task sample: malformed POM ground truth");
      auto sorted = *gt.matching;
      std::sort(sorted.begin(), sorted.end());
      require(sorted == *gt.candidates, "task sample: POM matching is not a permutation of "
                                        "the candidates");
      break;
    }
    case TaskKind::PSR:
      require(sample.video_refs.size() == 2 && gt.option.has_value() &&
                  (*gt.option == 'a' || *gt.option == 'b') && gt.scenario_id.has_value(),
              "task sample: malformed PSR ground truth");
      break;
  }
}

namespace {

struct ObjectPool {
  struct Entry {
    std::string sample_name;
    std::string display_name;
    PropertyLabels labels;
    std::vector<std::string> video_ids;
  };
  std::vector<Entry> entries;

  LabeledVideo pick(std::size_t object_index, Rng& rng) const {
    const Entry& e = entries[object_index];
    return {e.video_ids[rng.below(e.video_ids.size())], e.sample_name, e.display_name,
            e.labels};
  }
};

ObjectPool build_pool(const CorpusIndex& corpus, const std::vector<std::string>& sample_names) {
  ObjectPool pool;
  for (const auto& name : sample_names) {
    ObjectPool::Entry e;
    e.sample_name = name;
    const auto labels = corpus.labels.find(name);
    require(labels != corpus.labels.end(), "task-suite: sample '" + name + "' has no labels");
    e.labels = labels->second;
    const ObjectRecord* object = corpus.find_object(name);
    require(object != nullptr, "task-suite: sample '" + name + "' has no object record");
    e.display_name = object->display_name;
    for (const VideoRef* v : corpus.videos_of(name)) e.video_ids.push_back(v->video_id);
    require(!e.video_ids.empty(), "task-suite: sample '" + name + "' has no videos");
    pool.entries.push_back(std::move(e));
  }
  return pool;
}

std::pair<std::size_t, std::size_t> pick_two(std::size_t n, Rng& rng) {
  const std::size_t i = rng.below(n);
  std::size_t j = rng.below(n - 1);
  if (j >= i) ++j;
  return {i, j};
}

constexpr int kMaxAttempts = 10000;

void strip_to_conclusion(ConversationSample& sample) {
  for (auto& turn : sample.turns) {
    if (turn.role != "assistant") continue;
    const auto at = turn.text.find("Conclusion: ");
    require(at != std::string::npos, "task-suite: target has no conclusion to keep");
    turn.text = turn.text.substr(at);
  }
}

}  // namespace

std::vector<ConversationSample> generate_task_suite(const CorpusIndex& corpus,
                                                    const std::vector<std::string>& sample_names,
                                                    const TaskSuiteConfig& config) {
  require(config.opd >= 0 && config.pc >= 0 && config.pss >= 0 && config.pom >= 0 &&
              config.psr >= 0,
          "task-suite: negative sample count");
  const ObjectPool pool = build_pool(corpus, sample_names);
  const std::size_t n = pool.entries.size();
  if (config.opd > 0) require(n >= 1, "task-suite: OPD needs at least 1 labeled object");
  if (config.pc > 0) require(n >= 2, "task-suite: PC needs at least 2 labeled objects");
  if (config.pss > 0) require(n >= 3, "task-suite: PSS needs at least 3 labeled objects");
  if (config.pom > 0) require(n >= 3, "task-suite: POM needs at least 3 labeled objects");
  if (config.psr > 0) {
    require(n >= 2, "task-suite: PSR needs at least 2 labeled objects");
    require(!config.scenarios.empty(), "task-suite: PSR needs at least one scenario");
  }

  const Rng root(config.seed);
  std::vector<ConversationSample> out;

  {
    Rng rng = root.child(1);
    for (int i = 0; i < config.opd; ++i) {
      out.push_back(build_opd(pool.pick(rng.below(n), rng), rng));
    }
  }
  {
    Rng rng = root.child(2);
    for (int i = 0; i < config.pc; ++i) {
      const auto [a, b] = pick_two(n, rng);
      out.push_back(build_pc(pool.pick(a, rng), pool.pick(b, rng),
                             Property(int(rng.below(3))), rng.below(2) == 0, rng,
                             config.adjectives));
    }
  }
  {
    Rng rng = root.child(3);
    for (int i = 0; i < config.pss; ++i) {
      bool made = false;
      for (int attempt = 0; attempt < kMaxAttempts && !made; ++attempt) {
        const Property property = Property(int(rng.below(3)));
        const bool most_form = rng.below(2) == 0;
        std::vector<int> objects = rng.sample_without_replacement(int(n), 3);
        rng.shuffle(objects);  // sampled indices come back sorted
        std::array<LabeledVideo, 3> videos = {pool.pick(std::size_t(objects[0]), rng),
                                              pool.pick(std::size_t(objects[1]), rng),
                                              pool.pick(std::size_t(objects[2]), rng)};
        std::array<int, 3> levels{};
        for (int v = 0; v < 3; ++v) {
          levels[std::size_t(v)] = videos[std::size_t(v)].labels.levels()[std::size_t(property)];
        }
        const int extremum = most_form ? *std::max_element(levels.begin(), levels.end())
                                       : *std::min_element(levels.begin(), levels.end());
        if (std::count(levels.begin(), levels.end(), extremum) != 1) continue;
        out.push_back(build_pss(videos, property, most_form, rng, config.adjectives));
        made = true;
      }
      require(made, "task-suite: could not generate a valid PSS sample after 10000 attempts");
    }
  }
  {
    Rng rng = root.child(4);
    for (int i = 0; i < config.pom; ++i) {
      bool made = false;
      for (int attempt = 0; attempt < kMaxAttempts && !made; ++attempt) {
        auto objects = rng.sample_without_replacement(int(n), 3);
        rng.shuffle(objects);
        std::array<LabeledVideo, 3> videos = {pool.pick(std::size_t(objects[0]), rng),
                                              pool.pick(std::size_t(objects[1]), rng),
                                              pool.pick(std::size_t(objects[2]), rng)};
        if (videos[0].display_name == videos[1].display_name ||
            videos[1].display_name == videos[2].display_name ||
            videos[0].display_name == videos[2].display_name) {
          continue;
        }
        out.push_back(build_pom(videos, rng));
        made = true;
      }
      require(made, "task-suite: could not generate a valid POM sample after 10000 attempts");
    }
  }
  {
    Rng rng = root.child(5);
    for (int i = 0; i < config.psr; ++i) {
      bool made = false;
      for (int attempt = 0; attempt < kMaxAttempts && !made; ++attempt) {
        const ScenarioSpec& scenario = config.scenarios[rng.below(config.scenarios.size())];
        const auto [a, b] = pick_two(n, rng);
        const LabeledVideo va = pool.pick(a, rng);
        const LabeledVideo vb = pool.pick(b, rng);
        if (scenario_select(scenario, va.labels, vb.labels) < 0) continue;
        out.push_back(build_psr(va, vb, scenario));
        made = true;
      }
      require(made, "task-suite: could not generate a valid PSR sample after 10000 attempts");
    }
  }

  if (config.direct_answers) {
    for (auto& sample : out) {
      if (sample.task == TaskKind::PC || sample.task == TaskKind::PSS ||
          sample.task == TaskKind::POM) {
        strip_to_conclusion(sample);
      }
    }
  }
  for (const auto& sample : out) validate(sample);
  return out;
}

nlohmann::json to_json(const ConversationSample& sample) {
  nlohmann::json turns = nlohmann::json::array();
  for (const auto& turn : sample.turns) {
    turns.push_back({{"role", turn.role}, {"text", turn.text}});
  }
  nlohmann::json gt = nlohmann::json::object();
  const auto& g = sample.ground_truth;
  switch (sample.task) {
    case TaskKind::OPD:
      gt["hardness"] = to_string(g.labels->hardness);
      gt["roughness"] = to_string(g.labels->roughness);
      gt["bumpiness"] = to_string(g.labels->bumpiness);
      break;
    case TaskKind::PC:
      gt["answer"] = *g.yes ? "yes" : "no";
      gt["property"] = to_string(*g.property);
      gt["adjective"] = *g.adjective;
      break;
    case TaskKind::PSS:
      gt["option"] = std::string(1, *g.option);
      gt["property"] = to_string(*g.property);
      gt["superlative"] = *g.adjective;
      break;
    case TaskKind::POM: {
      nlohmann::json matching = nlohmann::json::object();
      for (int i = 0; i < 3; ++i) {
        matching[std::string(1, char('a' + i))] = (*g.matching)[std::size_t(i)];
      }
      gt["matching"] = matching;
      gt["candidates"] = *g.candidates;
      break;
    }
    case TaskKind::PSR:
      gt["option"] = std::string(1, *g.option);
      gt["scenario"] = *g.scenario_id;
      break;
  }
  return {{"task", to_string(sample.task)},
          {"turns", turns},
          {"video_refs", sample.video_refs},
          {"ground_truth", gt}};
}

namespace {

template <typename E>
E category_from_machine(const std::string& s, const char* what) {
  for (int v = 0; v < 3; ++v) {
    if (to_string(E(v)) == s) return E(v);
  }
  fail(std::string("unknown ") + what + " label: " + s);
}

char option_from_json(const nlohmann::json& j) {
  const std::string s = j.get<std::string>();
  require(s.size() == 1 && s[0] >= 'a' && s[0] <= 'c', "ground truth: bad option " + s);
  return s[0];
}

}  // namespace

ConversationSample conversation_from_json(const nlohmann::json& j) {
  ConversationSample s;
  s.task = task_from_string(j.at("task").get<std::string>());
  for (const auto& turn : j.at("turns")) {
    s.turns.push_back({turn.at("role").get<std::string>(), turn.at("text").get<std::string>()});
  }
  s.video_refs = j.at("video_refs").get<std::vector<std::string>>();
  const auto& gt = j.at("ground_truth");
  auto& g = s.ground_truth;
  switch (s.task) {
    case TaskKind::OPD: {
      PropertyLabels labels;
      labels.hardness =
          category_from_machine<Hardness>(gt.at("hardness").get<std::string>(), "hardness");
      labels.roughness =
          category_from_machine<Roughness>(gt.at("roughness").get<std::string>(), "roughness");
      labels.bumpiness =
          category_from_machine<Bumpiness>(gt.at("bumpiness").get<std::string>(), "bumpiness");
      g.labels = labels;
      break;
    }
    case TaskKind::PC: {
      const std::string answer = gt.at("answer").get<std::string>();
      require(answer == "yes" || answer == "no", "ground truth: PC answer must be yes or no");
      g.yes = answer == "yes";
      g.property = property_from_string(gt.at("property").get<std::string>());
      g.adjective = gt.at("adjective").get<std::string>();
      break;
    }
    case TaskKind::PSS:
      g.option = option_from_json(gt.at("option"));
      g.property = property_from_string(gt.at("property").get<std::string>());
      g.adjective = gt.at("superlative").get<std::string>();
      break;
    case TaskKind::POM: {
      std::array<std::string, 3> matching;
      for (int i = 0; i < 3; ++i) {
        matching[std::size_t(i)] =
            gt.at("matching").at(std::string(1, char('a' + i))).get<std::string>();
      }
      g.matching = matching;
      const auto cand = gt.at("candidates").get<std::vector<std::string>>();
      require(cand.size() == 3, "ground truth: POM needs exactly 3 candidates");
      std::array<std::string, 3> candidates;
      std::copy(cand.begin(), cand.end(), candidates.begin());
      g.candidates = candidates;
      break;
    }
    case TaskKind::PSR:
      g.option = option_from_json(gt.at("option"));
      g.scenario_id = gt.at("scenario").get<std::string>();
      break;
  }
  return s;
}

void write_task_jsonl(const std::filesystem::path& path,
                      const std::vector<ConversationSample>& samples) {
  std::string body;
  for (const auto& sample : samples) body += to_json(sample).dump() + "\n";
  write_text_file(path, body);
}

std::vector<ConversationSample> read_task_jsonl(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  std::vector<ConversationSample> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(conversation_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      fail("task manifest " + path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    validate(out.back());
  }
  return out;
}

}  // namespace tlm
