#pragma once

// Conversation dataset generators for the five tactile-language tasks:
// object property description (OPD), property comparison (PC), property
// superlative selection (PSS), property-object matching (POM), and scenario
// reasoning (PSR). Prompts come verbatim from fixed template lists; targets
// are composed from structured property descriptions so every ground truth is
// recomputable from the labels alone. PSR is evaluation-only.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tlm/corpus.hpp"

namespace tlm {

enum class TaskKind { OPD, PC, PSS, POM, PSR };

std::string to_string(TaskKind task);
TaskKind task_from_string(const std::string& s);

enum class Property { hardness = 0, roughness = 1, bumpiness = 2 };

std::string to_string(Property p);
Property property_from_string(const std::string& s);

// Comparative and superlative phrasing per property. The "more" direction
// means a strictly greater category index.
struct AdjectiveTable {
  struct Entry {
    std::string more, less, most, least;
  };
  std::array<Entry, 3> entries = {{
      {"harder", "softer", "hardest", "softest"},
      {"rougher", "smoother", "roughest", "smoothest"},
      {"covered with bigger bumps", "covered with smaller bumps", "bumpiest", "least bumpy"},
  }};
  const Entry& of(Property p) const { return entries[std::size_t(p)]; }
};

struct ChatTurn {
  std::string role;  // "user" or "assistant"
  std::string text;
  friend bool operator==(const ChatTurn&, const ChatTurn&) = default;
};

// Task-specific answer key; only the fields of the owning task are engaged.
struct GroundTruth {
  std::optional<PropertyLabels> labels;                 // OPD
  std::optional<bool> yes;                              // PC
  std::optional<Property> property;                     // PC, PSS
  std::optional<std::string> adjective;                 // PC comparative, PSS superlative
  std::optional<char> option;                           // PSS, PSR: 'a'..'c'
  std::optional<std::array<std::string, 3>> matching;   // POM: letter -> display name
  std::optional<std::array<std::string, 3>> candidates; // POM: alphabetical listing
  std::optional<std::string> scenario_id;               // PSR
};

struct ConversationSample {
  TaskKind task = TaskKind::OPD;
  std::vector<ChatTurn> turns;
  std::vector<std::string> video_refs;
  GroundTruth ground_truth;
};

// A video paired with everything target composition needs.
struct LabeledVideo {
  std::string video_id;
  std::string sample_name;
  std::string display_name;
  PropertyLabels labels;
};

// Scenario rule over two candidates: score each object's selected property
// indices, combine, then prefer the strictly lower or higher score.
struct ScenarioSpec {
  std::string id;
  std::string question;  // verbatim, keeps its terminal punctuation
  std::vector<Property> properties;
  enum class Combine { sum, max } combine = Combine::sum;
  enum class Prefer { lower, higher } prefer = Prefer::higher;
};

int scenario_score(const ScenarioSpec& spec, const PropertyLabels& labels);
// 0 or 1 for the suitable object, -1 when the rule cannot distinguish.
int scenario_select(const ScenarioSpec& spec, const PropertyLabels& a, const PropertyLabels& b);

const std::vector<ScenarioSpec>& shipped_scenarios();
nlohmann::json to_json(const ScenarioSpec& spec);
ScenarioSpec scenario_from_json(const nlohmann::json& j);
std::vector<ScenarioSpec> read_scenarios_json(const std::filesystem::path& path);

// "Overall, it presents a {h} and {r} surface with {b}."
std::string structured_description(const PropertyLabels& labels);

ConversationSample build_opd(const LabeledVideo& video, Rng& template_rng);

// more_form selects the "more" comparative; the answer is yes iff the first
// object's category index is strictly beyond the second's in that direction.
ConversationSample build_pc(const LabeledVideo& first, const LabeledVideo& second,
                            Property property, bool more_form, Rng& template_rng,
                            const AdjectiveTable& adjectives = {});

// most_form selects the "most" superlative; the extremum must be unique.
ConversationSample build_pss(const std::array<LabeledVideo, 3>& videos, Property property,
                             bool most_form, Rng& template_rng,
                             const AdjectiveTable& adjectives = {});

ConversationSample build_pom(const std::array<LabeledVideo, 3>& videos, Rng& template_rng);

// Two turns: describe both objects, then resolve the scenario.
ConversationSample build_psr(const LabeledVideo& a, const LabeledVideo& b,
                             const ScenarioSpec& scenario);

// Placeholder-per-video and per-task ground-truth shape checks.
void validate(const ConversationSample& sample);

struct TaskSuiteConfig {
  int opd = 0, pc = 0, pss = 0, pom = 0, psr = 0;
  std::uint64_t seed = 0;
  // Strips assistant targets of PC/PSS/POM down to the conclusion sentence
  // (the no-description ablation).
  bool direct_answers = false;
  AdjectiveTable adjectives;
  std::vector<ScenarioSpec> scenarios = shipped_scenarios();
};

// Draws task samples over the named corpus objects. Deterministic per seed;
// each task consumes an independent rng stream.
std::vector<ConversationSample> generate_task_suite(const CorpusIndex& corpus,
                                                    const std::vector<std::string>& sample_names,
                                                    const TaskSuiteConfig& config);

nlohmann::json to_json(const ConversationSample& sample);
ConversationSample conversation_from_json(const nlohmann::json& j);

void write_task_jsonl(const std::filesystem::path& path,
                      const std::vector<ConversationSample>& samples);
std::vector<ConversationSample> read_task_jsonl(const std::filesystem::path& path);

}  // namespace tlm
