#pragma once

#include <Eigen/Core>

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tlm/common.hpp"
#include "tlm/png_io.hpp"

namespace tlm {

enum class Material { fabric, food, leather, metal, paper, plastic, rubber, silicone, wood };

Material material_from_string(const std::string& s);
std::string to_string(Material m);

// Category 0/1/2 per property. Values double as rating levels.
enum class Hardness { soft = 0, moderately_hard = 1, hard = 2 };
enum class Roughness { smooth = 0, slightly_rough = 1, rough = 2 };
enum class Bumpiness { no_bumps = 0, small_bumps = 1, big_bumps = 2 };

// Machine names (underscored) for files and CLI output.
std::string to_string(Hardness h);
std::string to_string(Roughness r);
std::string to_string(Bumpiness b);

// Natural-language category names used in prompts and descriptions.
std::string phrase(Hardness h);
std::string phrase(Roughness r);
std::string phrase(Bumpiness b);

struct PropertyLabels {
  Hardness hardness = Hardness::soft;
  Roughness roughness = Roughness::smooth;
  Bumpiness bumpiness = Bumpiness::no_bumps;

  std::array<int, 3> levels() const {
    return {int(hardness), int(roughness), int(bumpiness)};
  }
  friend bool operator==(const PropertyLabels&, const PropertyLabels&) = default;
};

PropertyLabels labels_from_levels(int h, int r, int b);

struct ObjectRecord {
  std::string object_id;
  std::string display_name;
  std::string sample_name;
  // Container records that only group parts carry no material of their own.
  std::optional<Material> material;
  std::optional<std::string> part_of;
};

struct AnnotationTriple {
  std::string sample_name;
  std::array<int, 3> hardness{};
  std::array<int, 3> roughness{};
  std::array<int, 3> bumpiness{};
};

enum class VideoSource { real, synthetic };

struct TactileVideo {
  std::string video_id;
  std::string sample_name;
  std::vector<Frame> frames;
  VideoSource source = VideoSource::real;
};

// Handle to an on-disk video; frames are decoded on demand via load_video.
struct VideoRef {
  std::string video_id;
  std::string sample_name;
  std::filesystem::path dir;
  int frame_count = 0;
  VideoSource source = VideoSource::real;
};

TactileVideo load_video(const VideoRef& ref);
Frame load_video_frame(const VideoRef& ref, int index);
std::string frame_file_name(int index);

struct SplitAssignment {
  std::vector<std::string> train, val, test;
};

struct CorpusIndex {
  std::filesystem::path root;
  std::vector<ObjectRecord> objects;
  std::vector<VideoRef> videos;
  std::map<std::string, AnnotationTriple> annotations;
  std::map<std::string, PropertyLabels> labels;
  SplitAssignment splits;

  const ObjectRecord* find_object(const std::string& sample_name) const;
  const ObjectRecord* find_object_by_id(const std::string& object_id) const;
  std::vector<const VideoRef*> videos_of(const std::string& sample_name) const;
};

// Mean of the ratings per property, rounded half away from zero, mapped onto
// the category enums. Errors name the sample and property of a bad rating.
PropertyLabels aggregate_annotations(const AnnotationTriple& triple);
int aggregate_ratings(const std::vector<int>& ratings, const std::string& sample_name,
                      const std::string& property_name);

// Two-way mixed, consistency, average-measures intraclass correlation:
// ICC(3,k) = (MS_targets - MS_error) / MS_targets, targets are rows.
double icc3k(const Eigen::MatrixXd& ratings);

// Seeded random split; sizes are floor-allocated with the remainder to train.
SplitAssignment make_splits(const std::vector<std::string>& sample_names,
                            std::array<double, 3> ratios, std::uint64_t seed);

struct PropertyStats {
  int total = 0;
  std::array<int, 3> hardness_counts{}, roughness_counts{}, bumpiness_counts{};
  std::array<double, 3> hardness_pct{}, roughness_pct{}, bumpiness_pct{};
  std::array<int, 27> combination_counts{};  // indexed h*9 + r*3 + b

  int combination(int h, int r, int b) const { return combination_counts[h * 9 + r * 3 + b]; }
};

PropertyStats property_stats(const CorpusIndex& corpus);

// Loads objects.csv, annotations.csv, videos/, and splits.json (if present)
// from a corpus directory. Aggregated labels are derived from annotations.
CorpusIndex load_corpus(const std::filesystem::path& dir);

// Checks corpus invariants; reports the first violation. When require_splits
// is false an absent split assignment is tolerated (pre-split corpora).
void validate_corpus(const CorpusIndex& corpus, bool require_splits = true);

void write_splits_json(const std::filesystem::path& path, const SplitAssignment& splits);
SplitAssignment read_splits_json(const std::filesystem::path& path);

}  // namespace tlm
