#pragma once

#include <array>
#include <filesystem>

#include "tlm/common.hpp"
#include "tlm/corpus.hpp"

namespace tlm {

// Procedural corpus generator. Each property is encoded in its own image
// channel so the three labels stay statistically independent:
//   red    temporal press envelope; softer objects deform more per frame
//   green  static high-frequency noise; rougher objects get larger amplitude
//   blue   bump blobs; small blobs stay under 1/4 of the frame, big exceed it
struct SynthConfig {
  int n_objects = 60;
  int frames_per_video = 60;  // real videos run 50-126 frames
  int videos_per_object = 5;
  int image_size = 32;
  std::uint64_t seed = 0;
  // Each synthetic annotator independently flips a rating to an adjacent
  // category with this probability (at most 0.5). Triples are re-drawn until
  // their aggregate preserves the assigned label, keeping quotas exact.
  double annotator_flip_prob = 0.1;
  // Difficulty knobs: noise_level scales in-class render jitter,
  // class_separation in (0,1] shrinks between-class contrast toward the
  // middle category.
  double noise_level = 1.0;
  double class_separation = 1.0;
  // Draw labels from the published category marginals instead of uniformly.
  bool paper_marginals = false;
  std::array<double, 3> split_ratios = {0.8, 0.1, 0.1};
};

// Renders the corpus into out_dir using the standard directory layout
// (objects.csv, annotations.csv, videos/, splits.json) and returns the loaded
// index. Deterministic given the config.
CorpusIndex generate_corpus(const SynthConfig& config, const std::filesystem::path& out_dir);

// Pixel-statistic reference classifier: recovers labels from the rendered
// channels alone (temporal variation, adjacent-pixel difference, largest
// blob area). Exists to prove the labels are recoverable before any
// learned model is involved.
PropertyLabels oracle_classify(const TactileVideo& video);

// Largest-remainder quota allocation of n items over the given proportions.
std::array<int, 3> quota_allocate(int n, const std::array<double, 3>& proportions);

}  // namespace tlm
