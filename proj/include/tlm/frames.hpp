#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tlm/common.hpp"
#include "tlm/corpus.hpp"

namespace tlm {

struct FrameSequence {
  std::string video_id;
  std::vector<int> indices;  // strictly increasing positions into the source video
  std::vector<Frame> frames;
};

struct SalienceProfile {
  std::string video_id;
  std::vector<double> scores;        // one per frame; frame 0 has no predecessor, score 0
  std::vector<int> salient_indices;  // ascending
};

enum class EvalSpan { video, salient };

Frame flip_horizontal(const Frame& f);
Frame flip_vertical(const Frame& f);

// Score of frame i (i >= 1) is the total absolute intensity difference to its
// predecessor; the top ceil(fraction*(N-1)) frames are salient, ties broken
// toward the earlier index.
SalienceProfile salience(const TactileVideo& video, double fraction = 0.3);

// k salient indices drawn uniformly without replacement, returned ascending.
std::vector<int> sample_train_indices(const SalienceProfile& profile, int k, Rng& rng);
FrameSequence sample_train(const TactileVideo& video, const SalienceProfile& profile, int k,
                           Rng& rng);

// k indices at uniform intervals from the first salient frame to the end of
// the video: round(f + j*(L-f)/(k-1)), round half up. The salient span
// alternative spreads the positions over the salient subset instead.
std::vector<int> sample_eval_indices(const SalienceProfile& profile, int video_length, int k,
                                     EvalSpan span = EvalSpan::video);
FrameSequence sample_eval(const TactileVideo& video, const SalienceProfile& profile, int k = 5,
                          EvalSpan span = EvalSpan::video);

// One horizontal and one vertical Bernoulli(0.5) flip per sequence, applied
// identically to every frame. The horizontal draw comes first.
FrameSequence augment(const FrameSequence& seq, Rng& rng);

void write_salience_json(const std::filesystem::path& path, const SalienceProfile& profile);
SalienceProfile read_salience_json(const std::filesystem::path& path);

}  // namespace tlm
