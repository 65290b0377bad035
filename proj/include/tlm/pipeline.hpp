#pragma once

// Stage wiring over the full assembly: frame encoder -> projection ->
// decoder. Owns checkpoint save/load for the combined model, the alignment
// and end-to-end training loops, and the generation-based task evaluation.
// Stages gate on a tag stored in the checkpoint: "init" -> "align" -> "e2e"
// -> "merged".

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tlm/corpus.hpp"
#include "tlm/encoder.hpp"
#include "tlm/eval.hpp"
#include "tlm/fusion.hpp"
#include "tlm/lm.hpp"
#include "tlm/tasks.hpp"

namespace tlm {

struct Pipeline {
  FrameEncoder<float> encoder;
  EncoderMeta encoder_meta;
  DecoderLM<float> lm;
  Projection<float> proj;
  Tokenizer tokenizer;
  std::optional<LoRAConfig> lora;  // engaged once adapters are attached
  int frames_per_video = 5;
  double salience_fraction = 0.3;
  std::string stage = "init";
};

struct PipelineConfig {
  // vocab_size and context_length are derived from the sample set; the
  // configured context_length acts as a floor, never a ceiling.
  DecoderLMConfig lm;
  int proj_hidden = 0;  // 0: decoder width
  int frames_per_video = 5;
  double salience_fraction = 0.3;
  std::uint64_t seed = 0;
};

// Builds tokenizer, decoder, and projection around a stage-1 encoder. The
// vocabulary covers every string the samples can emit; the context is sized
// to the longest encoded sample plus generation headroom.
Pipeline init_pipeline(FrameEncoder<float> encoder, const EncoderMeta& meta,
                       const std::vector<ConversationSample>& samples,
                       const PipelineConfig& config);

void save_pipeline(const Pipeline& pipe, const std::filesystem::path& path,
                   const nlohmann::json& extra_meta = nlohmann::json::object());
Pipeline load_pipeline(const std::filesystem::path& path);

// Frame selection + encoding for whole videos, with salience profiles cached
// per video id. Training draws are random over the salient set and flipped;
// evaluation draws are deterministic.
class VideoSampler {
public:
  VideoSampler(const CorpusIndex& corpus, int frames_per_video, double salience_fraction);

  // Random salient frames with flip augmentation; consumes rng.
  Eigen::MatrixXf encode_train(const FrameEncoder<float>& enc, const std::string& video_id,
                               Rng& rng);
  // Uniform frames from the first salient frame on; stable across calls.
  Eigen::MatrixXf encode_eval(const FrameEncoder<float>& enc, const std::string& video_id);

private:
  struct CachedVideo {
    const VideoRef* ref = nullptr;
    SalienceProfile profile;
  };
  CachedVideo& cached(const std::string& video_id);

  const CorpusIndex* corpus_;
  int frames_per_video_;
  double salience_fraction_;
  std::map<std::string, CachedVideo> cache_;
};

struct AlignTrainConfig {
  double lr = 2e-5;
  int batch_size = 16;
  int sample_budget = 8000;  // optimizer steps = ceil(budget / batch_size)
  std::uint64_t seed = 0;
  std::filesystem::path log_path;  // JSONL per-step log; empty disables
};

struct E2eTrainConfig {
  double lr_proj = 2e-5;
  double lr_lm = 2e-4;
  int batch_size = 16;
  int sample_budget = 3000;
  bool use_lora = true;
  LoRAConfig lora;
  std::uint64_t seed = 0;
  std::filesystem::path log_path;
};

struct TrainLog {
  std::vector<nlohmann::json> entries;  // one per optimizer step
  double first_loss = 0.0;
  double last_loss = 0.0;
  int steps = 0;
};

// Alignment stage: only the projection and the marker embedding rows move.
// Requires a freshly initialized pipeline; leaves it at stage "align".
TrainLog train_alignment(Pipeline& pipe, const CorpusIndex& corpus,
                         const std::vector<ConversationSample>& samples,
                         const AlignTrainConfig& config);

// End-to-end stage: projection in one group, adapters plus the full
// embedding table in a second, hotter group. Requires stage "align";
// leaves the pipeline at stage "e2e".
TrainLog train_end_to_end(Pipeline& pipe, const CorpusIndex& corpus,
                          const std::vector<ConversationSample>& samples,
                          const E2eTrainConfig& config);

// Folds the adapters into their base weights; stage becomes "merged".
void merge_pipeline_lora(Pipeline& pipe);

struct EvalRunConfig {
  GenerationParams gen;       // greedy by default
  std::uint64_t seed = 0;     // engaged in sample mode only
  bool keep_transcripts = true;
};

struct EvalRun {
  std::vector<TaskReport> reports;          // tasks present, enum order
  std::vector<nlohmann::json> transcripts;  // one entry per sample
};

// Generates an answer per sample and scores it. Closed tasks answer the
// opening user turn directly; PSR runs two rounds, splicing the generated
// description back in as an assistant turn before the final question.
EvalRun evaluate_tasks(Pipeline& pipe, const CorpusIndex& corpus,
                       const std::vector<ConversationSample>& samples,
                       const EvalRunConfig& config);

// Digest of name, shape, and float32 payload of every parameter the filter
// admits, in registration order. Null filter hashes the whole store.
std::uint64_t hash_params(const nn::ParamStore<float>& ps,
                          const std::function<bool(const std::string&)>& filter = {});

// Removes every special-token literal (unk/bos/eos, markers, placeholder)
// from generated text so it can re-enter a conversation as an ordinary turn.
std::string strip_special_tokens(const Tokenizer& tok, std::string text);

// Scores externally supplied response texts against the samples, one string
// per sample, without touching a model. Reports come back in enum order.
std::vector<TaskReport> score_responses(const std::vector<ConversationSample>& samples,
                                        const std::vector<std::string>& responses);

}  // namespace tlm
