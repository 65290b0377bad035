#pragma once

// Patch-transformer frame encoder with per-layer learnable prompts behind a
// shared projection, average pooling over frames, and three property heads.
// Templated on scalar so gradient checks run in double.

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "tlm/checkpoint.hpp"
#include "tlm/corpus.hpp"
#include "tlm/frames.hpp"
#include "tlm/nn.hpp"

namespace tlm {

struct FrameEncoderConfig {
  int image_size = 32;
  int patch_size = 8;
  int depth = 2;
  int width = 64;
  int heads = 4;
  int mlp_ratio = 4;
  int prompt_count = 8;
  std::string pretrained_backbone;  // optional archive; fills the backbone slot
  bool freeze_backbone = true;

  int patches_per_side() const { return image_size / patch_size; }
  int num_patches() const { return patches_per_side() * patches_per_side(); }
};

void validate(const FrameEncoderConfig& config);
nlohmann::json to_json(const FrameEncoderConfig& config);
FrameEncoderConfig encoder_config_from_json(const nlohmann::json& j);

template <typename S>
struct FrameEncoder {
  FrameEncoderConfig config;
  nn::ParamStore<S> params;

  nn::Linear<S> patch_embed;
  ag::Var<S> cls_token;  // 1 x width
  ag::Var<S> pos_embed;  // (1 + num_patches) x width
  std::vector<nn::Block<S>> blocks;
  nn::LayerNorm<S> out_ln;

  std::vector<ag::Var<S>> prompts;  // depth entries, prompt_count x width
  nn::Linear<S> prompt_proj;        // shared across layers

  std::array<nn::Linear<S>, 3> heads;  // hardness, roughness, bumpiness
};

// Flattens a frame into patch rows: patches in row-major grid order, features
// channel-planar (all red, then green, then blue), row-major within a patch.
template <typename S>
ag::Mat<S> frame_to_patches(const Frame& frame, int patch_size) {
  const int p = patch_size;
  const int side_r = int(frame.rows()) / p;
  const int side_c = int(frame.cols()) / p;
  ag::Mat<S> out(side_r * side_c, 3 * p * p);
  const std::array<const Eigen::MatrixXf*, 3> chans = {&frame.r, &frame.g, &frame.b};
  for (int pr = 0; pr < side_r; ++pr) {
    for (int pc = 0; pc < side_c; ++pc) {
      const Eigen::Index row = Eigen::Index(pr) * side_c + pc;
      for (int ch = 0; ch < 3; ++ch) {
        for (int y = 0; y < p; ++y) {
          for (int x = 0; x < p; ++x) {
            out(row, Eigen::Index(ch * p * p + y * p + x)) =
                S((*chans[std::size_t(ch)])(pr * p + y, pc * p + x));
          }
        }
      }
    }
  }
  return out;
}

template <typename S>
FrameEncoder<S> make_frame_encoder(const FrameEncoderConfig& config, std::uint64_t seed) {
  validate(config);
  FrameEncoder<S> enc;
  enc.config = config;
  Rng rng(seed);
  const double std0 = 0.02;
  const Eigen::Index w = config.width;
  auto& ps = enc.params;

  enc.patch_embed = nn::make_linear<S>(ps, "enc.backbone.patch",
                                       3 * config.patch_size * config.patch_size, w, std0, rng);
  enc.cls_token = ps.add("enc.backbone.cls", nn::randn<S>(1, w, std0, rng), true);
  enc.pos_embed =
      ps.add("enc.backbone.pos", nn::randn<S>(1 + config.num_patches(), w, std0, rng), true);
  for (int i = 0; i < config.depth; ++i) {
    enc.blocks.push_back(nn::make_block<S>(ps, "enc.backbone.block" + std::to_string(i), w,
                                           config.heads, config.mlp_ratio * w, std0, rng));
  }
  enc.out_ln = nn::make_layernorm<S>(ps, "enc.backbone.out_ln", w);

  for (int i = 0; i < config.depth; ++i) {
    enc.prompts.push_back(ps.add("enc.prompt.layer" + std::to_string(i),
                                 nn::randn<S>(config.prompt_count, w, std0, rng), true));
  }
  // Identity start: projected prompts equal raw prompts until trained.
  enc.prompt_proj.W = ps.add("enc.prompt.proj.W", ag::Mat<S>::Identity(w, w), true);
  enc.prompt_proj.b = ps.add("enc.prompt.proj.b", ag::Mat<S>::Zero(1, w), true);

  const std::array<std::string, 3> prop_names = {"hardness", "roughness", "bumpiness"};
  for (int p = 0; p < 3; ++p) {
    enc.heads[std::size_t(p)] =
        nn::make_linear<S>(ps, "enc.head." + prop_names[std::size_t(p)], w, 3, std0, rng);
  }

  if (!config.pretrained_backbone.empty()) {
    load_params_prefix(read_checkpoint(config.pretrained_backbone), ps, "enc.backbone.");
  }
  if (config.freeze_backbone) ps.set_trainable("enc.backbone.", false);
  return enc;
}

// One frame -> 1 x width class-token embedding. Prompts are prepended to every
// layer's input through the shared projection and stripped again afterwards.
template <typename S>
ag::Var<S> encode_frame(const FrameEncoder<S>& enc, const Frame& frame, int frame_index = 0) {
  const auto& cfg = enc.config;
  require(int(frame.rows()) == cfg.image_size && int(frame.cols()) == cfg.image_size,
          "encode: frame " + std::to_string(frame_index) + " is " +
              std::to_string(frame.rows()) + "x" + std::to_string(frame.cols()) +
              ", config expects " + std::to_string(cfg.image_size) + "x" +
              std::to_string(cfg.image_size));
  const Eigen::Index n_tok = 1 + cfg.num_patches();
  ag::Var<S> patches = ag::constant<S>(frame_to_patches<S>(frame, cfg.patch_size));
  ag::Var<S> x = ag::concat_rows<S>({enc.cls_token, enc.patch_embed(patches)});
  x = ag::add(x, enc.pos_embed);
  for (int l = 0; l < cfg.depth; ++l) {
    if (cfg.prompt_count > 0) {
      ag::Var<S> pr = enc.prompt_proj(enc.prompts[std::size_t(l)]);
      x = ag::concat_rows<S>({pr, x});
    }
    x = enc.blocks[std::size_t(l)](x, /*causal=*/false);
    if (cfg.prompt_count > 0) x = ag::slice_rows(x, cfg.prompt_count, n_tok);
  }
  return ag::slice_rows(enc.out_ln(x), 0, 1);
}

// k frames -> k x width, rows in frame order.
template <typename S>
ag::Var<S> encode_frames_graph(const FrameEncoder<S>& enc, const std::vector<Frame>& frames) {
  require(!frames.empty(), "encode: no frames");
  std::vector<ag::Var<S>> rows;
  rows.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    rows.push_back(encode_frame(enc, frames[i], int(i)));
  }
  return ag::concat_rows(rows);
}

// Summed cross-entropy of the three heads against the labels; pooled is the
// 1 x width video embedding.
template <typename S>
ag::Var<S> property_loss(const FrameEncoder<S>& enc, const ag::Var<S>& pooled,
                         const PropertyLabels& labels) {
  const std::array<int, 3> level = labels.levels();
  ag::Var<S> total;
  for (int p = 0; p < 3; ++p) {
    ag::Var<S> logits = enc.heads[std::size_t(p)](pooled);
    ag::Var<S> ce = ag::cross_entropy_rows(logits, {level[std::size_t(p)]});
    total = p == 0 ? ce : ag::add(total, ce);
  }
  return total;
}

// Inference entry points (tape-free).
Eigen::MatrixXf encode_frames(const FrameEncoder<float>& enc, const std::vector<Frame>& frames);
Eigen::MatrixXf encode_frames(const FrameEncoder<float>& enc, const FrameSequence& seq);

// Arithmetic mean over the frame axis.
Eigen::RowVectorXf pool_video(const Eigen::MatrixXf& frame_embeddings);

struct PropertyPrediction {
  Eigen::Matrix3f logits;  // row = property (hardness, roughness, bumpiness)
  PropertyLabels predicted;
};

// Per-head argmax; ties break toward the lowest category index.
PropertyPrediction classify_properties(const Eigen::RowVectorXf& video_embedding,
                                       const FrameEncoder<float>& enc);

struct ClassificationMetrics {
  int n = 0;
  double combined = 0.0;                       // percent
  std::array<double, 3> per_property{};        // percent
  std::array<Eigen::Matrix3i, 3> confusion{};  // row = true label, col = predicted
};

ClassificationMetrics combined_accuracy(const std::vector<PropertyLabels>& predictions,
                                        const std::vector<PropertyLabels>& labels);

struct EncoderTrainConfig {
  int epochs = 30;
  double lr = 1e-3;
  int batch_size = 32;
  double weight_decay = 0.0;  // optimizer is AdamW; decay stays off by default
  int frames_per_video = 5;
  double salience_fraction = 0.3;
  bool augment = true;
  std::uint64_t seed = 0;
  std::filesystem::path log_path;  // JSONL per-epoch log; empty disables
};

struct EncoderMeta {
  int best_epoch = 0;              // 1-based epoch of the selected weights
  double best_val_combined = 0.0;  // percent
  int epochs_run = 0;
};

struct TrainedEncoder {
  FrameEncoder<float> model;
  EncoderMeta meta;
  std::vector<nlohmann::json> log;  // one entry per epoch, mirrors the JSONL
};

// Stage-1 loop: summed three-way cross-entropy, AdamW with cosine annealing,
// checkpoint selection by combined validation accuracy.
TrainedEncoder train_encoder(const CorpusIndex& corpus, const FrameEncoderConfig& config,
                             const EncoderTrainConfig& train);

void save_encoder(const FrameEncoder<float>& enc, const EncoderMeta& meta,
                  const std::filesystem::path& path);
std::pair<FrameEncoder<float>, EncoderMeta> load_encoder(const std::filesystem::path& path);

// Deterministic per-video prediction used by validation and the eval harness:
// uniform-interval frames from the first salient frame, encode, pool, classify.
PropertyPrediction predict_video(const FrameEncoder<float>& enc, const TactileVideo& video,
                                 int frames_per_video = 5, double salience_fraction = 0.3);

}  // namespace tlm
