#include "tlm/encoder.hpp"

#include <fstream>

namespace tlm {

void validate(const FrameEncoderConfig& config) {
  require(config.image_size > 0 && config.patch_size > 0,
          "encoder config: image_size and patch_size must be positive");
  require(config.image_size % config.patch_size == 0,
          "encoder config: image_size " + std::to_string(config.image_size) +
              " is not divisible by patch_size " + std::to_string(config.patch_size));
  require(config.depth >= 1, "encoder config: depth must be >= 1");
  require(config.width >= 1 && config.heads >= 1 && config.width % config.heads == 0,
          "encoder config: width must be a positive multiple of heads");
  require(config.mlp_ratio >= 1, "encoder config: mlp_ratio must be >= 1");
  require(config.prompt_count >= 0, "encoder config: prompt_count must be >= 0");
}

nlohmann::json to_json(const FrameEncoderConfig& config) {
  return {{"image_size", config.image_size},
          {"patch_size", config.patch_size},
          {"depth", config.depth},
          {"width", config.width},
          {"heads", config.heads},
          {"mlp_ratio", config.mlp_ratio},
          {"prompt_count", config.prompt_count},
          {"pretrained_backbone", config.pretrained_backbone},
          {"freeze_backbone", config.freeze_backbone}};
}

FrameEncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  FrameEncoderConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.patch_size = j.at("patch_size").get<int>();
  c.depth = j.at("depth").get<int>();
  c.width = j.at("width").get<int>();
  c.heads = j.at("heads").get<int>();
  c.mlp_ratio = j.value("mlp_ratio", 4);
  c.prompt_count = j.at("prompt_count").get<int>();
  c.pretrained_backbone = j.value("pretrained_backbone", std::string());
  c.freeze_backbone = j.value("freeze_backbone", true);
  validate(c);
  return c;
}

Eigen::MatrixXf encode_frames(const FrameEncoder<float>& enc, const std::vector<Frame>& frames) {
  ag::NoGradGuard no_grad;
  return encode_frames_graph(enc, frames)->value;
}

Eigen::MatrixXf encode_frames(const FrameEncoder<float>& enc, const FrameSequence& seq) {
  return encode_frames(enc, seq.frames);
}

Eigen::RowVectorXf pool_video(const Eigen::MatrixXf& frame_embeddings) {
  require(frame_embeddings.rows() > 0, "pool_video: no frame embeddings");
  return frame_embeddings.colwise().mean();
}

namespace {

int argmax3(const Eigen::RowVector3f& logits) {
  int best = 0;
  for (int j = 1; j < 3; ++j) {
    if (logits(j) > logits(best)) best = j;
  }
  return best;
}

}  // namespace

PropertyPrediction classify_properties(const Eigen::RowVectorXf& video_embedding,
                                       const FrameEncoder<float>& enc) {
  require(video_embedding.cols() == enc.config.width,
          "classify: embedding width " + std::to_string(video_embedding.cols()) +
              ", config expects " + std::to_string(enc.config.width));
  PropertyPrediction out;
  std::array<int, 3> level{};
  for (int p = 0; p < 3; ++p) {
    const auto& head = enc.heads[std::size_t(p)];
    out.logits.row(p) = video_embedding * head.W->value + head.b->value;
    level[std::size_t(p)] = argmax3(out.logits.row(p));
  }
  out.predicted = labels_from_levels(level[0], level[1], level[2]);
  return out;
}

ClassificationMetrics combined_accuracy(const std::vector<PropertyLabels>& predictions,
                                        const std::vector<PropertyLabels>& labels) {
  require(predictions.size() == labels.size(),
          "combined_accuracy: " + std::to_string(predictions.size()) + " predictions vs " +
              std::to_string(labels.size()) + " labels");
  require(!predictions.empty(), "combined_accuracy: no samples");
  ClassificationMetrics m;
  m.n = int(predictions.size());
  for (auto& c : m.confusion) c.setZero();
  std::array<int, 3> prop_correct{};
  int all_correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto pred = predictions[i].levels();
    const auto truth = labels[i].levels();
    bool all = true;
    for (int p = 0; p < 3; ++p) {
      m.confusion[std::size_t(p)](truth[std::size_t(p)], pred[std::size_t(p)]) += 1;
      if (pred[std::size_t(p)] == truth[std::size_t(p)]) {
        prop_correct[std::size_t(p)] += 1;
      } else {
        all = false;
      }
    }
    if (all) ++all_correct;
  }
  m.combined = 100.0 * all_correct / m.n;
  for (int p = 0; p < 3; ++p) {
    m.per_property[std::size_t(p)] = 100.0 * prop_correct[std::size_t(p)] / m.n;
  }
  return m;
}

namespace {

struct TrainItem {
  TactileVideo video;
  SalienceProfile profile;
  PropertyLabels labels;
};

std::vector<TrainItem> load_items(const CorpusIndex& corpus,
                                  const std::vector<std::string>& samples, double fraction,
                                  const char* split_name) {
  std::vector<TrainItem> items;
  for (const auto& name : samples) {
    const auto it = corpus.labels.find(name);
    require(it != corpus.labels.end(),
            std::string("train-encoder: sample '") + name + "' in the " + split_name +
                " split has no labels");
    for (const VideoRef* ref : corpus.videos_of(name)) {
      TrainItem item;
      item.video = load_video(*ref);
      item.profile = salience(item.video, fraction);
      item.labels = it->second;
      items.push_back(std::move(item));
    }
  }
  require(!items.empty(),
          std::string("train-encoder: ") + split_name + " split has no videos");
  return items;
}

ClassificationMetrics eval_items(const FrameEncoder<float>& enc,
                                 const std::vector<TrainItem>& items, int k) {
  std::vector<PropertyLabels> preds, truths;
  for (const auto& item : items) {
    const FrameSequence seq = sample_eval(item.video, item.profile, k);
    const Eigen::RowVectorXf pooled = pool_video(encode_frames(enc, seq.frames));
    preds.push_back(classify_properties(pooled, enc).predicted);
    truths.push_back(item.labels);
  }
  return combined_accuracy(preds, truths);
}

}  // namespace

PropertyPrediction predict_video(const FrameEncoder<float>& enc, const TactileVideo& video,
                                 int frames_per_video, double salience_fraction) {
  const SalienceProfile profile = salience(video, salience_fraction);
  const FrameSequence seq = sample_eval(video, profile, frames_per_video);
  return classify_properties(pool_video(encode_frames(enc, seq.frames)), enc);
}

TrainedEncoder train_encoder(const CorpusIndex& corpus, const FrameEncoderConfig& config,
                             const EncoderTrainConfig& train) {
  require(train.epochs >= 1, "train-encoder: epochs must be >= 1");
  require(train.batch_size >= 1, "train-encoder: batch_size must be >= 1");
  require(train.frames_per_video >= 1, "train-encoder: frames_per_video must be >= 1");
  require(!corpus.splits.train.empty(), "train-encoder: train split is empty");
  require(!corpus.splits.val.empty(), "train-encoder: val split is empty");

  auto train_items =
      load_items(corpus, corpus.splits.train, train.salience_fraction, "train");
  auto val_items = load_items(corpus, corpus.splits.val, train.salience_fraction, "val");

  TrainedEncoder out;
  out.model = make_frame_encoder<float>(config, train.seed);
  auto& enc = out.model;

  nn::AdamW<float> opt;
  opt.weight_decay = train.weight_decay;
  opt.groups.push_back({enc.params.trainable(), train.lr});

  Rng rng = Rng(train.seed).child(0xe0c0de);
  const int n = int(train_items.size());
  const int steps_per_epoch = (n + train.batch_size - 1) / train.batch_size;
  const int total_steps = train.epochs * steps_per_epoch;

  std::vector<int> order(train_items.size());
  std::iota(order.begin(), order.end(), 0);

  std::ofstream log_file;
  if (!train.log_path.empty()) {
    if (train.log_path.has_parent_path()) {
      std::filesystem::create_directories(train.log_path.parent_path());
    }
    log_file.open(train.log_path, std::ios::trunc);
    require(bool(log_file), "train-encoder: cannot open log: " + train.log_path.string());
  }

  std::vector<Eigen::MatrixXf> best_values;
  int step = 0;
  for (int epoch = 1; epoch <= train.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    int epoch_items = 0;
    double lr_logged = 0.0;
    for (int start = 0; start < n; start += train.batch_size) {
      const int batch = std::min(train.batch_size, n - start);
      std::vector<ag::Var<float>> losses;
      losses.reserve(std::size_t(batch));
      for (int i = 0; i < batch; ++i) {
        const TrainItem& item = train_items[std::size_t(order[std::size_t(start + i)])];
        FrameSequence seq =
            sample_train(item.video, item.profile, train.frames_per_video, rng);
        if (train.augment) seq = augment(seq, rng);
        ag::Var<float> pooled = ag::rows_mean(encode_frames_graph(enc, seq.frames));
        losses.push_back(property_loss(enc, pooled, item.labels));
      }
      ag::Var<float> loss = ag::weighted_sum(
          losses, std::vector<float>(losses.size(), 1.0f / float(batch)));
      const double loss_value = double(loss->value(0, 0));
      require(std::isfinite(loss_value),
              "train-encoder: non-finite loss at epoch " + std::to_string(epoch) + " step " +
                  std::to_string(step) + "; lower the learning rate");
      epoch_loss += loss_value * batch;
      epoch_items += batch;

      opt.zero_grad();
      ag::backward(loss);
      const double factor = nn::cosine_factor(step, total_steps);
      lr_logged = train.lr * factor;
      opt.step(factor);
      ++step;
    }

    const ClassificationMetrics val = eval_items(enc, val_items, train.frames_per_video);
    nlohmann::json line = {{"epoch", epoch},
                           {"lr", lr_logged},
                           {"loss", epoch_loss / epoch_items},
                           {"val_combined", val.combined},
                           {"val_hardness", val.per_property[0]},
                           {"val_roughness", val.per_property[1]},
                           {"val_bumpiness", val.per_property[2]}};
    out.log.push_back(line);
    if (log_file.is_open()) log_file << line.dump() << "\n";

    if (out.meta.best_epoch == 0 || val.combined > out.meta.best_val_combined) {
      out.meta.best_epoch = epoch;
      out.meta.best_val_combined = val.combined;
      best_values.clear();
      for (const auto& [name, v] : enc.params.items) best_values.push_back(v->value);
    }
  }
  out.meta.epochs_run = train.epochs;

  for (std::size_t i = 0; i < enc.params.items.size(); ++i) {
    enc.params.items[i].second->value = best_values[i];
  }
  return out;
}

void save_encoder(const FrameEncoder<float>& enc, const EncoderMeta& meta,
                  const std::filesystem::path& path) {
  CheckpointData data;
  data.config = to_json(enc.config);
  data.meta = {{"stage", "encoder"},
               {"best_epoch", meta.best_epoch},
               {"best_val_combined", meta.best_val_combined},
               {"epochs_run", meta.epochs_run}};
  data.tensors = snapshot_params(enc.params);
  write_checkpoint(path, data);
}

std::pair<FrameEncoder<float>, EncoderMeta> load_encoder(const std::filesystem::path& path) {
  CheckpointData data = read_checkpoint(path);
  require(data.meta.value("stage", "") == "encoder",
          "checkpoint: " + path.string() + " is not an encoder checkpoint");
  FrameEncoderConfig config = encoder_config_from_json(data.config);
  // The archive already holds the trained backbone; do not chase the original
  // external slot when rebuilding.
  config.pretrained_backbone.clear();
  FrameEncoder<float> enc = make_frame_encoder<float>(config, 0);
  load_params(data, enc.params);
  EncoderMeta meta;
  meta.best_epoch = data.meta.value("best_epoch", 0);
  meta.best_val_combined = data.meta.value("best_val_combined", 0.0);
  meta.epochs_run = data.meta.value("epochs_run", 0);
  return {std::move(enc), meta};
}

}  // namespace tlm
