#include "tlm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "tlm/checkpoint.hpp"

namespace tlm {

namespace {

// Enough positions past the longest sample for two generation rounds at the
// default budget (the scenario task answers in round two).
constexpr int kContextHeadroom = 288;

nlohmann::json meta_to_json(const EncoderMeta& meta) {
  return {{"best_epoch", meta.best_epoch},
          {"best_val_combined", meta.best_val_combined},
          {"epochs_run", meta.epochs_run}};
}

EncoderMeta meta_from_json(const nlohmann::json& j) {
  EncoderMeta meta;
  meta.best_epoch = j.value("best_epoch", 0);
  meta.best_val_combined = j.value("best_val_combined", 0.0);
  meta.epochs_run = j.value("epochs_run", 0);
  return meta;
}

TokenizedPrompt encode_sample(const Tokenizer& tok, const ConversationSample& sample,
                              int frames_per_video) {
  require(!sample.turns.empty(), "pipeline: sample has no turns");
  if (sample.turns.back().role == "assistant") {
    return encode_conversation(tok, sample.turns, frames_per_video);
  }
  return encode_generation_prompt(tok, sample.turns, frames_per_video);
}

}  // namespace

Pipeline init_pipeline(FrameEncoder<float> encoder, const EncoderMeta& meta,
                       const std::vector<ConversationSample>& samples,
                       const PipelineConfig& config) {
  require(!samples.empty(), "init: no samples to size the vocabulary from");
  require(config.frames_per_video >= 1, "init: frames_per_video must be at least 1");
  require(config.salience_fraction > 0.0 && config.salience_fraction <= 1.0,
          "init: salience_fraction must lie in (0, 1]");

  Pipeline pipe;
  pipe.encoder = std::move(encoder);
  pipe.encoder_meta = meta;
  pipe.frames_per_video = config.frames_per_video;
  pipe.salience_fraction = config.salience_fraction;
  pipe.tokenizer = build_tokenizer(conversation_texts(samples));

  // The markers enter the real tokenizer later via extend_vocab; a throwaway
  // copy gets them early so sample lengths can be measured exactly.
  Tokenizer measure = pipe.tokenizer;
  measure.add_token(kTactStart);
  measure.add_token(kTactEnd);
  int longest = 0;
  for (const auto& sample : samples) {
    const TokenizedPrompt p = encode_sample(measure, sample, config.frames_per_video);
    longest = std::max(longest, int(p.ids.size()));
  }

  DecoderLMConfig lm_cfg = config.lm;
  lm_cfg.vocab_size = pipe.tokenizer.size();
  lm_cfg.context_length = std::max(config.lm.context_length, longest + kContextHeadroom);
  pipe.lm = make_decoder_lm<float>(lm_cfg, config.seed);
  extend_vocab(pipe.lm, pipe.tokenizer);

  ProjectionConfig proj_cfg;
  proj_cfg.width_enc = pipe.encoder.config.width;
  proj_cfg.width_hidden = config.proj_hidden;
  proj_cfg.width_lm = lm_cfg.width;
  pipe.proj = make_projection<float>(proj_cfg, config.seed + 1);

  pipe.stage = "init";
  return pipe;
}

void save_pipeline(const Pipeline& pipe, const std::filesystem::path& path,
                   const nlohmann::json& extra_meta) {
  CheckpointData data;
  FrameEncoderConfig enc_cfg = pipe.encoder.config;
  enc_cfg.pretrained_backbone.clear();  // weights travel in this archive
  data.config["encoder"] = to_json(enc_cfg);
  data.config["encoder_meta"] = meta_to_json(pipe.encoder_meta);
  data.config["lm"] = to_json(pipe.lm.config);
  data.config["projection"] = to_json(pipe.proj.config);
  data.config["tokenizer"] = pipe.tokenizer.tokens;
  data.config["frames_per_video"] = pipe.frames_per_video;
  data.config["salience_fraction"] = pipe.salience_fraction;
  if (pipe.lora) data.config["lora"] = to_json(*pipe.lora);

  data.meta = extra_meta;
  data.meta["stage"] = pipe.stage;

  data.tensors = snapshot_params(pipe.encoder.params);
  for (auto& t : snapshot_params(pipe.lm.params)) data.tensors.push_back(std::move(t));
  for (auto& t : snapshot_params(pipe.proj.params)) data.tensors.push_back(std::move(t));
  write_checkpoint(path, data);
}

Pipeline load_pipeline(const std::filesystem::path& path) {
  const CheckpointData data = read_checkpoint(path);
  for (const char* key : {"encoder", "lm", "projection", "tokenizer"}) {
    require(data.config.contains(key), "pipeline checkpoint: config lacks the '" +
                                           std::string(key) + "' section: " + path.string());
  }

  Pipeline pipe;
  pipe.tokenizer = tokenizer_from_tokens(data.config.at("tokenizer").get<std::vector<std::string>>());
  FrameEncoderConfig enc_cfg = encoder_config_from_json(data.config.at("encoder"));
  enc_cfg.pretrained_backbone.clear();
  pipe.encoder = make_frame_encoder<float>(enc_cfg, 0);
  pipe.encoder_meta = meta_from_json(data.config.value("encoder_meta", nlohmann::json::object()));

  pipe.lm = make_decoder_lm<float>(lm_config_from_json(data.config.at("lm")), 0);
  if (data.find("lm.embed.markers") != nullptr) {
    pipe.lm.markers = pipe.lm.params.add(
        "lm.embed.markers", Eigen::MatrixXf::Zero(2, pipe.lm.config.width), true);
  }
  if (data.config.contains("lora")) {
    const LoRAConfig lora_cfg = lora_config_from_json(data.config.at("lora"));
    Rng wrap_rng(0);  // adapter values come from the archive
    lora_wrap(pipe.lm, lora_cfg, wrap_rng);
    pipe.lora = lora_cfg;
  }
  pipe.proj = make_projection<float>(projection_config_from_json(data.config.at("projection")), 0);
  pipe.frames_per_video = data.config.value("frames_per_video", 5);
  pipe.salience_fraction = data.config.value("salience_fraction", 0.3);
  pipe.stage = data.meta.value("stage", "init");

  const std::size_t expected = pipe.encoder.params.items.size() + pipe.lm.params.items.size() +
                               pipe.proj.params.items.size();
  require(data.tensors.size() == expected,
          "pipeline checkpoint: archive holds " + std::to_string(data.tensors.size()) +
              " tensors but the model has " + std::to_string(expected) + " parameters");
  load_params_prefix(data, pipe.encoder.params, "enc.");
  load_params_prefix(data, pipe.lm.params, "lm.");
  load_params_prefix(data, pipe.proj.params, "proj.");
  return pipe;
}

// ---- video sampling ----

VideoSampler::VideoSampler(const CorpusIndex& corpus, int frames_per_video,
                           double salience_fraction)
    : corpus_(&corpus),
      frames_per_video_(frames_per_video),
      salience_fraction_(salience_fraction) {
  require(frames_per_video >= 1, "sampler: frames_per_video must be at least 1");
}

VideoSampler::CachedVideo& VideoSampler::cached(const std::string& video_id) {
  auto it = cache_.find(video_id);
  if (it != cache_.end()) return it->second;

  const VideoRef* ref = nullptr;
  for (const VideoRef& v : corpus_->videos) {
    if (v.video_id == video_id) {
      ref = &v;
      break;
    }
  }
  require(ref != nullptr, "sampler: video '" + video_id + "' is not in the corpus");
  CachedVideo cv;
  cv.ref = ref;
  cv.profile = salience(load_video(*ref), salience_fraction_);
  return cache_.emplace(video_id, std::move(cv)).first->second;
}

Eigen::MatrixXf VideoSampler::encode_train(const FrameEncoder<float>& enc,
                                           const std::string& video_id, Rng& rng) {
  CachedVideo& cv = cached(video_id);
  FrameSequence seq;
  seq.video_id = video_id;
  seq.indices = sample_train_indices(cv.profile, frames_per_video_, rng);
  seq.frames.reserve(seq.indices.size());
  for (const int index : seq.indices) seq.frames.push_back(load_video_frame(*cv.ref, index));
  seq = augment(seq, rng);
  ag::NoGradGuard guard;
  return encode_frames(enc, seq);
}

Eigen::MatrixXf VideoSampler::encode_eval(const FrameEncoder<float>& enc,
                                          const std::string& video_id) {
  CachedVideo& cv = cached(video_id);
  FrameSequence seq;
  seq.video_id = video_id;
  seq.indices = sample_eval_indices(cv.profile, cv.ref->frame_count, frames_per_video_);
  seq.frames.reserve(seq.indices.size());
  for (const int index : seq.indices) seq.frames.push_back(load_video_frame(*cv.ref, index));
  ag::NoGradGuard guard;
  return encode_frames(enc, seq);
}

// ---- training ----

namespace {

struct EncodedSample {
  const ConversationSample* sample = nullptr;
  TokenizedPrompt prompt;
  std::string label;
  float masked = 0.0f;  // loss-bearing positions, the batch weight
};

std::vector<EncodedSample> encode_training_set(const Pipeline& pipe,
                                               const std::vector<ConversationSample>& samples,
                                               const std::string& stage_name) {
  require(!samples.empty(), stage_name + ": empty sample set");
  std::vector<EncodedSample> out;
  out.reserve(samples.size());
  std::array<int, 5> per_task{};
  for (const ConversationSample& sample : samples) {
    EncodedSample item;
    item.sample = &sample;
    item.label = to_string(sample.task) + "-" +
                 std::to_string(per_task[std::size_t(sample.task)]++);
    require(!sample.turns.empty() && sample.turns.back().role == "assistant",
            stage_name + ": sample " + item.label +
                " has no assistant reply to train on; open-ended samples are evaluation-only");
    item.prompt = encode_conversation(pipe.tokenizer, sample.turns, pipe.frames_per_video);
    require(int(item.prompt.ids.size()) <= pipe.lm.config.context_length,
            stage_name + ": sample " + item.label + " needs " +
                std::to_string(item.prompt.ids.size()) + " positions but the context holds " +
                std::to_string(pipe.lm.config.context_length));
    require(int(sample.video_refs.size()) == item.prompt.num_videos,
            stage_name + ": sample " + item.label + " binds " +
                std::to_string(sample.video_refs.size()) + " videos to " +
                std::to_string(item.prompt.num_videos) + " placeholder runs");
    for (const int t : item.prompt.targets) item.masked += (t >= 0) ? 1.0f : 0.0f;
    out.push_back(std::move(item));
  }
  return out;
}

TrainLog run_stage(Pipeline& pipe, const CorpusIndex& corpus,
                   const std::vector<EncodedSample>& items, nn::AdamW<float>& opt,
                   int batch_size, int sample_budget, std::uint64_t seed,
                   const std::filesystem::path& log_path, const std::string& stage_name,
                   Rng* lora_rng, bool training_mode) {
  require(batch_size >= 1, stage_name + ": batch_size must be positive");
  require(sample_budget >= 1, stage_name + ": sample_budget must be positive");

  std::ofstream log_file;
  if (!log_path.empty()) {
    if (log_path.has_parent_path()) std::filesystem::create_directories(log_path.parent_path());
    log_file.open(log_path, std::ios::trunc);
    require(bool(log_file), stage_name + ": cannot open log: " + log_path.string());
  }

  const int steps = (sample_budget + batch_size - 1) / batch_size;
  Rng rng(seed);
  VideoSampler sampler(corpus, pipe.frames_per_video, pipe.salience_fraction);
  std::vector<int> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();  // forces a shuffle before the first draw

  TrainLog log;
  int samples_seen = 0;
  for (int step = 0; step < steps; ++step) {
    std::vector<ag::Var<float>> losses;
    std::vector<float> weights;
    losses.reserve(std::size_t(batch_size));
    weights.reserve(std::size_t(batch_size));
    for (int b = 0; b < batch_size; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      const EncodedSample& item = items[std::size_t(order[cursor++])];
      std::vector<ag::Var<float>> videos;
      videos.reserve(item.sample->video_refs.size());
      for (const std::string& video_id : item.sample->video_refs) {
        Eigen::MatrixXf frames = sampler.encode_train(pipe.encoder, video_id, rng);
        videos.push_back(project(pipe.proj, ag::constant<float>(std::move(frames))));
      }
      const Spliced<float> spliced = splice(pipe.lm, item.prompt, videos);
      losses.push_back(lm_loss(pipe.lm, spliced.embeddings, item.prompt.targets, item.label,
                               lora_rng, training_mode));
      weights.push_back(item.masked);
      ++samples_seen;
    }

    // Token-weighted batch mean so long replies are not diluted.
    const float total = std::accumulate(weights.begin(), weights.end(), 0.0f);
    for (float& w : weights) w /= total;
    const ag::Var<float> loss = ag::weighted_sum(losses, weights);
    const double loss_value = double(loss->value(0, 0));
    require(std::isfinite(loss_value),
            stage_name + ": non-finite loss at step " + std::to_string(step) +
                "; lower the learning rate");

    opt.zero_grad();
    ag::backward(loss);
    const double factor = nn::cosine_factor(step, steps);
    opt.step(factor);

    nlohmann::json lrs = nlohmann::json::array();
    for (const auto& group : opt.groups) lrs.push_back(group.lr * factor);
    nlohmann::json entry = {
        {"step", step + 1}, {"lr", lrs}, {"loss", loss_value}, {"samples_seen", samples_seen}};
    log.entries.push_back(entry);
    if (log_file.is_open()) log_file << entry.dump() << "\n";
    if (step == 0) log.first_loss = loss_value;
    log.last_loss = loss_value;
  }
  log.steps = steps;
  return log;
}

}  // namespace

TrainLog train_alignment(Pipeline& pipe, const CorpusIndex& corpus,
                         const std::vector<ConversationSample>& samples,
                         const AlignTrainConfig& config) {
  require(pipe.stage == "init",
          "align: expected a freshly initialized pipeline, found stage '" + pipe.stage + "'");
  require(pipe.lm.has_markers(), "align: the model has no marker embeddings");
  const std::vector<EncodedSample> items = encode_training_set(pipe, samples, "align");

  pipe.encoder.params.set_all_trainable(false);
  pipe.lm.params.set_all_trainable(false);
  pipe.lm.params.set_trainable("lm.embed.markers", true);
  pipe.proj.params.set_all_trainable(true);

  nn::AdamW<float> opt;
  nn::AdamW<float>::Group group;
  group.lr = config.lr;
  group.params = pipe.proj.params.trainable();
  for (const auto& v : pipe.lm.params.trainable()) group.params.push_back(v);
  opt.groups.push_back(std::move(group));

  TrainLog log = run_stage(pipe, corpus, items, opt, config.batch_size, config.sample_budget,
                           config.seed, config.log_path, "align", nullptr, false);
  pipe.stage = "align";
  return log;
}

TrainLog train_end_to_end(Pipeline& pipe, const CorpusIndex& corpus,
                          const std::vector<ConversationSample>& samples,
                          const E2eTrainConfig& config) {
  require(pipe.stage == "align",
          "e2e: stage-2 checkpoint required; found stage '" + pipe.stage + "'");
  const std::vector<EncodedSample> items = encode_training_set(pipe, samples, "e2e");

  Rng lora_rng(fnv1a("e2e-adapter-dropout") ^ config.seed);
  if (config.use_lora) {
    Rng wrap_rng(fnv1a("e2e-adapter-init") ^ config.seed);
    lora_wrap(pipe.lm, config.lora, wrap_rng);
    pipe.lora = config.lora;
  }

  pipe.encoder.params.set_all_trainable(false);
  // Adapters and the full embedding table move; positions, norms, head, and
  // the base attention/mlp weights stay put.
  for (auto& [name, v] : pipe.lm.params.items) {
    const bool on = name.starts_with("lm.embed.") || name.ends_with(".lora_A") ||
                    name.ends_with(".lora_B");
    v->trainable = on;
    v->needs_grad = on;
  }
  pipe.proj.params.set_all_trainable(true);

  nn::AdamW<float> opt;
  nn::AdamW<float>::Group proj_group;
  proj_group.lr = config.lr_proj;
  proj_group.params = pipe.proj.params.trainable();
  nn::AdamW<float>::Group lm_group;
  lm_group.lr = config.lr_lm;
  lm_group.params = pipe.lm.params.trainable();
  opt.groups.push_back(std::move(proj_group));
  opt.groups.push_back(std::move(lm_group));

  TrainLog log = run_stage(pipe, corpus, items, opt, config.batch_size, config.sample_budget,
                           config.seed, config.log_path, "e2e",
                           config.use_lora ? &lora_rng : nullptr, config.use_lora);
  pipe.stage = "e2e";
  return log;
}

void merge_pipeline_lora(Pipeline& pipe) {
  require(pipe.stage == "e2e",
          "merge-lora: expected a stage-3 checkpoint, found stage '" + pipe.stage + "'");
  merge_lora(pipe.lm);
  pipe.lora.reset();
  pipe.stage = "merged";
}

// ---- evaluation ----

// Generated text can echo special tokens; those must not survive into a
// respliced assistant turn or the re-encode would reject the conversation.
std::string strip_special_tokens(const Tokenizer& tok, std::string text) {
  std::vector<std::string> banned = {kTactStart, kTactEnd, kImgTokens};
  for (int id : {tok.unk_id, tok.bos_id, tok.eos_id}) {
    banned.push_back(tok.tokens[std::size_t(id)]);
  }
  for (const std::string& token : banned) {
    std::size_t pos = 0;
    while ((pos = text.find(token, pos)) != std::string::npos) {
      text.erase(pos, token.size());
    }
  }
  return text;
}

namespace {

struct GeneratedTurn {
  std::string text;
  int prompt_rows = 0;
};

GeneratedTurn generate_reply(const Pipeline& pipe, VideoSampler& sampler,
                             std::map<std::string, Eigen::MatrixXf>& projected,
                             const std::vector<ChatTurn>& turns,
                             const std::vector<std::string>& video_refs,
                             const GenerationParams& params, Rng* rng,
                             const std::string& label) {
  ag::NoGradGuard guard;
  const TokenizedPrompt prompt =
      encode_generation_prompt(pipe.tokenizer, turns, pipe.frames_per_video);
  require(int(video_refs.size()) >= prompt.num_videos,
          "eval: sample " + label + " binds " + std::to_string(video_refs.size()) +
              " videos to " + std::to_string(prompt.num_videos) + " placeholder runs");

  std::vector<ag::Var<float>> videos;
  videos.reserve(std::size_t(prompt.num_videos));
  for (int i = 0; i < prompt.num_videos; ++i) {
    auto it = projected.find(video_refs[std::size_t(i)]);
    if (it == projected.end()) {
      Eigen::MatrixXf frames = sampler.encode_eval(pipe.encoder, video_refs[std::size_t(i)]);
      const ag::Var<float> v = project(pipe.proj, ag::constant<float>(std::move(frames)));
      it = projected.emplace(video_refs[std::size_t(i)], v->value).first;
    }
    videos.push_back(ag::constant<float>(it->second));
  }

  const Spliced<float> spliced = splice(pipe.lm, prompt, videos);
  const Eigen::MatrixXf embeddings = spliced.embeddings->value;
  const int room = pipe.lm.config.context_length - int(embeddings.rows());
  require(room >= 1, "eval: sample " + label + " fills the whole context before generation");
  GenerationParams capped = params;
  capped.max_new_tokens = std::min(capped.max_new_tokens, room);

  GeneratedTurn out;
  out.prompt_rows = int(embeddings.rows());
  out.text = generate(pipe.lm, pipe.tokenizer, embeddings, capped, rng).text;
  return out;
}

}  // namespace

EvalRun evaluate_tasks(Pipeline& pipe, const CorpusIndex& corpus,
                       const std::vector<ConversationSample>& samples,
                       const EvalRunConfig& config) {
  require(pipe.stage != "init",
          "eval: the pipeline is untrained; run the alignment stage first");
  require(!samples.empty(), "eval: empty sample set");

  VideoSampler sampler(corpus, pipe.frames_per_video, pipe.salience_fraction);
  std::map<std::string, Eigen::MatrixXf> projected;
  std::array<std::vector<ParsedAnswer>, 5> answers;
  std::array<std::vector<GroundTruth>, 5> truths;

  EvalRun run;
  Rng sample_rng(fnv1a("eval-sampling") ^ config.seed);
  Rng* rng = config.gen.mode == GenerationParams::Mode::sample ? &sample_rng : nullptr;
  std::array<int, 5> per_task{};
  for (const ConversationSample& sample : samples) {
    const std::size_t t = std::size_t(sample.task);
    const std::string label =
        to_string(sample.task) + "-" + std::to_string(per_task[t]++);
    require(!sample.turns.empty() && sample.turns.front().role == "user",
            "eval: sample " + label + " does not open with a user turn");

    nlohmann::json transcript = {{"task", to_string(sample.task)},
                                 {"label", label},
                                 {"videos", sample.video_refs}};
    std::string response;
    if (sample.task == TaskKind::PSR) {
      require(sample.turns.size() == 3,
              "eval: sample " + label + " should hold exactly three turns");
      const GeneratedTurn described = generate_reply(
          pipe, sampler, projected, {sample.turns[0]}, sample.video_refs, config.gen, rng, label);
      const std::string description = strip_special_tokens(pipe.tokenizer, described.text);
      const std::vector<ChatTurn> second_round = {
          sample.turns[0], {"assistant", description}, sample.turns[2]};
      const GeneratedTurn answered = generate_reply(pipe, sampler, projected, second_round,
                                                    sample.video_refs, config.gen, rng, label);
      response = answered.text;
      transcript["description"] = described.text;
    } else {
      const GeneratedTurn answered = generate_reply(
          pipe, sampler, projected, {sample.turns[0]}, sample.video_refs, config.gen, rng, label);
      response = answered.text;
      transcript["prompt_rows"] = answered.prompt_rows;
    }

    const ParsedAnswer answer = parse_response(sample.task, response, sample.ground_truth);
    answers[t].push_back(answer);
    truths[t].push_back(sample.ground_truth);
    if (config.keep_transcripts) {
      transcript["response"] = response;
      transcript["parse_ok"] = answer.parse_ok;
      transcript["correct"] = answer_correct(answer, sample.ground_truth);
      run.transcripts.push_back(std::move(transcript));
    }
  }

  for (std::size_t t = 0; t < answers.size(); ++t) {
    if (answers[t].empty()) continue;
    run.reports.push_back(score(TaskKind(t), answers[t], truths[t]));
  }
  return run;
}

std::uint64_t hash_params(const nn::ParamStore<float>& ps,
                          const std::function<bool(const std::string&)>& filter) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [name, v] : ps.items) {
    if (filter && !filter(name)) continue;
    h = fnv1a(name, h);
    const std::int64_t rows = v->value.rows();
    const std::int64_t cols = v->value.cols();
    h = fnv1a(&rows, sizeof rows, h);
    h = fnv1a(&cols, sizeof cols, h);
    for (Eigen::Index i = 0; i < v->value.rows(); ++i) {
      for (Eigen::Index j = 0; j < v->value.cols(); ++j) {
        const float x = v->value(i, j);
        h = fnv1a(&x, sizeof x, h);
      }
    }
  }
  return h;
}

std::vector<TaskReport> score_responses(const std::vector<ConversationSample>& samples,
                                        const std::vector<std::string>& responses) {
  require(samples.size() == responses.size(),
          "eval: " + std::to_string(responses.size()) + " responses for " +
              std::to_string(samples.size()) + " samples");
  std::array<std::vector<ParsedAnswer>, 5> answers;
  std::array<std::vector<GroundTruth>, 5> truths;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::size_t t = std::size_t(samples[i].task);
    answers[t].push_back(parse_response(samples[i].task, responses[i], samples[i].ground_truth));
    truths[t].push_back(samples[i].ground_truth);
  }
  std::vector<TaskReport> reports;
  for (std::size_t t = 0; t < answers.size(); ++t) {
    if (answers[t].empty()) continue;
    reports.push_back(score(TaskKind(t), answers[t], truths[t]));
  }
  return reports;
}

}  // namespace tlm
