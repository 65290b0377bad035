#include "tlm/cli.hpp"

#include <cstdlib>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "tlm/pipeline.hpp"
#include "tlm/synth.hpp"

namespace tlm {

namespace {

namespace fs = std::filesystem;

fs::path lab_home() {
  const char* env = std::getenv("TLM_LAB_HOME");
  return (env != nullptr && *env != '\0') ? fs::path(env) : fs::path("tlm-lab");
}

fs::path resolve_out(const std::string& given, const std::string& fallback) {
  return given.empty() ? lab_home() / fallback : fs::path(given);
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::array<double, 3> parse_ratios(const std::string& text) {
  const auto parts = split_csv(text);
  require(parts.size() == 3, "ratios: expected three comma-separated values, got '" + text + "'");
  std::array<double, 3> out{};
  for (std::size_t i = 0; i < 3; ++i) {
    try {
      out[i] = std::stod(parts[i]);
    } catch (const std::exception&) {
      fail("ratios: '" + parts[i] + "' is not a number");
    }
  }
  return out;
}

std::vector<std::string> names_for_split(const CorpusIndex& corpus, const std::string& split) {
  std::vector<std::string> names;
  if (split == "all") {
    for (const auto& [name, labels] : corpus.labels) {
      (void)labels;
      names.push_back(name);
    }
  } else {
    const SplitAssignment& s = corpus.splits;
    require(!(s.train.empty() && s.val.empty() && s.test.empty()),
            "corpus has no split assignment; run the split subcommand first");
    if (split == "train") names = s.train;
    if (split == "val") names = s.val;
    if (split == "test") names = s.test;
  }
  require(!names.empty(), "split '" + split + "' holds no samples");
  return names;
}

TaskKind task_from_cli(std::string name) {
  for (char& c : name) c = char(std::toupper(static_cast<unsigned char>(c)));
  return task_from_string(name);
}

void print_line(const nlohmann::json& j) { std::cout << j.dump() << "\n"; }
void print_block(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

void write_json_file(const fs::path& path, const nlohmann::json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

// ---- shared flag groups ----

struct EncoderShapeOpts {
  int image_size = 32;
  int patch = 8;
  int depth = 2;
  int width = 64;
  int heads = 4;
  int mlp_ratio = 4;
  int prompt_count = 8;

  FrameEncoderConfig config() const {
    FrameEncoderConfig cfg;
    cfg.image_size = image_size;
    cfg.patch_size = patch;
    cfg.depth = depth;
    cfg.width = width;
    cfg.heads = heads;
    cfg.mlp_ratio = mlp_ratio;
    cfg.prompt_count = prompt_count;
    return cfg;
  }

  nlohmann::json to_json() const {
    return {{"image_size", image_size}, {"patch", patch},         {"depth", depth},
            {"width", width},           {"heads", heads},         {"mlp_ratio", mlp_ratio},
            {"prompt_count", prompt_count}};
  }
};

void add_encoder_shape_flags(CLI::App* sub, EncoderShapeOpts& opts, const std::string& prefix) {
  sub->add_option("--" + prefix + "image-size", opts.image_size, "Frame side length in pixels");
  sub->add_option("--" + prefix + "patch", opts.patch, "Patch side length in pixels");
  sub->add_option("--" + prefix + "depth", opts.depth, "Encoder transformer depth");
  sub->add_option("--" + prefix + "width", opts.width, "Encoder embedding width");
  sub->add_option("--" + prefix + "heads", opts.heads, "Encoder attention heads");
  sub->add_option("--" + prefix + "mlp-ratio", opts.mlp_ratio, "Encoder MLP expansion ratio");
  sub->add_option("--" + prefix + "prompt-count", opts.prompt_count,
                  "Learnable prompt tokens per encoder layer");
}

struct GenFlagOpts {
  int max_new = 96;
  bool sample = false;
  double temperature = 1.0;

  GenerationParams params() const {
    GenerationParams p;
    p.mode = sample ? GenerationParams::Mode::sample : GenerationParams::Mode::greedy;
    p.max_new_tokens = max_new;
    p.temperature = temperature;
    return p;
  }

  nlohmann::json to_json() const {
    return {{"max_new", max_new},
            {"mode", sample ? "sample" : "greedy"},
            {"temperature", temperature}};
  }
};

void add_generation_flags(CLI::App* sub, GenFlagOpts& opts) {
  sub->add_option("--max-new", opts.max_new, "Generation budget in tokens");
  sub->add_flag("--sample", opts.sample, "Sample instead of greedy decoding");
  sub->add_option("--temperature", opts.temperature, "Sampling temperature");
}

// ---- subcommand options ----

struct PrepOpts {
  std::string corpus;
  bool require_splits = false;
};

struct StatsOpts {
  std::string corpus;
};

struct IccOpts {
  std::string corpus;
};

struct SplitOpts {
  std::string corpus;
  std::string ratios = "0.8,0.1,0.1";
  std::string out;
  std::uint64_t seed = 0;
};

struct SynthOpts {
  std::string out;
  int objects = 60;
  int frames = 60;
  int videos = 5;
  int image_size = 32;
  double flip_prob = 0.1;
  double noise = 1.0;
  double separation = 1.0;
  bool paper_marginals = false;
  std::string ratios = "0.8,0.1,0.1";
  std::uint64_t seed = 0;
};

struct GenPromptsOpts {
  std::string corpus;
  std::string tasks = "opd,pc,pss,pom,psr";
  int per_task = 20;
  std::string split = "train";
  std::string out;
  std::string scenarios;
  bool no_opd = false;
  bool direct_answers = false;
  std::uint64_t seed = 0;
};

struct TrainEncoderOpts {
  std::string corpus;
  std::string out;
  std::string pretrained_backbone;
  EncoderShapeOpts shape;
  int epochs = 30;
  double lr = 1e-3;
  int batch = 32;
  double weight_decay = 0.0;
  int frames = 5;
  double salience = 0.3;
  bool no_augment = false;
  std::string log;
  std::uint64_t seed = 0;
};

struct TrainAlignOpts {
  std::string corpus;
  std::string prompts;
  std::string encoder;
  bool base_encoder = false;
  EncoderShapeOpts shape;  // engaged only with --base-encoder
  std::string out;
  int width = 64;
  int depth = 2;
  int heads = 4;
  int mlp_ratio = 4;
  int context = 0;
  int proj_hidden = 0;
  int frames = 5;
  double salience = 0.3;
  double lr = 2e-5;
  int batch = 16;
  int budget = 8000;
  std::string log;
  std::uint64_t seed = 0;
};

struct TrainE2eOpts {
  std::string corpus;
  std::string prompts;
  std::string checkpoint;
  std::string out;
  double lr_proj = 2e-5;
  double lr_lm = 2e-4;
  int batch = 16;
  int budget = 3000;
  bool no_lora = false;
  int lora_r = 128;
  double lora_alpha = 256.0;
  double lora_dropout = 0.05;
  std::string log;
  std::uint64_t seed = 0;
};

struct MergeLoraOpts {
  std::string checkpoint;
  std::string out;
};

struct EvalOpts {
  std::string corpus;
  std::string prompts;
  std::string checkpoint;
  std::string responses;
  std::string out;
  GenFlagOpts gen;
  bool no_transcripts = false;
  std::uint64_t seed = 0;
};

struct BaselineOpts {
  std::string task;
  int trials = 100000;
};

struct ChatOpts {
  std::string checkpoint;
  std::vector<std::string> videos;
  GenFlagOpts gen;
  std::string log;
  std::uint64_t seed = 0;
};

// ---- subcommand runners ----

int run_prep(const PrepOpts& opts) {
  const CorpusIndex corpus = load_corpus(opts.corpus);
  validate_corpus(corpus, opts.require_splits);
  int frames = 0;
  for (const auto& v : corpus.videos) frames += v.frame_count;
  print_block({{"root", corpus.root.string()},
               {"objects", corpus.objects.size()},
               {"annotated", corpus.annotations.size()},
               {"videos", corpus.videos.size()},
               {"frames", frames},
               {"splits",
                {{"train", corpus.splits.train.size()},
                 {"val", corpus.splits.val.size()},
                 {"test", corpus.splits.test.size()}}}});
  return 0;
}

int run_stats(const StatsOpts& opts) {
  const CorpusIndex corpus = load_corpus(opts.corpus);
  const PropertyStats stats = property_stats(corpus);
  nlohmann::json combos = nlohmann::json::object();
  for (int h = 0; h < 3; ++h) {
    for (int r = 0; r < 3; ++r) {
      for (int b = 0; b < 3; ++b) {
        const int count = stats.combination(h, r, b);
        if (count == 0) continue;
        const PropertyLabels labels = labels_from_levels(h, r, b);
        combos[to_string(labels.hardness) + "," + to_string(labels.roughness) + "," +
               to_string(labels.bumpiness)] = count;
      }
    }
  }
  print_block({{"total", stats.total},
               {"hardness", {{"counts", stats.hardness_counts}, {"percent", stats.hardness_pct}}},
               {"roughness",
                {{"counts", stats.roughness_counts}, {"percent", stats.roughness_pct}}},
               {"bumpiness",
                {{"counts", stats.bumpiness_counts}, {"percent", stats.bumpiness_pct}}},
               {"combinations", combos}});
  return 0;
}

int run_icc(const IccOpts& opts) {
  const CorpusIndex corpus = load_corpus(opts.corpus);
  const std::size_t n = corpus.annotations.size();
  require(n >= 2, "icc: needs at least two annotated samples");
  Eigen::MatrixXd hardness(n, 3), roughness(n, 3), bumpiness(n, 3);
  Eigen::Index row = 0;
  for (const auto& [name, triple] : corpus.annotations) {
    (void)name;
    for (int c = 0; c < 3; ++c) {
      hardness(row, c) = triple.hardness[std::size_t(c)];
      roughness(row, c) = triple.roughness[std::size_t(c)];
      bumpiness(row, c) = triple.bumpiness[std::size_t(c)];
    }
    ++row;
  }
  print_block({{"samples", n},
               {"hardness", icc3k(hardness)},
               {"roughness", icc3k(roughness)},
               {"bumpiness", icc3k(bumpiness)}});
  return 0;
}

int run_split(const SplitOpts& opts) {
  const CorpusIndex corpus = load_corpus(opts.corpus);
  std::vector<std::string> names;
  for (const auto& [name, labels] : corpus.labels) {
    (void)labels;
    names.push_back(name);
  }
  require(!names.empty(), "split: corpus has no annotated samples");
  const SplitAssignment splits = make_splits(names, parse_ratios(opts.ratios), opts.seed);
  const fs::path out =
      opts.out.empty() ? fs::path(opts.corpus) / "splits.json" : fs::path(opts.out);
  ensure_parent(out);
  write_splits_json(out, splits);
  print_line({{"out", out.string()},
              {"train", splits.train.size()},
              {"val", splits.val.size()},
              {"test", splits.test.size()}});
  return 0;
}

int run_synth(const SynthOpts& opts) {
  SynthConfig cfg;
  cfg.n_objects = opts.objects;
  cfg.frames_per_video = opts.frames;
  cfg.videos_per_object = opts.videos;
  cfg.image_size = opts.image_size;
  cfg.seed = opts.seed;
  cfg.annotator_flip_prob = opts.flip_prob;
  cfg.noise_level = opts.noise;
  cfg.class_separation = opts.separation;
  cfg.paper_marginals = opts.paper_marginals;
  cfg.split_ratios = parse_ratios(opts.ratios);
  const fs::path out = resolve_out(opts.out, "synth-corpus");
  const CorpusIndex corpus = generate_corpus(cfg, out);
  print_line({{"out", out.string()},
              {"objects", corpus.objects.size()},
              {"videos", corpus.videos.size()},
              {"frames_per_video", cfg.frames_per_video}});
  return 0;
}

int run_gen_prompts(const GenPromptsOpts& opts) {
  const CorpusIndex corpus = load_corpus(opts.corpus);
  const std::vector<std::string> names = names_for_split(corpus, opts.split);

  TaskSuiteConfig cfg;
  cfg.seed = opts.seed;
  cfg.direct_answers = opts.direct_answers || opts.no_opd;
  if (!opts.scenarios.empty()) cfg.scenarios = read_scenarios_json(opts.scenarios);
  for (const std::string& name : split_csv(opts.tasks)) {
    switch (task_from_cli(name)) {
      case TaskKind::OPD: cfg.opd = opts.per_task; break;
      case TaskKind::PC: cfg.pc = opts.per_task; break;
      case TaskKind::PSS: cfg.pss = opts.per_task; break;
      case TaskKind::POM: cfg.pom = opts.per_task; break;
      case TaskKind::PSR: cfg.psr = opts.per_task; break;
    }
  }
  if (opts.no_opd) cfg.opd = 0;

  const std::vector<ConversationSample> samples = generate_task_suite(corpus, names, cfg);
  const fs::path out = resolve_out(opts.out, "prompts.jsonl");
  ensure_parent(out);
  write_task_jsonl(out, samples);
  print_line({{"out", out.string()},
              {"samples", samples.size()},
              {"opd", cfg.opd},
              {"pc", cfg.pc},
              {"pss", cfg.pss},
              {"pom", cfg.pom},
              {"psr", cfg.psr},
              {"direct_answers", cfg.direct_answers}});
  return 0;
}

int run_train_encoder(const TrainEncoderOpts& opts) {
  const CorpusIndex corpus = load_corpus(opts.corpus);
  FrameEncoderConfig cfg = opts.shape.config();
  cfg.pretrained_backbone = opts.pretrained_backbone;

  EncoderTrainConfig train;
  train.epochs = opts.epochs;
  train.lr = opts.lr;
  train.batch_size = opts.batch;
  train.weight_decay = opts.weight_decay;
  train.frames_per_video = opts.frames;
  train.salience_fraction = opts.salience;
  train.augment = !opts.no_augment;
  train.seed = opts.seed;
  if (!opts.log.empty()) train.log_path = opts.log;

  const TrainedEncoder trained = train_encoder(corpus, cfg, train);
  const fs::path out = resolve_out(opts.out, "checkpoints/encoder.bin");
  ensure_parent(out);
  save_encoder(trained.model, trained.meta, out);
  print_line({{"out", out.string()},
              {"best_epoch", trained.meta.best_epoch},
              {"best_val_combined", trained.meta.best_val_combined},
              {"epochs_run", trained.meta.epochs_run}});
  return 0;
}

int run_train_align(const TrainAlignOpts& opts) {
  require(!opts.encoder.empty() || opts.base_encoder,
          "align: missing encoder checkpoint (pass --encoder or --base-encoder)");
  require(opts.encoder.empty() || !opts.base_encoder,
          "align: pass either --encoder or --base-encoder, not both");
  const CorpusIndex corpus = load_corpus(opts.corpus);
  const std::vector<ConversationSample> samples = read_task_jsonl(opts.prompts);

  FrameEncoder<float> encoder = opts.base_encoder
                                    ? make_frame_encoder<float>(opts.shape.config(), opts.seed)
                                    : FrameEncoder<float>{};
  EncoderMeta meta;
  if (!opts.base_encoder) {
    auto loaded = load_encoder(opts.encoder);
    encoder = std::move(loaded.first);
    meta = loaded.second;
  }

  PipelineConfig pipe_cfg;
  pipe_cfg.lm.width = opts.width;
  pipe_cfg.lm.depth = opts.depth;
  pipe_cfg.lm.heads = opts.heads;
  pipe_cfg.lm.mlp_ratio = opts.mlp_ratio;
  pipe_cfg.lm.context_length = opts.context;
  pipe_cfg.proj_hidden = opts.proj_hidden;
  pipe_cfg.frames_per_video = opts.frames;
  pipe_cfg.salience_fraction = opts.salience;
  pipe_cfg.seed = opts.seed;
  Pipeline pipe = init_pipeline(std::move(encoder), meta, samples, pipe_cfg);

  AlignTrainConfig train;
  train.lr = opts.lr;
  train.batch_size = opts.batch;
  train.sample_budget = opts.budget;
  train.seed = opts.seed;
  if (!opts.log.empty()) train.log_path = opts.log;
  const TrainLog log = train_alignment(pipe, corpus, samples, train);

  const nlohmann::json run_config = {{"corpus", opts.corpus},
                                     {"prompts", opts.prompts},
                                     {"encoder", opts.encoder},
                                     {"base_encoder", opts.base_encoder},
                                     {"lm",
                                      {{"width", opts.width},
                                       {"depth", opts.depth},
                                       {"heads", opts.heads},
                                       {"mlp_ratio", opts.mlp_ratio},
                                       {"context", opts.context}}},
                                     {"proj_hidden", opts.proj_hidden},
                                     {"frames", opts.frames},
                                     {"salience", opts.salience},
                                     {"lr", opts.lr},
                                     {"batch", opts.batch},
                                     {"budget", opts.budget},
                                     {"seed", opts.seed}};
  const fs::path out = resolve_out(opts.out, "checkpoints/align.bin");
  ensure_parent(out);
  save_pipeline(pipe, out, {{"run_config", run_config}});
  print_line({{"out", out.string()},
              {"stage", pipe.stage},
              {"steps", log.steps},
              {"first_loss", log.first_loss},
              {"last_loss", log.last_loss}});
  return 0;
}

int run_train_e2e(const TrainE2eOpts& opts) {
  require(!opts.checkpoint.empty(), "e2e: stage-2 checkpoint required (pass --checkpoint)");
  const CorpusIndex corpus = load_corpus(opts.corpus);
  const std::vector<ConversationSample> samples = read_task_jsonl(opts.prompts);
  Pipeline pipe = load_pipeline(opts.checkpoint);

  E2eTrainConfig train;
  train.lr_proj = opts.lr_proj;
  train.lr_lm = opts.lr_lm;
  train.batch_size = opts.batch;
  train.sample_budget = opts.budget;
  train.use_lora = !opts.no_lora;
  train.lora.r = opts.lora_r;
  train.lora.alpha = opts.lora_alpha;
  train.lora.dropout = opts.lora_dropout;
  train.seed = opts.seed;
  if (!opts.log.empty()) train.log_path = opts.log;
  const TrainLog log = train_end_to_end(pipe, corpus, samples, train);

  const nlohmann::json run_config = {{"corpus", opts.corpus},
                                     {"prompts", opts.prompts},
                                     {"checkpoint", opts.checkpoint},
                                     {"lr_proj", opts.lr_proj},
                                     {"lr_lm", opts.lr_lm},
                                     {"batch", opts.batch},
                                     {"budget", opts.budget},
                                     {"lora",
                                      {{"enabled", !opts.no_lora},
                                       {"r", opts.lora_r},
                                       {"alpha", opts.lora_alpha},
                                       {"dropout", opts.lora_dropout}}},
                                     {"seed", opts.seed}};
  const fs::path out = resolve_out(opts.out, "checkpoints/e2e.bin");
  ensure_parent(out);
  save_pipeline(pipe, out, {{"run_config", run_config}});
  print_line({{"out", out.string()},
              {"stage", pipe.stage},
              {"steps", log.steps},
              {"first_loss", log.first_loss},
              {"last_loss", log.last_loss}});
  return 0;
}

int run_merge_lora(const MergeLoraOpts& opts) {
  Pipeline pipe = load_pipeline(opts.checkpoint);
  merge_pipeline_lora(pipe);
  const fs::path out = resolve_out(opts.out, "checkpoints/merged.bin");
  ensure_parent(out);
  save_pipeline(pipe, out);
  print_line({{"out", out.string()}, {"stage", pipe.stage}});
  return 0;
}

std::vector<std::string> read_responses_file(const fs::path& path, std::size_t expected) {
  std::ifstream in(path);
  require(bool(in), "eval: cannot open responses file: " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.front() == '"' || line.front() == '{') {
      const nlohmann::json j = nlohmann::json::parse(line);
      out.push_back(j.is_string() ? j.get<std::string>()
                                  : j.at("response").get<std::string>());
    } else {
      out.push_back(line);
    }
  }
  require(out.size() == expected, "eval: " + std::to_string(out.size()) + " responses for " +
                                      std::to_string(expected) + " samples");
  return out;
}

int run_eval(const EvalOpts& opts) {
  const std::vector<ConversationSample> samples = read_task_jsonl(opts.prompts);
  const fs::path out = resolve_out(opts.out, "runs/eval");
  fs::create_directories(out);

  std::vector<TaskReport> reports;
  std::vector<nlohmann::json> transcripts;
  if (!opts.responses.empty()) {
    reports = score_responses(samples, read_responses_file(opts.responses, samples.size()));
  } else {
    require(!opts.checkpoint.empty(), "eval: pass --checkpoint or --responses");
    const CorpusIndex corpus = load_corpus(opts.corpus);
    Pipeline pipe = load_pipeline(opts.checkpoint);
    EvalRunConfig cfg;
    cfg.gen = opts.gen.params();
    cfg.seed = opts.seed;
    cfg.keep_transcripts = !opts.no_transcripts;
    EvalRun run = evaluate_tasks(pipe, corpus, samples, cfg);
    reports = std::move(run.reports);
    transcripts = std::move(run.transcripts);
  }

  write_report_json(out / "report.json", reports);
  write_report_csv(out / "report.csv", reports);
  if (!transcripts.empty()) {
    std::string lines;
    for (const auto& t : transcripts) lines += t.dump() + "\n";
    write_text_file(out / "transcripts.jsonl", lines);
  }
  const nlohmann::json manifest = {{"subcommand", "eval"},
                                   {"corpus", opts.corpus},
                                   {"prompts", opts.prompts},
                                   {"checkpoint", opts.checkpoint},
                                   {"responses", opts.responses},
                                   {"generation", opts.gen.to_json()},
                                   {"seed", opts.seed},
                                   {"samples", samples.size()}};
  write_json_file(out / "manifest.json", manifest);

  nlohmann::json accuracies = nlohmann::json::object();
  for (const TaskReport& r : reports) accuracies[to_string(r.task)] = r.accuracy;
  print_line({{"out", out.string()}, {"accuracy", accuracies}});
  return 0;
}

int run_baseline(const BaselineOpts& opts) {
  const TaskKind task = task_from_cli(opts.task);
  nlohmann::json j = {{"task", to_string(task)},
                      {"analytic", analytic_baseline(task)},
                      {"monte_carlo", mc_baseline(task, opts.trials)},
                      {"trials", opts.trials}};
  if (task == TaskKind::PC) j["alternate"] = 100.0 / 3.0;
  print_block(j);
  return 0;
}

// ---- chat ----

Eigen::MatrixXf encode_video_dir(const Pipeline& pipe, const fs::path& dir) {
  require(fs::is_directory(dir), "chat: video directory not found: " + dir.string());
  VideoRef ref;
  ref.video_id = dir.string();
  ref.sample_name = dir.filename().string();
  ref.dir = dir;
  while (fs::exists(dir / frame_file_name(ref.frame_count))) ref.frame_count += 1;
  require(ref.frame_count >= 2,
          "chat: " + dir.string() + " needs at least two frame_NNNN.png files");
  const TactileVideo video = load_video(ref);
  const SalienceProfile profile = salience(video, pipe.salience_fraction);
  const FrameSequence seq = sample_eval(video, profile, pipe.frames_per_video);
  ag::NoGradGuard guard;
  return project(pipe.proj, ag::constant<float>(encode_frames(pipe.encoder, seq)))->value;
}

int count_occurrences(const std::string& text, const std::string& what) {
  int n = 0;
  std::size_t at = 0;
  while ((at = text.find(what, at)) != std::string::npos) {
    ++n;
    at += what.size();
  }
  return n;
}

constexpr const char* kVideoSlot = "<video>";

int run_chat(const ChatOpts& opts) {
  Pipeline pipe = load_pipeline(opts.checkpoint);
  require(pipe.stage != "init", "chat: the pipeline is untrained; run the alignment stage first");

  std::ofstream log_file;
  if (!opts.log.empty()) {
    ensure_parent(opts.log);
    log_file.open(opts.log, std::ios::trunc);
    require(bool(log_file), "chat: cannot open log: " + opts.log);
  }

  const std::string marker_run =
      std::string(kTactStart) + " " + kImgTokens + " " + kTactEnd;
  std::vector<ChatTurn> history;
  std::vector<Eigen::MatrixXf> bound;  // projected videos, placeholder order
  int pending = 0;

  Rng gen_rng(fnv1a("chat") ^ opts.seed);
  Rng* rng = opts.gen.sample ? &gen_rng : nullptr;
  const GenerationParams base_params = opts.gen.params();

  const auto attach = [&](const std::string& path) {
    bound.push_back(encode_video_dir(pipe, path));
    ++pending;
    std::cout << "(attached " << path << ", " << pipe.frames_per_video
              << " frames encoded)\n";
  };
  for (const std::string& v : opts.videos) attach(v);

  std::cout << "tactile chat; :attach PATH adds a video, :reset clears history, :quit exits\n";
  std::string line;
  int exchanges = 0;
  while (true) {
    std::cout << "you> " << std::flush;
    if (!std::getline(std::cin, line)) break;
    if (line == ":quit") break;
    try {
      if (line.rfind(":attach ", 0) == 0) {
        attach(line.substr(8));
        continue;
      }
      if (line == ":reset") {
        history.clear();
        bound.clear();
        pending = 0;
        std::cout << "(history cleared)\n";
        continue;
      }
      if (line.empty()) continue;

      std::string text = line;
      const int slots = count_occurrences(text, kVideoSlot);
      require(slots == 0 || slots == pending,
              "message references " + std::to_string(slots) + " video slots but " +
                  std::to_string(pending) + " videos are attached");
      if (slots > 0) {
        std::size_t at = 0;
        while ((at = text.find(kVideoSlot, at)) != std::string::npos) {
          text.replace(at, std::string(kVideoSlot).size(), marker_run);
          at += marker_run.size();
        }
      } else {
        for (int i = 0; i < pending; ++i) text = marker_run + " " + text;
      }

      std::vector<ChatTurn> turns = history;
      turns.push_back({"user", text});
      const TokenizedPrompt prompt =
          encode_generation_prompt(pipe.tokenizer, turns, pipe.frames_per_video);
      require(int(bound.size()) == prompt.num_videos,
              "conversation binds " + std::to_string(bound.size()) + " videos to " +
                  std::to_string(prompt.num_videos) + " placeholder runs");

      ag::NoGradGuard guard;
      std::vector<ag::Var<float>> videos;
      videos.reserve(bound.size());
      for (const Eigen::MatrixXf& v : bound) videos.push_back(ag::constant<float>(v));
      const Eigen::MatrixXf embeddings = splice(pipe.lm, prompt, videos).embeddings->value;
      const int room = pipe.lm.config.context_length - int(embeddings.rows());
      require(room >= 1, "conversation fills the whole context; :reset to continue");
      GenerationParams params = base_params;
      params.max_new_tokens = std::min(params.max_new_tokens, room);
      const GenerationResult result = generate(pipe.lm, pipe.tokenizer, embeddings, params, rng);

      std::cout << "assistant> " << result.text << "\n";
      history.push_back({"user", text});
      history.push_back({"assistant", strip_special_tokens(pipe.tokenizer, result.text)});
      pending = 0;
      ++exchanges;
      if (log_file.is_open()) {
        log_file << nlohmann::json({{"exchange", exchanges},
                                    {"user", text},
                                    {"assistant", result.text},
                                    {"videos_bound", bound.size()},
                                    {"prompt_rows", embeddings.rows()}})
                        .dump()
                 << "\n";
      }
    } catch (const std::exception& e) {
      std::cout << "error: " << e.what() << "\n";
    }
  }
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Tactile-language lab: corpus tooling, staged training, evaluation, and chat"};
  app.name("tlm-lab");
  app.require_subcommand(1);
  app.set_config("--config", "", "Read options from a TOML/INI file (flags win)");
  app.get_formatter()->column_width(34);

  PrepOpts prep;
  auto* prep_cmd = app.add_subcommand("prep", "Validate a corpus directory");
  prep_cmd->add_option("--corpus", prep.corpus, "Corpus directory")->required();
  prep_cmd->add_flag("--require-splits", prep.require_splits,
                     "Fail when the corpus has no split assignment");

  StatsOpts stats;
  auto* stats_cmd = app.add_subcommand("stats", "Property distribution tables");
  stats_cmd->add_option("--corpus", stats.corpus, "Corpus directory")->required();

  IccOpts icc;
  auto* icc_cmd = app.add_subcommand("icc", "Inter-annotator agreement, ICC(3,k) per property");
  icc_cmd->add_option("--corpus", icc.corpus, "Corpus directory")->required();

  SplitOpts split;
  auto* split_cmd = app.add_subcommand("split", "Write a seeded train/val/test assignment");
  split_cmd->add_option("--corpus", split.corpus, "Corpus directory")->required();
  split_cmd->add_option("--ratios", split.ratios, "Train,val,test fractions");
  split_cmd->add_option("--out", split.out, "Output path (default: corpus/splits.json)");
  split_cmd->add_option("--seed", split.seed, "Assignment seed");

  SynthOpts synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic tactile corpus");
  synth_cmd->add_option("--out", synth.out, "Corpus output directory");
  synth_cmd->add_option("--objects", synth.objects, "Number of objects");
  synth_cmd->add_option("--frames", synth.frames, "Frames per video");
  synth_cmd->add_option("--videos", synth.videos, "Videos per object");
  synth_cmd->add_option("--image-size", synth.image_size, "Frame side length in pixels");
  synth_cmd->add_option("--flip-prob", synth.flip_prob, "Annotator disagreement probability");
  synth_cmd->add_option("--noise", synth.noise, "Sensor noise level");
  synth_cmd->add_option("--separation", synth.separation, "Visual class separation");
  synth_cmd->add_flag("--paper-marginals", synth.paper_marginals,
                      "Draw labels from the published marginal distribution");
  synth_cmd->add_option("--ratios", synth.ratios, "Train,val,test fractions");
  synth_cmd->add_option("--seed", synth.seed, "Generator seed");

  GenPromptsOpts gen;
  auto* gen_cmd = app.add_subcommand("gen-prompts", "Generate a task conversation suite");
  gen_cmd->add_option("--corpus", gen.corpus, "Corpus directory")->required();
  gen_cmd->add_option("--tasks", gen.tasks, "Comma list from opd,pc,pss,pom,psr");
  gen_cmd->add_option("--per-task", gen.per_task, "Samples per listed task");
  gen_cmd->add_option("--split", gen.split, "Object split to draw from")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  gen_cmd->add_option("--out", gen.out, "Output JSONL path");
  gen_cmd->add_option("--scenarios", gen.scenarios, "Scenario spec JSON (default: shipped set)");
  gen_cmd->add_flag("--no-opd", gen.no_opd,
                    "Ablation: drop OPD and strip targets to the conclusion sentence");
  gen_cmd->add_flag("--direct-answers", gen.direct_answers,
                    "Strip assistant targets to the conclusion sentence");
  gen_cmd->add_option("--seed", gen.seed, "Suite seed");

  TrainEncoderOpts tenc;
  auto* tenc_cmd = app.add_subcommand("train-encoder", "Stage 1: property-classification encoder");
  tenc_cmd->add_option("--corpus", tenc.corpus, "Corpus directory")->required();
  tenc_cmd->add_option("--out", tenc.out, "Checkpoint output path");
  tenc_cmd->add_option("--pretrained-backbone", tenc.pretrained_backbone,
                       "Archive for the frozen backbone slot");
  add_encoder_shape_flags(tenc_cmd, tenc.shape, "");
  tenc_cmd->add_option("--epochs", tenc.epochs, "Training epochs");
  tenc_cmd->add_option("--lr", tenc.lr, "Learning rate");
  tenc_cmd->add_option("--batch", tenc.batch, "Batch size");
  tenc_cmd->add_option("--weight-decay", tenc.weight_decay, "AdamW weight decay");
  tenc_cmd->add_option("--frames", tenc.frames, "Frames sampled per video");
  tenc_cmd->add_option("--salience", tenc.salience, "Salient fraction of frames");
  tenc_cmd->add_flag("--no-augment", tenc.no_augment, "Disable flip augmentation");
  tenc_cmd->add_option("--log", tenc.log, "Per-epoch JSONL log path");
  tenc_cmd->add_option("--seed", tenc.seed, "Training seed");

  TrainAlignOpts talign;
  auto* talign_cmd =
      app.add_subcommand("train-align", "Stage 2: align tactile embeddings with the decoder");
  talign_cmd->add_option("--corpus", talign.corpus, "Corpus directory")->required();
  talign_cmd->add_option("--prompts", talign.prompts, "Training conversations JSONL")->required();
  talign_cmd->add_option("--encoder", talign.encoder, "Stage-1 encoder checkpoint");
  talign_cmd->add_flag("--base-encoder", talign.base_encoder,
                       "Ablation: random frozen encoder instead of a stage-1 checkpoint");
  add_encoder_shape_flags(talign_cmd, talign.shape, "enc-");
  talign_cmd->add_option("--out", talign.out, "Checkpoint output path");
  talign_cmd->add_option("--width", talign.width, "Decoder width");
  talign_cmd->add_option("--depth", talign.depth, "Decoder depth");
  talign_cmd->add_option("--heads", talign.heads, "Decoder attention heads");
  talign_cmd->add_option("--mlp-ratio", talign.mlp_ratio, "Decoder MLP expansion ratio");
  talign_cmd->add_option("--context", talign.context,
                         "Context length floor (0: derive from the samples)");
  talign_cmd->add_option("--proj-hidden", talign.proj_hidden,
                         "Projection hidden width (0: decoder width)");
  talign_cmd->add_option("--frames", talign.frames, "Frames sampled per video");
  talign_cmd->add_option("--salience", talign.salience, "Salient fraction of frames");
  talign_cmd->add_option("--lr", talign.lr, "Learning rate");
  talign_cmd->add_option("--batch", talign.batch, "Batch size");
  talign_cmd->add_option("--budget", talign.budget, "Training samples consumed");
  talign_cmd->add_option("--log", talign.log, "Per-step JSONL log path");
  talign_cmd->add_option("--seed", talign.seed, "Training seed");

  TrainE2eOpts te2e;
  auto* te2e_cmd = app.add_subcommand("train-e2e", "Stage 3: end-to-end tuning with adapters");
  te2e_cmd->add_option("--corpus", te2e.corpus, "Corpus directory")->required();
  te2e_cmd->add_option("--prompts", te2e.prompts, "Training conversations JSONL")->required();
  te2e_cmd->add_option("--checkpoint", te2e.checkpoint, "Stage-2 pipeline checkpoint");
  te2e_cmd->add_option("--out", te2e.out, "Checkpoint output path");
  te2e_cmd->add_option("--lr-proj", te2e.lr_proj, "Projection learning rate");
  te2e_cmd->add_option("--lr-lm", te2e.lr_lm, "Adapter and embedding learning rate");
  te2e_cmd->add_option("--batch", te2e.batch, "Batch size");
  te2e_cmd->add_option("--budget", te2e.budget, "Training samples consumed");
  te2e_cmd->add_flag("--no-lora", te2e.no_lora,
                     "Ablation: train embeddings only, no adapters");
  te2e_cmd->add_option("--lora-r", te2e.lora_r, "Adapter rank");
  te2e_cmd->add_option("--lora-alpha", te2e.lora_alpha, "Adapter scale numerator");
  te2e_cmd->add_option("--lora-dropout", te2e.lora_dropout, "Adapter input dropout");
  te2e_cmd->add_option("--log", te2e.log, "Per-step JSONL log path");
  te2e_cmd->add_option("--seed", te2e.seed, "Training seed");

  MergeLoraOpts merge;
  auto* merge_cmd = app.add_subcommand("merge-lora", "Fold adapters into the base weights");
  merge_cmd->add_option("--checkpoint", merge.checkpoint, "Stage-3 pipeline checkpoint")
      ->required();
  merge_cmd->add_option("--out", merge.out, "Checkpoint output path");

  EvalOpts eval;
  auto* eval_cmd = app.add_subcommand("eval", "Score generated answers on a task suite");
  eval_cmd->add_option("--corpus", eval.corpus, "Corpus directory (model mode)");
  eval_cmd->add_option("--prompts", eval.prompts, "Task suite JSONL")->required();
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Pipeline checkpoint");
  eval_cmd->add_option("--responses", eval.responses,
                       "Score canned responses (one line per sample) instead of generating");
  eval_cmd->add_option("--out", eval.out, "Run directory for report.json/csv and transcripts");
  add_generation_flags(eval_cmd, eval.gen);
  eval_cmd->add_flag("--no-transcripts", eval.no_transcripts, "Skip transcripts.jsonl");
  eval_cmd->add_option("--seed", eval.seed, "Sampling seed");

  BaselineOpts baseline;
  auto* baseline_cmd =
      app.add_subcommand("baseline", "Analytic and Monte-Carlo random baselines");
  baseline_cmd->add_option("--task", baseline.task, "One of opd,pc,pss,pom,psr")->required();
  baseline_cmd->add_option("--trials", baseline.trials, "Monte-Carlo draws");

  ChatOpts chat;
  auto* chat_cmd = app.add_subcommand("chat", "Interactive multi-turn REPL over tactile videos");
  chat_cmd->add_option("--checkpoint", chat.checkpoint, "Pipeline checkpoint")->required();
  chat_cmd->add_option("--video", chat.videos, "Frame directory to attach (repeatable)");
  add_generation_flags(chat_cmd, chat.gen);
  chat_cmd->add_option("--log", chat.log, "Transcript JSONL path");
  chat_cmd->add_option("--seed", chat.seed, "Sampling seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp") return app.exit(e);
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*prep_cmd) return run_prep(prep);
    if (*stats_cmd) return run_stats(stats);
    if (*icc_cmd) return run_icc(icc);
    if (*split_cmd) return run_split(split);
    if (*synth_cmd) return run_synth(synth);
    if (*gen_cmd) return run_gen_prompts(gen);
    if (*tenc_cmd) return run_train_encoder(tenc);
    if (*talign_cmd) return run_train_align(talign);
    if (*te2e_cmd) return run_train_e2e(te2e);
    if (*merge_cmd) return run_merge_lora(merge);
    if (*eval_cmd) return run_eval(eval);
    if (*baseline_cmd) return run_baseline(baseline);
    if (*chat_cmd) return run_chat(chat);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand\n";
  return 2;
}

int cli_main(const std::vector<std::string>& args) {
  std::vector<std::string> full = {"tlm-lab"};
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  argv.reserve(full.size());
  for (const std::string& a : full) argv.push_back(a.c_str());
  return cli_main(int(argv.size()), argv.data());
}

}  // namespace tlm
