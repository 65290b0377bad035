#include <cmath>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "tlm/checkpoint.hpp"
#include "tlm/lm.hpp"

using namespace tlm;

namespace {

std::filesystem::path temp_dir(const std::string& leaf) {
  auto p = std::filesystem::temp_directory_path() / "tlm_lm_tests" / leaf;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

DecoderLMConfig tiny_config(int vocab) {
  DecoderLMConfig c;
  c.vocab_size = vocab;
  c.width = 32;
  c.depth = 2;
  c.heads = 4;
  c.mlp_ratio = 2;
  c.context_length = 64;
  return c;
}

std::vector<int> arange_ids(int n, int vocab) {
  std::vector<int> ids(std::size_t(n), 0);
  for (int i = 0; i < n; ++i) ids[std::size_t(i)] = i % vocab;
  return ids;
}

template <typename S>
ag::Mat<S> run_logits(DecoderLM<S>& lm, const std::vector<int>& ids) {
  ag::NoGradGuard guard;
  return decoder_logits(lm, embed_ids(lm, ids))->value;
}

// Gives the zero-initialized adapters nonzero content so they change outputs.
template <typename S>
void randomize_adapters(DecoderLM<S>& lm, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& [name, v] : lm.params.items) {
    if (name.ends_with(".lora_B")) {
      for (Eigen::Index r = 0; r < v->value.rows(); ++r) {
        for (Eigen::Index c = 0; c < v->value.cols(); ++c) {
          v->value(r, c) = S(rng.normal(0.0, 0.05));
        }
      }
    }
  }
}

}  // namespace

TEST_CASE("config validation rejects malformed settings") {
  DecoderLMConfig c = tiny_config(20);
  c.width = 30;
  CHECK_THROWS_WITH_AS(validate(c), "lm config: width 30 is not divisible by heads 4", Error);
  c = tiny_config(3);
  CHECK_THROWS_AS(validate(c), Error);
  c = tiny_config(20);
  c.depth = 0;
  CHECK_THROWS_AS(validate(c), Error);
  const DecoderLMConfig good = tiny_config(20);
  CHECK(lm_config_from_json(to_json(good)).context_length == good.context_length);
}

TEST_CASE("token ids outside the vocabulary are rejected") {
  auto lm = make_decoder_lm<float>(tiny_config(10), 1);
  CHECK_THROWS_WITH_AS(embed_ids(lm, {0, 10}), "lm: token id 10 outside vocabulary of 10",
                       Error);
  CHECK_THROWS_AS(embed_ids(lm, {-1}), Error);
}

TEST_CASE("sequences beyond the context length are rejected") {
  DecoderLMConfig c = tiny_config(10);
  c.context_length = 8;
  auto lm = make_decoder_lm<float>(c, 1);
  CHECK_NOTHROW(run_logits(lm, arange_ids(8, 10)));
  CHECK_THROWS_WITH_AS(run_logits(lm, arange_ids(9, 10)),
                       "lm: sequence of 9 tokens exceeds context length 8", Error);
  ag::NoGradGuard guard;
  CHECK_THROWS_WITH_AS(
      lm_loss(lm, embed_ids(lm, arange_ids(9, 10)), std::vector<int>(9, -1), "opd-003"),
      "lm: sequence of 9 tokens exceeds context length 8 (sample opd-003)", Error);
}

TEST_CASE("adapters start as the identity and merge back into the base") {
  auto lm = make_decoder_lm<float>(tiny_config(24), 7);
  const std::vector<int> ids = arange_ids(20, 24);
  const Eigen::MatrixXf base = run_logits(lm, ids);

  Rng rng(11);
  LoRAConfig lc;
  lc.r = 4;
  lc.alpha = 8.0;
  lc.dropout = 0.0;
  lora_wrap(lm, lc, rng);
  CHECK(lm.params.has("lm.block0.attn.wq.lora_A"));
  CHECK(lm.params.has("lm.block1.mlp.fc2.lora_B"));
  CHECK(!lm.params.has("lm.head.lora_A"));
  CHECK(!lm.params.get("lm.block0.attn.wq.W")->trainable);
  const Eigen::MatrixXf wrapped = run_logits(lm, ids);
  CHECK((wrapped - base).cwiseAbs().maxCoeff() < 1e-6f);

  randomize_adapters(lm, 13);
  const Eigen::MatrixXf adapted = run_logits(lm, ids);
  CHECK((adapted - base).cwiseAbs().maxCoeff() > 1e-3f);

  merge_lora(lm);
  CHECK(!lm.params.has("lm.block0.attn.wq.lora_A"));
  CHECK(lm.params.get("lm.block0.attn.wq.W")->trainable);
  for (const auto& [name, v] : lm.params.items) {
    CAPTURE(name);
    CHECK(!name.ends_with(".lora_A"));
    CHECK(!name.ends_with(".lora_B"));
  }
  const Eigen::MatrixXf merged = run_logits(lm, ids);
  CHECK((merged - adapted).cwiseAbs().maxCoeff() < 1e-5f);
}

TEST_CASE("adapter updates scale by alpha over rank") {
  nn::ParamStore<double> ps;
  Rng rng(3);
  auto lin = nn::make_linear<double>(ps, "probe", 256, 256, 0.0, rng);
  nn::attach_lora(ps, lin, "probe", 128, 256.0, 0.0, rng);
  CHECK(lin.lora->scaling == doctest::Approx(2.0));
  lin.lora->A->value.setZero();
  lin.lora->A->value(0, 0) = 1.0;
  lin.lora->B->value(0, 0) = 1.0;
  ag::Mat<double> x = ag::Mat<double>::Zero(1, 256);
  x(0, 0) = 1.0;
  const auto y = lin(ag::constant<double>(x));
  CHECK(y->value(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("adapter wrapping validates targets and ranks") {
  Rng rng(5);
  auto lm = make_decoder_lm<float>(tiny_config(16), 2);
  LoRAConfig bad;
  bad.r = 2;
  bad.targets = {"lm.block0.attn.wx"};
  CHECK_THROWS_WITH_AS(lora_wrap(lm, bad, rng),
                       "lora: unknown target matrix: lm.block0.attn.wx", Error);
  LoRAConfig huge;
  huge.r = 64;  // exceeds width 32
  CHECK_THROWS_AS(lora_wrap(lm, huge, rng), Error);
  LoRAConfig zero;
  zero.r = 0;
  CHECK_THROWS_WITH_AS(lora_wrap(lm, zero, rng), "lora: rank must be >= 1", Error);
  auto lm2 = make_decoder_lm<float>(tiny_config(16), 2);
  CHECK_THROWS_WITH_AS(merge_lora(lm2), "merge-lora: model has no adapters", Error);
}

TEST_CASE("default adapter targets cover attention and mlp matrices") {
  auto lm = make_decoder_lm<float>(tiny_config(16), 2);
  const auto targets = default_lora_targets(lm);
  REQUIRE(targets.size() == 12);
  CHECK(targets[0] == "lm.block0.attn.wq");
  CHECK(targets[5] == "lm.block0.mlp.fc2");
  CHECK(targets[11] == "lm.block1.mlp.fc2");
  for (const auto& t : targets) CHECK(t.find("lm.head") == std::string::npos);
}

TEST_CASE("initial loss sits near the log of the vocabulary size") {
  const int vocab = 50;
  DecoderLMConfig c = tiny_config(vocab);
  auto lm = make_decoder_lm<float>(c, 17);
  ag::NoGradGuard guard;
  Rng rng(23);
  double total = 0.0;
  const int seqs = 8, len = 12;
  for (int s = 0; s < seqs; ++s) {
    std::vector<int> ids(len), targets(len);
    for (int t = 0; t < len; ++t) {
      ids[std::size_t(t)] = int(rng.below(std::uint64_t(vocab)));
      targets[std::size_t(t)] = int(rng.below(std::uint64_t(vocab)));
    }
    total += double(lm_loss(lm, embed_ids(lm, ids), targets)->value(0, 0));
  }
  CHECK(std::abs(total / seqs - std::log(double(vocab))) < 0.25);
}

TEST_CASE("loss matches a direct computation over unmasked positions") {
  auto lm = make_decoder_lm<double>(tiny_config(20), 31);
  ag::NoGradGuard guard;
  const std::vector<int> ids = {1, 5, 7, 2, 9, 11, 4, 3};
  const std::vector<int> targets = {-1, -1, 2, -1, 11, 4, -1, 6};
  const auto logits = decoder_logits(lm, embed_ids(lm, ids))->value;
  double expect = 0.0;
  int counted = 0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] < 0) continue;
    const auto row = logits.row(Eigen::Index(t));
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    expect += lse - row(targets[std::size_t(t)]);
    ++counted;
  }
  expect /= counted;
  const double got = lm_loss(lm, embed_ids(lm, ids), targets)->value(0, 0);
  CHECK(got == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("masked suffix positions leave the loss unchanged") {
  auto lm = make_decoder_lm<double>(tiny_config(20), 37);
  ag::NoGradGuard guard;
  const std::vector<int> ids = {1, 5, 7, 2};
  const std::vector<int> targets = {5, 7, 2, -1};
  const double base = lm_loss(lm, embed_ids(lm, ids), targets)->value(0, 0);
  std::vector<int> ids_ext = ids;
  std::vector<int> targets_ext = targets;
  for (const int extra : {9, 13, 3}) {
    ids_ext.push_back(extra);
    targets_ext.push_back(-1);
  }
  const double extended = lm_loss(lm, embed_ids(lm, ids_ext), targets_ext)->value(0, 0);
  CHECK(extended == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("finite differences validate adapter gradients") {
  DecoderLMConfig c;
  c.vocab_size = 11;
  c.width = 8;
  c.depth = 2;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.context_length = 16;
  auto lm = make_decoder_lm<double>(c, 41);
  Rng rng(43);
  LoRAConfig lc;
  lc.r = 2;
  lc.alpha = 4.0;
  lc.dropout = 0.0;
  lora_wrap(lm, lc, rng);
  randomize_adapters(lm, 47);

  const std::vector<int> ids = {1, 4, 6, 2, 8, 10};
  const std::vector<int> targets = {4, 6, 2, 8, -1, 5};
  auto loss_value = [&]() {
    ag::NoGradGuard guard;
    return lm_loss(lm, embed_ids(lm, ids), targets)->value(0, 0);
  };
  auto loss = lm_loss(lm, embed_ids(lm, ids), targets);
  ag::backward(loss);

  CHECK(lm.params.get("lm.block0.attn.wq.W")->grad.size() == 0);

  const double eps = 1e-6;
  for (const std::string name : {"lm.block0.attn.wq.lora_A", "lm.block0.attn.wq.lora_B",
                                 "lm.block1.mlp.fc1.lora_A", "lm.block1.mlp.fc2.lora_B",
                                 "lm.embed.base", "lm.head.W"}) {
    const auto p = lm.params.get(name);
    REQUIRE(p->grad.size() > 0);
    Rng pick(fnv1a(name));
    for (int probe = 0; probe < 4; ++probe) {
      const Eigen::Index r = Eigen::Index(pick.below(std::uint64_t(p->value.rows())));
      const Eigen::Index cc = Eigen::Index(pick.below(std::uint64_t(p->value.cols())));
      const double save = p->value(r, cc);
      p->value(r, cc) = save + eps;
      const double up = loss_value();
      p->value(r, cc) = save - eps;
      const double down = loss_value();
      p->value(r, cc) = save;
      const double fd = (up - down) / (2 * eps);
      const double an = p->grad(r, cc);
      CAPTURE(name);
      if (std::abs(fd) < 1e-8 && std::abs(an) < 1e-8) continue;
      CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-10}) < 1e-4);
    }
  }
}

TEST_CASE("cached decoding matches the full recompute token for token") {
  const Tokenizer tok = build_tokenizer(
      {"alpha beta gamma delta epsilon zeta eta theta iota kappa", "one two three four five"});
  DecoderLMConfig c = tiny_config(tok.size());
  auto lm = make_decoder_lm<float>(c, 53);
  Rng rng(59);
  LoRAConfig lc;
  lc.r = 4;
  lc.alpha = 8.0;
  lc.dropout = 0.0;
  lora_wrap(lm, lc, rng);
  randomize_adapters(lm, 61);

  const std::vector<int> prompt = encode_text(tok, "alpha two gamma");
  GenerationParams params;
  params.max_new_tokens = 12;
  Eigen::MatrixXf prompt_emb(prompt.size(), c.width);
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    prompt_emb.row(Eigen::Index(i)) = lm.embed->value.row(prompt[i]);
  }
  const GenerationResult cached = generate(lm, tok, prompt_emb, params);

  std::vector<int> full_ids;
  {
    ag::NoGradGuard guard;
    std::vector<int> ctx = prompt;
    for (int step = 0; step < params.max_new_tokens; ++step) {
      const auto logits = decoder_logits(lm, embed_ids(lm, ctx))->value;
      Eigen::Index arg = 0;
      logits.row(logits.rows() - 1).maxCoeff(&arg);
      if (int(arg) == tok.eos_id) break;
      full_ids.push_back(int(arg));
      ctx.push_back(int(arg));
    }
  }
  CHECK(cached.ids == full_ids);
  CHECK(cached.text == decode_text(tok, full_ids));
}

TEST_CASE("generation honors eos, budget, and stop sequences") {
  const Tokenizer tok = build_tokenizer({"x y"});
  DecoderLMConfig c = tiny_config(tok.size());
  auto lm = make_decoder_lm<float>(c, 67);
  Eigen::MatrixXf prompt = lm.embed->value.row(tok.bos_id);

  auto force_token = [&](int id) {
    lm.head.b->value.setZero();
    lm.head.b->value(0, id) = 100.0f;
  };

  SUBCASE("eos stops immediately and is excluded from the output") {
    force_token(tok.eos_id);
    const auto r = generate(lm, tok, prompt, {});
    CHECK(r.stopped);
    CHECK(r.ids.empty());
    CHECK(r.text.empty());
  }
  SUBCASE("the budget bounds generation when nothing stops it") {
    force_token(tok.id_of("x"));
    GenerationParams params;
    params.max_new_tokens = 4;
    const auto r = generate(lm, tok, prompt, params);
    CHECK(!r.stopped);
    CHECK(r.ids == std::vector<int>(4, tok.id_of("x")));
    CHECK(r.text == "x x x x");
  }
  SUBCASE("stop sequences truncate at the first occurrence") {
    force_token(tok.id_of("x"));
    GenerationParams params;
    params.max_new_tokens = 10;
    params.stop = {"x x"};
    const auto r = generate(lm, tok, prompt, params);
    CHECK(r.stopped);
    CHECK(r.ids.size() == 2);
    CHECK(r.text.empty());
  }
  SUBCASE("sampling requires an rng and a positive temperature") {
    GenerationParams params;
    params.mode = GenerationParams::Mode::sample;
    CHECK_THROWS_WITH_AS(generate(lm, tok, prompt, params), "generate: sampling requires an rng",
                         Error);
    Rng rng(2);
    params.temperature = 0.0;
    CHECK_THROWS_AS(generate(lm, tok, prompt, params, &rng), Error);
    params.temperature = 0.7;
    const auto r = generate(lm, tok, prompt, params, &rng);
    CHECK(int(r.ids.size()) <= params.max_new_tokens);
  }
}

TEST_CASE("generation refuses to run past the context length") {
  const Tokenizer tok = build_tokenizer({"x"});
  DecoderLMConfig c = tiny_config(tok.size());
  c.context_length = 6;
  auto lm = make_decoder_lm<float>(c, 71);
  lm.head.b->value.setZero();
  lm.head.b->value(0, tok.id_of("x")) = 100.0f;
  Eigen::MatrixXf prompt(6, c.width);
  for (int i = 0; i < 6; ++i) prompt.row(i) = lm.embed->value.row(tok.bos_id);

  GenerationParams one;
  one.max_new_tokens = 1;
  CHECK(generate(lm, tok, prompt, one).ids.size() == 1);

  GenerationParams two;
  two.max_new_tokens = 2;
  CHECK_THROWS_WITH_AS(generate(lm, tok, prompt, two),
                       "lm: generation exceeded context length 6", Error);
}

TEST_CASE("checkpoint round trip reproduces the logits") {
  auto lm = make_decoder_lm<float>(tiny_config(18), 73);
  const std::vector<int> ids = arange_ids(10, 18);
  const Eigen::MatrixXf before = run_logits(lm, ids);

  CheckpointData data;
  data.config = {{"lm", to_json(lm.config)}};
  data.meta = {{"stage", "probe"}};
  data.tensors = snapshot_params(lm.params);
  const auto dir = temp_dir("ckpt");
  write_checkpoint(dir / "lm.ckpt", data);

  auto lm2 = make_decoder_lm<float>(lm_config_from_json(
                                        read_checkpoint(dir / "lm.ckpt").config.at("lm")),
                                    999);
  load_params(read_checkpoint(dir / "lm.ckpt"), lm2.params);
  const Eigen::MatrixXf after = run_logits(lm2, ids);
  CHECK((after - before).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("a tiny model memorizes its training pairs verbatim") {
  const std::vector<std::pair<std::string, std::string>> pairs = {
      {"what is alpha", "alpha is one"},
      {"what is beta", "beta is two"},
      {"what is gamma", "gamma is three"},
      {"what is delta", "delta is four"},
      {"what is epsilon", "epsilon is five"},
  };
  std::vector<std::string> texts;
  for (const auto& [q, a] : pairs) {
    texts.push_back(q);
    texts.push_back(a);
  }
  const Tokenizer tok = build_tokenizer(texts);

  DecoderLMConfig c = tiny_config(tok.size());
  auto lm = make_decoder_lm<float>(c, 79);

  struct Seq {
    std::vector<int> ids, targets;
  };
  std::vector<Seq> data;
  for (const auto& [q, a] : pairs) {
    Seq s;
    s.ids.push_back(tok.bos_id);
    for (const int id : encode_text(tok, q)) s.ids.push_back(id);
    const std::size_t answer_from = s.ids.size();
    for (const int id : encode_text(tok, a)) s.ids.push_back(id);
    s.ids.push_back(tok.eos_id);
    s.targets.assign(s.ids.size(), -1);
    for (std::size_t t = 0; t + 1 < s.ids.size(); ++t) {
      if (t + 1 >= answer_from) s.targets[t] = s.ids[t + 1];
    }
    data.push_back(std::move(s));
  }

  nn::AdamW<float> opt;
  opt.groups.push_back({lm.params.trainable(), 3e-3});
  double last = 0.0;
  for (int step = 0; step < 200; ++step) {
    std::vector<ag::Var<float>> losses;
    for (const auto& s : data) losses.push_back(lm_loss(lm, embed_ids(lm, s.ids), s.targets));
    const auto total = ag::weighted_sum(
        losses, std::vector<float>(losses.size(), 1.0f / float(losses.size())));
    opt.zero_grad();
    ag::backward(total);
    opt.step();
    last = double(total->value(0, 0));
  }
  CHECK(last < 0.05);

  for (const auto& [q, a] : pairs) {
    std::vector<int> prompt_ids = {tok.bos_id};
    for (const int id : encode_text(tok, q)) prompt_ids.push_back(id);
    Eigen::MatrixXf prompt(prompt_ids.size(), c.width);
    for (std::size_t i = 0; i < prompt_ids.size(); ++i) {
      prompt.row(Eigen::Index(i)) = lm.embed->value.row(prompt_ids[i]);
    }
    GenerationParams params;
    params.max_new_tokens = 16;
    const auto r = generate(lm, tok, prompt, params);
    CAPTURE(q);
    CHECK(r.text == a);
    CHECK(r.stopped);
  }
}
