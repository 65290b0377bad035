#include "doctest.h"
#include "tlm/nn.hpp"

namespace ag = tlm::ag;
namespace nn = tlm::nn;
using MatD = ag::Mat<double>;
using VarD = ag::Var<double>;

TEST_CASE("ParamStore registry behavior") {
  tlm::Rng rng(1);
  nn::ParamStore<double> ps;
  ps.add("enc.w", nn::randn<double>(2, 2, 1.0, rng), true);
  ps.add("lm.w", nn::randn<double>(2, 2, 1.0, rng), true);
  CHECK_THROWS_AS(ps.add("enc.w", MatD::Zero(1, 1), true), tlm::Error);
  CHECK(ps.with_prefix("enc.").size() == 1);
  CHECK(ps.trainable().size() == 2);
  ps.set_trainable("enc.", false);
  CHECK(ps.trainable().size() == 1);
  CHECK_FALSE(ps.get("enc.w")->needs_grad);

  const auto h0 = ps.hash_prefix("enc.");
  const auto h_all = ps.hash_prefix("");
  ps.get("enc.w")->value(0, 0) += 1.0;
  CHECK(ps.hash_prefix("enc.") != h0);
  CHECK(ps.hash_prefix("") != h_all);
  CHECK(ps.hash_prefix("lm.") == ps.hash_prefix("lm."));
}

TEST_CASE("LoRA identity at init, merge equivalence, and the paper multiplier") {
  tlm::Rng rng(2);
  nn::ParamStore<float> ps;
  auto lin = nn::make_linear<float>(ps, "w", 12, 10, 0.2, rng);
  nn::ParamStore<float> ps_lora;
  nn::Linear<float> wrapped = lin;  // shares W/b leaves
  nn::attach_lora<float>(ps_lora, wrapped, "w", 4, 8.0, 0.0, rng);

  SUBCASE("zero-initialized B keeps outputs identical") {
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      auto x = ag::constant<float>(nn::randn<float>(3, 12, 1.0, rng));
      auto base = lin(x);
      auto with = wrapped(x);
      worst = std::max(worst,
                       double((base->value - with->value).cwiseAbs().maxCoeff()));
    }
    CHECK(worst < 1e-6);
  }

  SUBCASE("merge matches adapter forward") {
    // give the adapter real content first
    wrapped.lora->A->value = nn::randn<float>(4, 12, 0.3, rng);
    wrapped.lora->B->value = nn::randn<float>(10, 4, 0.3, rng);
    std::vector<ag::Mat<float>> inputs;
    for (int i = 0; i < 100; ++i) inputs.push_back(nn::randn<float>(2, 12, 1.0, rng));

    std::vector<ag::Mat<float>> adapter_out;
    for (const auto& in : inputs) {
      adapter_out.push_back(wrapped(ag::constant<float>(ag::Mat<float>(in)))->value);
    }
    nn::Linear<float> merged = wrapped;
    merged.W = ag::leaf<float>(ag::Mat<float>(wrapped.W->value), false);
    merged.lora = wrapped.lora;
    merged.merge_lora();
    CHECK_FALSE(bool(merged.lora));
    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      auto out = merged(ag::constant<float>(ag::Mat<float>(inputs[i])));
      worst = std::max(worst,
                       double((out->value - adapter_out[i]).cwiseAbs().maxCoeff()));
    }
    CHECK(worst < 1e-5);
  }

  SUBCASE("alpha 256 with rank 128 gives multiplier 2") {
    tlm::Rng rng2(3);
    nn::ParamStore<float> big;
    auto wide = nn::make_linear<float>(big, "wide", 256, 256, 0.05, rng2);
    nn::attach_lora<float>(big, wide, "wide", 128, 256.0, 0.05, rng2);
    CHECK(wide.lora->scaling == doctest::Approx(2.0));
    CHECK(wide.lora->A->value.rows() == 128);
    CHECK(wide.lora->A->value.cols() == 256);
    CHECK(wide.lora->B->value.rows() == 256);
    CHECK(wide.lora->B->value.cols() == 128);
    CHECK(wide.lora->B->value.cwiseAbs().maxCoeff() == 0.0f);
  }

  SUBCASE("rank larger than the matrix is rejected") {
    tlm::Rng rng2(4);
    nn::ParamStore<float> small;
    auto narrow = nn::make_linear<float>(small, "narrow", 64, 64, 0.05, rng2);
    CHECK_THROWS_WITH_AS(nn::attach_lora<float>(small, narrow, "narrow", 128, 256.0, 0.0, rng2),
                         doctest::Contains("exceeds min"), tlm::Error);
  }
}

TEST_CASE("LoRA gradients flow to A and B while the base weight stays frozen") {
  tlm::Rng rng(5);
  nn::ParamStore<double> ps;
  auto lin = nn::make_linear<double>(ps, "w", 6, 5, 0.3, rng, /*trainable=*/false);
  nn::attach_lora<double>(ps, lin, "w", 2, 4.0, 0.0, rng);
  lin.lora->B->value = nn::randn<double>(5, 2, 0.3, rng);  // make the path live

  auto x = ag::constant<double>(nn::randn<double>(3, 6, 1.0, rng));
  MatD proj = nn::randn<double>(5, 1, 1.0, rng);
  auto out = ag::matmul(ag::rows_mean(lin(x)), ag::constant<double>(MatD(proj)));
  ag::backward(out);
  CHECK(lin.W->grad.size() == 0);
  CHECK(lin.b->grad.size() == 0);
  CHECK(lin.lora->A->grad.size() != 0);
  CHECK(lin.lora->B->grad.size() != 0);
}

TEST_CASE("causal attention blocks information from the future") {
  tlm::Rng rng(6);
  nn::ParamStore<double> ps;
  auto blk = nn::make_block<double>(ps, "b0", 8, 2, 16, 0.2, rng);
  MatD x0 = nn::randn<double>(5, 8, 1.0, rng);
  MatD x1 = x0;
  x1(3, 1) += 0.7;  // perturb position 3 (non-uniformly, so layernorm keeps it)

  auto y0 = blk(ag::constant<double>(MatD(x0)), /*causal=*/true);
  auto y1 = blk(ag::constant<double>(MatD(x1)), /*causal=*/true);
  // positions before 3 must be identical; position 3 must differ
  CHECK((y0->value.topRows(3) - y1->value.topRows(3)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((y0->value.row(3) - y1->value.row(3)).cwiseAbs().maxCoeff() > 1e-6);

  // non-causal attention lets the change reach every position
  auto z0 = blk(ag::constant<double>(MatD(x0)), /*causal=*/false);
  auto z1 = blk(ag::constant<double>(MatD(x1)), /*causal=*/false);
  CHECK((z0->value.row(0) - z1->value.row(0)).cwiseAbs().maxCoeff() > 1e-9);
}

TEST_CASE("transformer block gradients match finite differences") {
  tlm::Rng rng(7);
  nn::ParamStore<double> ps;
  auto blk = nn::make_block<double>(ps, "b0", 6, 2, 12, 0.25, rng);
  auto x = ag::leaf<double>(nn::randn<double>(4, 6, 0.8, rng), true);
  MatD proj = nn::randn<double>(6, 1, 1.0, rng);
  auto fwd = [&] {
    return ag::matmul(ag::rows_mean(blk(x, true)), ag::constant<double>(MatD(proj)));
  };

  auto check = [&](const ag::Var<double>& p) {
    p->zero_grad();
    for (auto& [name, v] : ps.items) v->zero_grad();
    ag::backward(fwd());
    REQUIRE(p->grad.size() != 0);
    MatD a = p->grad;
    MatD n(p->value.rows(), p->value.cols());
    const double eps = 1e-6;
    for (Eigen::Index r = 0; r < n.rows(); ++r) {
      for (Eigen::Index c = 0; c < n.cols(); ++c) {
        const double saved = p->value(r, c);
        p->value(r, c) = saved + eps;
        const double fp = fwd()->value(0, 0);
        p->value(r, c) = saved - eps;
        const double fm = fwd()->value(0, 0);
        p->value(r, c) = saved;
        n(r, c) = (fp - fm) / (2 * eps);
      }
    }
    const double err = (a - n).cwiseAbs().maxCoeff();
    CHECK(err <= 1e-5 * (1.0 + n.cwiseAbs().maxCoeff()));
  };
  check(x);
  check(ps.get("b0.attn.wq.W"));
  check(ps.get("b0.mlp.fc1.W"));
  check(ps.get("b0.ln1.gamma"));
}

TEST_CASE("cosine schedule endpoints and monotonicity") {
  CHECK(nn::cosine_factor(0, 10) == doctest::Approx(1.0));
  CHECK(nn::cosine_factor(9, 10) == doctest::Approx(0.0));
  CHECK(nn::cosine_factor(0, 1) == doctest::Approx(1.0));
  for (int s = 1; s < 10; ++s) {
    CHECK(nn::cosine_factor(s, 10) < nn::cosine_factor(s - 1, 10));
  }
  CHECK_THROWS_AS(nn::cosine_factor(10, 10), tlm::Error);
}

TEST_CASE("AdamW drives a quadratic to its minimum and honors groups") {
  tlm::Rng rng(8);
  auto x = ag::leaf<double>(nn::randn<double>(1, 4, 2.0, rng), true);
  auto frozen = ag::leaf<double>(MatD::Constant(1, 4, 1.0), true);
  MatD target = nn::randn<double>(1, 4, 1.0, rng);

  nn::AdamW<double> opt;
  opt.groups.push_back({{x}, 0.05});
  opt.groups.push_back({{frozen}, 0.0});  // zero-lr group must not move
  const MatD frozen_before = frozen->value;

  for (int step = 0; step < 400; ++step) {
    opt.zero_grad();
    auto diff = ag::add(x, ag::constant<double>(MatD(-target)));
    auto loss = ag::matmul(ag::hadamard(diff, diff), ag::constant<double>(MatD::Ones(4, 1)));
    auto frozen_term = ag::matmul(frozen, ag::constant<double>(MatD::Zero(4, 1)));
    ag::backward(ag::add(loss, frozen_term));
    opt.step();
  }
  CHECK((x->value - target).cwiseAbs().maxCoeff() < 1e-4);
  CHECK((frozen->value - frozen_before).cwiseAbs().maxCoeff() == 0.0);
}
