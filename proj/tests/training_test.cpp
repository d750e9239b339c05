#include <cmath>
#include <cstring>

#include "doctest.h"
#include "mat/checkpoint.hpp"
#include "mat/gradcheck.hpp"
#include "mat/metrics.hpp"
#include "mat/train.hpp"
#include "test_util.hpp"

using namespace mat;

namespace {

TrainConfig quick_train(int steps) {
  TrainConfig cfg;
  cfg.max_steps = steps;
  cfg.warmup_steps = 40;
  cfg.batch_tokens = 32;
  cfg.log_every = 10;
  cfg.ckpt_every = 0;
  cfg.seed = 11;
  return cfg;
}

ModelConfig micro_model() {
  ModelConfig cfg;
  cfg.n_a = 2;
  cfg.heads = 2;
  cfg.dim = 8;
  cfg.ffn_dim = 16;
  cfg.enc_blocks = 1;
  cfg.dec_blocks = 1;
  cfg.rho = 0.3;
  cfg.vocab_src = cfg.vocab_tgt = 10;
  cfg.max_len = 16;
  return cfg;
}

TaskData micro_data() {
  TaskSpec spec;
  spec.kind = TaskKind::kCopy;
  spec.vocab = 10;
  spec.len_min = 2;
  spec.len_max = 5;
  spec.n_train = 150;
  spec.n_valid = 20;
  spec.n_test = 20;
  spec.seed = 3;
  return generate_task(spec);
}

// Kolmogorov-Smirnov p-value against uniform [0,1).
double ks_uniform_pvalue(std::vector<double> draws) {
  std::sort(draws.begin(), draws.end());
  const double n = static_cast<double>(draws.size());
  double d_stat = 0.0;
  for (size_t i = 0; i < draws.size(); ++i) {
    const double cdf = draws[i];
    d_stat = std::max(d_stat, std::fabs((static_cast<double>(i) + 1.0) / n - cdf));
    d_stat = std::max(d_stat, std::fabs(cdf - static_cast<double>(i) / n));
  }
  const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d_stat;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) {
    p += 2.0 * (k % 2 == 1 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  }
  return std::min(std::max(p, 0.0), 1.0);
}

}  // namespace

TEST_CASE("lr schedule: warmup peak and inverse-sqrt decay") {
  TrainConfig cfg;  // base_lr 5e-4, warmup 4000
  CHECK(lr_at(4000, cfg) == 5e-4);
  CHECK(lr_at(2000, cfg) == doctest::Approx(2.5e-4).epsilon(1e-12));
  CHECK(lr_at(16000, cfg) == doctest::Approx(2.5e-4).epsilon(1e-12));
  CHECK_THROWS_AS(lr_at(0, cfg), ContractError);

  // continuous at the peak, strictly decreasing afterwards
  CHECK(lr_at(3999, cfg) == doctest::Approx(lr_at(4000, cfg)).epsilon(1e-3));
  CHECK(lr_at(4001, cfg) == doctest::Approx(lr_at(4000, cfg)).epsilon(1e-3));
  double prev = lr_at(4000, cfg);
  for (int64_t step = 4001; step < 4400; ++step) {
    const double cur = lr_at(step, cfg);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("adam: first-step magnitude, zero grads, scalar convergence") {
  TrainConfig cfg;
  {
    Tensor<double> w = Tensor<double>::zeros({1});
    std::vector<Tensor<double>*> params = {&w};
    auto st = init_adam(params);
    const std::vector<double> g = {0.5};
    adam_step<double>(params, {"w"}, {&g}, st, cfg, 1e-3);
    CHECK(std::fabs(w.data[0]) == doctest::Approx(1e-3).epsilon(1e-6));
    CHECK(st.t == 1);
  }
  {
    Tensor<double> w = Tensor<double>::full({3}, 1.5);
    std::vector<Tensor<double>*> params = {&w};
    auto st = init_adam(params);
    const std::vector<double> g = {0.0, 0.0, 0.0};
    adam_step<double>(params, {"w"}, {&g}, st, cfg, 1e-3);
    for (double v : w.data) CHECK(v == 1.5);
    CHECK(st.t == 1);
  }
  {
    // f(w) = (w-3)^2/2 from w=0 with lr=0.1 lands near the optimum
    Tensor<double> w = Tensor<double>::zeros({1});
    std::vector<Tensor<double>*> params = {&w};
    auto st = init_adam(params);
    for (int i = 0; i < 100; ++i) {
      const std::vector<double> g = {w.data[0] - 3.0};
      adam_step<double>(params, {"w"}, {&g}, st, cfg, 0.1);
    }
    CHECK(std::fabs(w.data[0] - 3.0) < 0.1);
  }
}

TEST_CASE("adam is invariant to the gradient layout and rejects NaN") {
  TrainConfig cfg;
  RngStream rng(9);
  auto flat = testutil::random_tensor<double>({6}, rng);
  auto grid = Tensor<double>({2, 3}, flat.data);
  const std::vector<double> g = {0.1, -0.2, 0.3, -0.4, 0.5, -0.6};

  std::vector<Tensor<double>*> p1 = {&flat};
  std::vector<Tensor<double>*> p2 = {&grid};
  auto s1 = init_adam(p1);
  auto s2 = init_adam(p2);
  adam_step<double>(p1, {"flat"}, {&g}, s1, cfg, 1e-2);
  adam_step<double>(p2, {"grid"}, {&g}, s2, cfg, 1e-2);
  CHECK(std::memcmp(flat.data.data(), grid.data.data(), 6 * sizeof(double)) == 0);

  const std::vector<double> bad = {0.1, std::nan(""), 0.3, 0.0, 0.0, 0.0};
  try {
    adam_step<double>(p1, {"embed.shared"}, {&bad}, s1, cfg, 1e-2);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("embed.shared") != std::string::npos);
  }
}

TEST_CASE("label-smoothed loss: closed forms and the hand oracle") {
  const int v = 8;
  auto uniform = Tensor<double>::full({3, v}, 0.25);
  CHECK(label_smoothed_nll<double>(uniform, {4, 5, 6}, 0.0, kPadId).data[0] ==
        doctest::Approx(std::log(v)).epsilon(1e-12));

  // extreme logits on the right answer drive the loss to zero
  Tensor<double> hot = Tensor<double>::zeros({2, v});
  hot.at(0, 5) = 60.0;
  hot.at(1, 6) = 60.0;
  CHECK(label_smoothed_nll<double>(hot, {5, 6}, 0.0, kPadId).data[0] < 1e-9);

  // 3-class case against an independent hand computation
  Tensor<double> logits({1, 3}, {1.0, 2.0, 0.5});
  const double eps = 0.1;
  double lse = 0.0;
  for (double x : logits.data) lse += std::exp(x);
  lse = std::log(lse);
  const double hand = -(1.0 - eps) * (logits.data[1] - lse) -
                      eps / 3.0 * ((logits.data[0] - lse) + (logits.data[1] - lse) +
                                   (logits.data[2] - lse));
  CHECK(label_smoothed_nll<double>(logits, {1}, eps, kPadId).data[0] ==
        doctest::Approx(hand).epsilon(1e-12));

  // eps = 0 equals plain cross entropy
  RngStream rng(31);
  auto raw = testutil::random_tensor<double>({4, v}, rng, -2.0, 2.0);
  const std::vector<int> tgt = {4, 6, 7, 5};
  double plain = 0.0;
  for (int r = 0; r < 4; ++r) {
    double denom = 0.0;
    for (int c = 0; c < v; ++c) denom += std::exp(raw.at(r, c));
    plain += -(raw.at(r, tgt[static_cast<size_t>(r)]) - std::log(denom));
  }
  plain /= 4.0;
  CHECK(std::fabs(label_smoothed_nll<double>(raw, tgt, 0.0, kPadId).data[0] - plain) < 1e-10);

  // pads contribute nothing; all-pad is a contract violation
  auto padded = Tensor<double>::zeros({3, v});
  for (int c = 0; c < v; ++c) {
    padded.at(0, c) = raw.at(0, c);
    padded.at(1, c) = raw.at(1, c);
  }
  const double with_pad =
      label_smoothed_nll<double>(padded, {4, 6, kPadId}, 0.1, kPadId).data[0];
  Tensor<double> unpadded = Tensor<double>::zeros({2, v});
  for (int c = 0; c < v; ++c) {
    unpadded.at(0, c) = raw.at(0, c);
    unpadded.at(1, c) = raw.at(1, c);
  }
  CHECK(with_pad == label_smoothed_nll<double>(unpadded, {4, 6}, 0.1, kPadId).data[0]);
  CHECK_THROWS_AS(label_smoothed_nll<double>(padded, {kPadId, kPadId, kPadId}, 0.1, kPadId),
                  ContractError);
}

TEST_CASE("label-smoothed loss gradient matches finite differences") {
  RngStream rng(41);
  auto logits = testutil::random_tensor<double>({3, 6}, rng, -2.0, 2.0);
  for (double eps : {0.0, 0.1}) {
    auto rep = grad_check(
        [eps](Tape<double>* tape, std::vector<Tensor<double>>& in) {
          return label_smoothed_nll<double>(in[0], {4, kPadId, 5}, eps, kPadId, tape);
        },
        {logits}, 1e-6);
    CHECK(rep.max_rel_err < 1e-6);
  }
}

TEST_CASE("mask_schedule: replay, resume, uniformity") {
  const uint64_t seed = 97;
  CHECK(mask_schedule(seed, 10, 3, 1) == mask_schedule(seed, 10, 3, 1));
  CHECK(mask_schedule(seed, 10, 3, 1) != mask_schedule(seed, 10, 3, 2));
  CHECK(mask_schedule(seed, 10, 3, 1) != mask_schedule(seed + 1, 10, 3, 1));

  // position addressing: a resumed run sees the draws of an uninterrupted one
  std::vector<double> uninterrupted;
  for (int64_t step = 1; step <= 20; ++step) uninterrupted.push_back(mask_schedule(seed, step, 2, 0));
  for (int64_t step = 11; step <= 20; ++step) {
    CHECK(mask_schedule(seed, step, 2, 0) == uninterrupted[static_cast<size_t>(step - 1)]);
  }

  std::vector<double> draws;
  draws.reserve(100000);
  for (int64_t step = 1; step <= 12500; ++step) {
    for (int sub = 0; sub < 4; ++sub) {
      for (int slot = 0; slot < 2; ++slot) draws.push_back(mask_schedule(seed, step, sub, slot));
    }
  }
  CHECK(ks_uniform_pvalue(std::move(draws)) > 0.01);
}

TEST_CASE("train_loop: bit-identical reruns, drop-free eval") {
  auto data = micro_data();
  auto cfg = quick_train(40);

  auto run = [&]() {
    auto model = build_model<float>(micro_model(), cfg.seed);
    auto result = train_loop(model, data, cfg);
    std::string lines;
    for (const auto& row : result.metrics) lines += format_metrics_row(row) + "\n";
    return std::make_pair(model, lines);
  };
  auto [m1, log1] = run();
  auto [m2, log2] = run();
  CHECK(log1 == log2);
  CHECK(!log1.empty());

  std::vector<const Tensor<float>*> p1, p2;
  for_each_param(m1, [&](const std::string&, const Tensor<float>& t) { p1.push_back(&t); });
  for_each_param(m2, [&](const std::string&, const Tensor<float>& t) { p2.push_back(&t); });
  for (size_t i = 0; i < p1.size(); ++i) CHECK(testutil::bitwise_equal(*p1[i], *p2[i]));

  // a model trained with rho > 0 still evaluates deterministically
  const std::vector<int> src = {4, 5, 2};
  const std::vector<int> tgt = {1, 4, 5};
  CHECK(testutil::bitwise_equal(forward(m1, src, tgt), forward(m1, src, tgt)));
}

TEST_CASE("train_loop aborts on numeric blowup and keeps its step") {
  auto data = micro_data();
  auto cfg = quick_train(30);
  cfg.base_lr = 1e30;  // guaranteed overflow within a couple of steps
  cfg.warmup_steps = 1;
  auto model = build_model<float>(micro_model(), 1);
  auto result = train_loop(model, data, cfg);
  CHECK(result.aborted);
  CHECK(result.abort_step >= 1);
  CHECK(!result.abort_reason.empty());
}

TEST_CASE("train and loss configs reject bad values") {
  TrainConfig bad;
  bad.base_lr = -1.0;
  bad.beta1 = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  auto logits = Tensor<double>::zeros({2, 4});
  CHECK_THROWS_AS(label_smoothed_nll<double>(logits, {1, 2}, 1.0, kPadId), ConfigError);
}

TEST_CASE("a tiny single-branch model masters the copy task") {
  ModelConfig mc;
  mc.n_a = 1;
  mc.heads = 2;
  mc.dim = 16;
  mc.ffn_dim = 32;
  mc.enc_blocks = 1;
  mc.dec_blocks = 1;
  mc.rho = 0.0;
  mc.vocab_src = mc.vocab_tgt = 10;
  mc.max_len = 10;

  TaskSpec spec;
  spec.kind = TaskKind::kCopy;
  spec.vocab = 10;
  spec.len_min = 2;
  spec.len_max = 6;
  spec.n_train = 2000;
  spec.n_valid = 200;
  spec.n_test = 10;
  spec.seed = 8;
  auto data = generate_task(spec);

  TrainConfig tc;
  tc.max_steps = 2000;
  tc.warmup_steps = 200;
  tc.base_lr = 1e-3;
  tc.label_smoothing = 0.0;
  tc.batch_tokens = 128;
  tc.log_every = 500;
  tc.seed = 4;

  auto model = build_model<float>(mc, tc.seed);
  auto result = train_loop(model, data, tc);
  REQUIRE(!result.aborted);

  int64_t hits = 0, total = 0;
  for (const auto& ex : data.valid) {
    std::vector<int> enc_in = ex.src;
    enc_in.push_back(kEosId);
    std::vector<int> tgt_in(1, kBosId);
    tgt_in.insert(tgt_in.end(), ex.tgt.begin(), ex.tgt.end());
    std::vector<int> tgt_out = ex.tgt;
    tgt_out.push_back(kEosId);
    const auto [h, r] = token_match_counts(forward(model, enc_in, tgt_in), tgt_out, kPadId);
    hits += h;
    total += r;
  }
  CHECK(static_cast<double>(hits) / static_cast<double>(total) >= 0.99);
}
