#include <cmath>

#include "doctest.h"
#include "mat/gradcheck_suite.hpp"
#include "mat/layers.hpp"
#include "test_util.hpp"

using namespace mat;
using testutil::bitwise_equal;
using testutil::random_tensor;
using testutil::tensor1;
using testutil::tensor2;

namespace {

BranchSet<double> random_branch_set(int n_a, int m, int d, RngStream& rng, double rho = 0.0) {
  BranchSet<double> set;
  set.drop_rate = rho;
  set.branches.resize(static_cast<size_t>(n_a));
  for (auto& branch : set.branches) {
    branch.heads.resize(static_cast<size_t>(m));
    for (auto& h : branch.heads) {
      h.wq = random_tensor<double>({d, d / m}, rng, -0.7, 0.7);
      h.wk = random_tensor<double>({d, d / m}, rng, -0.7, 0.7);
      h.wv = random_tensor<double>({d, d / m}, rng, -0.7, 0.7);
    }
  }
  return set;
}

FfnParams<double> random_ffn(int d, int dh, RngStream& rng) {
  return FfnParams<double>{random_tensor<double>({d, dh}, rng, -0.7, 0.7),
                           random_tensor<double>({dh}, rng, -0.5, 0.5),
                           random_tensor<double>({dh, d}, rng, -0.7, 0.7),
                           random_tensor<double>({d}, rng, -0.5, 0.5)};
}

bool elementwise_equal(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape != b.shape) return false;
  for (size_t i = 0; i < a.data.size(); ++i) {
    if (a.data[i] != b.data[i]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("scaled_dot_attn with a single key returns that value row") {
  RngStream rng(1);
  auto q = random_tensor<double>({3, 4}, rng);
  auto k = random_tensor<double>({1, 4}, rng);
  auto v = random_tensor<double>({1, 4}, rng);
  auto out = scaled_dot_attn<double>(q, k, v);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) CHECK(out.at(r, c) == v.at(0, c));
  }
}

TEST_CASE("scaled_dot_attn with zero queries averages the values") {
  RngStream rng(2);
  auto q = Tensor<double>::zeros({2, 4});
  auto k = random_tensor<double>({5, 4}, rng);
  auto v = random_tensor<double>({5, 4}, rng);
  auto out = scaled_dot_attn<double>(q, k, v);
  for (int c = 0; c < 4; ++c) {
    double mean = 0.0;
    for (int r = 0; r < 5; ++r) mean += v.at(r, c);
    mean /= 5.0;
    CHECK(out.at(0, c) == doctest::Approx(mean).epsilon(1e-12));
    CHECK(out.at(1, c) == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("scaled_dot_attn matches a hand-rolled softmax oracle") {
  RngStream rng(3);
  auto q = random_tensor<double>({2, 4}, rng);
  auto k = random_tensor<double>({3, 4}, rng);
  auto v = random_tensor<double>({3, 4}, rng);

  // oracle: explicit scores, softmax, weighted sum
  Tensor<double> expect = Tensor<double>::zeros({2, 4});
  for (int i = 0; i < 2; ++i) {
    double w[3], mx = -1e300, sum = 0.0;
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int c = 0; c < 4; ++c) s += q.at(i, c) * k.at(j, c);
      w[j] = s / std::sqrt(4.0);
      mx = std::max(mx, w[j]);
    }
    for (int j = 0; j < 3; ++j) {
      w[j] = std::exp(w[j] - mx);
      sum += w[j];
    }
    for (int j = 0; j < 3; ++j) w[j] /= sum;
    for (int c = 0; c < 4; ++c) {
      for (int j = 0; j < 3; ++j) expect.at(i, c) += w[j] * v.at(j, c);
    }
  }
  CHECK(testutil::max_abs_diff(scaled_dot_attn<double>(q, k, v), expect) < 1e-10);
}

TEST_CASE("attention masks: fully hidden rows are rejected, shapes checked") {
  RngStream rng(4);
  auto q = random_tensor<double>({2, 4}, rng);
  auto k = random_tensor<double>({3, 4}, rng);
  auto v = random_tensor<double>({3, 4}, rng);

  AttnMask<double> bad{Tensor<double>::full({2, 3}, kMaskNegInf)};
  CHECK_THROWS_AS(scaled_dot_attn(q, k, v, &bad), ContractError);

  AttnMask<double> wrong{Tensor<double>::zeros({3, 3})};
  CHECK_THROWS_AS(scaled_dot_attn(q, k, v, &wrong), DimensionError);

  auto causal = causal_mask<double>(3);
  auto out = scaled_dot_attn(random_tensor<double>({3, 4}, rng), k, v, &causal);
  // first row sees only the first key
  for (int c = 0; c < 4; ++c) CHECK(out.at(0, c) == doctest::Approx(v.at(0, c)).epsilon(1e-12));
}

TEST_CASE("attention weight rows sum to 1 for every head of every branch") {
  RngStream rng(5);
  auto set = random_branch_set(3, 2, 8, rng);
  auto x = random_tensor<double>({5, 8}, rng);
  for (const auto& branch : set.branches) {
    for (const auto& head : branch.heads) {
      auto w = attention_weights(matmul(x, head.wq), matmul(x, head.wk));
      for (int r = 0; r < w.rows(); ++r) {
        double s = 0.0;
        for (int c = 0; c < w.cols(); ++c) s += w.at(r, c);
        CHECK(std::fabs(s - 1.0) < 1e-12);
      }
    }
  }
}

TEST_CASE("multi_head_attn with one identity head degenerates to scaled_dot_attn") {
  RngStream rng(6);
  const int d = 4;
  BranchParams<double> branch;
  branch.heads.resize(1);
  branch.heads[0].wq = Tensor<double>::zeros({d, d});
  branch.heads[0].wk = Tensor<double>::zeros({d, d});
  branch.heads[0].wv = Tensor<double>::zeros({d, d});
  for (int i = 0; i < d; ++i) {
    branch.heads[0].wq.at(i, i) = 1.0;
    branch.heads[0].wk.at(i, i) = 1.0;
    branch.heads[0].wv.at(i, i) = 1.0;
  }
  auto q = random_tensor<double>({3, d}, rng);
  auto k = random_tensor<double>({5, d}, rng);
  auto v = random_tensor<double>({5, d}, rng);
  CHECK(bitwise_equal(multi_head_attn<double>(q, k, v, branch), scaled_dot_attn<double>(q, k, v)));
}

TEST_CASE("multi_head_attn with block-identity projections concatenates half-width attentions") {
  RngStream rng(7);
  const int d = 6, half = 3;
  BranchParams<double> branch;
  branch.heads.resize(2);
  for (int h = 0; h < 2; ++h) {
    auto& head = branch.heads[static_cast<size_t>(h)];
    head.wq = Tensor<double>::zeros({d, half});
    head.wk = Tensor<double>::zeros({d, half});
    head.wv = Tensor<double>::zeros({d, half});
    for (int i = 0; i < half; ++i) {
      head.wq.at(h * half + i, i) = 1.0;
      head.wk.at(h * half + i, i) = 1.0;
      head.wv.at(h * half + i, i) = 1.0;
    }
  }
  auto q = random_tensor<double>({4, d}, rng);
  auto k = random_tensor<double>({5, d}, rng);
  auto v = random_tensor<double>({5, d}, rng);

  auto slice = [&](const Tensor<double>& t, int h) {
    Tensor<double> s = Tensor<double>::zeros({t.rows(), half});
    for (int r = 0; r < t.rows(); ++r) {
      for (int c = 0; c < half; ++c) s.at(r, c) = t.at(r, h * half + c);
    }
    return s;
  };
  auto expect = concat_lastdim<double>(
      {scaled_dot_attn<double>(slice(q, 0), slice(k, 0), slice(v, 0)),
       scaled_dot_attn<double>(slice(q, 1), slice(k, 1), slice(v, 1))});
  CHECK(bitwise_equal(multi_head_attn<double>(q, k, v, branch), expect));
}

TEST_CASE("multi_head_attn output is always T_q x d") {
  RngStream rng(8);
  for (int m : {1, 2, 4}) {
    auto set = random_branch_set(1, m, 8, rng);
    auto q = random_tensor<double>({3, 8}, rng);
    auto kv = random_tensor<double>({6, 8}, rng);
    auto out = multi_head_attn<double>(q, kv, kv, set.branches[0]);
    CHECK(out.shape == Shape{3, 8});
  }
}

TEST_CASE("draw_branch_masks: rho=0 gives exact ones, eval mode ignores rho") {
  RngStream rng(9);
  BranchSet<double> set = random_branch_set(3, 2, 8, rng, 0.0);
  set.train = true;
  RngStream draws(42);
  for (double f : draw_branch_masks(set, draws)) CHECK(f == 1.0);

  set.drop_rate = 0.9;
  set.train = false;
  RngStream draws2(43);
  for (double f : draw_branch_masks(set, draws2)) CHECK(f == 1.0);
}

TEST_CASE("draw_branch_masks follows the indicator/scale formula draw by draw") {
  RngStream rng(10);
  BranchSet<double> set = random_branch_set(4, 3, 6, rng, 0.3);
  set.train = true;
  set.mode = DropMode::kHead;  // 12 slots
  RngStream draws(77, 5);
  auto factors = draw_branch_masks(set, draws);
  REQUIRE(factors.size() == 12);
  RngStream replay(77, 5);
  for (double f : factors) {
    const double u = replay.next_uniform();
    const double expect = u >= 0.3 ? 1.0 / 0.7 : 0.0;
    CHECK(f == expect);
  }
}

TEST_CASE("forcing every draw below rho zeroes all factors") {
  // seed picked so the first two uniforms at counters 0,1 land below 0.9
  uint64_t seed = 0;
  bool found = false;
  for (uint64_t s = 0; s < 1000 && !found; ++s) {
    if (RngStream::uniform_at(s, 0) < 0.9 && RngStream::uniform_at(s, 1) < 0.9) {
      seed = s;
      found = true;
    }
  }
  REQUIRE(found);
  RngStream rng(123);
  BranchSet<double> set = random_branch_set(2, 2, 4, rng, 0.9);
  set.train = true;
  RngStream draws(seed);
  for (double f : draw_branch_masks(set, draws)) CHECK(f == 0.0);
}

TEST_CASE("keep factors have unit mean at rho=0.3 over 1e5 draws") {
  RngStream rng(11);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += draw_keep_factors<double>(1, 0.3, rng)[0];
  CHECK(sum / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("multi_branch_attn degeneracies") {
  RngStream rng(12);
  const int d = 8;
  auto q = random_tensor<double>({3, d}, rng);
  auto kv = random_tensor<double>({5, d}, rng);

  // N_a = 1, rho = 0: exactly Q + multi-head output
  auto set1 = random_branch_set(1, 2, d, rng);
  auto expect = add(q, multi_head_attn<double>(q, kv, kv, set1.branches[0]));
  CHECK(bitwise_equal(multi_branch_attn<double>(q, kv, kv, set1, nullptr, {1.0}), expect));

  // all branches dropped: the residual is all that remains
  auto set3 = random_branch_set(3, 2, d, rng, 0.5);
  auto floor = multi_branch_attn<double>(q, kv, kv, set3, nullptr, {0.0, 0.0, 0.0});
  CHECK(elementwise_equal(floor, q));

  // identical branches average to a single branch, bit for bit
  BranchSet<double> same = set1;
  same.branches = {set1.branches[0], set1.branches[0], set1.branches[0]};
  CHECK(bitwise_equal(multi_branch_attn<double>(q, kv, kv, same, nullptr, {1.0, 1.0, 1.0}),
                      multi_branch_attn<double>(q, kv, kv, set1, nullptr, {1.0})));
}

TEST_CASE("ffn: constant map, linear region, and the two-matmul oracle") {
  RngStream rng(13);
  const int d = 4, dh = 6;

  FfnParams<double> zero{Tensor<double>::zeros({d, dh}), Tensor<double>::zeros({dh}),
                         Tensor<double>::zeros({dh, d}), Tensor<double>::full({d}, 2.5)};
  auto x = random_tensor<double>({3, d}, rng);
  auto constant = ffn(x, zero);
  for (double v : constant.data) CHECK(v == 2.5);

  // identity weights with a large positive b1 keep relu linear: ffn(x) = x
  FfnParams<double> ident{Tensor<double>::zeros({d, d}), Tensor<double>::full({d}, 10.0),
                          Tensor<double>::zeros({d, d}), Tensor<double>::full({d}, -10.0)};
  for (int i = 0; i < d; ++i) {
    ident.w1.at(i, i) = 1.0;
    ident.w2.at(i, i) = 1.0;
  }
  CHECK(testutil::max_abs_diff(ffn(x, ident), x) < 1e-12);

  auto w = random_ffn(d, dh, rng);
  auto h = testutil::matmul_oracle(x, w.w1);
  for (int r = 0; r < h.rows(); ++r) {
    for (int c = 0; c < h.cols(); ++c) {
      h.at(r, c) = std::max(h.at(r, c) + w.b1.data[static_cast<size_t>(c)], 0.0);
    }
  }
  auto expect = testutil::matmul_oracle(h, w.w2);
  for (int r = 0; r < expect.rows(); ++r) {
    for (int c = 0; c < expect.cols(); ++c) expect.at(r, c) += w.b2.data[static_cast<size_t>(c)];
  }
  CHECK(testutil::max_abs_diff(ffn(x, w), expect) < 1e-10);
}

TEST_CASE("residual_ffn_drop: drop floor, rho=0 identity, Monte-Carlo mean") {
  RngStream rng(14);
  const int d = 4;
  auto w = random_ffn(d, 8, rng);
  auto x = random_tensor<double>({2, d}, rng);

  CHECK(elementwise_equal(residual_ffn_drop(x, w, 0.0), x));                    // dropped
  CHECK(bitwise_equal(residual_ffn_drop(x, w, 1.0), add(x, ffn(x, w))));       // kept at rho=0

  // E[x + factor*ffn(x)] = x + ffn(x); 1e4 masks, 2% relative per coordinate
  auto expect = add(x, ffn(x, w));
  auto fx = ffn(x, w);
  Tensor<double> acc = Tensor<double>::zeros({2, d});
  RngStream draws(15);
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    auto out = residual_ffn_drop(x, w, 0.3, draws, true);
    for (size_t e = 0; e < acc.data.size(); ++e) acc.data[e] += out.data[e];
  }
  for (size_t e = 0; e < acc.data.size(); ++e) {
    if (std::fabs(fx.data[e]) < 0.05) continue;  // relative check needs signal
    CHECK(acc.data[e] / n == doctest::Approx(expect.data[e]).epsilon(0.02));
  }
}

TEST_CASE("multi_branch_ffn: reductions and the drop floor") {
  RngStream rng(16);
  const int d = 4;
  auto w = random_ffn(d, 8, rng);
  auto x = random_tensor<double>({2, d}, rng);

  // N_f = 1 is exactly the single-branch drop layer, shared draws included
  RngStream a(21), b(21);
  CHECK(bitwise_equal(multi_branch_ffn<double>(x, {w}, 0.4, a, true),
                      residual_ffn_drop(x, w, 0.4, b, true)));

  // identical branches at rho=0 collapse to one branch
  CHECK(bitwise_equal(multi_branch_ffn<double>(x, {w, w, w}, {1.0, 1.0, 1.0}),
                      multi_branch_ffn<double>(x, {w}, {1.0})));

  CHECK(elementwise_equal(multi_branch_ffn<double>(x, {w, w}, {0.0, 0.0}), x));
  CHECK_THROWS_AS(multi_branch_ffn<double>(x, {}, {}), ConfigError);
}

TEST_CASE("drop_head_attn: constraint-1 equals drop-branch, M=1 modes coincide") {
  RngStream rng(17);
  const int d = 8, m = 2, na = 3;
  auto q = random_tensor<double>({3, d}, rng);
  auto kv = random_tensor<double>({5, d}, rng);
  auto set = random_branch_set(na, m, d, rng, 0.3);
  set.mode = DropMode::kHead;

  // constraint 1: U^{i,j} = U^i -- expand branch draws across heads
  RngStream draws(31);
  auto branch_factors = draw_keep_factors<double>(na, 0.3, draws);
  std::vector<double> expanded;
  for (int i = 0; i < na; ++i) {
    for (int j = 0; j < m; ++j) expanded.push_back(branch_factors[static_cast<size_t>(i)]);
  }
  CHECK(bitwise_equal(drop_head_attn<double>(q, kv, kv, set, nullptr, expanded),
                      multi_branch_attn<double>(q, kv, kv, set, nullptr, branch_factors)));

  // M = 1: the two modes consume identical draws and coincide bit for bit
  auto set1 = random_branch_set(na, 1, d, rng, 0.3);
  set1.train = true;
  RngStream da(55), db(55);
  auto head_mode = set1;
  head_mode.mode = DropMode::kHead;
  CHECK(bitwise_equal(drop_head_attn<double>(q, kv, kv, head_mode, nullptr, da),
                      multi_branch_attn<double>(q, kv, kv, set1, nullptr, db)));

  // rho = 0 equals the branch-mode layer
  std::vector<double> ones(static_cast<size_t>(na * m), 1.0);
  std::vector<double> ones_b(static_cast<size_t>(na), 1.0);
  CHECK(bitwise_equal(drop_head_attn<double>(q, kv, kv, set, nullptr, ones),
                      multi_branch_attn<double>(q, kv, kv, set, nullptr, ones_b)));
}

TEST_CASE("eval mode output ignores rho and the rng entirely") {
  RngStream rng(18);
  const int d = 8;
  auto q = random_tensor<double>({3, d}, rng);
  auto kv = random_tensor<double>({4, d}, rng);
  auto set = random_branch_set(2, 2, d, rng, 0.0);
  set.train = false;

  set.drop_rate = 0.7;
  RngStream r1(1);
  auto out1 = multi_branch_attn<double>(q, kv, kv, set, nullptr, r1);
  set.drop_rate = 0.1;
  RngStream r2(999, 12345);
  auto out2 = multi_branch_attn<double>(q, kv, kv, set, nullptr, r2);
  CHECK(bitwise_equal(out1, out2));
  CHECK(r1.counter() == 0);  // eval draws nothing
}

TEST_CASE("sinusoidal positions: first row, bounds, determinism") {
  auto pos = sinusoidal_positions<double>(6, 8);
  for (int c = 0; c < 8; c += 2) {
    CHECK(pos.at(0, c) == 0.0);
    CHECK(pos.at(0, c + 1) == 1.0);
  }
  for (double v : pos.data) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  CHECK(bitwise_equal(pos, sinusoidal_positions<double>(6, 8)));
  CHECK_THROWS_AS(sinusoidal_positions<double>(4, 7), ConfigError);
}

TEST_CASE("branch set validation") {
  BranchSet<double> empty;
  CHECK_THROWS_AS(empty.validate(), ConfigError);
  RngStream rng(19);
  auto set = random_branch_set(2, 2, 4, rng);
  set.drop_rate = 1.0;  // 1/(1-rho) must stay finite
  CHECK_THROWS_AS(set.validate(), ConfigError);
}

TEST_CASE("layer family passes the finite-difference suite at reduced size") {
  GradSuiteConfig cfg;
  cfg.points = 2;
  for (const auto& rep : run_grad_suite(cfg)) {
    INFO(rep.op);
    CHECK(rep.max_rel_err < 1e-4);
  }
}

TEST_CASE("masked attention also passes grad_check") {
  RngStream rng(20);
  auto q = random_tensor<double>({4, 6}, rng);
  auto k = random_tensor<double>({4, 6}, rng);
  auto v = random_tensor<double>({4, 6}, rng);
  auto rep = grad_check(
      [](Tape<double>* tape, std::vector<Tensor<double>>& in) {
        const AttnMask<double> mask = causal_mask<double>(4);
        auto out = scaled_dot_attn(in[0], in[1], in[2], &mask, tape);
        return scale(sum_all(mul(out, out, tape), tape), 0.5, tape);
      },
      {q, k, v}, 1e-5);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("a full encoder block loss passes grad_check in binary64") {
  // multi-branch self-attention -> add+norm -> multi-branch ffn -> add+norm
  // seed chosen so every relu preactivation clears the probe step
  RngStream rng(101);
  const int d = 8, m = 2, na = 2, nf = 2;
  std::vector<Tensor<double>> inputs;
  inputs.push_back(random_tensor<double>({4, d}, rng));            // x
  for (int b = 0; b < na; ++b) {
    for (int h = 0; h < m; ++h) {
      inputs.push_back(random_tensor<double>({d, d / m}, rng, -0.7, 0.7));
      inputs.push_back(random_tensor<double>({d, d / m}, rng, -0.7, 0.7));
      inputs.push_back(random_tensor<double>({d, d / m}, rng, -0.7, 0.7));
    }
  }
  for (int f = 0; f < nf; ++f) {
    inputs.push_back(random_tensor<double>({d, 2 * d}, rng, -0.7, 0.7));
    inputs.push_back(random_tensor<double>({2 * d}, rng, 0.2, 0.8));  // b1 > 0 clears the kink
    inputs.push_back(random_tensor<double>({2 * d, d}, rng, -0.7, 0.7));
    inputs.push_back(random_tensor<double>({d}, rng, -0.5, 0.5));
  }
  inputs.push_back(random_tensor<double>({d}, rng, 0.5, 1.5));  // ln1 gain
  inputs.push_back(random_tensor<double>({d}, rng, -0.2, 0.2)); // ln1 bias
  inputs.push_back(random_tensor<double>({d}, rng, 0.5, 1.5));  // ln2 gain
  inputs.push_back(random_tensor<double>({d}, rng, -0.2, 0.2)); // ln2 bias

  auto block_loss = [=](Tape<double>* tape, std::vector<Tensor<double>>& in) {
    size_t idx = 1;
    BranchSet<double> set;
    set.branches.resize(na);
    for (auto& branch : set.branches) {
      branch.heads.resize(m);
      for (auto& head : branch.heads) {
        head.wq = in[idx++];
        head.wk = in[idx++];
        head.wv = in[idx++];
      }
    }
    std::vector<FfnParams<double>> ffns(nf);
    for (auto& f : ffns) {
      f.w1 = in[idx++];
      f.b1 = in[idx++];
      f.w2 = in[idx++];
      f.b2 = in[idx++];
    }
    auto& ln1_gain = in[idx++];
    auto& ln1_bias = in[idx++];
    auto& ln2_gain = in[idx++];
    auto& ln2_bias = in[idx++];

    const std::vector<double> attn_f = {1.0 / 0.8, 0.0};
    const std::vector<double> ffn_f = {0.0, 1.0 / 0.8};
    auto h = multi_branch_attn<double>(in[0], in[0], in[0], set, nullptr, attn_f, tape);
    h = layer_norm(h, ln1_gain, ln1_bias, tape);
    h = multi_branch_ffn<double>(h, ffns, ffn_f, tape);
    h = layer_norm(h, ln2_gain, ln2_bias, tape);
    return scale(sum_all(mul(h, h, tape), tape), 0.5, tape);
  };
  auto rep = grad_check(block_loss, inputs, 1e-4);
  CHECK(rep.max_rel_err < 1e-4);
}
