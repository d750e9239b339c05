#include "mat/gradcheck_suite.hpp"

#include "mat/layers.hpp"

namespace mat {

namespace {

Tensor<double> rand_uniform(Shape s, RngStream& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t = Tensor<double>::zeros(std::move(s));
  for (auto& v : t.data) v = lo + (hi - lo) * rng.next_uniform();
  return t;
}

// Alternating keep/drop pattern so both mask paths carry gradient checks.
std::vector<double> frozen_factors(int count, double rho, int point) {
  std::vector<double> f(static_cast<size_t>(count));
  const double keep = 1.0 / (1.0 - rho);
  for (int i = 0; i < count; ++i) f[static_cast<size_t>(i)] = (i + point) % 2 == 0 ? keep : 0.0;
  return f;
}

// 0.5 * sum(out^2): couples every output coordinate into the scalar loss.
Tensor<double> half_sq_sum(const Tensor<double>& out, Tape<double>* tape) {
  return scale(sum_all(mul(out, out, tape), tape), 0.5, tape);
}

// true when any relu preactivation of x W1 + b1 sits within `margin` of 0
bool near_kink(const Tensor<double>& x, const Tensor<double>& w1, const Tensor<double>& b1,
               double margin) {
  Tensor<double> pre = add_row(matmul(x, w1), b1);
  for (double v : pre.data) {
    if (std::fabs(v) <= margin) return true;
  }
  return false;
}

struct Fixture {
  std::vector<Tensor<double>> inputs;
  ScalarFn fn;
};

}  // namespace

std::vector<OpGradReport> run_grad_suite(const GradSuiteConfig& cfg) {
  if (cfg.dim % cfg.heads != 0) {
    throw ConfigError("grad suite: dim " + std::to_string(cfg.dim) + " not divisible by heads " +
                      std::to_string(cfg.heads));
  }
  const int d = cfg.dim, m = cfg.heads, dk = cfg.dim / cfg.heads;
  const int na = cfg.n_a, nf = cfg.n_f;
  const double kink_margin = std::max(10.0 * cfg.h, 1e-3);

  // inputs[0..2] = Q, K, V; then 3 projections per head per branch
  auto attn_fixture = [&](RngStream& rng, int branches) {
    Fixture fx;
    fx.inputs.push_back(rand_uniform({cfg.t_q, d}, rng));
    fx.inputs.push_back(rand_uniform({cfg.t_kv, d}, rng));
    fx.inputs.push_back(rand_uniform({cfg.t_kv, d}, rng));
    for (int b = 0; b < branches; ++b) {
      for (int h = 0; h < m; ++h) {
        fx.inputs.push_back(rand_uniform({d, dk}, rng, -0.7, 0.7));
        fx.inputs.push_back(rand_uniform({d, dk}, rng, -0.7, 0.7));
        fx.inputs.push_back(rand_uniform({d, dk}, rng, -0.7, 0.7));
      }
    }
    return fx;
  };
  auto build_set = [&](std::vector<Tensor<double>>& in, int branches) {
    BranchSet<double> set;
    set.drop_rate = cfg.rho;
    set.branches.resize(static_cast<size_t>(branches));
    size_t idx = 3;
    for (auto& branch : set.branches) {
      branch.heads.resize(static_cast<size_t>(m));
      for (auto& head : branch.heads) {
        head.wq = in[idx++];
        head.wk = in[idx++];
        head.wv = in[idx++];
      }
    }
    return set;
  };

  // inputs[0] = x; then w1, b1, w2, b2 per ffn branch
  auto ffn_fixture = [&](RngStream& rng, int branches) {
    Fixture fx;
    for (int tries = 0; tries < 1000; ++tries) {
      fx.inputs.clear();
      fx.inputs.push_back(rand_uniform({cfg.t_q, d}, rng));
      bool ok = true;
      for (int b = 0; b < branches; ++b) {
        Tensor<double> w1 = rand_uniform({d, 2 * d}, rng, -0.7, 0.7);
        Tensor<double> b1 = rand_uniform({2 * d}, rng, -0.5, 0.5);
        ok = ok && !near_kink(fx.inputs[0], w1, b1, kink_margin);
        fx.inputs.push_back(std::move(w1));
        fx.inputs.push_back(std::move(b1));
        fx.inputs.push_back(rand_uniform({2 * d, d}, rng, -0.7, 0.7));
        fx.inputs.push_back(rand_uniform({d}, rng, -0.5, 0.5));
      }
      if (ok) return fx;
    }
    throw ContractError("grad suite: could not sample relu preactivations away from the kink");
  };
  auto build_ffns = [&](std::vector<Tensor<double>>& in, int branches) {
    std::vector<FfnParams<double>> ws(static_cast<size_t>(branches));
    size_t idx = 1;
    for (auto& w : ws) {
      w.w1 = in[idx++];
      w.b1 = in[idx++];
      w.w2 = in[idx++];
      w.b2 = in[idx++];
    }
    return ws;
  };

  struct OpSpec {
    std::string name;
    std::function<Fixture(RngStream&, int point)> make;
  };

  std::vector<OpSpec> ops;
  ops.push_back({"attn", [&](RngStream& rng, int) {
                   Fixture fx;
                   fx.inputs.push_back(rand_uniform({cfg.t_q, dk}, rng));
                   fx.inputs.push_back(rand_uniform({cfg.t_kv, dk}, rng));
                   fx.inputs.push_back(rand_uniform({cfg.t_kv, dk}, rng));
                   fx.fn = [](Tape<double>* tape, std::vector<Tensor<double>>& in) {
                     return half_sq_sum(scaled_dot_attn<double>(in[0], in[1], in[2], nullptr, tape), tape);
                   };
                   return fx;
                 }});
  ops.push_back({"multi_head", [&](RngStream& rng, int) {
                   Fixture fx = attn_fixture(rng, 1);
                   fx.fn = [=](Tape<double>* tape, std::vector<Tensor<double>>& in) {
                     BranchSet<double> set = build_set(in, 1);
                     return half_sq_sum(
                         multi_head_attn<double>(in[0], in[1], in[2], set.branches[0], nullptr, tape), tape);
                   };
                   return fx;
                 }});
  ops.push_back({"multi_branch", [&](RngStream& rng, int point) {
                   Fixture fx = attn_fixture(rng, na);
                   auto factors = frozen_factors(na, cfg.rho, point);
                   fx.fn = [=](Tape<double>* tape, std::vector<Tensor<double>>& in) {
                     BranchSet<double> set = build_set(in, na);
                     return half_sq_sum(
                         multi_branch_attn<double>(in[0], in[1], in[2], set, nullptr, factors, tape), tape);
                   };
                   return fx;
                 }});
  ops.push_back({"ffn", [&](RngStream& rng, int) {
                   Fixture fx = ffn_fixture(rng, 1);
                   fx.fn = [=](Tape<double>* tape, std::vector<Tensor<double>>& in) {
                     return half_sq_sum(ffn(in[0], build_ffns(in, 1)[0], tape), tape);
                   };
                   return fx;
                 }});
  ops.push_back({"ffn_drop", [&](RngStream& rng, int point) {
                   Fixture fx = ffn_fixture(rng, 1);
                   const double factor = point % 2 == 0 ? 1.0 / (1.0 - cfg.rho) : 0.0;
                   fx.fn = [=](Tape<double>* tape, std::vector<Tensor<double>>& in) {
                     return half_sq_sum(residual_ffn_drop(in[0], build_ffns(in, 1)[0], factor, tape),
                                        tape);
                   };
                   return fx;
                 }});
  ops.push_back({"multi_branch_ffn", [&](RngStream& rng, int point) {
                   Fixture fx = ffn_fixture(rng, nf);
                   auto factors = frozen_factors(nf, cfg.rho, point);
                   fx.fn = [=](Tape<double>* tape, std::vector<Tensor<double>>& in) {
                     return half_sq_sum(multi_branch_ffn(in[0], build_ffns(in, nf), factors, tape),
                                        tape);
                   };
                   return fx;
                 }});
  ops.push_back({"drop_head", [&](RngStream& rng, int point) {
                   Fixture fx = attn_fixture(rng, na);
                   auto factors = frozen_factors(na * m, cfg.rho, point);
                   fx.fn = [=](Tape<double>* tape, std::vector<Tensor<double>>& in) {
                     BranchSet<double> set = build_set(in, na);
                     set.mode = DropMode::kHead;
                     return half_sq_sum(
                         drop_head_attn<double>(in[0], in[1], in[2], set, nullptr, factors, tape), tape);
                   };
                   return fx;
                 }});
  ops.push_back({"layer_norm", [&](RngStream& rng, int) {
                   Fixture fx;
                   fx.inputs.push_back(rand_uniform({cfg.t_q, d}, rng));
                   fx.inputs.push_back(rand_uniform({d}, rng, 0.5, 1.5));
                   fx.inputs.push_back(rand_uniform({d}, rng, -0.5, 0.5));
                   fx.fn = [](Tape<double>* tape, std::vector<Tensor<double>>& in) {
                     return half_sq_sum(layer_norm(in[0], in[1], in[2], tape), tape);
                   };
                   return fx;
                 }});

  std::vector<OpGradReport> reports;
  reports.reserve(ops.size());
  for (size_t oi = 0; oi < ops.size(); ++oi) {
    OpGradReport rep{ops[oi].name, 0.0};
    for (int p = 0; p < cfg.points; ++p) {
      RngStream rng(cfg.seed + 1000 * oi, static_cast<uint64_t>(p) << 32);
      Fixture fx = ops[oi].make(rng, p);
      const GradCheckReport gr = grad_check(fx.fn, fx.inputs, cfg.h);
      rep.max_rel_err = std::max(rep.max_rel_err, gr.max_rel_err);
    }
    reports.push_back(std::move(rep));
  }
  return reports;
}

}  // namespace mat
