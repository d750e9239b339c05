#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mat/layers.hpp"
#include "mat/rng.hpp"
#include "mat/vocab.hpp"

// Encoder-decoder assembly: configuration, parameter layout, deterministic
// initialization, the full teacher-forced forward pass, and parameter
// accounting.
namespace mat {

struct ModelConfig {
  int n_a = 1;          // attention branches per layer
  int heads = 4;        // M
  int dim = 64;         // d
  int ffn_dim = 128;    // d_h
  int n_f = 1;          // FFN branches per layer
  int enc_blocks = 2;
  int dec_blocks = 2;
  double rho = 0.0;
  DropMode drop_mode = DropMode::kBranch;
  int vocab_src = 16;
  int vocab_tgt = 16;
  bool share_embeddings = true;
  bool output_projection = false;
  bool pre_norm = false;
  int max_len = 64;

  int sublayers() const { return 2 * enc_blocks + 3 * dec_blocks; }

  // Largest number of keep/scale factors any sublayer draws.
  int max_slots() const {
    const int attn = drop_mode == DropMode::kHead ? n_a * heads : n_a;
    return attn > n_f ? attn : n_f;
  }

  void validate() const {
    std::string problems;
    auto fail = [&](const std::string& p) {
      if (!problems.empty()) problems += "; ";
      problems += p;
    };
    if (n_a < 1) fail("n_a must be >= 1");
    if (heads < 1) fail("heads must be >= 1");
    if (dim < 1) fail("dim must be >= 1");
    if (ffn_dim < 1) fail("ffn_dim must be >= 1");
    if (n_f < 1) fail("n_f must be >= 1");
    if (enc_blocks < 1) fail("enc_blocks must be >= 1");
    if (dec_blocks < 1) fail("dec_blocks must be >= 1");
    if (heads >= 1 && dim >= 1 && dim % heads != 0) {
      fail("dim must be divisible by heads (" + std::to_string(dim) + " % " +
           std::to_string(heads) + " != 0)");
    }
    if (dim >= 1 && dim % 2 != 0) fail("dim must be even for the position table");
    if (rho < 0.0 || rho >= 1.0) fail("rho must be in [0,1)");
    if (vocab_src < 1 || vocab_tgt < 1) fail("vocab sizes must be >= 1");
    if (share_embeddings && vocab_src != vocab_tgt) {
      fail("share_embeddings requires matching vocab sizes");
    }
    if (max_len < 2) fail("max_len must be >= 2");
    // keep/scale draws are addressed as (step, sublayer, slot); respect the
    // packing widths of mask_counter
    if (sublayers() + 2 >= 1024) fail("too many blocks for the mask addressing scheme");
    if (max_slots() >= 4096) fail("n_a*heads and n_f must stay below 4096");
    if (!problems.empty()) throw ConfigError("model config: " + problems);
  }
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gain, bias;
};

template <typename T>
struct EncoderBlock {
  BranchSet<T> self_attn;
  LayerNormParams<T> ln_attn;
  std::vector<FfnParams<T>> ffn;
  LayerNormParams<T> ln_ffn;
};

template <typename T>
struct DecoderBlock {
  BranchSet<T> self_attn;
  LayerNormParams<T> ln_self;
  BranchSet<T> cross_attn;
  LayerNormParams<T> ln_cross;
  std::vector<FfnParams<T>> ffn;
  LayerNormParams<T> ln_ffn;
};

template <typename T>
struct Model {
  ModelConfig cfg;
  Tensor<T> embed_src;  // the shared table when cfg.share_embeddings
  Tensor<T> embed_tgt;  // empty when shared
  std::vector<EncoderBlock<T>> encoder;
  std::vector<DecoderBlock<T>> decoder;
  LayerNormParams<T> enc_final;  // present only with pre_norm
  LayerNormParams<T> dec_final;

  const Tensor<T>& target_embedding() const {
    return cfg.share_embeddings ? embed_src : embed_tgt;
  }
};

// Visits every parameter tensor exactly once, in a fixed order shared by
// initialization, checkpoints, and the optimizer.
template <typename T, typename F>
void for_each_param(Model<T>& m, F&& visit) {
  auto walk_branch_set = [&](const std::string& prefix, BranchSet<T>& set) {
    for (size_t i = 0; i < set.branches.size(); ++i) {
      auto& branch = set.branches[i];
      const std::string bp = prefix + ".branch." + std::to_string(i);
      for (size_t j = 0; j < branch.heads.size(); ++j) {
        const std::string hp = bp + ".head." + std::to_string(j);
        visit(hp + ".wq", branch.heads[j].wq);
        visit(hp + ".wk", branch.heads[j].wk);
        visit(hp + ".wv", branch.heads[j].wv);
      }
      if (branch.has_out_proj()) {
        visit(bp + ".wo", branch.wo);
        visit(bp + ".bo", branch.bo);
      }
    }
  };
  auto walk_ln = [&](const std::string& prefix, LayerNormParams<T>& ln) {
    visit(prefix + ".gain", ln.gain);
    visit(prefix + ".bias", ln.bias);
  };
  auto walk_ffn = [&](const std::string& prefix, std::vector<FfnParams<T>>& ffns) {
    for (size_t i = 0; i < ffns.size(); ++i) {
      const std::string fp = prefix + "." + std::to_string(i);
      visit(fp + ".w1", ffns[i].w1);
      visit(fp + ".b1", ffns[i].b1);
      visit(fp + ".w2", ffns[i].w2);
      visit(fp + ".b2", ffns[i].b2);
    }
  };

  if (m.cfg.share_embeddings) {
    visit(std::string("embed.shared"), m.embed_src);
  } else {
    visit(std::string("embed.src"), m.embed_src);
    visit(std::string("embed.tgt"), m.embed_tgt);
  }
  for (size_t b = 0; b < m.encoder.size(); ++b) {
    const std::string p = "enc." + std::to_string(b);
    walk_branch_set(p + ".self", m.encoder[b].self_attn);
    walk_ln(p + ".ln_attn", m.encoder[b].ln_attn);
    walk_ffn(p + ".ffn", m.encoder[b].ffn);
    walk_ln(p + ".ln_ffn", m.encoder[b].ln_ffn);
  }
  for (size_t b = 0; b < m.decoder.size(); ++b) {
    const std::string p = "dec." + std::to_string(b);
    walk_branch_set(p + ".self", m.decoder[b].self_attn);
    walk_ln(p + ".ln_self", m.decoder[b].ln_self);
    walk_branch_set(p + ".cross", m.decoder[b].cross_attn);
    walk_ln(p + ".ln_cross", m.decoder[b].ln_cross);
    walk_ffn(p + ".ffn", m.decoder[b].ffn);
    walk_ln(p + ".ln_ffn", m.decoder[b].ln_ffn);
  }
  if (m.cfg.pre_norm) {
    walk_ln("enc.final_ln", m.enc_final);
    walk_ln("dec.final_ln", m.dec_final);
  }
}

template <typename T, typename F>
void for_each_param(const Model<T>& m, F&& visit) {
  for_each_param(const_cast<Model<T>&>(m),
                 [&](const std::string& name, Tensor<T>& t) {
                   visit(name, static_cast<const Tensor<T>&>(t));
                 });
}

namespace detail {

template <typename T>
BranchSet<T> make_branch_set(const ModelConfig& cfg) {
  BranchSet<T> set;
  set.drop_rate = cfg.rho;
  set.mode = cfg.drop_mode;
  const int dk = cfg.dim / cfg.heads;
  set.branches.resize(static_cast<size_t>(cfg.n_a));
  for (auto& branch : set.branches) {
    branch.heads.resize(static_cast<size_t>(cfg.heads));
    for (auto& h : branch.heads) {
      h.wq = Tensor<T>::zeros({cfg.dim, dk});
      h.wk = Tensor<T>::zeros({cfg.dim, dk});
      h.wv = Tensor<T>::zeros({cfg.dim, dk});
    }
    if (cfg.output_projection) {
      branch.wo = Tensor<T>::zeros({cfg.dim, cfg.dim});
      branch.bo = Tensor<T>::zeros({cfg.dim});
    }
  }
  return set;
}

template <typename T>
std::vector<FfnParams<T>> make_ffn_stack(const ModelConfig& cfg) {
  std::vector<FfnParams<T>> ffns(static_cast<size_t>(cfg.n_f));
  for (auto& f : ffns) {
    f.w1 = Tensor<T>::zeros({cfg.dim, cfg.ffn_dim});
    f.b1 = Tensor<T>::zeros({cfg.ffn_dim});
    f.w2 = Tensor<T>::zeros({cfg.ffn_dim, cfg.dim});
    f.b2 = Tensor<T>::zeros({cfg.dim});
  }
  return ffns;
}

template <typename T>
LayerNormParams<T> make_ln(int d) {
  return LayerNormParams<T>{Tensor<T>::zeros({d}), Tensor<T>::zeros({d})};
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace detail

// Builds a model with Xavier-uniform projections, zero biases, unit layer-norm
// gains, and N(0, d^-1/2) embeddings; bit-reproducible from (cfg, seed).
template <typename T>
Model<T> build_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Model<T> m;
  m.cfg = cfg;
  m.embed_src = Tensor<T>::zeros({cfg.vocab_src, cfg.dim});
  if (!cfg.share_embeddings) m.embed_tgt = Tensor<T>::zeros({cfg.vocab_tgt, cfg.dim});
  m.encoder.resize(static_cast<size_t>(cfg.enc_blocks));
  for (auto& blk : m.encoder) {
    blk.self_attn = detail::make_branch_set<T>(cfg);
    blk.ln_attn = detail::make_ln<T>(cfg.dim);
    blk.ffn = detail::make_ffn_stack<T>(cfg);
    blk.ln_ffn = detail::make_ln<T>(cfg.dim);
  }
  m.decoder.resize(static_cast<size_t>(cfg.dec_blocks));
  for (auto& blk : m.decoder) {
    blk.self_attn = detail::make_branch_set<T>(cfg);
    blk.ln_self = detail::make_ln<T>(cfg.dim);
    blk.cross_attn = detail::make_branch_set<T>(cfg);
    blk.ln_cross = detail::make_ln<T>(cfg.dim);
    blk.ffn = detail::make_ffn_stack<T>(cfg);
    blk.ln_ffn = detail::make_ln<T>(cfg.dim);
  }
  if (cfg.pre_norm) {
    m.enc_final = detail::make_ln<T>(cfg.dim);
    m.dec_final = detail::make_ln<T>(cfg.dim);
  }

  RngStream rng(seed);
  const double embed_std = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
  for_each_param(m, [&](const std::string& name, Tensor<T>& t) {
    if (name.rfind("embed.", 0) == 0) {
      for (auto& v : t.data) v = T(rng.next_gaussian() * embed_std);
    } else if (detail::ends_with(name, ".gain")) {
      for (auto& v : t.data) v = T(1);
    } else if (t.ndim() == 2) {
      const double a = std::sqrt(6.0 / (t.rows() + t.cols()));
      for (auto& v : t.data) v = T((rng.next_uniform() * 2.0 - 1.0) * a);
    }
    // 1-d biases stay zero
  });
  return m;
}

// -------------------------------------------------------------------------
// Forward pass
// -------------------------------------------------------------------------

template <typename T>
struct ForwardOptions {
  bool training = false;
  uint64_t seed = 0;
  int64_t step = 0;
  double residual_dropout = 0.0;
  // Testing hook: when set, supplies every stochastic keep/scale factor
  // instead of the seeded schedule.
  std::function<T(int sublayer, int slot)> mask_override;
};

// Absolute counter for the keep/drop draw of (step, sublayer, slot). Position
// addressing makes draws replayable and independent of evaluation order.
inline uint64_t mask_counter(int64_t step, int sublayer, int slot) {
  return (static_cast<uint64_t>(step) << 22) | (static_cast<uint64_t>(sublayer) << 12) |
         static_cast<uint64_t>(slot);
}

namespace detail {

// Salt so elementwise dropout draws live in a different stream family than
// the branch keep/drop draws.
inline constexpr uint64_t kDropoutSalt = 0x8f1b'5ce3'9d24'7a61ull;

template <typename T>
std::vector<T> sublayer_factors(const ForwardOptions<T>& opt, int sublayer, int slots,
                                double rho) {
  std::vector<T> factors(static_cast<size_t>(slots), T(1));
  if (opt.mask_override) {
    for (int s = 0; s < slots; ++s) factors[static_cast<size_t>(s)] = opt.mask_override(sublayer, s);
    return factors;
  }
  if (!opt.training || rho == 0.0) return factors;
  RngStream rng(opt.seed, mask_counter(opt.step, sublayer, 0));
  return draw_keep_factors<T>(slots, rho, rng);
}

template <typename T>
Tensor<T> maybe_dropout(const Tensor<T>& x, const ForwardOptions<T>& opt, int sublayer,
                        Tape<T>* tape) {
  if (!opt.training || opt.residual_dropout == 0.0) return x;
  RngStream rng(RngStream::bits_at(opt.seed ^ kDropoutSalt, static_cast<uint64_t>(sublayer)),
                static_cast<uint64_t>(opt.step) << 24);
  return dropout(x, opt.residual_dropout, rng, opt.training, tape);
}

// One attention sublayer with residual and norm placement. x carries the
// residual; cross_kv, when non-null, holds encoder output for cross
// attention (otherwise the sublayer attends to itself).
template <typename T>
Tensor<T> attn_sublayer(const Tensor<T>& x, const Tensor<T>* cross_kv, const AttnMask<T>* mask,
                        const BranchSet<T>& params, const LayerNormParams<T>& ln,
                        const ModelConfig& cfg, const ForwardOptions<T>& opt, int sublayer,
                        Tape<T>* tape) {
  BranchSet<T> set = params;  // copies only shape metadata + tensor handles
  set.train = opt.training;
  const std::vector<T> factors = sublayer_factors(opt, sublayer, set.n_slots(), set.drop_rate);
  Tensor<T> q = cfg.pre_norm ? layer_norm(x, ln.gain, ln.bias, tape) : x;
  const Tensor<T>& k = cross_kv ? *cross_kv : q;
  Tensor<T> core = set.mode == DropMode::kHead
                       ? drop_head_attn_core(q, k, k, set, mask, factors, tape)
                       : multi_branch_attn_core(q, k, k, set, mask, factors, tape);
  core = maybe_dropout(core, opt, sublayer, tape);
  Tensor<T> y = add(x, core, tape);
  return cfg.pre_norm ? y : layer_norm(y, ln.gain, ln.bias, tape);
}

template <typename T>
Tensor<T> ffn_sublayer(const Tensor<T>& x, const std::vector<FfnParams<T>>& ffns,
                       const LayerNormParams<T>& ln, const ModelConfig& cfg,
                       const ForwardOptions<T>& opt, int sublayer, Tape<T>* tape) {
  const std::vector<T> factors =
      sublayer_factors(opt, sublayer, static_cast<int>(ffns.size()),
                       opt.training ? cfg.rho : 0.0);
  Tensor<T> u = cfg.pre_norm ? layer_norm(x, ln.gain, ln.bias, tape) : x;
  Tensor<T> core = multi_branch_ffn_core(u, ffns, factors, tape);
  core = maybe_dropout(core, opt, sublayer, tape);
  Tensor<T> y = add(x, core, tape);
  return cfg.pre_norm ? y : layer_norm(y, ln.gain, ln.bias, tape);
}

template <typename T>
Tensor<T> embed_sequence(const Tensor<T>& table, std::span<const int> ids, const ModelConfig& cfg,
                         const ForwardOptions<T>& opt, int dropout_sublayer, Tape<T>* tape) {
  std::vector<int> idv(ids.begin(), ids.end());
  Tensor<T> x = lookup_rows(table, idv, tape);
  x = scale(x, T(std::sqrt(static_cast<double>(cfg.dim))), tape);
  x = add(x, sinusoidal_positions<T>(static_cast<int>(ids.size()), cfg.dim), tape);
  return maybe_dropout(x, opt, dropout_sublayer, tape);
}

}  // namespace detail

// Encoder stack over a source sequence.
template <typename T>
Tensor<T> encode(const Model<T>& m, std::span<const int> src, const ForwardOptions<T>& opt = {},
                 Tape<T>* tape = nullptr) {
  const ModelConfig& cfg = m.cfg;
  if (src.empty() || static_cast<int>(src.size()) > cfg.max_len) {
    throw InputError("encode: source length " + std::to_string(src.size()) +
                     " outside [1," + std::to_string(cfg.max_len) + "]");
  }
  Tensor<T> x = detail::embed_sequence(m.embed_src, src, cfg, opt, cfg.sublayers(), tape);
  for (size_t b = 0; b < m.encoder.size(); ++b) {
    const int base = 2 * static_cast<int>(b);
    x = detail::attn_sublayer(x, static_cast<const Tensor<T>*>(nullptr),
                              static_cast<const AttnMask<T>*>(nullptr), m.encoder[b].self_attn,
                              m.encoder[b].ln_attn, cfg, opt, base, tape);
    x = detail::ffn_sublayer(x, m.encoder[b].ffn, m.encoder[b].ln_ffn, cfg, opt, base + 1, tape);
  }
  if (cfg.pre_norm) x = layer_norm(x, m.enc_final.gain, m.enc_final.bias, tape);
  return x;
}

// Teacher-forced pass: next-token logits for each target position.
template <typename T>
Tensor<T> forward(const Model<T>& m, std::span<const int> src, std::span<const int> tgt_in,
                  const ForwardOptions<T>& opt = {}, Tape<T>* tape = nullptr) {
  const ModelConfig& cfg = m.cfg;
  if (tgt_in.empty() || static_cast<int>(tgt_in.size()) > cfg.max_len) {
    throw InputError("forward: target length " + std::to_string(tgt_in.size()) +
                     " outside [1," + std::to_string(cfg.max_len) + "]");
  }
  Tensor<T> enc_out = encode(m, src, opt, tape);
  Tensor<T> x = detail::embed_sequence(m.target_embedding(), tgt_in, cfg, opt,
                                       cfg.sublayers() + 1, tape);
  const AttnMask<T> causal = causal_mask<T>(static_cast<int>(tgt_in.size()));
  for (size_t b = 0; b < m.decoder.size(); ++b) {
    const int base = 2 * cfg.enc_blocks + 3 * static_cast<int>(b);
    x = detail::attn_sublayer(x, static_cast<const Tensor<T>*>(nullptr), &causal,
                              m.decoder[b].self_attn, m.decoder[b].ln_self, cfg, opt, base, tape);
    x = detail::attn_sublayer(x, &enc_out, static_cast<const AttnMask<T>*>(nullptr),
                              m.decoder[b].cross_attn, m.decoder[b].ln_cross, cfg, opt, base + 1,
                              tape);
    x = detail::ffn_sublayer(x, m.decoder[b].ffn, m.decoder[b].ln_ffn, cfg, opt, base + 2, tape);
  }
  if (cfg.pre_norm) x = layer_norm(x, m.dec_final.gain, m.dec_final.bias, tape);
  return matmul(x, transpose(m.target_embedding(), tape), tape);
}

// -------------------------------------------------------------------------
// Parameter accounting
// -------------------------------------------------------------------------

struct ParamBreakdown {
  int64_t embeddings = 0;
  int64_t attention = 0;
  int64_t ffn = 0;
  int64_t layer_norm = 0;
  int64_t total() const { return embeddings + attention + ffn + layer_norm; }
};

// Closed-form parameter count; the tree-walk over a built model must agree
// exactly.
inline ParamBreakdown param_breakdown(const ModelConfig& cfg) {
  cfg.validate();
  ParamBreakdown out;
  const int64_t d = cfg.dim, dh = cfg.ffn_dim;
  const int64_t per_branch = 3 * d * d + (cfg.output_projection ? d * d + d : 0);
  const int64_t attn_layer = cfg.n_a * per_branch;
  const int64_t ffn_layer = cfg.n_f * (d * dh + dh + dh * d + d);
  const int64_t ln = 2 * d;
  const int64_t attn_layers = cfg.enc_blocks + 2LL * cfg.dec_blocks;
  out.attention = attn_layers * attn_layer;
  out.ffn = (cfg.enc_blocks + static_cast<int64_t>(cfg.dec_blocks)) * ffn_layer;
  out.layer_norm = (2LL * cfg.enc_blocks + 3LL * cfg.dec_blocks) * ln;
  if (cfg.pre_norm) out.layer_norm += 2 * ln;
  out.embeddings = cfg.share_embeddings ? static_cast<int64_t>(cfg.vocab_src) * d
                                        : (static_cast<int64_t>(cfg.vocab_src) +
                                           static_cast<int64_t>(cfg.vocab_tgt)) *
                                              d;
  return out;
}

inline int64_t param_count(const ModelConfig& cfg) { return param_breakdown(cfg).total(); }

// Max relative sup-norm difference between two models' logits over random
// token sequences; used for the warm-start equivalence self-test.
template <typename T>
double max_logit_rel_diff(const Model<T>& a, const Model<T>& b, int trials, uint64_t seed) {
  RngStream rng(seed);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const int src_len = 1 + static_cast<int>(rng.next_below(
                                static_cast<uint64_t>(std::min(a.cfg.max_len, 10))));
    const int tgt_len = 1 + static_cast<int>(rng.next_below(
                                static_cast<uint64_t>(std::min(a.cfg.max_len, 10))));
    std::vector<int> src(static_cast<size_t>(src_len)), tgt(static_cast<size_t>(tgt_len));
    for (auto& id : src) id = static_cast<int>(rng.next_below(static_cast<uint64_t>(a.cfg.vocab_src)));
    for (auto& id : tgt) id = static_cast<int>(rng.next_below(static_cast<uint64_t>(a.cfg.vocab_tgt)));
    Tensor<T> la = forward(a, src, tgt);
    Tensor<T> lb = forward(b, src, tgt);
    double diff = 0.0, ref = 0.0;
    for (int64_t i = 0; i < la.numel(); ++i) {
      diff = std::max(diff, std::fabs(static_cast<double>(la.data[i]) - static_cast<double>(lb.data[i])));
      ref = std::max(ref, std::fabs(static_cast<double>(lb.data[i])));
    }
    worst = std::max(worst, diff / std::max(1.0, ref));
  }
  return worst;
}

}  // namespace mat
