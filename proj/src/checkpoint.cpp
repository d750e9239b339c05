#include "mat/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "mat/vocab.hpp"

namespace mat {

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  size_t pos = 0;
  double out;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw FormatError("checkpoint config: bad number for " + key + ": '" + v + "'");
  }
  if (pos != v.size()) throw FormatError("checkpoint config: bad number for " + key + ": '" + v + "'");
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  size_t pos = 0;
  long out;
  try {
    out = std::stol(v, &pos);
  } catch (const std::exception&) {
    throw FormatError("checkpoint config: bad integer for " + key + ": '" + v + "'");
  }
  if (pos != v.size()) throw FormatError("checkpoint config: bad integer for " + key + ": '" + v + "'");
  return static_cast<int>(out);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "0" || v == "false") return false;
  if (v == "1" || v == "true") return true;
  throw FormatError("checkpoint config: bad boolean for " + key + ": '" + v + "'");
}

template <typename T>
void write_le(std::ostream& os, T v) {
  // x86-64 is little-endian; write the native representation.
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T read_le(std::istream& is, const char* what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw TruncationError(std::string("checkpoint: truncated while reading ") + what);
  return v;
}

}  // namespace

std::string serialize_model_config(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "na=" << cfg.n_a << "\n";
  os << "heads=" << cfg.heads << "\n";
  os << "dim=" << cfg.dim << "\n";
  os << "ffn_dim=" << cfg.ffn_dim << "\n";
  os << "nf=" << cfg.n_f << "\n";
  os << "enc_blocks=" << cfg.enc_blocks << "\n";
  os << "dec_blocks=" << cfg.dec_blocks << "\n";
  os << "rho=" << format_double(cfg.rho) << "\n";
  os << "drop_mode=" << drop_mode_name(cfg.drop_mode) << "\n";
  os << "vocab_src=" << cfg.vocab_src << "\n";
  os << "vocab_tgt=" << cfg.vocab_tgt << "\n";
  os << "share_embeddings=" << (cfg.share_embeddings ? 1 : 0) << "\n";
  os << "output_projection=" << (cfg.output_projection ? 1 : 0) << "\n";
  os << "pre_norm=" << (cfg.pre_norm ? 1 : 0) << "\n";
  os << "max_len=" << cfg.max_len << "\n";
  os << "pad_id=" << kPadId << "\n";
  os << "bos_id=" << kBosId << "\n";
  os << "eos_id=" << kEosId << "\n";
  os << "unk_id=" << kUnkId << "\n";
  os << "init=xavier_uniform\n";
  return os.str();
}

ModelConfig parse_model_config(const std::string& blob) {
  ModelConfig cfg;
  std::istringstream is(blob);
  std::string line;
  std::map<std::string, bool> seen;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("checkpoint config: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (seen[key]) throw FormatError("checkpoint config: duplicate key '" + key + "'");
    seen[key] = true;
    if (key == "na") {
      cfg.n_a = parse_int(key, value);
    } else if (key == "heads") {
      cfg.heads = parse_int(key, value);
    } else if (key == "dim") {
      cfg.dim = parse_int(key, value);
    } else if (key == "ffn_dim") {
      cfg.ffn_dim = parse_int(key, value);
    } else if (key == "nf") {
      cfg.n_f = parse_int(key, value);
    } else if (key == "enc_blocks") {
      cfg.enc_blocks = parse_int(key, value);
    } else if (key == "dec_blocks") {
      cfg.dec_blocks = parse_int(key, value);
    } else if (key == "rho") {
      cfg.rho = parse_double(key, value);
    } else if (key == "drop_mode") {
      if (value == "branch") {
        cfg.drop_mode = DropMode::kBranch;
      } else if (value == "head") {
        cfg.drop_mode = DropMode::kHead;
      } else {
        throw FormatError("checkpoint config: drop_mode must be branch|head, got '" + value + "'");
      }
    } else if (key == "vocab_src") {
      cfg.vocab_src = parse_int(key, value);
    } else if (key == "vocab_tgt") {
      cfg.vocab_tgt = parse_int(key, value);
    } else if (key == "share_embeddings") {
      cfg.share_embeddings = parse_bool(key, value);
    } else if (key == "output_projection") {
      cfg.output_projection = parse_bool(key, value);
    } else if (key == "pre_norm") {
      cfg.pre_norm = parse_bool(key, value);
    } else if (key == "max_len") {
      cfg.max_len = parse_int(key, value);
    } else if (key == "pad_id" || key == "bos_id" || key == "eos_id" || key == "unk_id") {
      const int expect = key == "pad_id"   ? kPadId
                         : key == "bos_id" ? kBosId
                         : key == "eos_id" ? kEosId
                                           : kUnkId;
      if (parse_int(key, value) != expect) {
        throw FormatError("checkpoint config: " + key + "=" + value + ", library expects " +
                          std::to_string(expect));
      }
    } else if (key == "init") {
      // informational
    } else {
      throw FormatError("checkpoint config: unknown key '" + key + "'");
    }
  }
  for (const char* required :
       {"na", "heads", "dim", "ffn_dim", "nf", "enc_blocks", "dec_blocks", "rho", "drop_mode",
        "vocab_src", "vocab_tgt", "share_embeddings", "output_projection", "pre_norm", "max_len"}) {
    if (!seen[required]) throw FormatError(std::string("checkpoint config: missing key '") + required + "'");
  }
  return cfg;
}

Checkpoint checkpoint_from_model(const Model<float>& m, uint64_t step) {
  Checkpoint ckpt;
  ckpt.config = m.cfg;
  ckpt.config_blob = serialize_model_config(m.cfg);
  ckpt.step = step;
  for_each_param(m, [&](const std::string& name, const Tensor<float>& t) {
    ckpt.tensors.push_back(NamedTensor{name, t.shape, t.data});
  });
  return ckpt;
}

Model<float> model_from_checkpoint(const Checkpoint& ckpt) {
  Model<float> m = build_model<float>(ckpt.config, 0);
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : ckpt.tensors) {
    if (!by_name.emplace(t.name, &t).second) {
      throw FormatError("checkpoint: duplicate tensor '" + t.name + "'");
    }
  }
  size_t used = 0;
  for_each_param(m, [&](const std::string& name, Tensor<float>& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint: missing tensor '" + name + "'");
    if (it->second->shape != t.shape) {
      throw FormatError("checkpoint: tensor '" + name + "' has shape " +
                        shape_str(it->second->shape) + ", model expects " + shape_str(t.shape));
    }
    t.data = it->second->data;
    ++used;
  });
  if (used != by_name.size()) {
    throw FormatError("checkpoint: " + std::to_string(by_name.size() - used) +
                      " tensor(s) not used by the model");
  }
  return m;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot open '" + path + "' for writing");
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_le<uint32_t>(os, ckpt.version);
  write_le<uint32_t>(os, static_cast<uint32_t>(ckpt.config_blob.size()));
  os.write(ckpt.config_blob.data(), static_cast<std::streamsize>(ckpt.config_blob.size()));
  write_le<uint32_t>(os, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    write_le<uint16_t>(os, static_cast<uint16_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    write_le<uint8_t>(os, static_cast<uint8_t>(t.shape.size()));
    for (int d : t.shape) write_le<uint64_t>(os, static_cast<uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  write_le<uint64_t>(os, ckpt.step);
  if (!os) throw IoError("checkpoint: write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open '" + path + "'");
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is) throw TruncationError("checkpoint: file shorter than the magic header");
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw FormatError("checkpoint: bad magic bytes in '" + path + "'");
  }
  Checkpoint ckpt;
  ckpt.version = read_le<uint32_t>(is, "version");
  if (ckpt.version != kCheckpointVersion) {
    throw VersionError("checkpoint: unsupported version " + std::to_string(ckpt.version) +
                       ", expected " + std::to_string(kCheckpointVersion));
  }
  const uint32_t blob_len = read_le<uint32_t>(is, "config length");
  if (blob_len > (1u << 20)) throw FormatError("checkpoint: implausible config length");
  ckpt.config_blob.resize(blob_len);
  is.read(ckpt.config_blob.data(), blob_len);
  if (!is) throw TruncationError("checkpoint: truncated config blob");
  ckpt.config = parse_model_config(ckpt.config_blob);

  const uint32_t n_tensors = read_le<uint32_t>(is, "tensor count");
  if (n_tensors > (1u << 20)) throw FormatError("checkpoint: implausible tensor count");
  ckpt.tensors.reserve(n_tensors);
  for (uint32_t i = 0; i < n_tensors; ++i) {
    NamedTensor t;
    const uint16_t name_len = read_le<uint16_t>(is, "tensor name length");
    t.name.resize(name_len);
    is.read(t.name.data(), name_len);
    if (!is) throw TruncationError("checkpoint: truncated tensor name");
    const uint8_t ndim = read_le<uint8_t>(is, "tensor rank");
    if (ndim == 0 || ndim > 8) throw FormatError("checkpoint: tensor '" + t.name + "' has rank " + std::to_string(ndim));
    int64_t numel = 1;
    for (uint8_t d = 0; d < ndim; ++d) {
      const uint64_t dim = read_le<uint64_t>(is, "tensor dim");
      if (dim == 0 || dim > (1ull << 31)) {
        throw FormatError("checkpoint: tensor '" + t.name + "' has bad dimension " + std::to_string(dim));
      }
      t.shape.push_back(static_cast<int>(dim));
      numel *= static_cast<int64_t>(dim);
      if (numel > (1ll << 33)) throw FormatError("checkpoint: tensor '" + t.name + "' payload too large");
    }
    t.data.resize(static_cast<size_t>(numel));
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!is) throw TruncationError("checkpoint: truncated payload of tensor '" + t.name + "'");
    ckpt.tensors.push_back(std::move(t));
  }
  ckpt.step = read_le<uint64_t>(is, "training step");
  is.peek();
  if (!is.eof()) throw FormatError("checkpoint: trailing bytes after training step");
  return ckpt;
}

Model<float> proximal_init(const Checkpoint& base, const ModelConfig& target_cfg) {
  if (base.config.n_a != 1) {
    throw InitError("proximal init: base must have N_a=1, has N_a=" + std::to_string(base.config.n_a));
  }
  target_cfg.validate();
  auto mismatch = [&](const std::string& field, auto a, auto b) {
    if (a != b) {
      std::ostringstream os;
      os << "proximal init: " << field << " mismatch (base " << a << ", target " << b << ")";
      throw InitError(os.str());
    }
  };
  mismatch("heads", base.config.heads, target_cfg.heads);
  mismatch("dim", base.config.dim, target_cfg.dim);
  mismatch("ffn_dim", base.config.ffn_dim, target_cfg.ffn_dim);
  mismatch("nf", base.config.n_f, target_cfg.n_f);
  mismatch("enc_blocks", base.config.enc_blocks, target_cfg.enc_blocks);
  mismatch("dec_blocks", base.config.dec_blocks, target_cfg.dec_blocks);
  mismatch("vocab_src", base.config.vocab_src, target_cfg.vocab_src);
  mismatch("vocab_tgt", base.config.vocab_tgt, target_cfg.vocab_tgt);
  mismatch("share_embeddings", base.config.share_embeddings, target_cfg.share_embeddings);
  mismatch("output_projection", base.config.output_projection, target_cfg.output_projection);
  mismatch("pre_norm", base.config.pre_norm, target_cfg.pre_norm);
  mismatch("max_len", base.config.max_len, target_cfg.max_len);

  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : base.tensors) by_name.emplace(t.name, &t);

  Model<float> m = build_model<float>(target_cfg, 0);
  for_each_param(m, [&](const std::string& name, Tensor<float>& t) {
    // branch i of the target pulls from branch 0 of the base
    std::string src_name = name;
    const size_t b = src_name.find(".branch.");
    if (b != std::string::npos) {
      const size_t digits = b + 8;
      size_t end = digits;
      while (end < src_name.size() && std::isdigit(static_cast<unsigned char>(src_name[end]))) ++end;
      src_name.replace(digits, end - digits, "0");
    }
    auto it = by_name.find(src_name);
    if (it == by_name.end()) throw InitError("proximal init: base is missing tensor '" + src_name + "'");
    if (it->second->shape != t.shape) {
      throw InitError("proximal init: tensor '" + src_name + "' has shape " +
                      shape_str(it->second->shape) + ", target expects " + shape_str(t.shape));
    }
    t.data = it->second->data;
  });
  return m;
}

Model<float> proximal_init(const Checkpoint& base, int target_na) {
  ModelConfig cfg = base.config;
  cfg.n_a = target_na;
  return proximal_init(base, cfg);
}

}  // namespace mat
