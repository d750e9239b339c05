#include "mat/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace mat {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int to_int(const std::string& key, const std::string& v) {
  size_t pos = 0;
  long out;
  try {
    out = std::stol(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
  return static_cast<int>(out);
}

uint64_t to_u64(const std::string& key, const std::string& v) {
  size_t pos = 0;
  unsigned long long out;
  try {
    out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  size_t pos = 0;
  double out;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("config: bad number for " + key + ": '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError("config: bad number for " + key + ": '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "0" || v == "false") return false;
  if (v == "1" || v == "true") return true;
  throw ConfigError("config: bad boolean for " + key + ": '" + v + "' (use 0/1/true/false)");
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  // model
  if (key == "na") {
    cfg.model.n_a = to_int(key, value);
  } else if (key == "heads") {
    cfg.model.heads = to_int(key, value);
  } else if (key == "dim") {
    cfg.model.dim = to_int(key, value);
  } else if (key == "ffn_dim") {
    cfg.model.ffn_dim = to_int(key, value);
  } else if (key == "nf") {
    cfg.model.n_f = to_int(key, value);
  } else if (key == "enc_blocks") {
    cfg.model.enc_blocks = to_int(key, value);
  } else if (key == "dec_blocks") {
    cfg.model.dec_blocks = to_int(key, value);
  } else if (key == "rho") {
    cfg.model.rho = to_double(key, value);
  } else if (key == "drop_mode") {
    if (value == "branch") {
      cfg.model.drop_mode = DropMode::kBranch;
    } else if (value == "head") {
      cfg.model.drop_mode = DropMode::kHead;
    } else {
      throw ConfigError("config: drop_mode must be branch|head, got '" + value + "'");
    }
  } else if (key == "vocab") {
    cfg.model.vocab_src = cfg.model.vocab_tgt = to_int(key, value);
    cfg.task.vocab = cfg.model.vocab_src;
  } else if (key == "share_embeddings") {
    cfg.model.share_embeddings = to_bool(key, value);
  } else if (key == "output_projection") {
    cfg.model.output_projection = to_bool(key, value);
  } else if (key == "pre_norm") {
    cfg.model.pre_norm = to_bool(key, value);
  } else if (key == "max_len") {
    cfg.model.max_len = to_int(key, value);
    // training
  } else if (key == "lr") {
    cfg.train.base_lr = to_double(key, value);
  } else if (key == "beta1") {
    cfg.train.beta1 = to_double(key, value);
  } else if (key == "beta2") {
    cfg.train.beta2 = to_double(key, value);
  } else if (key == "adam_eps") {
    cfg.train.adam_eps = to_double(key, value);
  } else if (key == "warmup") {
    cfg.train.warmup_steps = to_int(key, value);
  } else if (key == "label_smoothing") {
    cfg.train.label_smoothing = to_double(key, value);
  } else if (key == "max_steps") {
    cfg.train.max_steps = to_int(key, value);
  } else if (key == "batch_tokens") {
    cfg.train.batch_tokens = to_int(key, value);
  } else if (key == "seed") {
    cfg.train.seed = to_u64(key, value);
  } else if (key == "log_every") {
    cfg.train.log_every = to_int(key, value);
  } else if (key == "ckpt_every") {
    cfg.train.ckpt_every = to_int(key, value);
  } else if (key == "residual_dropout") {
    cfg.train.residual_dropout = to_double(key, value);
    // task
  } else if (key == "task") {
    cfg.task.kind = parse_task_kind(value);
  } else if (key == "len_min") {
    cfg.task.len_min = to_int(key, value);
  } else if (key == "len_max") {
    cfg.task.len_max = to_int(key, value);
  } else if (key == "train_examples") {
    cfg.task.n_train = to_int(key, value);
  } else if (key == "valid_examples") {
    cfg.task.n_valid = to_int(key, value);
  } else if (key == "test_examples") {
    cfg.task.n_test = to_int(key, value);
  } else if (key == "task_seed") {
    cfg.task.seed = to_u64(key, value);
    // paths
  } else if (key == "run_dir") {
    cfg.run_dir = value;
  } else if (key == "data_file") {
    cfg.data_file = value;
  } else if (key == "base_ckpt") {
    cfg.base_ckpt = value;
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

RunConfig parse_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open '" + path + "'");
  RunConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: malformed line " + std::to_string(line_no) + " in '" + path +
                        "': '" + line + "'");
    }
    apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  for (const auto& ov : overrides) {
    const size_t eq = ov.find('=');
    if (eq == std::string::npos) throw ConfigError("config: override '" + ov + "' is not KEY=VALUE");
    apply_config_entry(cfg, trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
  }
  return cfg;
}

RunConfig run_config_from_entries(const std::vector<std::string>& overrides) {
  RunConfig cfg;
  for (const auto& ov : overrides) {
    const size_t eq = ov.find('=');
    if (eq == std::string::npos) throw ConfigError("config: override '" + ov + "' is not KEY=VALUE");
    apply_config_entry(cfg, trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
  }
  return cfg;
}

std::string dump_run_config(const RunConfig& cfg) {
  std::ostringstream os;
  os << "na = " << cfg.model.n_a << "\n";
  os << "heads = " << cfg.model.heads << "\n";
  os << "dim = " << cfg.model.dim << "\n";
  os << "ffn_dim = " << cfg.model.ffn_dim << "\n";
  os << "nf = " << cfg.model.n_f << "\n";
  os << "enc_blocks = " << cfg.model.enc_blocks << "\n";
  os << "dec_blocks = " << cfg.model.dec_blocks << "\n";
  os << "rho = " << format_double(cfg.model.rho) << "\n";
  os << "drop_mode = " << drop_mode_name(cfg.model.drop_mode) << "\n";
  os << "vocab = " << cfg.model.vocab_src << "\n";
  os << "share_embeddings = " << (cfg.model.share_embeddings ? 1 : 0) << "\n";
  os << "output_projection = " << (cfg.model.output_projection ? 1 : 0) << "\n";
  os << "pre_norm = " << (cfg.model.pre_norm ? 1 : 0) << "\n";
  os << "max_len = " << cfg.model.max_len << "\n";
  os << "lr = " << format_double(cfg.train.base_lr) << "\n";
  os << "beta1 = " << format_double(cfg.train.beta1) << "\n";
  os << "beta2 = " << format_double(cfg.train.beta2) << "\n";
  os << "adam_eps = " << format_double(cfg.train.adam_eps) << "\n";
  os << "warmup = " << cfg.train.warmup_steps << "\n";
  os << "label_smoothing = " << format_double(cfg.train.label_smoothing) << "\n";
  os << "max_steps = " << cfg.train.max_steps << "\n";
  os << "batch_tokens = " << cfg.train.batch_tokens << "\n";
  os << "seed = " << cfg.train.seed << "\n";
  os << "log_every = " << cfg.train.log_every << "\n";
  os << "ckpt_every = " << cfg.train.ckpt_every << "\n";
  os << "residual_dropout = " << format_double(cfg.train.residual_dropout) << "\n";
  os << "task = " << task_kind_name(cfg.task.kind) << "\n";
  os << "len_min = " << cfg.task.len_min << "\n";
  os << "len_max = " << cfg.task.len_max << "\n";
  os << "train_examples = " << cfg.task.n_train << "\n";
  os << "valid_examples = " << cfg.task.n_valid << "\n";
  os << "test_examples = " << cfg.task.n_test << "\n";
  os << "task_seed = " << cfg.task.seed << "\n";
  os << "run_dir = " << cfg.run_dir << "\n";
  os << "data_file = " << cfg.data_file << "\n";
  os << "base_ckpt = " << cfg.base_ckpt << "\n";
  return os.str();
}

void apply_env_seed(RunConfig& cfg) {
  const char* env = std::getenv("MAT_SEED");
  if (!env || !*env) return;
  cfg.train.seed = to_u64("MAT_SEED", env);
}

}  // namespace mat
