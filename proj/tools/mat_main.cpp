#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "mat/checkpoint.hpp"
#include "mat/config.hpp"
#include "mat/eval.hpp"
#include "mat/gradcheck_suite.hpp"
#include "mat/train.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Sentinel lock so two trainers cannot write one run directory at once.
class RunLock {
 public:
  explicit RunLock(const std::string& run_dir) : path_(run_dir + "/.lock") {
    fs::create_directories(run_dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      throw mat::IoError("run directory '" + run_dir +
                         "' is locked by another writer (remove " + path_ + " if stale)");
    }
    ::close(fd);
  }
  ~RunLock() { ::unlink(path_.c_str()); }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::string path_;
};

void require_file(const std::string& path, const std::string& what) {
  if (!fs::exists(path)) throw mat::ConfigError(what + " '" + path + "' does not exist");
}

mat::RunConfig load_config(const std::string& config_path, const std::vector<std::string>& sets) {
  mat::RunConfig cfg;
  if (config_path.empty()) {
    cfg = mat::run_config_from_entries(sets);
  } else {
    require_file(config_path, "config file");
    cfg = mat::parse_run_config(config_path, sets);
  }
  mat::apply_env_seed(cfg);
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw mat::IoError("cannot write '" + path + "'");
  os << text;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets,
              const std::string& out_dir) {
  mat::RunConfig cfg = load_config(config_path, sets);
  if (!out_dir.empty()) cfg.run_dir = out_dir;
  cfg.validate();

  RunLock lock(cfg.run_dir);
  write_text(cfg.run_dir + "/effective-config.txt", mat::dump_run_config(cfg));

  mat::TaskData data = mat::generate_task(cfg.task);
  mat::write_examples_tsv(cfg.run_dir + "/valid.tsv", data.valid);
  mat::write_examples_tsv(cfg.run_dir + "/test.tsv", data.test);

  mat::Model<float> model;
  if (!cfg.base_ckpt.empty()) {
    require_file(cfg.base_ckpt, "base checkpoint");
    mat::Checkpoint base = mat::load_checkpoint(cfg.base_ckpt);
    mat::ModelConfig expect = cfg.model;
    expect.rho = base.config.rho;
    expect.drop_mode = base.config.drop_mode;
    if (mat::serialize_model_config(expect) != mat::serialize_model_config(base.config)) {
      throw mat::ConfigError("base checkpoint architecture does not match the run config");
    }
    model = mat::model_from_checkpoint(base);
    model.cfg = cfg.model;  // adopt the run's rho / drop_mode
  } else {
    model = mat::build_model<float>(cfg.model, cfg.train.seed);
  }

  const mat::TrainResult result = mat::train_loop(model, data, cfg.train, cfg.run_dir);
  if (result.aborted) {
    std::cerr << "training aborted at step " << result.abort_step << ": " << result.abort_reason
              << "\n";
    return kExitRuntime;
  }
  if (!result.metrics.empty()) {
    const auto& last = result.metrics.back();
    std::cout << "trained " << cfg.train.max_steps << " steps, final loss " << last.loss
              << ", token_acc " << last.token_acc << "\n";
  }
  std::cout << "run directory: " << cfg.run_dir << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& base_ckpt, const std::string& config_path,
             const std::vector<std::string>& sets, const std::string& out_dir) {
  require_file(base_ckpt, "checkpoint");
  mat::RunConfig cfg = load_config(config_path, sets);
  mat::Checkpoint ckpt = mat::load_checkpoint(base_ckpt);
  mat::Model<float> model = mat::model_from_checkpoint(ckpt);

  std::vector<mat::Example> examples;
  if (!cfg.data_file.empty()) {
    require_file(cfg.data_file, "data file");
    examples = mat::read_examples_tsv(cfg.data_file);
  } else {
    cfg.task.vocab = model.cfg.vocab_src;
    examples = mat::generate_task(cfg.task).test;
  }

  const mat::EvalReport report = mat::evaluate(model, examples);
  std::cout << mat::format_report_block(report);
  std::cout << mat::eval_csv_header() << "\n" << mat::format_report_csv(report) << "\n";
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text(out_dir + "/eval.csv",
               mat::eval_csv_header() + "\n" + mat::format_report_csv(report) + "\n");
  }
  return kExitOk;
}

int cmd_proximal_init(const std::string& base_ckpt, int target_na, const std::string& out_path) {
  require_file(base_ckpt, "base checkpoint");
  if (target_na < 1) throw mat::ConfigError("--na must be >= 1");
  if (out_path.empty()) throw mat::ConfigError("--out is required");
  mat::Checkpoint base = mat::load_checkpoint(base_ckpt);
  if (base.config.n_a != 1) {
    throw mat::ConfigError("base must have N_a=1, has N_a=" + std::to_string(base.config.n_a));
  }
  mat::Model<float> warm = mat::proximal_init(base, target_na);
  mat::save_model(warm, base.step, out_path);

  mat::Model<float> base_model = mat::model_from_checkpoint(base);
  const double diff = mat::max_logit_rel_diff(warm, base_model, 20, 20260809);
  std::printf("forward-equivalence self-test: max relative logit diff %.3g over 20 inputs (%s)\n",
              diff, diff < 1e-5 ? "ok" : "FAILED");
  std::cout << "wrote " << out_path << "\n";
  return diff < 1e-5 ? kExitOk : kExitRuntime;
}

int cmd_grad_check(const std::string& config_path, const std::vector<std::string>& sets) {
  mat::GradSuiteConfig suite;
  if (!config_path.empty() || !sets.empty()) {
    mat::RunConfig cfg = load_config(config_path, sets);
    if (cfg.model.dim > 16) {
      throw mat::ConfigError("grad-check: dim must be <= 16 for runtime sanity, got " +
                             std::to_string(cfg.model.dim));
    }
    suite.dim = cfg.model.dim;
    suite.heads = cfg.model.heads;
    suite.n_a = cfg.model.n_a;
    suite.n_f = cfg.model.n_f;
    suite.rho = cfg.model.rho > 0.0 ? cfg.model.rho : 0.2;
    suite.seed = cfg.train.seed;
  }
  const auto reports = mat::run_grad_suite(suite);
  bool ok = true;
  std::printf("%-18s %-12s %s\n", "op", "max_rel_err", "status");
  for (const auto& r : reports) {
    const bool pass = r.max_rel_err < 1e-4;
    ok = ok && pass;
    std::printf("%-18s %-12.3g %s\n", r.op.c_str(), r.max_rel_err, pass ? "ok" : "FAILED");
  }
  return ok ? kExitOk : kExitRuntime;
}

int cmd_params(const std::string& config_path, const std::vector<std::string>& sets) {
  mat::RunConfig cfg = load_config(config_path, sets);
  cfg.model.validate();
  const mat::ParamBreakdown b = mat::param_breakdown(cfg.model);
  std::printf("embeddings  %12lld\n", static_cast<long long>(b.embeddings));
  std::printf("attention   %12lld\n", static_cast<long long>(b.attention));
  std::printf("ffn         %12lld\n", static_cast<long long>(b.ffn));
  std::printf("layer_norm  %12lld\n", static_cast<long long>(b.layer_norm));
  std::printf("total       %12lld\n", static_cast<long long>(b.total()));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-branch attentive transformer trainer"};
  app.require_subcommand(1);

  std::string config_path, out_dir, base_ckpt;
  std::vector<std::string> sets;
  int target_na = 0;

  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", config_path, "config file (key = value lines)")->required();
  train->add_option("--set", sets, "override KEY=VALUE, applied after the file");
  train->add_option("--out", out_dir, "run directory (overrides run_dir)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on task data");
  eval->add_option("--base", base_ckpt, "checkpoint to evaluate")->required();
  eval->add_option("--config", config_path, "task config or data_file source");
  eval->add_option("--set", sets, "override KEY=VALUE");
  eval->add_option("--out", out_dir, "directory for eval.csv");

  auto* prox = app.add_subcommand("proximal-init", "warm-start a multi-branch model");
  prox->add_option("--base", base_ckpt, "single-branch base checkpoint")->required();
  prox->add_option("--na", target_na, "target branch count")->required();
  prox->add_option("--out", out_dir, "output checkpoint path")->required();

  auto* grad = app.add_subcommand("grad-check", "finite-difference check of every layer op");
  grad->add_option("--config", config_path, "optional config for dims (dim <= 16)");
  grad->add_option("--set", sets, "override KEY=VALUE");

  auto* params = app.add_subcommand("params", "parameter count breakdown");
  params->add_option("--config", config_path, "config file")->required();
  params->add_option("--set", sets, "override KEY=VALUE");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (train->parsed()) return cmd_train(config_path, sets, out_dir);
    if (eval->parsed()) return cmd_eval(base_ckpt, config_path, sets, out_dir);
    if (prox->parsed()) return cmd_proximal_init(base_ckpt, target_na, out_dir);
    if (grad->parsed()) return cmd_grad_check(config_path, sets);
    if (params->parsed()) return cmd_params(config_path, sets);
  } catch (const mat::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const mat::ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const mat::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const mat::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
