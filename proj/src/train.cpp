#include "mat/train.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mat/checkpoint.hpp"
#include "mat/metrics.hpp"

namespace mat {

std::string format_metrics_row(const MetricsRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%lld,%.10g,%.10g,%.10g", static_cast<long long>(row.step),
                row.lr, row.loss, row.token_acc);
  return buf;
}

namespace {

struct TrackedModel {
  Model<float> model;
  std::vector<std::string> names;
  std::vector<int> nodes;
};

// Copy of the model whose parameters live on the tape as leaves.
TrackedModel track(const Model<float>& m, Tape<float>& tape) {
  TrackedModel tm{m, {}, {}};
  for_each_param(tm.model, [&](const std::string& name, Tensor<float>& t) {
    t = tape.leaf(std::move(t));
    tm.names.push_back(name);
    tm.nodes.push_back(t.node);
  });
  return tm;
}

}  // namespace

TrainResult train_loop(Model<float>& model, const TaskData& data, const TrainConfig& cfg,
                       const std::string& run_dir) {
  cfg.validate();
  model.cfg.validate();
  if (data.train.empty()) throw ContractError("train_loop: no training examples");

  std::ofstream metrics_file;
  if (!run_dir.empty()) {
    std::filesystem::create_directories(run_dir);
    metrics_file.open(run_dir + "/metrics.csv", std::ios::trunc);
    if (!metrics_file) throw IoError("train_loop: cannot write metrics in '" + run_dir + "'");
    metrics_file << "step,lr,loss,token_acc\n";
  }

  std::vector<Tensor<float>*> params;
  std::vector<std::string> names;
  for_each_param(model, [&](const std::string& name, Tensor<float>& t) {
    params.push_back(&t);
    names.push_back(name);
  });
  AdamState<float> adam = init_adam(params);

  TrainResult result;
  std::vector<Batch> batches;
  size_t batch_index = 0;
  int64_t epoch = 0;

  for (int64_t step = 1; step <= cfg.max_steps; ++step) {
    if (batch_index >= batches.size()) {
      batches = make_epoch_batches(data.train, cfg.batch_tokens, cfg.seed, epoch++);
      batch_index = 0;
    }
    const Batch& batch = batches[batch_index++];

    double step_loss = 0.0;
    double step_acc = 0.0;
    try {
      Tape<float> tape;
      TrackedModel tracked = track(model, tape);
      ForwardOptions<float> opt;
      opt.training = true;
      opt.seed = cfg.seed;
      opt.step = step;
      opt.residual_dropout = cfg.residual_dropout;

      Tensor<float> weighted_sum = Tensor<float>::zeros({1});
      float total_tokens = 0.0f;
      int64_t hits = 0, real_total = 0;
      for (int i = 0; i < batch.size(); ++i) {
        const std::vector<int> src = batch.src_row(i);
        const std::vector<int> tgt_in = batch.tgt_in_row(i);
        const std::vector<int> tgt_out = batch.tgt_out_row(i);
        Tensor<float> logits = forward(tracked.model, src, tgt_in, opt, &tape);
        Tensor<float> loss =
            label_smoothed_nll(logits, tgt_out, cfg.label_smoothing, kPadId, &tape);
        const float w = static_cast<float>(tgt_out.size());
        weighted_sum = add(weighted_sum, scale(loss, w, &tape), &tape);
        total_tokens += w;
        const auto [h, r] = token_match_counts(logits, tgt_out, kPadId);
        hits += h;
        real_total += r;
      }
      Tensor<float> total = scale(weighted_sum, 1.0f / total_tokens, &tape);
      step_loss = static_cast<double>(total.data[0]);
      step_acc = real_total > 0 ? static_cast<double>(hits) / static_cast<double>(real_total) : 0.0;

      tape.backward(total.node);
      std::vector<const std::vector<float>*> grads;
      grads.reserve(params.size());
      for (int node : tracked.nodes) grads.push_back(&tape.grad(node));
      adam_step(params, names, grads, adam, cfg, lr_at(step, cfg));
    } catch (const NumericError& e) {
      result.aborted = true;
      result.abort_step = step;
      result.abort_reason = e.what();
      break;
    }

    if (step % cfg.log_every == 0 || step == cfg.max_steps) {
      MetricsRow row{step, lr_at(step, cfg), step_loss, step_acc};
      result.metrics.push_back(row);
      if (metrics_file) metrics_file << format_metrics_row(row) << "\n" << std::flush;
    }
    if (!run_dir.empty() && cfg.ckpt_every > 0 && step % cfg.ckpt_every == 0 &&
        step != cfg.max_steps) {
      save_model(model, static_cast<uint64_t>(step), run_dir + "/ckpt_" + std::to_string(step) + ".ckpt");
    }
  }

  if (!run_dir.empty() && !result.aborted) {
    save_model(model, static_cast<uint64_t>(cfg.max_steps), run_dir + "/final.ckpt");
  }
  return result;
}

}  // namespace mat
