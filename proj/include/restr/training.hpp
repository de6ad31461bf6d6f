#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "restr/metrics.hpp"
#include "restr/model.hpp"
#include "restr/synth.hpp"
#include "restr/tensor.hpp"

namespace restr {

struct TrainConfig {
  double base_lr = 1e-5;
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t warmup_iters = 40000;
  std::size_t total_iters = 400000;
  double poly_power = 0.9;
  std::size_t batch_size = 8;
  double tau = 0.8;     // patch-label threshold
  double lambda = 0.1;  // weight of the patch-level loss
  std::uint64_t seed = 0;
  std::size_t eval_every = 0;  // 0 disables periodic evaluation

  void validate() const;
};

// 1 for patch i iff the mean of the mask over patch i is strictly above tau;
// same row-major patch order as patchify. Returns [N_v x 1].
Tensor patch_labels(const Tensor& mask, std::size_t patch, double tau);

struct LossTerms {
  Tensor total;  // differentiable scalar
  double patch = 0.0;
  double pixel = 0.0;
};

// lambda * BCE(y_p hat, y_p) + BCE(sigmoid(Y_m hat), Y_m), each mean-reduced.
LossTerms loss(const PredictionPair& pred, const Tensor& patch_targets, const Tensor& mask, double lambda);

// Linear warmup 0 -> base_lr, then base_lr * (1 - progress)^poly_power.
double lr_at(std::size_t iter, const TrainConfig& cfg);

struct AdamWState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
};

// Decoupled weight decay: p <- p * (1 - lr * wd) for decaying params, then
// the bias-corrected Adam update.
class AdamW {
 public:
  AdamW(std::vector<NamedParam> params, const TrainConfig& cfg);

  void step(double lr);
  void zero_grad();

  const AdamWState& state() const { return state_; }
  // Throws ConfigError when the state does not match the parameters.
  void load_state(AdamWState state);
  const std::vector<NamedParam>& params() const { return params_; }

 private:
  std::vector<NamedParam> params_;
  TrainConfig cfg_;
  AdamWState state_;
};

struct TrainLogRow {
  std::size_t iter = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_patch = 0.0;
  double loss_pixel = 0.0;
  std::optional<double> eval_iou;
};

void write_log_header(std::ostream& os);
void write_log_row(std::ostream& os, const TrainLogRow& row);

// Forward/backward/AdamW loop over a fixed dataset. Batches come from a
// stream of per-epoch permutations seeded by (seed, epoch), so a trainer
// restored at iteration t draws the same batches as an uninterrupted run.
class Trainer {
 public:
  Trainer(Model& model, const Dataset& data, const TrainConfig& cfg);

  // Runs iterations (iteration()+1 .. last]; `on_row` sees each log row.
  void run(std::size_t last, const std::function<void(const TrainLogRow&)>& on_row = {});
  TrainLogRow step();

  std::size_t iteration() const { return iter_; }
  void set_iteration(std::size_t iter) { iter_ = iter; }
  AdamW& optimizer() { return optimizer_; }
  const std::vector<TrainLogRow>& log() const { return log_; }

  // Batch sample indices used at iteration `iter` (1-based).
  std::vector<std::size_t> batch_indices(std::size_t iter) const;

 private:
  Model& model_;
  const Dataset& data_;
  TrainConfig cfg_;
  AdamW optimizer_;
  std::vector<Tensor> patch_targets_;
  std::size_t iter_ = 0;
  std::vector<TrainLogRow> log_;
};

struct EvalOptions {
  std::vector<LengthBucket> buckets = parse_buckets("1-2,3,4-5,6-20");
  std::size_t threads = 1;
};

// Worker count from RESTR_THREADS (default 1, capped at the hardware count).
std::size_t worker_threads();

// Binarized pixel predictions for every sample, computed without a tape.
std::vector<Tensor> predict_masks(const Model& model, const Dataset& data, std::size_t threads = 1);

EvalReport evaluate(const Model& model, const Dataset& data, const EvalOptions& options = {});

// Seed-row attention of the fusion stacks averaged over heads and samples.
AttnStats attention_probe(const Model& model, const Dataset& data);

}  // namespace restr
