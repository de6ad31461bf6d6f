#include "restr/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <thread>

#include "restr/error.hpp"
#include "restr/init.hpp"
#include "restr/ops.hpp"

namespace restr {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
  if (!(tau > 0.0 && tau < 1.0)) fail("tau must lie in (0, 1)");
  if (!(lambda >= 0.0)) fail("lambda must be non-negative");
  if (warmup_iters > total_iters) fail("warmup_iters exceeds total_iters");
  if (total_iters == 0) fail("total_iters must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(base_lr >= 0.0) || !(weight_decay >= 0.0)) fail("base_lr and weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (!(poly_power > 0.0)) fail("poly_power must be positive");
}

Tensor patch_labels(const Tensor& mask, std::size_t patch, double tau) {
  if (mask.rank() != 3 || mask.dim(2) != 1) throw ConfigError("patch_labels: mask must be H x W x 1, got " + shape_str(mask.shape()));
  const std::size_t h = mask.dim(0), w = mask.dim(1);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw ConfigError("patch_labels: mask " + shape_str(mask.shape()) + " not divisible by patch " + std::to_string(patch));
  }
  for (double v : mask.values()) {
    if (v != 0.0 && v != 1.0) throw ConfigError("patch_labels: mask is not binary");
  }
  const std::size_t gh = h / patch, gw = w / patch;
  Tensor labels({gh * gw, 1});
  const double area = static_cast<double>(patch * patch);
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      double on = 0.0;
      for (std::size_t y = 0; y < patch; ++y) {
        for (std::size_t x = 0; x < patch; ++x) on += mask.at(py * patch + y, px * patch + x, 0);
      }
      labels.at(py * gw + px, 0) = on / area > tau ? 1.0 : 0.0;
    }
  }
  return labels;
}

LossTerms loss(const PredictionPair& pred, const Tensor& patch_targets, const Tensor& mask, double lambda) {
  Tensor patch_term = ops::bce(pred.patch_probs, patch_targets);
  Tensor pixel_term = ops::bce(ops::sigmoid(pred.pixel_logits), mask);
  LossTerms out;
  out.patch = patch_term.item();
  out.pixel = pixel_term.item();
  out.total = ops::add(ops::scale(patch_term, lambda), pixel_term);
  return out;
}

double lr_at(std::size_t iter, const TrainConfig& cfg) {
  if (iter < cfg.warmup_iters) {
    return cfg.base_lr * static_cast<double>(iter) / static_cast<double>(cfg.warmup_iters);
  }
  if (cfg.total_iters <= cfg.warmup_iters) return iter <= cfg.total_iters ? cfg.base_lr : 0.0;
  const double progress = static_cast<double>(std::min(iter, cfg.total_iters) - cfg.warmup_iters) /
                          static_cast<double>(cfg.total_iters - cfg.warmup_iters);
  return cfg.base_lr * std::pow(1.0 - progress, cfg.poly_power);
}

// ---------------------------------------------------------------------------

AdamW::AdamW(std::vector<NamedParam> params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    state_.first.emplace_back(p.tensor.numel(), 0.0);
    state_.second.emplace_back(p.tensor.numel(), 0.0);
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void AdamW::step(double lr) {
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].tensor;
    auto values = p.values();
    auto& m = state_.first[i];
    auto& v = state_.second[i];
    const bool has_grad = p.has_grad();
    const double shrink = params_[i].decay ? 1.0 - lr * cfg_.weight_decay : 1.0;
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = has_grad ? p.grad()[j] : 0.0;
      values[j] *= shrink;
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
      values[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.adam_eps);
    }
  }
}

void AdamW::load_state(AdamWState state) {
  if (state.first.size() != params_.size() || state.second.size() != params_.size()) {
    throw ConfigError("optimizer state covers " + std::to_string(state.first.size()) + " tensors, model has " +
                      std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (state.first[i].size() != params_[i].tensor.numel() || state.second[i].size() != params_[i].tensor.numel()) {
      throw ConfigError("optimizer state for " + params_[i].name + " has the wrong size");
    }
  }
  state_ = std::move(state);
}

// ---------------------------------------------------------------------------

void write_log_header(std::ostream& os) { os << "iter,lr,loss_total,loss_patch,loss_pixel,eval_iou\n"; }

void write_log_row(std::ostream& os, const TrainLogRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,", row.iter, row.lr, row.loss_total, row.loss_patch,
                row.loss_pixel);
  os << buf;
  if (row.eval_iou) {
    std::snprintf(buf, sizeof buf, "%.17g", *row.eval_iou);
    os << buf;
  }
  os << '\n';
}

Trainer::Trainer(Model& model, const Dataset& data, const TrainConfig& cfg)
    : model_(model), data_(data), cfg_(cfg), optimizer_(model.parameters(), cfg) {
  cfg_.validate();
  if (data_.samples.empty()) throw ConfigError("training needs a non-empty dataset");
  for (const auto& s : data_.samples) {
    patch_targets_.push_back(patch_labels(s.mask, model_.config().patch_size, cfg_.tau));
  }
}

std::vector<std::size_t> Trainer::batch_indices(std::size_t iter) const {
  const std::size_t n = data_.samples.size();
  std::vector<std::size_t> out;
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> perm(n);
  for (std::size_t b = 0; b < cfg_.batch_size; ++b) {
    const std::size_t pos = (iter - 1) * cfg_.batch_size + b;
    const std::size_t epoch = pos / n;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      Rng rng(mix_seed(cfg_.seed, epoch));
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    out.push_back(perm[pos % n]);
  }
  return out;
}

TrainLogRow Trainer::step() {
  ++iter_;
  TrainLogRow row;
  row.iter = iter_;
  row.lr = lr_at(iter_, cfg_);
  optimizer_.zero_grad();
  const double inv_batch = 1.0 / static_cast<double>(cfg_.batch_size);
  for (std::size_t idx : batch_indices(iter_)) {
    const Sample& s = data_.samples[idx];
    clear_graph();
    PredictionPair pred = model_.forward(s.image, s.tokens);
    LossTerms terms = loss(pred, patch_targets_[idx], s.mask, cfg_.lambda);
    backward(ops::scale(terms.total, inv_batch));
    row.loss_total += terms.total.item() * inv_batch;
    row.loss_patch += terms.patch * inv_batch;
    row.loss_pixel += terms.pixel * inv_batch;
  }
  optimizer_.step(row.lr);
  if (cfg_.eval_every > 0 && iter_ % cfg_.eval_every == 0) {
    EvalOptions opts;
    opts.threads = worker_threads();
    opts.buckets = {{1, 1000}};
    row.eval_iou = evaluate(model_, data_, opts).cumulative_iou;
  }
  log_.push_back(row);
  return row;
}

void Trainer::run(std::size_t last, const std::function<void(const TrainLogRow&)>& on_row) {
  while (iter_ < last) {
    TrainLogRow row = step();
    if (on_row) on_row(row);
  }
}

// ---------------------------------------------------------------------------

std::size_t worker_threads() {
  std::size_t n = 1;
  if (const char* env = std::getenv("RESTR_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) n = static_cast<std::size_t>(v);
  }
  const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  return std::min(n, hw);
}

std::vector<Tensor> predict_masks(const Model& model, const Dataset& data, std::size_t threads) {
  std::vector<Tensor> out(data.samples.size());
  auto work = [&](std::size_t begin, std::size_t stride) {
    NoGradGuard no_grad;
    for (std::size_t i = begin; i < data.samples.size(); i += stride) {
      const Sample& s = data.samples[i];
      out[i] = binarize(model.forward(s.image, s.tokens).pixel_logits);
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, data.samples.size()));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& th : pool) th.join();
  }
  return out;
}

EvalReport evaluate(const Model& model, const Dataset& data, const EvalOptions& options) {
  const std::vector<Tensor> preds = predict_masks(model, data, options.threads);
  std::vector<Overlap> overlaps;
  std::vector<std::size_t> lengths;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    overlaps.push_back(overlap(preds[i], data.samples[i].mask));
    lengths.push_back(data.samples[i].tokens.size());
  }
  return make_report(lengths, overlaps, options.buckets);
}

AttnStats attention_probe(const Model& model, const Dataset& data) {
  AttnStats stats;
  NoGradGuard no_grad;
  for (const auto& s : data.samples) {
    FusionTrace trace;
    model.forward(s.image, s.tokens, &trace);
    accumulate_seed_attention(trace, model.config(), stats);
  }
  finalize_attention(stats);
  return stats;
}

}  // namespace restr
