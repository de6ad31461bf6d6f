#include "restr/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "restr/error.hpp"
#include "restr/ops.hpp"

namespace restr {

GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options) {
  std::mt19937_64 rng(options.seed);
  Tensor projection;
  auto objective = [&](const Tensor& out) {
    if (out.numel() == 1) return out;
    if (!projection.defined()) {
      std::uniform_real_distribution<double> dist(-1.0, 1.0);
      std::vector<double> w(out.numel());
      for (auto& v : w) v = dist(rng);
      projection = Tensor(out.shape(), std::move(w));
    }
    return ops::sum(ops::hadamard(out, projection));
  };

  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  clear_graph();
  Tensor loss = objective(f());
  backward(loss);

  std::vector<std::pair<std::size_t, std::size_t>> picks;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].numel(); ++j) picks.emplace_back(i, j);
  }
  if (options.max_samples > 0 && options.max_samples < picks.size()) {
    std::shuffle(picks.begin(), picks.end(), rng);
    picks.resize(options.max_samples);
    std::sort(picks.begin(), picks.end());
  }

  GradCheckReport report;
  NoGradGuard no_grad;
  for (auto [i, j] : picks) {
    Tensor& t = inputs[i];
    const double analytic = t.has_grad() ? t.grad()[j] : 0.0;
    const double orig = t.values()[j];
    t.values()[j] = orig + options.eps;
    const double up = objective(f()).item();
    t.values()[j] = orig - options.eps;
    const double down = objective(f()).item();
    t.values()[j] = orig;
    const double numeric = (up - down) / (2.0 * options.eps);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
    GradCheckEntry e{i, j, analytic, numeric, std::abs(analytic - numeric) / denom};
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.entries.push_back(e);
  }
  report.passed = report.max_rel_error <= options.tol;
  return report;
}

}  // namespace restr
