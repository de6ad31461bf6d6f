#include "restr/op_checks.hpp"

#include <random>

#include "restr/init.hpp"
#include "restr/model.hpp"
#include "restr/ops.hpp"
#include "restr/training.hpp"
#include "restr/transformer.hpp"

namespace restr {
namespace {

Tensor randn(Shape shape, Rng& rng, double std = 1.0) {
  std::normal_distribution<double> dist(0.0, std);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

// Values bounded away from zero so kinked ops are smooth under perturbation.
Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t = uniform(std::move(shape), rng, 0.1, 2.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : t.values()) v = sign(rng) ? v : -v;
  return t;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

struct Case {
  std::string op;
  std::function<Tensor()> f;
  std::vector<Tensor> inputs;
};

std::vector<Case> make_cases(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x0c5));
  const std::size_t m = pick(rng, 1, 5), k = pick(rng, 1, 6), n = pick(rng, 1, 5);
  std::vector<Case> cases;
  auto add_case = [&](std::string op, std::vector<Tensor> in, std::function<Tensor(const std::vector<Tensor>&)> fn) {
    Case c{std::move(op), {}, std::move(in)};
    auto inputs = c.inputs;
    c.f = [fn, inputs] { return fn(inputs); };
    cases.push_back(std::move(c));
  };

  add_case("matmul", {randn({m, k}, rng), randn({k, n}, rng)},
           [](const auto& x) { return ops::matmul(x[0], x[1]); });
  add_case("transpose", {randn({m, k}, rng)}, [](const auto& x) { return ops::transpose(x[0]); });
  add_case("linear", {randn({m, k}, rng), randn({k, n}, rng), randn({n}, rng)},
           [](const auto& x) { return ops::linear(x[0], x[1], x[2]); });
  add_case("add", {randn({m, n}, rng), randn({m, n}, rng)}, [](const auto& x) { return ops::add(x[0], x[1]); });
  add_case("add_broadcast", {randn({m, n, k}, rng), randn({m, n, 1}, rng)},
           [](const auto& x) { return ops::add(x[0], x[1]); });
  add_case("hadamard", {randn({m, n}, rng), randn({m, n}, rng)},
           [](const auto& x) { return ops::hadamard(x[0], x[1]); });
  add_case("hadamard_broadcast", {randn({m, k}, rng), randn({m, 1}, rng)},
           [](const auto& x) { return ops::hadamard(x[0], x[1]); });
  add_case("add_bias", {randn({m, n}, rng), randn({n}, rng)}, [](const auto& x) { return ops::add_bias(x[0], x[1]); });
  const double factor = std::uniform_real_distribution<double>(-2.0, 2.0)(rng);
  add_case("scale", {randn({m, n}, rng)}, [factor](const auto& x) { return ops::scale(x[0], factor); });
  add_case("gelu", {randn({m, n}, rng, 2.0)}, [](const auto& x) { return ops::gelu(x[0]); });
  add_case("relu", {away_from_zero({m, n}, rng)}, [](const auto& x) { return ops::relu(x[0]); });
  add_case("sigmoid", {randn({m, n}, rng, 3.0)}, [](const auto& x) { return ops::sigmoid(x[0]); });
  const std::size_t c3 = pick(rng, 1, 4);
  const std::size_t axis = pick(rng, 0, 2);
  add_case("softmax", {randn({m, n + 1, c3}, rng, 2.0)}, [axis](const auto& x) { return ops::softmax(x[0], axis); });
  add_case("layer_norm", {randn({m, k + 1}, rng, 2.0), randn({k + 1}, rng), randn({k + 1}, rng)},
           [](const auto& x) { return ops::layer_norm(x[0], x[1], x[2], 1e-6); });
  const std::size_t cat_axis = pick(rng, 0, 1);
  add_case("concat", {randn({m, n}, rng), randn(cat_axis == 0 ? Shape{k, n} : Shape{m, k}, rng)},
           [cat_axis](const auto& x) { return ops::concat({x[0], x[1]}, cat_axis); });
  const std::size_t rows = m + 2;
  const std::size_t b = pick(rng, 0, rows - 2);
  const std::size_t e = pick(rng, b + 1, rows);
  add_case("slice", {randn({rows, n}, rng)}, [b, e](const auto& x) { return ops::slice(x[0], 0, b, e); });
  add_case("reshape", {randn({m, n * 2}, rng)}, [m, n](const auto& x) { return ops::reshape(x[0], {n, m * 2}); });
  add_case("upsample_nearest", {randn({m, n, k}, rng)}, [](const auto& x) { return ops::upsample2x(x[0]); });
  add_case("upsample_bilinear", {randn({m, n, k}, rng)}, [](const auto& x) { return ops::upsample2x_bilinear(x[0]); });
  {
    Tensor target = uniform({m, n}, rng, 0.0, 1.0);
    for (auto& v : target.values()) v = v < 0.5 ? 0.0 : 1.0;
    add_case("bce", {uniform({m, n}, rng, 0.05, 0.95)}, [target](const auto& x) { return ops::bce(x[0], target); });
  }
  add_case("sum", {randn({m, n, k}, rng)}, [](const auto& x) { return ops::sum(x[0]); });
  add_case("mean", {randn({m, n, k}, rng)}, [](const auto& x) { return ops::mean(x[0]); });
  {
    const std::size_t vocab = pick(rng, 2, 6);
    std::vector<int> ids(pick(rng, 1, 7));
    for (auto& id : ids) id = static_cast<int>(pick(rng, 0, vocab - 1));
    add_case("embedding", {randn({vocab, n}, rng)}, [ids](const auto& x) { return ops::embedding(x[0], ids); });
  }
  const std::size_t nq = pick(rng, 1, 5), nk = pick(rng, 1, 5), dh = pick(rng, 1, 4);
  add_case("attention", {randn({nq, dh}, rng), randn({nk, dh}, rng), randn({nk, dh}, rng)},
           [](const auto& x) { return attend(x[0], x[1], x[2]); });

  {
    TransformerConfig tc;
    tc.heads = pick(rng, 1, 2);
    tc.dim = tc.heads * pick(rng, 1, 3);
    tc.mlp_hidden = pick(rng, 2, 6);
    auto block = std::make_shared<BlockParams>(BlockParams::init(tc, rng));
    std::vector<Tensor> inputs{randn({pick(rng, 1, 4), tc.dim}, rng)};
    block->visit("block", [&](const std::string&, Tensor& p, bool) {
      for (auto& v : p.values()) v = std::normal_distribution<double>(0.0, 0.5)(rng);
      inputs.push_back(p);
    });
    add_case("transformer_block", inputs,
             [block, tc](const auto& x) { return transformer_block(x[0], *block, tc); });
  }
  return cases;
}

}  // namespace

std::vector<OpCheckResult> run_op_checks(std::size_t cases, const GradCheckOptions& base) {
  std::vector<OpCheckResult> out;
  for (std::uint64_t seed = 0; seed < cases; ++seed) {
    for (auto& c : make_cases(seed)) {
      GradCheckOptions opts = base;
      opts.seed = mix_seed(base.seed, seed);
      const GradCheckReport report = grad_check(c.f, c.inputs, opts);
      out.push_back({c.op, shape_str(c.inputs.front().shape()), seed, report.entries.size(), report.max_rel_error,
                     report.passed});
    }
  }
  return out;
}

ModelConfig gradcheck_model_config() {
  ModelConfig cfg;
  cfg.image_h = cfg.image_w = 16;
  cfg.patch_size = 4;
  cfg.vision_dim = cfg.language_dim = cfg.fusion_dim = 16;
  cfg.heads = 2;
  cfg.vision_layers = cfg.language_layers = 1;
  cfg.fusion_layers = 2;
  cfg.max_tokens = 6;
  cfg.vocab_size = 8;
  return cfg;
}

GradCheckReport run_model_check(const ModelConfig& cfg, std::size_t samples, std::uint64_t seed, double tol) {
  cfg.validate();
  Model model(cfg, seed);
  Rng rng(mix_seed(seed, 0xfeed));
  const Tensor image = uniform({cfg.image_h, cfg.image_w, cfg.channels}, rng, 0.0, 1.0);
  Tensor mask({cfg.image_h, cfg.image_w, 1});
  const std::size_t y0 = pick(rng, 0, cfg.image_h / 2), x0 = pick(rng, 0, cfg.image_w / 2);
  for (std::size_t y = y0; y < y0 + cfg.image_h / 2; ++y) {
    for (std::size_t x = x0; x < x0 + cfg.image_w / 2; ++x) mask.at(y, x, 0) = 1.0;
  }
  std::vector<int> tokens(pick(rng, 1, cfg.max_tokens));
  for (auto& t : tokens) t = static_cast<int>(pick(rng, 2, cfg.vocab_size - 1));
  const Tensor targets = patch_labels(mask, cfg.patch_size, 0.8);

  std::vector<Tensor> params;
  for (auto& p : model.parameters()) params.push_back(p.tensor);
  GradCheckOptions opts;
  opts.tol = tol;
  opts.max_samples = samples;
  opts.seed = mix_seed(seed, 0x5a);
  return grad_check(
      [&] { return loss(model.forward(image, tokens), targets, mask, 0.1).total; }, params, opts);
}

}  // namespace restr
