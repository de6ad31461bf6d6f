#include <numeric>

#include "doctest.h"
#include "restr/error.hpp"
#include "restr/grad_check.hpp"
#include "restr/ops.hpp"
#include "restr/transformer.hpp"
#include "test_util.hpp"

using namespace restr;
using restr::testing::bit_equal;
using restr::testing::max_abs_diff;
using restr::testing::randn;

namespace {

TransformerConfig config(std::size_t dim, std::size_t heads, std::size_t layers = 1) {
  TransformerConfig cfg;
  cfg.dim = dim;
  cfg.heads = heads;
  cfg.layers = layers;
  return cfg;
}

// Random values in every parameter, including biases and norms.
void scramble(EncoderParams& p, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> dist(0.0, 0.3);
  p.visit("enc", [&](const std::string&, Tensor& t, bool) {
    for (auto& v : t.values()) v = dist(rng);
  });
}

void zero_output_projections(BlockParams& b) {
  for (Tensor* t : {&b.w_out, &b.b_out, &b.w_fc2, &b.b_fc2}) {
    for (auto& v : t->values()) v = 0.0;
  }
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  Tensor out(x.shape());
  const std::size_t d = x.dim(1);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = x.at(perm[i], j);
  }
  return out;
}

}  // namespace

TEST_CASE("config validation") {
  CHECK_THROWS_AS(config(10, 3).validate(), ConfigError);
  CHECK_THROWS_AS(config(8, 2, 0).validate(), ConfigError);
  CHECK_NOTHROW(config(8, 2).validate());
  CHECK(config(8, 2).head_dim() == 4);
}

TEST_CASE("self attention") {
  Rng rng(1);
  BlockParams block = BlockParams::init(config(8, 2), rng);
  const HeadParams head = block.head(0, 4);

  Tensor single = randn({1, 8}, 2);
  Tensor attn;
  Tensor out = self_attention(single, head, &attn);
  CHECK(attn.numel() == 1);
  CHECK(attn.item() == 1.0);
  Tensor v = ops::linear(single, head.wv, head.bv);
  CHECK(max_abs_diff(out, v) == 0.0);

  Tensor same({4, 8});
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 8; ++j) same.at(i, j) = 0.1 * static_cast<double>(j);
  }
  self_attention(same, head, &attn);
  for (double a : attn.values()) CHECK(a == doctest::Approx(0.25).epsilon(1e-14));

  Tensor z = randn({5, 8}, 3, 3.0);
  self_attention(z, head, &attn);
  CHECK(attn.shape() == Shape{5, 5});
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) s += attn.at(i, j);
    CHECK(std::abs(s - 1.0) <= 1e-9);
  }
}

TEST_CASE("msa") {
  Rng rng(4);
  BlockParams one = BlockParams::init(config(4, 1), rng);
  for (auto& v : one.w_out.values()) v = 0.0;
  for (std::size_t i = 0; i < 4; ++i) one.w_out.at(i, i) = 1.0;
  Tensor z = randn({3, 4}, 5);
  CHECK(max_abs_diff(msa(z, one, 1), self_attention(z, one.head(0, 4))) <= 1e-15);

  for (std::size_t k : {1, 2, 4, 8}) {
    BlockParams b = BlockParams::init(config(8, k), rng);
    CHECK(msa(randn({6, 8}, 6), b, k).shape() == Shape{6, 8});
  }

  EncoderParams enc = EncoderParams::init(config(8, 2), rng);
  scramble(enc, 7);
  BlockParams& b = enc.blocks[0];
  Tensor x = randn({3, 8}, 8);
  std::vector<Tensor> inputs{x, b.wq, b.bq, b.wk, b.bk, b.wv, b.bv, b.w_out, b.b_out};
  CHECK(grad_check([&] { return msa(x, b, 2); }, inputs).passed);
}

TEST_CASE("transformer block") {
  Rng rng(9);
  const TransformerConfig cfg = config(8, 2);
  EncoderParams enc = EncoderParams::init(cfg, rng);
  scramble(enc, 10);
  BlockParams& b = enc.blocks[0];
  Tensor z = randn({4, 8}, 11);
  CHECK(transformer_block(z, b, cfg).shape() == Shape{4, 8});

  std::vector<Tensor> inputs{z};
  b.visit("b", [&](const std::string&, Tensor& t, bool) { inputs.push_back(t); });
  CHECK(grad_check([&] { return transformer_block(z, b, cfg); }, inputs).passed);

  zero_output_projections(b);
  CHECK(bit_equal(transformer_block(z, b, cfg), z));
}

TEST_CASE("encoder stack composition") {
  Rng rng(12);
  const TransformerConfig one = config(8, 2, 1);
  EncoderParams e1 = EncoderParams::init(one, rng);
  scramble(e1, 13);
  Tensor z = randn({5, 8}, 14);
  Tensor expect = ops::layer_norm(transformer_block(z, e1.blocks[0], one), e1.final_norm.gain, e1.final_norm.bias,
                                  kLayerNormEps);
  CHECK(bit_equal(encoder_stack(z, one, e1), expect));

  const TransformerConfig two = config(8, 2, 2);
  EncoderParams e2 = EncoderParams::init(two, rng);
  scramble(e2, 15);
  Tensor manual = transformer_block(transformer_block(z, e2.blocks[0], two), e2.blocks[1], two);
  manual = ops::layer_norm(manual, e2.final_norm.gain, e2.final_norm.bias, kLayerNormEps);
  CHECK(bit_equal(encoder_stack(z, two, e2), manual));

  TransformerConfig shared = two;
  shared.shared = true;
  EncoderParams es = EncoderParams::init(shared, rng);
  CHECK(es.blocks.size() == 1);
  scramble(es, 16);
  Tensor tied = transformer_block(transformer_block(z, es.blocks[0], shared), es.blocks[0], shared);
  tied = ops::layer_norm(tied, es.final_norm.gain, es.final_norm.bias, kLayerNormEps);
  CHECK(bit_equal(encoder_stack(z, shared, es), tied));

  CHECK_THROWS_AS(encoder_stack(z, config(8, 2, 3), e2), ConfigError);
}

TEST_CASE("zeroed output projections reduce the stack to its final norm") {
  Rng rng(17);
  const TransformerConfig cfg = config(8, 4, 3);
  EncoderParams enc = EncoderParams::init(cfg, rng);
  scramble(enc, 18);
  for (auto& b : enc.blocks) zero_output_projections(b);
  Tensor z = randn({6, 8}, 19);
  CHECK(bit_equal(encoder_stack(z, cfg, enc), ops::layer_norm(z, enc.final_norm.gain, enc.final_norm.bias, kLayerNormEps)));
}

TEST_CASE("permutation equivariance") {
  Rng rng(20);
  const TransformerConfig cfg = config(8, 2, 2);
  EncoderParams enc = EncoderParams::init(cfg, rng);
  scramble(enc, 21);
  Tensor z = randn({7, 8}, 22);
  std::vector<std::size_t> perm(7);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor a = permute_rows(encoder_stack(z, cfg, enc), perm);
  Tensor b = encoder_stack(permute_rows(z, perm), cfg, enc);
  CHECK(max_abs_diff(a, b) <= 1e-9);
}

TEST_CASE("attention rows sum to one at every layer and head") {
  Rng rng(23);
  const TransformerConfig cfg = config(8, 4, 3);
  EncoderParams enc = EncoderParams::init(cfg, rng);
  scramble(enc, 24);
  AttentionTrace trace;
  encoder_stack(randn({6, 8}, 25, 2.0), cfg, enc, &trace);
  REQUIRE(trace.layers.size() == 3);
  for (const auto& layer : trace.layers) {
    REQUIRE(layer.size() == 4);
    for (const auto& a : layer) {
      for (std::size_t i = 0; i < 6; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 6; ++j) s += a.at(i, j);
        CHECK(std::abs(s - 1.0) <= 1e-9);
      }
    }
  }
}

TEST_CASE("parameter counts") {
  // D=8, k=2, M=1 by hand: two norms 2*16, q/k/v/out 4*(64+8), MLP 8*32+32+32*8+8, final norm 16.
  const TransformerConfig cfg = config(8, 2, 1);
  CHECK(block_param_count(cfg) == 32 + 288 + 552);
  CHECK(encoder_param_count(cfg) == 32 + 288 + 552 + 16);

  for (std::size_t layers : {1, 2, 3}) {
    for (bool shared : {false, true}) {
      TransformerConfig c = config(12, 3, layers);
      c.shared = shared;
      Rng rng(layers);
      EncoderParams enc = EncoderParams::init(c, rng);
      std::size_t counted = 0;
      enc.visit("e", [&](const std::string&, Tensor& t, bool) { counted += t.numel(); });
      CHECK(counted == encoder_param_count(c));
    }
  }
}

TEST_CASE("initialization") {
  Rng rng(26);
  BlockParams b = BlockParams::init(config(64, 4), rng);
  double sum = 0.0, sq = 0.0, worst = 0.0;
  for (double v : b.w_fc1.values()) {
    sum += v;
    sq += v * v;
    worst = std::max(worst, std::abs(v));
  }
  const double n = static_cast<double>(b.w_fc1.numel());
  CHECK(std::abs(sum / n) < 2e-3);
  // Truncation at two sigma shrinks the std of N(0, 0.02) to about 0.0176.
  CHECK(std::sqrt(sq / n) == doctest::Approx(0.0176).epsilon(0.05));
  CHECK(worst <= 0.04);
  for (double v : b.bq.values()) CHECK(v == 0.0);
  for (double v : b.norm1.gain.values()) CHECK(v == 1.0);
}
