#include "restr/fusion.hpp"

#include "restr/error.hpp"
#include "restr/ops.hpp"

namespace restr {

FusionParams FusionParams::init(const ModelConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.fusion_dim;
  FusionParams p;
  p.seed = trunc_normal({1, d}, 0.02, rng).set_requires_grad(true);
  p.visual_norm = LayerNormParams::init(cfg.vision_dim);
  p.visual_proj_w = trunc_normal({cfg.vision_dim, d}, 0.02, rng).set_requires_grad(true);
  p.visual_proj_b = Tensor::zeros({d}).set_requires_grad(true);
  p.linguistic_norm = LayerNormParams::init(cfg.language_dim);
  p.linguistic_proj_w = trunc_normal({cfg.language_dim, d}, 0.02, rng).set_requires_grad(true);
  p.linguistic_proj_b = Tensor::zeros({d}).set_requires_grad(true);
  if (cfg.fusion_variant == FusionVariant::kVME) {
    p.joint = EncoderParams::init(cfg.fusion_joint_encoder(), rng);
  } else {
    p.visual_linguistic = EncoderParams::init(cfg.fusion_sub_encoder(), rng);
    p.linguistic_seed = EncoderParams::init(cfg.fusion_sub_encoder(), rng);
  }
  return p;
}

void FusionParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".seed", seed, false);
  visual_norm.visit(prefix + ".visual_norm", fn);
  fn(prefix + ".visual_proj_w", visual_proj_w, true);
  fn(prefix + ".visual_proj_b", visual_proj_b, false);
  linguistic_norm.visit(prefix + ".linguistic_norm", fn);
  fn(prefix + ".linguistic_proj_w", linguistic_proj_w, true);
  fn(prefix + ".linguistic_proj_b", linguistic_proj_b, false);
  if (!joint.blocks.empty()) joint.visit(prefix + ".joint", fn);
  if (!visual_linguistic.blocks.empty()) visual_linguistic.visit(prefix + ".visual_linguistic", fn);
  if (!linguistic_seed.blocks.empty()) linguistic_seed.visit(prefix + ".linguistic_seed", fn);
}

ProjectedFeatures project(const Tensor& z_v, const Tensor& z_l, const FusionParams& params) {
  if (z_v.rank() != 2 || z_v.dim(1) != params.visual_proj_w.dim(0)) {
    throw ConfigError("project: visual features " + shape_str(z_v.shape()) + " do not match projector " +
                      shape_str(params.visual_proj_w.shape()));
  }
  if (z_l.rank() != 2 || z_l.dim(1) != params.linguistic_proj_w.dim(0)) {
    throw ConfigError("project: linguistic features " + shape_str(z_l.shape()) + " do not match projector " +
                      shape_str(params.linguistic_proj_w.shape()));
  }
  Tensor v = ops::layer_norm(z_v, params.visual_norm.gain, params.visual_norm.bias, kLayerNormEps);
  Tensor l = ops::layer_norm(z_l, params.linguistic_norm.gain, params.linguistic_norm.bias, kLayerNormEps);
  return {ops::linear(v, params.visual_proj_w, params.visual_proj_b),
          ops::linear(l, params.linguistic_proj_w, params.linguistic_proj_b)};
}

namespace {

void check_inputs(const char* op, const Tensor& z_v, const Tensor& z_l, const FusionParams& params) {
  const std::size_t d = params.seed.dim(1);
  if (z_v.rank() != 2 || z_l.rank() != 2 || z_v.dim(1) != d || z_l.dim(1) != d) {
    throw ConfigError(std::string(op) + ": projected features " + shape_str(z_v.shape()) + " and " +
                      shape_str(z_l.shape()) + " must both have width " + std::to_string(d));
  }
}

Tensor seed_row(const Tensor& stacked) { return ops::slice(stacked, 0, stacked.dim(0) - 1, stacked.dim(0)); }

}  // namespace

FusionOutput fuse_cme(const Tensor& z_v, const Tensor& z_l, const FusionParams& params, const ModelConfig& cfg,
                      FusionTrace* trace) {
  check_inputs("fuse_cme", z_v, z_l, params);
  const std::size_t nv = z_v.dim(0), nl = z_l.dim(0);
  const TransformerConfig sub = cfg.fusion_sub_encoder();
  Tensor vl = encoder_stack(ops::concat({z_v, z_l}, 0), sub, params.visual_linguistic,
                            trace != nullptr ? &trace->visual_linguistic : nullptr);
  FusionOutput out;
  out.visual = ops::slice(vl, 0, 0, nv);
  out.linguistic = ops::slice(vl, 0, nv, nv + nl);
  Tensor ls = encoder_stack(ops::concat({out.linguistic, params.seed}, 0), sub, params.linguistic_seed,
                            trace != nullptr ? &trace->linguistic_seed : nullptr);
  out.seed = seed_row(ls);
  return out;
}

FusionOutput fuse_vme(const Tensor& z_v, const Tensor& z_l, const FusionParams& params, const ModelConfig& cfg,
                      FusionTrace* trace) {
  check_inputs("fuse_vme", z_v, z_l, params);
  const std::size_t nv = z_v.dim(0), nl = z_l.dim(0);
  Tensor all = encoder_stack(ops::concat({z_v, z_l, params.seed}, 0), cfg.fusion_joint_encoder(), params.joint,
                             trace != nullptr ? &trace->joint : nullptr);
  return {ops::slice(all, 0, 0, nv), seed_row(all), ops::slice(all, 0, nv, nv + nl)};
}

FusionOutput fuse_ime(const Tensor& z_v, const Tensor& z_l, const FusionParams& params, const ModelConfig& cfg,
                      FusionTrace* trace) {
  check_inputs("fuse_ime", z_v, z_l, params);
  const std::size_t nv = z_v.dim(0), nl = z_l.dim(0);
  const TransformerConfig sub = cfg.fusion_sub_encoder();
  Tensor vl = encoder_stack(ops::concat({z_v, z_l}, 0), sub, params.visual_linguistic,
                            trace != nullptr ? &trace->visual_linguistic : nullptr);
  Tensor ls = encoder_stack(ops::concat({z_l, params.seed}, 0), sub, params.linguistic_seed,
                            trace != nullptr ? &trace->linguistic_seed : nullptr);
  return {ops::slice(vl, 0, 0, nv), seed_row(ls), ops::slice(vl, 0, nv, nv + nl)};
}

FusionOutput fuse(const Tensor& z_v, const Tensor& z_l, const FusionParams& params, const ModelConfig& cfg,
                  FusionTrace* trace) {
  switch (cfg.fusion_variant) {
    case FusionVariant::kVME: return fuse_vme(z_v, z_l, params, cfg, trace);
    case FusionVariant::kIME: return fuse_ime(z_v, z_l, params, cfg, trace);
    case FusionVariant::kCME:
    case FusionVariant::kCMEShared: return fuse_cme(z_v, z_l, params, cfg, trace);
  }
  throw ConfigError("fuse: unknown variant");
}

std::size_t vme_sequence_length(const ModelConfig& cfg) { return cfg.num_patches() + cfg.max_tokens + 1; }

void accumulate_seed_attention(const FusionTrace& trace, const ModelConfig& cfg, AttnStats& stats) {
  const std::size_t nv = cfg.num_patches(), nl = cfg.max_tokens;
  struct Source {
    const char* name;
    const AttentionTrace* attn;
    std::size_t visual, linguistic;  // segment lengths before the seed
  };
  std::vector<Source> sources;
  if (!trace.joint.layers.empty()) sources.push_back({"joint", &trace.joint, nv, nl});
  if (!trace.linguistic_seed.layers.empty()) sources.push_back({"linguistic_seed", &trace.linguistic_seed, 0, nl});
  if (!trace.visual_linguistic.layers.empty() && stats.not_applicable.empty()) {
    stats.not_applicable.push_back("visual_linguistic");
  }

  std::size_t slot = 0;
  for (const auto& src : sources) {
    for (std::size_t layer = 0; layer < src.attn->layers.size(); ++layer, ++slot) {
      const auto& heads = src.attn->layers[layer];
      double av = 0.0, al = 0.0, as = 0.0;
      for (const auto& a : heads) {
        const std::size_t n = a.dim(0), row = n - 1;
        if (n != src.visual + src.linguistic + 1) {
          throw ConfigError("attention probe: stack length " + std::to_string(n) + " does not match config");
        }
        for (std::size_t j = 0; j < src.visual; ++j) av += a.at(row, j);
        for (std::size_t j = src.visual; j < src.visual + src.linguistic; ++j) al += a.at(row, j);
        as += a.at(row, row);
      }
      const double inv = 1.0 / static_cast<double>(heads.size());
      if (stats.layers.size() <= slot) {
        LayerAttention la;
        la.stack = src.name;
        la.layer = layer + 1;
        if (src.visual > 0) la.visual = 0.0;
        stats.layers.push_back(la);
      }
      LayerAttention& la = stats.layers[slot];
      if (la.visual) *la.visual += av * inv;
      la.linguistic += al * inv;
      la.self += as * inv;
    }
  }
  ++stats.samples;
}

void finalize_attention(AttnStats& stats) {
  if (stats.samples == 0) return;
  const double inv = 1.0 / static_cast<double>(stats.samples);
  for (auto& la : stats.layers) {
    if (la.visual) *la.visual *= inv;
    la.linguistic *= inv;
    la.self *= inv;
  }
}

FusionProfile profile_fusion(const ModelConfig& cfg) {
  const std::size_t d = cfg.fusion_dim, nv = cfg.num_patches(), nl = cfg.max_tokens;
  FusionProfile p;
  p.variant = cfg.fusion_variant;
  const std::size_t shared_params = d + 2 * cfg.vision_dim + cfg.vision_dim * d + d + 2 * cfg.language_dim +
                                    cfg.language_dim * d + d;
  const std::uint64_t projector_macs =
      static_cast<std::uint64_t>(nv) * cfg.vision_dim * d + static_cast<std::uint64_t>(nl) * cfg.language_dim * d;
  if (cfg.fusion_variant == FusionVariant::kVME) {
    const TransformerConfig joint = cfg.fusion_joint_encoder();
    p.params = encoder_block_param_count(joint);
    p.total_params = shared_params + encoder_param_count(joint);
    p.macs = projector_macs + encoder_macs(joint, nv + nl + 1);
  } else {
    const TransformerConfig sub = cfg.fusion_sub_encoder();
    p.params = 2 * encoder_block_param_count(sub);
    p.total_params = shared_params + 2 * encoder_param_count(sub);
    p.macs = projector_macs + encoder_macs(sub, nv + nl) + encoder_macs(sub, nl + 1);
  }
  return p;
}

}  // namespace restr
