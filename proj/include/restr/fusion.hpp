#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "restr/config.hpp"
#include "restr/init.hpp"
#include "restr/tensor.hpp"
#include "restr/transformer.hpp"

namespace restr {

struct FusionParams {
  Tensor seed;  // class seed embedding e_s, 1 x D
  LayerNormParams visual_norm;
  Tensor visual_proj_w, visual_proj_b;  // D_v -> D
  LayerNormParams linguistic_norm;
  Tensor linguistic_proj_w, linguistic_proj_b;  // D_l -> D
  EncoderParams joint;              // kVME
  EncoderParams visual_linguistic;  // theta_vl (kIME, kCME, kCMEShared)
  EncoderParams linguistic_seed;    // theta_ls (kIME, kCME, kCMEShared)

  static FusionParams init(const ModelConfig& cfg, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct ProjectedFeatures {
  Tensor visual;      // N_v x D
  Tensor linguistic;  // N_l x D
};

// LN then a modality-specific linear layer to the common width D.
ProjectedFeatures project(const Tensor& z_v, const Tensor& z_l, const FusionParams& params);

struct FusionOutput {
  Tensor visual;      // z_v', N_v x D
  Tensor seed;        // e_s', 1 x D (the adaptive classifier)
  Tensor linguistic;  // z_l', N_l x D
};

// Attention captured per stack; stacks a variant does not run stay empty.
struct FusionTrace {
  AttentionTrace joint;
  AttentionTrace visual_linguistic;
  AttentionTrace linguistic_seed;
};

// [z_v', z_l'] = T([z_v, z_l]; theta_vl);  e_s' = T([z_l', e_s]; theta_ls) at the seed row.
FusionOutput fuse_cme(const Tensor& z_v, const Tensor& z_l, const FusionParams& params, const ModelConfig& cfg,
                      FusionTrace* trace = nullptr);
// One stack over [z_v, z_l, e_s].
FusionOutput fuse_vme(const Tensor& z_v, const Tensor& z_l, const FusionParams& params, const ModelConfig& cfg,
                      FusionTrace* trace = nullptr);
// As kCME but the seed stack reads the projected z_l, never z_l'.
FusionOutput fuse_ime(const Tensor& z_v, const Tensor& z_l, const FusionParams& params, const ModelConfig& cfg,
                      FusionTrace* trace = nullptr);
// Dispatches on cfg.fusion_variant (kCMEShared runs fuse_cme with tied weights).
FusionOutput fuse(const Tensor& z_v, const Tensor& z_l, const FusionParams& params, const ModelConfig& cfg,
                  FusionTrace* trace = nullptr);

// Length of the sequence fed to the VME stack: N_v + N_l + 1.
std::size_t vme_sequence_length(const ModelConfig& cfg);

// Seed-row attention of one layer split into segments. `visual` is absent
// for stacks without visual tokens.
struct LayerAttention {
  std::string stack;  // "joint" or "linguistic_seed"
  std::size_t layer = 0;
  std::optional<double> visual;
  double linguistic = 0.0;
  double self = 0.0;
};

struct AttnStats {
  std::vector<LayerAttention> layers;
  std::size_t samples = 0;
  // Stacks that never see the seed (theta_vl), reported as not applicable.
  std::vector<std::string> not_applicable;
};

// Splits the seed row of every layer's attention (averaged over heads) for
// one forward pass. Accumulates into `stats` as a running sum; call
// finalize_attention() after the last sample.
void accumulate_seed_attention(const FusionTrace& trace, const ModelConfig& cfg, AttnStats& stats);
void finalize_attention(AttnStats& stats);

struct FusionProfile {
  FusionVariant variant = FusionVariant::kCME;
  // Parameters of the fusion transformer layers (the quantity compared
  // across variants).
  std::size_t params = 0;
  // Everything owned by the fusion encoder: layers, terminal norms,
  // projectors and the class seed.
  std::size_t total_params = 0;
  // Multiply-accumulates of one forward pass: projectors and all stacks.
  std::uint64_t macs = 0;
};

FusionProfile profile_fusion(const ModelConfig& cfg);

}  // namespace restr
