// Single-head modulation attention, the multi-head baseline it is measured
// against, and the conditional position encoding both share.
//
// The single-head paths run entirely on channel-major [N,C,H,W] activations
// using transposed-read matmuls, so they never emit a physical permute. The
// multi-head path materializes head-major layouts the way conventional
// attention kernels do, and its permutes are recorded by the layout counter.
#pragma once

#include <optional>
#include <vector>

#include "iformer/nn_ops.hpp"

namespace iformer {

// Projections are 1x1 convolutions; each carries inference BN until folding
// removes it. query/key map C -> d (d <= C); value/feature/out keep full
// width. attn_scale must equal d^-0.5.
struct ShmaParams {
  ConvBn query;
  ConvBn key;
  ConvBn value;
  ConvBn feature;
  ConvBn out;
  float attn_scale = 0.0f;
};

struct MhaParams {
  ConvBn query;
  ConvBn key;
  ConvBn value;
  ConvBn out;
  int num_heads = 1;
};

// Depthwise 3x3 with bias, applied residually: x + dwconv(x).
struct CpeParams {
  ConvParams conv;
};

void validate_shma(const ShmaParams& p);
void validate_mha(const MhaParams& p);
void validate_cpe(const CpeParams& p, int64_t channels);

// Plain single-head scaled dot-product attention on token-major tensors:
// q,k [N,L,d], v [N,L,Cv] -> softmax(q k^T / sqrt(d)) v. Zero permutes.
Tensor sha(const Tensor& q, const Tensor& k, const Tensor& v);

// The attention branch of SHMA before any sigmoid: single-head attention
// over the projected q/k/v, computed channel-major. [N,C,H,W] -> [N,C,H,W].
Tensor shma_context(const Tensor& x, const ShmaParams& p);

// The two modulation gates are sigmoids nudged off the exact 0/1 boundary:
// a correctly-rounded sigmoid collapses to 1.0f beyond |z| ~ 17 and to 0.0f
// below z ~ -88, which would let the gated product touch the closed ends of
// the unit interval. Clamping each gate to [2^-62, 1 - 2^-24] moves values by
// at most one ulp of the true sigmoid while keeping the product a strictly
// positive normal float below 1 for any finite input.
inline constexpr float kGateMin = 0x1p-62f;
inline constexpr float kGateMax = 1.0f - 0x1p-24f;

// gate(feature branch) * gate(attention branch) -- the product that feeds
// the output projection. Every element lies strictly inside (0,1).
Tensor shma_modulation(const Tensor& x, const ShmaParams& p);

// Full block: out-projection of the modulation product, then BN.
Tensor shma_forward(const Tensor& x, const ShmaParams& p);

// Conventional multi-head attention with h heads, per-head scale
// (C/h)^-0.5. Splitting and merging heads costs three physical permutes.
// When head_outputs is given it receives h tensors [N,L,C/h].
Tensor mha_forward(const Tensor& x, const MhaParams& p,
                   std::vector<Tensor>* head_outputs = nullptr);

// Single-head attention block without the modulation branch: channel-major
// attention followed by the output projection. num_heads must be 1; the
// layout counter stays untouched. This is what the sha-baseline runs.
Tensor sha_block_forward(const Tensor& x, const MhaParams& p);

Tensor cpe(const Tensor& x, const CpeParams& p);

struct HeadSimilarity {
  double mean_cosine = 0.0;
  long long zero_norm_pairs = 0;  // token pairs skipped because a norm was 0
};

// Mean pairwise cosine similarity between per-head outputs [N,L,dh],
// averaged over head pairs and token positions.
HeadSimilarity head_cosine_similarity(const std::vector<Tensor>& heads);

struct BnGrads {
  Tensor gamma;
  Tensor beta;
};

struct ShmaGradients {
  Tensor input;  // [N,C,H,W]
  Tensor query_w, key_w, value_w, feature_w, out_w;
  BnGrads query_bn, key_bn, value_bn, feature_bn, out_bn;
};

// Analytic gradients of shma_forward for verification: given d(loss)/d(out),
// returns gradients for the input, all five projection weights, and all five
// BN gamma/beta pairs. Running statistics are treated as constants.
ShmaGradients shma_backward(const Tensor& x, const ShmaParams& p, const Tensor& grad_out);

}  // namespace iformer
