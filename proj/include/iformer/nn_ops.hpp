// Convolution, batch norm (inference), activations, pooling, linear.
#pragma once

#include <optional>

#include "iformer/tensor.hpp"

namespace iformer {

struct ConvParams {
  Tensor weight;               // [Cout, Cin/groups, Kh, Kw]
  std::optional<Tensor> bias;  // [Cout]
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

struct BnParams {
  Tensor gamma;  // [C]
  Tensor beta;   // [C]
  Tensor mean;   // [C] running mean
  Tensor var;    // [C] running variance
  float eps = 1e-5f;
};

void validate_conv(const ConvParams& p);
void validate_bn(const BnParams& p);

// Cross-correlation over zero-padded input: x [N,Cin,H,W] -> [N,Cout,H',W']
// with H' = (H + 2*pad - Kh)/stride + 1.
Tensor conv2d(const Tensor& x, const ConvParams& p);

// Per-channel affine normalization with frozen statistics. Accepts rank-4
// [N,C,H,W] or rank-2 [N,C].
Tensor batchnorm_infer(const Tensor& x, const BnParams& p);

// Exact-erf form: x * 0.5 * (1 + erf(x / sqrt(2))).
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);

// Softmax along the last axis, max-subtracted for stability.
Tensor softmax_lastdim(const Tensor& x);

// [N,C,H,W] -> [N,C] spatial mean.
Tensor global_avg_pool(const Tensor& x);

// x [N,Cin] * w [Cout,Cin]^T + b -> [N,Cout].
Tensor linear(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b);

enum class Act { None, Gelu };

// A convolution optionally followed by inference BN and an activation --
// the layer unit the whole network is assembled from. `bn` is empty once
// folding has absorbed it into the convolution.
struct ConvBn {
  ConvParams conv;
  std::optional<BnParams> bn;
  Act act = Act::None;
};

Tensor apply(const ConvBn& layer, const Tensor& x);

}  // namespace iformer
