#pragma once

// Naive, double-precision reference implementations used to cross-check the
// production kernels. These favor obviousness over speed: straight loops,
// no blocking, no threading. Outputs are rounded to f32 at the end so they
// can be compared elementwise against the fast paths.

#include <string>
#include <utility>
#include <vector>

#include "iformer/attention.hpp"
#include "iformer/nn_ops.hpp"
#include "iformer/tensor.hpp"

namespace iformer::ref {

// Seven-loop convolution, double accumulators.
Tensor conv2d_ref(const Tensor& x, const ConvParams& p);

// Triple-loop matrix product with the same transpose flags as matmul.
Tensor matmul_ref(const Tensor& a, const Tensor& b, bool transpose_a = false,
                  bool transpose_b = false);

// Max-subtracted softmax along the last axis, double accumulators.
Tensor softmax_lastdim_ref(const Tensor& x);

// Scaled dot-product attention on token-major operands, computed elementwise
// in double: scores -> softmax -> mix.
Tensor sha_ref(const Tensor& q, const Tensor& k, const Tensor& v, float scale);

// erf-based GELU evaluated in double.
Tensor gelu_ref(const Tensor& x);

// Full modulation-attention block evaluated in double end to end
// (projections, affine normalization, attention, gates, output projection).
// Input is [N, C, H, W]; global attention scope.
Tensor shma_forward_ref(const Tensor& x, const ShmaParams& p);

// Sum of all outputs of shma_forward_ref, kept in double. This is the scalar
// loss used by the finite-difference gradient checks.
double shma_loss_ref(const Tensor& x, const ShmaParams& p);

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst;  // e.g. "value_w[7]"
  std::vector<std::pair<std::string, double>> per_tensor;  // name -> max rel err
};

// Central finite differences (step h) of the summed-output loss against the
// analytic backward pass, for the input and every parameter tensor. The
// relative error denominator is floored at 1 so near-zero gradients compare
// absolutely.
GradCheckReport grad_check_shma(const Tensor& x, const ShmaParams& p, double h = 1e-3);

}  // namespace iformer::ref
