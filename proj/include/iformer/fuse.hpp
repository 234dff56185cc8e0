// Batch-norm folding: inference BN collapses into the adjacent linear map.
#pragma once

#include "iformer/model.hpp"

namespace iformer {

// conv -> BN  becomes a single conv with w' = w * gamma/sqrt(var+eps) and
// b' = (b - mean) * gamma/sqrt(var+eps) + beta. The result always carries a
// bias.
ConvParams fold_bn_into_conv(const ConvParams& conv, const BnParams& bn);

// Returns a copy with every Conv+BN pair folded and the classifier head's
// BN absorbed into its linear layer; the result holds zero BN parameters.
// Fusing an already fused model is the identity.
Model fuse_model(const Model& m);

}  // namespace iformer
