// Exact parameter and multiply-accumulate accounting.
//
// Conventions: conv costs H'*W'*Cout*K^2*Cin/groups; linear costs Cin*Cout
// per sample; attention costs L^2*d_qk + L^2*Cv per scope (window or full
// map); the gated elementwise product costs H*W*C; BN, activations,
// residual adds, softmax, and pooling are free. Parameters count conv and
// linear weights and biases plus BN gamma/beta; running statistics are
// buffers, not parameters.
#pragma once

#include <array>
#include <string>
#include <vector>

#include "iformer/model.hpp"

namespace iformer {

long long count_params(const Model& m);

long long count_macs(const Model& m, int resolution);

struct BlockCost {
  int stage = 0;      // 0-based
  int index = 0;      // block position within the stage
  std::string kind;
  long long macs = 0;
};

struct CostReport {
  long long params = 0;
  long long macs = 0;
  long long stem_macs = 0;
  long long head_macs = 0;
  std::array<long long, 4> stage_macs{};
  std::vector<BlockCost> blocks;
};

CostReport cost_report(const Model& m, int resolution);

// Cost of one SHMA attention block body (projections + attention + gated
// product; no CPE, no FFN) on an H x W map. window = 0 means global
// attention; otherwise attention runs per P x P window.
long long count_macs_shma(const ShmaParams& p, int64_t h, int64_t w, int window);

// Cost of the two-layer FFN on an H x W map.
long long count_macs_ffn(const ConvBn& expand, const ConvBn& project, int64_t h, int64_t w);

// Closed-form cost of a SHMA block body with channel width C, query/key
// reduction ratio R (d = C/R), window edge P: (3 + 2/R)*HWC^2 + HWC +
// (1 + 1/R)*P^2*HWC. At R=2 the projection part is exactly 4HWC^2; at R=1
// the attention part is exactly 2P^2HWC. Integer-exact; must equal
// count_macs_shma for matching parameters.
long long shma_complexity_formula(long long h, long long w, long long c, long long p,
                                  long long r);

}  // namespace iformer
