#include "iformer/cost.hpp"

namespace iformer {

namespace {

// MACs of one convolution on an h x w input; advances the shape.
long long conv_macs(const ConvParams& p, int64_t& h, int64_t& w) {
  int64_t kh = p.weight.extent(2), kw = p.weight.extent(3);
  int64_t oh = (h + 2 * p.padding - kh) / p.stride + 1;
  int64_t ow = (w + 2 * p.padding - kw) / p.stride + 1;
  long long per_out = static_cast<long long>(p.weight.extent(1)) * kh * kw;
  long long macs = static_cast<long long>(oh) * ow * p.weight.extent(0) * per_out;
  h = oh;
  w = ow;
  return macs;
}

long long conv_macs_same(const ConvParams& p, int64_t h, int64_t w) {
  int64_t th = h, tw = w;
  return conv_macs(p, th, tw);
}

long long attention_block_macs(const AttentionBlock& blk, int64_t h, int64_t w) {
  long long macs = 0;
  if (blk.pos) macs += conv_macs_same(blk.pos->conv, h, w);

  if (const ShmaParams* p = std::get_if<ShmaParams>(&blk.core)) {
    bool windowed =
        blk.role == WindowRole::PartitionEntry || blk.role == WindowRole::Interior;
    macs += count_macs_shma(*p, h, w, windowed ? blk.window : 0);
    macs += count_macs_ffn(blk.ffn_expand, blk.ffn_project, h, w);
    return macs;
  }

  const MhaParams& p = std::get<MhaParams>(blk.core);
  int64_t l = h * w;
  int64_t c = p.query.conv.weight.extent(0);
  // Four full-width projections, then per-scope attention. Head count does
  // not move the total: h heads each cost L^2*(C/h) per matmul.
  macs += 4 * conv_macs_same(p.query.conv, h, w);
  macs += static_cast<long long>(l) * l * c * 2;
  macs += count_macs_ffn(blk.ffn_expand, blk.ffn_project, h, w);
  return macs;
}

}  // namespace

long long count_macs_shma(const ShmaParams& p, int64_t h, int64_t w, int window) {
  int64_t c = p.value.conv.weight.extent(0);
  int64_t d = p.query.conv.weight.extent(0);
  int64_t l = h * w;
  long long macs = static_cast<long long>(l) * (2 * d * c + 3 * c * c);  // q,k @ d; v,m,o @ C
  if (window > 0) {
    int64_t lw = static_cast<int64_t>(window) * window;
    int64_t scopes = l / lw;
    macs += static_cast<long long>(scopes) * lw * lw * (d + c);
  } else {
    macs += static_cast<long long>(l) * l * (d + c);
  }
  macs += static_cast<long long>(l) * c;  // gated elementwise product
  return macs;
}

long long count_macs_ffn(const ConvBn& expand, const ConvBn& project, int64_t h, int64_t w) {
  return conv_macs_same(expand.conv, h, w) + conv_macs_same(project.conv, h, w);
}

long long shma_complexity_formula(long long h, long long w, long long c, long long p,
                                  long long r) {
  if (h <= 0 || w <= 0 || c <= 0 || p <= 0 || r <= 0) {
    throw ArgumentError("complexity formula arguments must be positive");
  }
  long long hw = h * w;
  if (hw % (p * p) != 0) {
    throw ArgumentError("H*W must be divisible by P^2");
  }
  if (c % r != 0) {
    throw ArgumentError("C must be divisible by R");
  }
  long long d = c / r;
  long long projections = hw * (3 * c * c + 2 * c * d);  // 4HWC^2 at R=2
  long long attention = p * p * hw * (c + d);            // 2P^2HWC at R=1
  long long product = hw * c;
  return projections + attention + product;
}

long long count_params(const Model& m) {
  long long total = 0;
  for_each_weight(m, [&](const std::string&, const Tensor& t, WeightRole role) {
    if (role == WeightRole::Param) total += t.numel();
  });
  return total;
}

CostReport cost_report(const Model& m, int resolution) {
  if (resolution <= 0 || resolution % 32 != 0) {
    throw ArgumentError("resolution must be a positive multiple of 32");
  }
  CostReport report;
  report.params = count_params(m);

  int64_t h = resolution, w = resolution;
  report.stem_macs += conv_macs(m.stem1.conv, h, w);
  report.stem_macs += conv_macs(m.stem2.conv, h, w);
  report.stem_macs += conv_macs(m.stem3.conv, h, w);

  for (int s = 0; s < 4; ++s) {
    const Stage& stage = m.stages[s];
    long long stage_total = 0;
    if (stage.downsample) stage_total += conv_macs(stage.downsample->conv, h, w);
    for (size_t b = 0; b < stage.blocks.size(); ++b) {
      BlockCost cost;
      cost.stage = s;
      cost.index = static_cast<int>(b);
      if (const ConvBlock* cb = std::get_if<ConvBlock>(&stage.blocks[b])) {
        cost.kind = "conv";
        cost.macs = conv_macs_same(cb->dw.conv, h, w) + conv_macs_same(cb->expand.conv, h, w) +
                    conv_macs_same(cb->project.conv, h, w);
      } else {
        const AttentionBlock& ab = std::get<AttentionBlock>(stage.blocks[b]);
        switch (ab.kind) {
          case BlockKind::Shma: cost.kind = "shma"; break;
          case BlockKind::Sha: cost.kind = "sha"; break;
          case BlockKind::Mha: cost.kind = "mha"; break;
          default: cost.kind = "window-shma"; break;
        }
        cost.macs = attention_block_macs(ab, h, w);
      }
      stage_total += cost.macs;
      report.blocks.push_back(std::move(cost));
    }
    report.stage_macs[s] = stage_total;
  }

  // Pool and BN are free; the classifier linear runs once per sample.
  report.head_macs = m.head.weight.extent(0) * m.head.weight.extent(1);

  report.macs = report.stem_macs + report.head_macs;
  for (long long v : report.stage_macs) report.macs += v;
  return report;
}

long long count_macs(const Model& m, int resolution) { return cost_report(m, resolution).macs; }

}  // namespace iformer
