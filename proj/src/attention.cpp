#include "iformer/attention.hpp"

#include <algorithm>
#include <cmath>

namespace iformer {

namespace {

void check_proj(const ConvBn& layer, int64_t in_ch, int64_t out_ch, const char* name) {
  const Tensor& w = layer.conv.weight;
  if (w.rank() != 4 || w.extent(2) != 1 || w.extent(3) != 1) {
    throw ShapeError(std::string(name) + " projection must be a 1x1 conv, got " + w.shape_str());
  }
  if (w.extent(0) != out_ch || w.extent(1) != in_ch) {
    throw ShapeError(std::string(name) + " projection expects [" + std::to_string(out_ch) + "," +
                     std::to_string(in_ch) + ",1,1], got " + w.shape_str());
  }
  if (layer.conv.stride != 1 || layer.conv.padding != 0 || layer.conv.groups != 1) {
    throw ArgumentError(std::string(name) + " projection must be stride 1, pad 0, ungrouped");
  }
}

void scale_inplace(Tensor& t, float s) {
  float* p = t.data();
  int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) p[i] *= s;
}

}  // namespace

void validate_shma(const ShmaParams& p) {
  int64_t c = p.value.conv.weight.extent(0);
  int64_t d = p.query.conv.weight.extent(0);
  check_proj(p.query, c, d, "query");
  check_proj(p.key, c, d, "key");
  check_proj(p.value, c, c, "value");
  check_proj(p.feature, c, c, "feature");
  check_proj(p.out, c, c, "out");
  if (d > c) throw ArgumentError("query/key width must not exceed the channel width");
  float want = 1.0f / std::sqrt(static_cast<float>(d));
  if (!(p.attn_scale > 0.0f) || std::abs(p.attn_scale - want) > 1e-6f * want) {
    throw ArgumentError("attn_scale must equal d^-0.5");
  }
}

void validate_mha(const MhaParams& p) {
  int64_t c = p.query.conv.weight.extent(0);
  check_proj(p.query, c, c, "query");
  check_proj(p.key, c, c, "key");
  check_proj(p.value, c, c, "value");
  check_proj(p.out, c, c, "out");
  if (p.num_heads < 1) throw ArgumentError("num_heads must be >= 1");
  if (c % p.num_heads != 0) {
    throw ShapeError("channels " + std::to_string(c) + " not divisible by " +
                     std::to_string(p.num_heads) + " heads");
  }
}

void validate_cpe(const CpeParams& p, int64_t channels) {
  const Tensor& w = p.conv.weight;
  if (w.rank() != 4 || w.extent(0) != channels || w.extent(1) != 1 || w.extent(2) != 3 ||
      w.extent(3) != 3) {
    throw ShapeError("cpe expects a depthwise 3x3 weight [C,1,3,3], got " + w.shape_str());
  }
  if (p.conv.groups != channels || p.conv.stride != 1 || p.conv.padding != 1) {
    throw ArgumentError("cpe must be depthwise with stride 1 and padding 1");
  }
  if (!p.conv.bias) throw ArgumentError("cpe carries a bias");
}

Tensor sha(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) {
    throw ShapeError("sha expects rank-3 [N,L,d] inputs");
  }
  int64_t n = q.extent(0), l = q.extent(1), d = q.extent(2);
  if (k.extent(0) != n || k.extent(1) != l || k.extent(2) != d || v.extent(0) != n ||
      v.extent(1) != l) {
    throw ShapeError("sha operand shapes disagree: " + q.shape_str() + ", " + k.shape_str() +
                     ", " + v.shape_str());
  }
  Tensor scores = matmul(q, k, false, true);  // [N,L,L]
  scale_inplace(scores, 1.0f / std::sqrt(static_cast<float>(d)));
  Tensor probs = softmax_lastdim(scores);
  return matmul(probs, v);  // [N,L,Cv]
}

Tensor shma_context(const Tensor& x, const ShmaParams& p) {
  validate_shma(p);
  if (x.rank() != 4) throw ShapeError("shma expects rank-4 input, got " + x.shape_str());
  int64_t n = x.extent(0), h = x.extent(2), w = x.extent(3);
  int64_t c = p.value.conv.weight.extent(0);
  if (x.extent(1) != c) {
    throw ShapeError("shma channel mismatch: input " + x.shape_str() + ", params expect C=" +
                     std::to_string(c));
  }
  int64_t d = p.query.conv.weight.extent(0);
  int64_t l = h * w;

  // Projected activations stay channel-major [N,ch,L]; the transposed-read
  // matmuls below do the rest, so no layout change ever happens here.
  Tensor qf = reshape(apply(p.query, x), {n, d, l});
  Tensor kf = reshape(apply(p.key, x), {n, d, l});
  Tensor vf = reshape(apply(p.value, x), {n, c, l});

  Tensor scores = matmul(qf, kf, true, false);  // [N,L,L], row = query token
  scale_inplace(scores, p.attn_scale);
  Tensor probs = softmax_lastdim(scores);
  Tensor ctx = matmul(vf, probs, false, true);  // [N,C,L]
  return reshape(ctx, {n, c, h, w});
}

namespace {

Tensor gate(const Tensor& z) {
  Tensor g = sigmoid(z);
  for (float& v : g.vec()) v = std::clamp(v, kGateMin, kGateMax);
  return g;
}

}  // namespace

Tensor shma_modulation(const Tensor& x, const ShmaParams& p) {
  Tensor ctx = shma_context(x, p);
  Tensor feat = apply(p.feature, x);
  return mul(gate(feat), gate(ctx));
}

Tensor shma_forward(const Tensor& x, const ShmaParams& p) {
  return apply(p.out, shma_modulation(x, p));
}

Tensor mha_forward(const Tensor& x, const MhaParams& p, std::vector<Tensor>* head_outputs) {
  validate_mha(p);
  if (x.rank() != 4) throw ShapeError("mha expects rank-4 input, got " + x.shape_str());
  int64_t n = x.extent(0), h = x.extent(2), w = x.extent(3);
  int64_t c = p.query.conv.weight.extent(0);
  if (x.extent(1) != c) {
    throw ShapeError("mha channel mismatch: input " + x.shape_str() + ", params expect C=" +
                     std::to_string(c));
  }
  int64_t heads = p.num_heads, dh = c / heads, l = h * w;

  // The conventional pipeline: split heads, run batched GEMMs on
  // head-major [N*h,L,dh] blocks, merge back. The splits and the merge are
  // physical reorders -- exactly the traffic the single-head path avoids.
  Tensor q = permute(reshape(apply(p.query, x), {n, heads, dh, l}), {0, 1, 3, 2});
  Tensor k = reshape(apply(p.key, x), {n, heads, dh, l});
  Tensor v = permute(reshape(apply(p.value, x), {n, heads, dh, l}), {0, 1, 3, 2});

  Tensor scores = matmul(reshape(q, {n * heads, l, dh}), reshape(k, {n * heads, dh, l}));
  scale_inplace(scores, 1.0f / std::sqrt(static_cast<float>(dh)));
  Tensor probs = softmax_lastdim(scores);
  Tensor ctx = matmul(probs, reshape(v, {n * heads, l, dh}));  // [N*h,L,dh]

  if (head_outputs) {
    head_outputs->clear();
    for (int64_t hi = 0; hi < heads; ++hi) {
      Tensor head({n, l, dh});
      for (int64_t ni = 0; ni < n; ++ni) {
        const float* src = ctx.data() + (ni * heads + hi) * l * dh;
        std::copy(src, src + l * dh, head.data() + ni * l * dh);
      }
      head_outputs->push_back(std::move(head));
    }
  }

  Tensor merged = permute(reshape(ctx, {n, heads, l, dh}), {0, 1, 3, 2});  // [N,h,dh,L]
  return apply(p.out, reshape(merged, {n, c, h, w}));
}

Tensor sha_block_forward(const Tensor& x, const MhaParams& p) {
  validate_mha(p);
  if (p.num_heads != 1) {
    throw ArgumentError("sha_block_forward requires num_heads == 1");
  }
  if (x.rank() != 4) throw ShapeError("sha block expects rank-4 input, got " + x.shape_str());
  int64_t n = x.extent(0), h = x.extent(2), w = x.extent(3);
  int64_t c = p.query.conv.weight.extent(0);
  if (x.extent(1) != c) {
    throw ShapeError("sha block channel mismatch: input " + x.shape_str() + ", params expect C=" +
                     std::to_string(c));
  }
  int64_t l = h * w;

  Tensor qf = reshape(apply(p.query, x), {n, c, l});
  Tensor kf = reshape(apply(p.key, x), {n, c, l});
  Tensor vf = reshape(apply(p.value, x), {n, c, l});

  Tensor scores = matmul(qf, kf, true, false);
  scale_inplace(scores, 1.0f / std::sqrt(static_cast<float>(c)));
  Tensor probs = softmax_lastdim(scores);
  Tensor ctx = matmul(vf, probs, false, true);
  return apply(p.out, reshape(ctx, {n, c, h, w}));
}

Tensor cpe(const Tensor& x, const CpeParams& p) {
  if (x.rank() != 4) throw ShapeError("cpe expects rank-4 input, got " + x.shape_str());
  validate_cpe(p, x.extent(1));
  return add(x, conv2d(x, p.conv));
}

HeadSimilarity head_cosine_similarity(const std::vector<Tensor>& heads) {
  if (heads.size() < 2) {
    throw ArgumentError("head similarity needs at least two heads");
  }
  for (const Tensor& t : heads) {
    if (t.rank() != 3 || !t.same_shape(heads[0])) {
      throw ShapeError("head tensors must all be rank-3 [N,L,dh] with one shape");
    }
  }
  int64_t n = heads[0].extent(0), l = heads[0].extent(1), dh = heads[0].extent(2);
  HeadSimilarity result;
  double total = 0.0;
  long long count = 0;
  for (size_t a = 0; a + 1 < heads.size(); ++a) {
    for (size_t b = a + 1; b < heads.size(); ++b) {
      for (int64_t t = 0; t < n * l; ++t) {
        const float* va = heads[a].data() + t * dh;
        const float* vb = heads[b].data() + t * dh;
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (int64_t i = 0; i < dh; ++i) {
          dot += static_cast<double>(va[i]) * vb[i];
          na += static_cast<double>(va[i]) * va[i];
          nb += static_cast<double>(vb[i]) * vb[i];
        }
        ++count;
        if (na == 0.0 || nb == 0.0) {
          ++result.zero_norm_pairs;  // contributes 0 to the mean
        } else {
          total += dot / (std::sqrt(na) * std::sqrt(nb));
        }
      }
    }
  }
  result.mean_cosine = count > 0 ? total / static_cast<double>(count) : 0.0;
  return result;
}

}  // namespace iformer
