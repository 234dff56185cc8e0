#include "iformer/nn_ops.hpp"

#include <algorithm>
#include <cmath>

namespace iformer {

void validate_conv(const ConvParams& p) {
  if (p.weight.rank() != 4) {
    throw ShapeError("conv weight must be rank-4 [Cout,Cin/g,Kh,Kw], got " + p.weight.shape_str());
  }
  if (p.stride < 1) throw ArgumentError("conv stride must be >= 1");
  if (p.padding < 0) throw ArgumentError("conv padding must be >= 0");
  if (p.groups < 1) throw ArgumentError("conv groups must be >= 1");
  if (p.weight.extent(0) % p.groups != 0) {
    throw ShapeError("conv output channels not divisible by groups");
  }
  if (p.bias && (p.bias->rank() != 1 || p.bias->extent(0) != p.weight.extent(0))) {
    throw ShapeError("conv bias must be [Cout]");
  }
}

void validate_bn(const BnParams& p) {
  int64_t c = p.gamma.rank() == 1 ? p.gamma.extent(0) : -1;
  if (c < 0 || p.beta.rank() != 1 || p.mean.rank() != 1 || p.var.rank() != 1 ||
      p.beta.extent(0) != c || p.mean.extent(0) != c || p.var.extent(0) != c) {
    throw ShapeError("bn parameter vectors must all be [C]");
  }
  if (p.eps < 0.0f || !std::isfinite(p.eps)) throw ArgumentError("bn eps must be non-negative");
  for (int64_t i = 0; i < c; ++i) {
    if (p.var.data()[i] < 0.0f) throw ArgumentError("bn running variance must be non-negative");
  }
}

Tensor conv2d(const Tensor& x, const ConvParams& p) {
  validate_conv(p);
  if (x.rank() != 4) throw ShapeError("conv2d input must be rank-4, got " + x.shape_str());
  int64_t n = x.extent(0), cin = x.extent(1), h = x.extent(2), w = x.extent(3);
  int64_t cout = p.weight.extent(0), cin_g = p.weight.extent(1);
  int64_t kh = p.weight.extent(2), kw = p.weight.extent(3);
  int64_t g = p.groups;
  if (cin % g != 0 || cin / g != cin_g) {
    throw ShapeError("conv2d channel mismatch: input " + x.shape_str() + ", weight " +
                     p.weight.shape_str() + ", groups " + std::to_string(g));
  }
  int64_t oh = (h + 2 * p.padding - kh) / p.stride + 1;
  int64_t ow = (w + 2 * p.padding - kw) / p.stride + 1;
  if (h + 2 * p.padding < kh || w + 2 * p.padding < kw || oh <= 0 || ow <= 0) {
    throw ShapeError("conv2d produces non-positive output extent for input " + x.shape_str());
  }

  Tensor out({n, cout, oh, ow});
  int64_t cout_g = cout / g;
  int64_t stride = p.stride, pad = p.padding;

  // Row-sweep accumulation: for each kernel tap, add a scaled input row to
  // the output row. Inner loops stay contiguous over output width.
  parallel_for(n * cout, [&](int64_t lo, int64_t hi) {
    for (int64_t job = lo; job < hi; ++job) {
      int64_t ni = job / cout;
      int64_t oc = job % cout;
      int64_t gi = oc / cout_g;
      float* out_plane = out.data() + (ni * cout + oc) * oh * ow;
      float init = p.bias ? p.bias->data()[oc] : 0.0f;
      std::fill(out_plane, out_plane + oh * ow, init);
      const float* w_base = p.weight.data() + oc * cin_g * kh * kw;
      for (int64_t ic = 0; ic < cin_g; ++ic) {
        const float* in_plane = x.data() + (ni * cin + gi * cin_g + ic) * h * w;
        for (int64_t r = 0; r < kh; ++r) {
          for (int64_t s = 0; s < kw; ++s) {
            float wv = w_base[(ic * kh + r) * kw + s];
            if (wv == 0.0f) continue;
            for (int64_t oy = 0; oy < oh; ++oy) {
              int64_t iy = oy * stride - pad + r;
              if (iy < 0 || iy >= h) continue;
              const float* in_row = in_plane + iy * w;
              float* out_row = out_plane + oy * ow;
              // Clip the output-x range so ix = ox*stride - pad + s stays in [0, w).
              int64_t ox_lo = 0;
              int64_t ix0 = -pad + s;
              if (ix0 < 0) ox_lo = (-ix0 + stride - 1) / stride;
              int64_t ox_hi = ow;  // exclusive
              int64_t ix_last = (ow - 1) * stride + ix0;
              if (ix_last >= w) ox_hi = (w - 1 - ix0) / stride + 1;
              if (ox_hi <= ox_lo) continue;
              const float* in_ptr = in_row + ox_lo * stride + ix0;
              if (stride == 1) {
                for (int64_t ox = ox_lo; ox < ox_hi; ++ox) {
                  out_row[ox] += wv * in_ptr[ox - ox_lo];
                }
              } else {
                for (int64_t ox = ox_lo; ox < ox_hi; ++ox) {
                  out_row[ox] += wv * in_row[ox * stride + ix0];
                }
              }
            }
          }
        }
      }
    }
  });
  return out;
}

Tensor batchnorm_infer(const Tensor& x, const BnParams& p) {
  validate_bn(p);
  if (x.rank() != 4 && x.rank() != 2) {
    throw ShapeError("batchnorm_infer expects rank-4 or rank-2 input, got " + x.shape_str());
  }
  int64_t c = x.extent(1);
  if (c != p.gamma.extent(0)) {
    throw ShapeError("batchnorm_infer channel mismatch: input " + x.shape_str() + ", params [" +
                     std::to_string(p.gamma.extent(0)) + "]");
  }
  int64_t n = x.extent(0);
  int64_t hw = x.rank() == 4 ? x.extent(2) * x.extent(3) : 1;

  Tensor out(x.shape());
  for (int64_t ci = 0; ci < c; ++ci) {
    float inv = 1.0f / std::sqrt(p.var.data()[ci] + p.eps);
    float a = p.gamma.data()[ci] * inv;
    float b = p.beta.data()[ci] - p.mean.data()[ci] * a;
    for (int64_t ni = 0; ni < n; ++ni) {
      const float* src = x.data() + (ni * c + ci) * hw;
      float* dst = out.data() + (ni * c + ci) * hw;
      for (int64_t i = 0; i < hw; ++i) dst[i] = a * src[i] + b;
    }
  }
  return out;
}

namespace {

constexpr float kInvSqrt2 = 0.70710678118654752f;

Tensor map(const Tensor& x, float (*fn)(float)) {
  Tensor out(x.shape());
  const float* src = x.data();
  float* dst = out.data();
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) dst[i] = fn(src[i]);
  return out;
}

float sigmoid_scalar(float v) {
  // Split on sign so the exponential never overflows.
  if (v >= 0.0f) {
    return 1.0f / (1.0f + std::exp(-v));
  }
  float e = std::exp(v);
  return e / (1.0f + e);
}

}  // namespace

Tensor gelu(const Tensor& x) {
  return map(x, +[](float v) { return v * 0.5f * (1.0f + std::erf(v * kInvSqrt2)); });
}

Tensor sigmoid(const Tensor& x) { return map(x, +[](float v) { return sigmoid_scalar(v); }); }

Tensor silu(const Tensor& x) {
  return map(x, +[](float v) { return v * sigmoid_scalar(v); });
}

Tensor softmax_lastdim(const Tensor& x) {
  int64_t k = x.extent(x.rank() - 1);
  int64_t rows = x.numel() / k;
  Tensor out(x.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const float* src = x.data() + r * k;
    float* dst = out.data() + r * k;
    float mx = src[0];
    for (int64_t i = 1; i < k; ++i) mx = std::max(mx, src[i]);
    float sum = 0.0f;
    for (int64_t i = 0; i < k; ++i) {
      dst[i] = std::exp(src[i] - mx);
      sum += dst[i];
    }
    float inv = 1.0f / sum;
    for (int64_t i = 0; i < k; ++i) dst[i] *= inv;
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool expects rank-4, got " + x.shape_str());
  int64_t n = x.extent(0), c = x.extent(1), hw = x.extent(2) * x.extent(3);
  Tensor out({n, c});
  for (int64_t ni = 0; ni < n; ++ni) {
    for (int64_t ci = 0; ci < c; ++ci) {
      const float* src = x.data() + (ni * c + ci) * hw;
      double acc = 0.0;
      for (int64_t i = 0; i < hw; ++i) acc += src[i];
      out.data()[ni * c + ci] = static_cast<float>(acc / static_cast<double>(hw));
    }
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.extent(1) != w.extent(1)) {
    throw ShapeError("linear expects x [N,Cin] and w [Cout,Cin], got " + x.shape_str() + " and " +
                     w.shape_str());
  }
  int64_t n = x.extent(0), cin = x.extent(1), cout = w.extent(0);
  if (b && (b->rank() != 1 || b->extent(0) != cout)) throw ShapeError("linear bias must be [Cout]");
  Tensor out({n, cout});
  for (int64_t ni = 0; ni < n; ++ni) {
    const float* xr = x.data() + ni * cin;
    for (int64_t oc = 0; oc < cout; ++oc) {
      const float* wr = w.data() + oc * cin;
      float acc = b ? b->data()[oc] : 0.0f;
      for (int64_t i = 0; i < cin; ++i) acc += xr[i] * wr[i];
      out.data()[ni * cout + oc] = acc;
    }
  }
  return out;
}

Tensor apply(const ConvBn& layer, const Tensor& x) {
  Tensor y = conv2d(x, layer.conv);
  if (layer.bn) y = batchnorm_infer(y, *layer.bn);
  if (layer.act == Act::Gelu) y = gelu(y);
  return y;
}

}  // namespace iformer
