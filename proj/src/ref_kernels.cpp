#include "iformer/ref_kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace iformer::ref {

Tensor conv2d_ref(const Tensor& x, const ConvParams& p) {
  validate_conv(p);
  int64_t n = x.extent(0), cin = x.extent(1), h = x.extent(2), w = x.extent(3);
  int64_t cout = p.weight.extent(0), cpg = p.weight.extent(1);
  int64_t kh = p.weight.extent(2), kw = p.weight.extent(3);
  int64_t oh = (h + 2 * p.padding - kh) / p.stride + 1;
  int64_t ow = (w + 2 * p.padding - kw) / p.stride + 1;
  int64_t g = p.groups;
  if (cin != cpg * g) throw ShapeError("conv2d_ref: channel/group mismatch");
  Tensor out({n, cout, oh, ow});
  int64_t opg = cout / g;
  for (int64_t ni = 0; ni < n; ++ni) {
    for (int64_t oc = 0; oc < cout; ++oc) {
      int64_t gi = oc / opg;
      for (int64_t oy = 0; oy < oh; ++oy) {
        for (int64_t ox = 0; ox < ow; ++ox) {
          double acc = p.bias ? double(p.bias->at({oc})) : 0.0;
          for (int64_t ic = 0; ic < cpg; ++ic) {
            for (int64_t r = 0; r < kh; ++r) {
              for (int64_t s = 0; s < kw; ++s) {
                int64_t iy = oy * p.stride - p.padding + r;
                int64_t ix = ox * p.stride - p.padding + s;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += double(x.at({ni, gi * cpg + ic, iy, ix})) *
                       double(p.weight.at({oc, ic, r, s}));
              }
            }
          }
          out.at({ni, oc, oy, ox}) = float(acc);
        }
      }
    }
  }
  return out;
}

Tensor matmul_ref(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  if (a.rank() != b.rank() || (a.rank() != 2 && a.rank() != 3)) {
    throw ShapeError("matmul_ref: operands must share rank 2 or 3");
  }
  int64_t batch = a.rank() == 3 ? a.extent(0) : 1;
  int64_t ar = a.extent(a.rank() - 2), ac = a.extent(a.rank() - 1);
  int64_t br = b.extent(b.rank() - 2), bc = b.extent(b.rank() - 1);
  int64_t m = transpose_a ? ac : ar, ka = transpose_a ? ar : ac;
  int64_t kb = transpose_b ? bc : br, nn = transpose_b ? br : bc;
  if (ka != kb) throw ShapeError("matmul_ref: inner extents differ");
  Tensor out = a.rank() == 3 ? Tensor({batch, m, nn}) : Tensor({m, nn});
  for (int64_t bi = 0; bi < batch; ++bi) {
    const float* pa = a.data() + bi * ar * ac;
    const float* pb = b.data() + bi * br * bc;
    float* po = out.data() + bi * m * nn;
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t j = 0; j < nn; ++j) {
        double acc = 0.0;
        for (int64_t t = 0; t < ka; ++t) {
          double av = transpose_a ? pa[t * ac + i] : pa[i * ac + t];
          double bv = transpose_b ? pb[j * bc + t] : pb[t * bc + j];
          acc += av * bv;
        }
        po[i * nn + j] = float(acc);
      }
    }
  }
  return out;
}

Tensor softmax_lastdim_ref(const Tensor& x) {
  int64_t cols = x.extent(x.rank() - 1);
  int64_t rows = x.numel() / cols;
  Tensor out(x.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const float* in = x.data() + r * cols;
    float* o = out.data() + r * cols;
    double mx = in[0];
    for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, double(in[c]));
    double sum = 0.0;
    std::vector<double> e(static_cast<size_t>(cols));
    for (int64_t c = 0; c < cols; ++c) {
      e[c] = std::exp(double(in[c]) - mx);
      sum += e[c];
    }
    for (int64_t c = 0; c < cols; ++c) o[c] = float(e[c] / sum);
  }
  return out;
}

Tensor sha_ref(const Tensor& q, const Tensor& k, const Tensor& v, float scale) {
  int64_t n = q.extent(0), l = q.extent(1), d = q.extent(2), cv = v.extent(2);
  if (k.extent(0) != n || k.extent(1) != l || k.extent(2) != d || v.extent(0) != n ||
      v.extent(1) != l) {
    throw ShapeError("sha_ref: operand shapes disagree");
  }
  Tensor out({n, l, cv});
  std::vector<double> row(static_cast<size_t>(l));
  for (int64_t ni = 0; ni < n; ++ni) {
    for (int64_t i = 0; i < l; ++i) {
      double mx = -1e300;
      for (int64_t j = 0; j < l; ++j) {
        double s = 0.0;
        for (int64_t t = 0; t < d; ++t) {
          s += double(q.at({ni, i, t})) * double(k.at({ni, j, t}));
        }
        row[j] = s * double(scale);
        mx = std::max(mx, row[j]);
      }
      double sum = 0.0;
      for (int64_t j = 0; j < l; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      for (int64_t c = 0; c < cv; ++c) {
        double acc = 0.0;
        for (int64_t j = 0; j < l; ++j) acc += row[j] / sum * double(v.at({ni, j, c}));
        out.at({ni, i, c}) = float(acc);
      }
    }
  }
  return out;
}

Tensor gelu_ref(const Tensor& x) {
  Tensor out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) {
    double v = x.data()[i];
    out.data()[i] = float(v * 0.5 * (1.0 + std::erf(v / std::sqrt(2.0))));
  }
  return out;
}

namespace {

struct AffineD {
  std::vector<double> a, b;  // y = a*z + b per channel
};

AffineD bn_affine(const std::optional<BnParams>& bn, int64_t c) {
  AffineD f;
  f.a.assign(static_cast<size_t>(c), 1.0);
  f.b.assign(static_cast<size_t>(c), 0.0);
  if (bn) {
    for (int64_t i = 0; i < c; ++i) {
      double inv = 1.0 / std::sqrt(double(bn->var.at({i})) + double(bn->eps));
      f.a[i] = double(bn->gamma.at({i})) * inv;
      f.b[i] = double(bn->beta.at({i})) - double(bn->mean.at({i})) * f.a[i];
    }
  }
  return f;
}

// 1x1 projection + optional bias + BN affine, all double. in: [Ci][L].
std::vector<double> project(const std::vector<double>& in, int64_t ci, int64_t l,
                            const ConvBn& layer) {
  int64_t co = layer.conv.weight.extent(0);
  AffineD f = bn_affine(layer.bn, co);
  std::vector<double> out(static_cast<size_t>(co * l));
  for (int64_t o = 0; o < co; ++o) {
    double bias = layer.conv.bias ? double(layer.conv.bias->at({o})) : 0.0;
    for (int64_t p = 0; p < l; ++p) {
      double acc = bias;
      for (int64_t i = 0; i < ci; ++i) {
        acc += double(layer.conv.weight.at({o, i, 0, 0})) * in[i * l + p];
      }
      out[o * l + p] = f.a[o] * acc + f.b[o];
    }
  }
  return out;
}

double gate_d(double z) {
  double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  return std::clamp(s, double(kGateMin), double(kGateMax));
}

// The whole block in double; returns the flat [N*C*L] output values
// before any rounding to f32.
std::vector<double> shma_core(const Tensor& x, const ShmaParams& p) {
  validate_shma(p);
  int64_t n = x.extent(0), c = x.extent(1), l = x.extent(2) * x.extent(3);
  int64_t d = p.query.conv.weight.extent(0);
  std::vector<double> result(static_cast<size_t>(n * c * l));
  for (int64_t ni = 0; ni < n; ++ni) {
    std::vector<double> xin(static_cast<size_t>(c * l));
    for (int64_t i = 0; i < c * l; ++i) xin[i] = x.data()[ni * c * l + i];

    std::vector<double> zq = project(xin, c, l, p.query);
    std::vector<double> zk = project(xin, c, l, p.key);
    std::vector<double> zv = project(xin, c, l, p.value);
    std::vector<double> zf = project(xin, c, l, p.feature);

    // scores[i][j] over token pairs, softmaxed per row.
    std::vector<double> probs(static_cast<size_t>(l * l));
    for (int64_t i = 0; i < l; ++i) {
      double mx = -1e300;
      for (int64_t j = 0; j < l; ++j) {
        double s = 0.0;
        for (int64_t t = 0; t < d; ++t) s += zq[t * l + i] * zk[t * l + j];
        probs[i * l + j] = s * double(p.attn_scale);
        mx = std::max(mx, probs[i * l + j]);
      }
      double sum = 0.0;
      for (int64_t j = 0; j < l; ++j) {
        probs[i * l + j] = std::exp(probs[i * l + j] - mx);
        sum += probs[i * l + j];
      }
      for (int64_t j = 0; j < l; ++j) probs[i * l + j] /= sum;
    }

    std::vector<double> mod(static_cast<size_t>(c * l));
    for (int64_t ch = 0; ch < c; ++ch) {
      for (int64_t i = 0; i < l; ++i) {
        double ctx = 0.0;
        for (int64_t j = 0; j < l; ++j) ctx += zv[ch * l + j] * probs[i * l + j];
        mod[ch * l + i] = gate_d(zf[ch * l + i]) * gate_d(ctx);
      }
    }

    std::vector<double> out = project(mod, c, l, p.out);
    std::copy(out.begin(), out.end(), result.begin() + ni * c * l);
  }
  return result;
}

}  // namespace

Tensor shma_forward_ref(const Tensor& x, const ShmaParams& p) {
  std::vector<double> vals = shma_core(x, p);
  Tensor out(x.shape());
  for (size_t i = 0; i < vals.size(); ++i) out.data()[i] = float(vals[i]);
  return out;
}

double shma_loss_ref(const Tensor& x, const ShmaParams& p) {
  std::vector<double> vals = shma_core(x, p);
  double total = 0.0;
  for (double v : vals) total += v;
  return total;
}

GradCheckReport grad_check_shma(const Tensor& x, const ShmaParams& p, double h) {
  ShmaGradients analytic = shma_backward(x, p, Tensor::ones(x.shape()));

  Tensor xm = x;      // mutable copies perturbed in place
  ShmaParams pm = p;
  for (auto* layer : {&pm.query, &pm.key, &pm.value, &pm.feature, &pm.out}) {
    if (!layer->bn) throw ArgumentError("grad_check_shma needs unfused projections");
  }

  struct Slot {
    std::string name;
    Tensor* value;
    const Tensor* grad;
  };
  std::vector<Slot> slots = {
      {"input", &xm, &analytic.input},
      {"query_w", &pm.query.conv.weight, &analytic.query_w},
      {"key_w", &pm.key.conv.weight, &analytic.key_w},
      {"value_w", &pm.value.conv.weight, &analytic.value_w},
      {"feature_w", &pm.feature.conv.weight, &analytic.feature_w},
      {"out_w", &pm.out.conv.weight, &analytic.out_w},
      {"query_bn_gamma", &pm.query.bn->gamma, &analytic.query_bn.gamma},
      {"query_bn_beta", &pm.query.bn->beta, &analytic.query_bn.beta},
      {"key_bn_gamma", &pm.key.bn->gamma, &analytic.key_bn.gamma},
      {"key_bn_beta", &pm.key.bn->beta, &analytic.key_bn.beta},
      {"value_bn_gamma", &pm.value.bn->gamma, &analytic.value_bn.gamma},
      {"value_bn_beta", &pm.value.bn->beta, &analytic.value_bn.beta},
      {"feature_bn_gamma", &pm.feature.bn->gamma, &analytic.feature_bn.gamma},
      {"feature_bn_beta", &pm.feature.bn->beta, &analytic.feature_bn.beta},
      {"out_bn_gamma", &pm.out.bn->gamma, &analytic.out_bn.gamma},
      {"out_bn_beta", &pm.out.bn->beta, &analytic.out_bn.beta},
  };

  GradCheckReport report;
  for (const Slot& slot : slots) {
    double tensor_max = 0.0;
    for (int64_t i = 0; i < slot.value->numel(); ++i) {
      float orig = slot.value->data()[i];
      float hi = float(double(orig) + h);
      float lo = float(double(orig) - h);
      slot.value->data()[i] = hi;
      double lplus = shma_loss_ref(xm, pm);
      slot.value->data()[i] = lo;
      double lminus = shma_loss_ref(xm, pm);
      slot.value->data()[i] = orig;
      double fd = (lplus - lminus) / (double(hi) - double(lo));
      double got = slot.grad->data()[i];
      double rel = std::abs(got - fd) / std::max(1.0, std::abs(fd));
      tensor_max = std::max(tensor_max, rel);
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = slot.name + "[" + std::to_string(i) + "]";
      }
    }
    report.per_tensor.emplace_back(slot.name, tensor_max);
  }
  return report;
}

}  // namespace iformer::ref

