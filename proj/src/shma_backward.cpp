// Analytic gradients for the single-head modulation attention block.
//
// The forward graph, per image, on channel-major [C,L] activations:
//   zq = Wq X   q = BN_q(zq)        (BN as a frozen per-channel affine)
//   zk = Wk X   k = BN_k(zk)
//   zv = Wv X   v = BN_v(zv)
//   zm = Wm X   m = BN_m(zm)
//   P  = softmax_rows(scale * q^T k)
//   ctx = v P^T
//   u  = sigmoid(m) * sigmoid(ctx)
//   y  = BN_o(Wo u)
// Everything below is the straightforward reverse sweep of that graph.

#include <algorithm>
#include <cmath>

#include "iformer/attention.hpp"

namespace iformer {

namespace {

struct BnAffine {
  std::vector<float> a;    // gamma / sqrt(var + eps)
  std::vector<float> b;    // beta - mean * a
  std::vector<float> inv;  // 1 / sqrt(var + eps)
};

BnAffine bn_affine(const BnParams& p) {
  validate_bn(p);
  int64_t c = p.gamma.extent(0);
  BnAffine r;
  r.a.resize(c);
  r.b.resize(c);
  r.inv.resize(c);
  for (int64_t i = 0; i < c; ++i) {
    r.inv[i] = 1.0f / std::sqrt(p.var.data()[i] + p.eps);
    r.a[i] = p.gamma.data()[i] * r.inv[i];
    r.b[i] = p.beta.data()[i] - p.mean.data()[i] * r.a[i];
  }
  return r;
}

Tensor affine_rows(const Tensor& z, const BnAffine& bn) {
  Tensor out(z.shape());
  int64_t c = z.extent(0), l = z.extent(1);
  for (int64_t i = 0; i < c; ++i) {
    const float* src = z.data() + i * l;
    float* dst = out.data() + i * l;
    for (int64_t j = 0; j < l; ++j) dst[j] = bn.a[i] * src[j] + bn.b[i];
  }
  return out;
}

// Accumulates the three BN-boundary gradients and returns d(pre-BN).
// x_hat = (z - mean) * inv is recomputed from z on the fly.
Tensor bn_backward(const Tensor& d_post, const Tensor& z, const BnParams& p, const BnAffine& bn,
                   BnGrads& grads) {
  int64_t c = z.extent(0), l = z.extent(1);
  Tensor dz(z.shape());
  for (int64_t i = 0; i < c; ++i) {
    const float* dp = d_post.data() + i * l;
    const float* zp = z.data() + i * l;
    float* dzp = dz.data() + i * l;
    float mean = p.mean.data()[i];
    double dgamma = 0.0, dbeta = 0.0;
    for (int64_t j = 0; j < l; ++j) {
      dgamma += static_cast<double>(dp[j]) * ((zp[j] - mean) * bn.inv[i]);
      dbeta += dp[j];
      dzp[j] = dp[j] * bn.a[i];
    }
    grads.gamma.data()[i] += static_cast<float>(dgamma);
    grads.beta.data()[i] += static_cast<float>(dbeta);
  }
  return dz;
}

Tensor sigmoid_2d(const Tensor& t) { return sigmoid(t); }

Tensor hadamard(const Tensor& a, const Tensor& b) { return mul(a, b); }

// out = a * b * (1 - b), the sigmoid chain term with b already sigmoided.
Tensor sigmoid_grad(const Tensor& upstream, const Tensor& sig) {
  Tensor out(upstream.shape());
  const float* u = upstream.data();
  const float* s = sig.data();
  float* o = out.data();
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) o[i] = u[i] * s[i] * (1.0f - s[i]);
  return out;
}

Tensor image_slice(const Tensor& t, int64_t image, int64_t rows, int64_t cols) {
  Tensor out({rows, cols});
  const float* src = t.data() + image * rows * cols;
  std::copy(src, src + rows * cols, out.data());
  return out;
}

void accumulate(Tensor& into, const Tensor& from) {
  float* a = into.data();
  const float* b = from.data();
  int64_t n = into.numel();
  for (int64_t i = 0; i < n; ++i) a[i] += b[i];
}

Tensor softmax_rows_backward(const Tensor& d_probs, const Tensor& probs) {
  int64_t l = probs.extent(0);
  Tensor ds(probs.shape());
  for (int64_t i = 0; i < l; ++i) {
    const float* dp = d_probs.data() + i * l;
    const float* pr = probs.data() + i * l;
    float* out = ds.data() + i * l;
    double inner = 0.0;
    for (int64_t j = 0; j < l; ++j) inner += static_cast<double>(dp[j]) * pr[j];
    for (int64_t j = 0; j < l; ++j) {
      out[j] = pr[j] * (dp[j] - static_cast<float>(inner));
    }
  }
  return ds;
}

}  // namespace

ShmaGradients shma_backward(const Tensor& x, const ShmaParams& p, const Tensor& grad_out) {
  validate_shma(p);
  if (!p.query.bn || !p.key.bn || !p.value.bn || !p.feature.bn || !p.out.bn) {
    throw ArgumentError("shma_backward expects unfused parameters with BN present");
  }
  if (!x.same_shape(grad_out)) {
    throw ShapeError("grad_out shape " + grad_out.shape_str() + " must match input " +
                     x.shape_str());
  }
  if (x.rank() != 4) throw ShapeError("shma_backward expects rank-4 input");

  int64_t n = x.extent(0), c = x.extent(1), l = x.extent(2) * x.extent(3);
  int64_t d = p.query.conv.weight.extent(0);

  Tensor wq = reshape(p.query.conv.weight, {d, c});
  Tensor wk = reshape(p.key.conv.weight, {d, c});
  Tensor wv = reshape(p.value.conv.weight, {c, c});
  Tensor wm = reshape(p.feature.conv.weight, {c, c});
  Tensor wo = reshape(p.out.conv.weight, {c, c});

  BnAffine bq = bn_affine(*p.query.bn), bk = bn_affine(*p.key.bn), bv = bn_affine(*p.value.bn);
  BnAffine bm = bn_affine(*p.feature.bn), bo = bn_affine(*p.out.bn);

  auto zero_bn = [](int64_t width) {
    return BnGrads{Tensor::zeros({width}), Tensor::zeros({width})};
  };
  ShmaGradients g{
      Tensor::zeros(x.shape()),
      Tensor::zeros({d, c, 1, 1}), Tensor::zeros({d, c, 1, 1}), Tensor::zeros({c, c, 1, 1}),
      Tensor::zeros({c, c, 1, 1}), Tensor::zeros({c, c, 1, 1}),
      zero_bn(d), zero_bn(d), zero_bn(c), zero_bn(c), zero_bn(c)};

  Tensor x3 = reshape(x, {n, c, l});
  Tensor dy3 = reshape(grad_out, {n, c, l});

  Tensor dwq = reshape(g.query_w, {d, c}), dwk = reshape(g.key_w, {d, c});
  Tensor dwv = reshape(g.value_w, {c, c}), dwm = reshape(g.feature_w, {c, c});
  Tensor dwo = reshape(g.out_w, {c, c});

  for (int64_t img = 0; img < n; ++img) {
    Tensor X = image_slice(x3, img, c, l);
    Tensor dY = image_slice(dy3, img, c, l);

    // Forward recompute, keeping the intermediates the sweep needs.
    Tensor zq = matmul(wq, X), zk = matmul(wk, X), zv = matmul(wv, X), zm = matmul(wm, X);
    Tensor q = affine_rows(zq, bq), k = affine_rows(zk, bk), v = affine_rows(zv, bv);
    Tensor m_hat = affine_rows(zm, bm);

    Tensor scores = matmul(q, k, true, false);
    {
      float* s = scores.data();
      for (int64_t i = 0; i < l * l; ++i) s[i] *= p.attn_scale;
    }
    Tensor probs = softmax_lastdim(scores);
    Tensor ctx = matmul(v, probs, false, true);
    Tensor sig_c = sigmoid_2d(ctx);
    Tensor sig_m = sigmoid_2d(m_hat);
    Tensor u = hadamard(sig_m, sig_c);
    Tensor zo = matmul(wo, u);

    // Output projection and its BN.
    Tensor dzo = bn_backward(dY, zo, *p.out.bn, bo, g.out_bn);
    accumulate(dwo, matmul(dzo, u, false, true));
    Tensor du = matmul(wo, dzo, true, false);

    // The gated product: each branch sees the other as its scale.
    Tensor dm_hat = sigmoid_grad(hadamard(du, sig_c), sig_m);
    Tensor dctx = sigmoid_grad(hadamard(du, sig_m), sig_c);

    // Feature branch.
    Tensor dzm = bn_backward(dm_hat, zm, *p.feature.bn, bm, g.feature_bn);
    accumulate(dwm, matmul(dzm, X, false, true));
    Tensor dx_acc = matmul(wm, dzm, true, false);

    // Attention branch: ctx = v P^T.
    Tensor dv = matmul(dctx, probs);
    Tensor dprobs = matmul(dctx, v, true, false);
    Tensor dscores = softmax_rows_backward(dprobs, probs);
    {
      float* s = dscores.data();
      for (int64_t i = 0; i < l * l; ++i) s[i] *= p.attn_scale;
    }
    Tensor dq = matmul(k, dscores, false, true);
    Tensor dk = matmul(q, dscores, false, false);

    Tensor dzq = bn_backward(dq, zq, *p.query.bn, bq, g.query_bn);
    accumulate(dwq, matmul(dzq, X, false, true));
    accumulate(dx_acc, matmul(wq, dzq, true, false));

    Tensor dzk = bn_backward(dk, zk, *p.key.bn, bk, g.key_bn);
    accumulate(dwk, matmul(dzk, X, false, true));
    accumulate(dx_acc, matmul(wk, dzk, true, false));

    Tensor dzv = bn_backward(dv, zv, *p.value.bn, bv, g.value_bn);
    accumulate(dwv, matmul(dzv, X, false, true));
    accumulate(dx_acc, matmul(wv, dzv, true, false));

    std::copy(dx_acc.data(), dx_acc.data() + c * l, g.input.data() + img * c * l);
  }

  // The reshape views above copied; write the accumulated weight grads back.
  g.query_w = reshape(dwq, {d, c, 1, 1});
  g.key_w = reshape(dwk, {d, c, 1, 1});
  g.value_w = reshape(dwv, {c, c, 1, 1});
  g.feature_w = reshape(dwm, {c, c, 1, 1});
  g.out_w = reshape(dwo, {c, c, 1, 1});
  return g;
}

}  // namespace iformer
