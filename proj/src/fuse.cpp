#include "iformer/fuse.hpp"

#include <cmath>

namespace iformer {

ConvParams fold_bn_into_conv(const ConvParams& conv, const BnParams& bn) {
  validate_conv(conv);
  validate_bn(bn);
  int64_t cout = conv.weight.extent(0);
  if (bn.gamma.extent(0) != cout) {
    throw ShapeError("fold: BN width " + std::to_string(bn.gamma.extent(0)) +
                     " does not match conv output channels " + std::to_string(cout));
  }
  ConvParams fused = conv;
  fused.bias = conv.bias ? *conv.bias : Tensor::zeros({cout});
  int64_t per_oc = conv.weight.numel() / cout;
  for (int64_t oc = 0; oc < cout; ++oc) {
    float inv = 1.0f / std::sqrt(bn.var.data()[oc] + bn.eps);
    float a = bn.gamma.data()[oc] * inv;
    float* w = fused.weight.data() + oc * per_oc;
    for (int64_t i = 0; i < per_oc; ++i) w[i] *= a;
    float b = fused.bias->data()[oc];
    fused.bias->data()[oc] = (b - bn.mean.data()[oc]) * a + bn.beta.data()[oc];
  }
  return fused;
}

namespace {

void fold_layer(ConvBn& layer) {
  if (!layer.bn) return;
  layer.conv = fold_bn_into_conv(layer.conv, *layer.bn);
  layer.bn.reset();
}

void fold_attention(AttentionBlock& blk) {
  if (ShmaParams* p = std::get_if<ShmaParams>(&blk.core)) {
    fold_layer(p->query);
    fold_layer(p->key);
    fold_layer(p->value);
    fold_layer(p->feature);
    fold_layer(p->out);
  } else {
    MhaParams& mp = std::get<MhaParams>(blk.core);
    fold_layer(mp.query);
    fold_layer(mp.key);
    fold_layer(mp.value);
    fold_layer(mp.out);
  }
  fold_layer(blk.ffn_expand);
  fold_layer(blk.ffn_project);
}

// pool -> BN -> linear: the preceding affine folds into the linear weights.
// y = W(a*x + c) + b  =  (W*diag(a)) x + (W c + b).
void fold_head(ClassifierHead& head) {
  if (!head.bn) return;
  validate_bn(*head.bn);
  int64_t classes = head.weight.extent(0), c = head.weight.extent(1);
  if (head.bn->gamma.extent(0) != c) {
    throw ShapeError("fold: head BN width does not match linear input width");
  }
  std::vector<float> a(c), shift(c);
  for (int64_t i = 0; i < c; ++i) {
    float inv = 1.0f / std::sqrt(head.bn->var.data()[i] + head.bn->eps);
    a[i] = head.bn->gamma.data()[i] * inv;
    shift[i] = head.bn->beta.data()[i] - head.bn->mean.data()[i] * a[i];
  }
  for (int64_t o = 0; o < classes; ++o) {
    float* row = head.weight.data() + o * c;
    double bias_add = 0.0;
    for (int64_t i = 0; i < c; ++i) {
      bias_add += static_cast<double>(row[i]) * shift[i];
      row[i] *= a[i];
    }
    head.bias.data()[o] += static_cast<float>(bias_add);
  }
  head.bn.reset();
}

}  // namespace

Model fuse_model(const Model& m) {
  Model out = m;
  fold_layer(out.stem1);
  fold_layer(out.stem2);
  fold_layer(out.stem3);
  for (Stage& stage : out.stages) {
    if (stage.downsample) fold_layer(*stage.downsample);
    for (Block& blk : stage.blocks) {
      if (ConvBlock* cb = std::get_if<ConvBlock>(&blk)) {
        fold_layer(cb->dw);
        fold_layer(cb->expand);
        fold_layer(cb->project);
      } else {
        fold_attention(std::get<AttentionBlock>(blk));
      }
    }
  }
  fold_head(out.head);
  out.fused = true;
  return out;
}

}  // namespace iformer
