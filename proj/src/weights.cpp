// Weight enumeration: the single source of truth for tensor names, shared
// by serialization, loading, and parameter counting.

#include "iformer/model.hpp"

namespace iformer {

namespace {

template <typename Fn>
void visit_conv_bn(const std::string& prefix, ConvBn& layer, Fn&& fn) {
  fn(prefix + ".weight", layer.conv.weight, WeightRole::Param);
  if (layer.conv.bias) fn(prefix + ".bias", *layer.conv.bias, WeightRole::Param);
  if (layer.bn) {
    fn(prefix + ".bn.gamma", layer.bn->gamma, WeightRole::Param);
    fn(prefix + ".bn.beta", layer.bn->beta, WeightRole::Param);
    fn(prefix + ".bn.mean", layer.bn->mean, WeightRole::Buffer);
    fn(prefix + ".bn.var", layer.bn->var, WeightRole::Buffer);
  }
}

template <typename Fn>
void visit_model(Model& m, Fn&& fn) {
  visit_conv_bn("stem.conv1", m.stem1, fn);
  visit_conv_bn("stem.conv2", m.stem2, fn);
  visit_conv_bn("stem.conv3", m.stem3, fn);

  for (int s = 0; s < 4; ++s) {
    std::string sp = "stages." + std::to_string(s);
    Stage& stage = m.stages[s];
    if (stage.downsample) visit_conv_bn(sp + ".downsample", *stage.downsample, fn);
    for (size_t b = 0; b < stage.blocks.size(); ++b) {
      std::string bp = sp + ".blocks." + std::to_string(b);
      if (ConvBlock* cb = std::get_if<ConvBlock>(&stage.blocks[b])) {
        visit_conv_bn(bp + ".dw", cb->dw, fn);
        visit_conv_bn(bp + ".expand", cb->expand, fn);
        visit_conv_bn(bp + ".project", cb->project, fn);
      } else {
        AttentionBlock& ab = std::get<AttentionBlock>(stage.blocks[b]);
        if (ab.pos) {
          fn(bp + ".cpe.weight", ab.pos->conv.weight, WeightRole::Param);
          fn(bp + ".cpe.bias", *ab.pos->conv.bias, WeightRole::Param);
        }
        if (ShmaParams* p = std::get_if<ShmaParams>(&ab.core)) {
          visit_conv_bn(bp + ".attn.query", p->query, fn);
          visit_conv_bn(bp + ".attn.key", p->key, fn);
          visit_conv_bn(bp + ".attn.value", p->value, fn);
          visit_conv_bn(bp + ".attn.feature", p->feature, fn);
          visit_conv_bn(bp + ".attn.out", p->out, fn);
        } else {
          MhaParams& mp = std::get<MhaParams>(ab.core);
          visit_conv_bn(bp + ".attn.query", mp.query, fn);
          visit_conv_bn(bp + ".attn.key", mp.key, fn);
          visit_conv_bn(bp + ".attn.value", mp.value, fn);
          visit_conv_bn(bp + ".attn.out", mp.out, fn);
        }
        visit_conv_bn(bp + ".ffn.expand", ab.ffn_expand, fn);
        visit_conv_bn(bp + ".ffn.project", ab.ffn_project, fn);
      }
    }
  }

  if (m.head.bn) {
    fn("head.bn.gamma", m.head.bn->gamma, WeightRole::Param);
    fn("head.bn.beta", m.head.bn->beta, WeightRole::Param);
    fn("head.bn.mean", m.head.bn->mean, WeightRole::Buffer);
    fn("head.bn.var", m.head.bn->var, WeightRole::Buffer);
  }
  fn("head.fc.weight", m.head.weight, WeightRole::Param);
  fn("head.fc.bias", m.head.bias, WeightRole::Param);
}

}  // namespace

void for_each_weight(Model& m,
                     const std::function<void(const std::string&, Tensor&, WeightRole)>& fn) {
  visit_model(m, fn);
}

void for_each_weight(
    const Model& m,
    const std::function<void(const std::string&, const Tensor&, WeightRole)>& fn) {
  visit_model(const_cast<Model&>(m),
              [&fn](const std::string& name, Tensor& t, WeightRole role) { fn(name, t, role); });
}

}  // namespace iformer
