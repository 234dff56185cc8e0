#include "iformer/model.hpp"

#include <chrono>
#include <cmath>

#include "iformer/rng.hpp"
#include "iformer/window.hpp"

namespace iformer {

namespace {

[[noreturn]] void config_fail(const std::string& msg) { throw ConfigError(msg); }

}  // namespace

void validate_config(const ModelConfig& cfg) {
  if (cfg.name.empty()) config_fail("model name must not be empty");
  if (cfg.input_resolution <= 0 || cfg.input_resolution % 32 != 0) {
    config_fail("input resolution must be a positive multiple of 32, got " +
                std::to_string(cfg.input_resolution));
  }
  if (cfg.num_classes < 1) config_fail("num_classes must be >= 1");
  if (cfg.stem.c1 <= 0 || cfg.stem.c2 <= 0 || cfg.stem.c3 <= 0) {
    config_fail("stem widths must be positive");
  }

  int width = cfg.stem.c3;
  int res = cfg.input_resolution / 4;
  for (int s = 0; s < 4; ++s) {
    const StageSpec& stage = cfg.stages[s];
    if (s == 0 && stage.downsample) config_fail("stage 1 must not have a downsample");
    if (s > 0 && !stage.downsample) {
      config_fail("stage " + std::to_string(s + 1) + " must begin with a downsample");
    }
    if (stage.downsample) {
      const DownsampleSpec& ds = *stage.downsample;
      if (ds.out_channels <= 0) config_fail("downsample out_channels must be positive");
      if (ds.kernel < 1 || ds.kernel % 2 == 0) config_fail("downsample kernel must be odd");
      if (ds.stride != 2) config_fail("downsample stride must be 2");
      width = ds.out_channels;
      res /= 2;
    }
    if (stage.blocks.empty()) {
      config_fail("stage " + std::to_string(s + 1) + " has no blocks");
    }

    bool windowed = false;
    int window = 0, chunks = 1;
    for (size_t b = 0; b < stage.blocks.size(); ++b) {
      const BlockSpec& blk = stage.blocks[b];
      std::string where = "stage " + std::to_string(s + 1) + " block " + std::to_string(b);
      if (blk.channels != width) {
        config_fail(where + ": channels " + std::to_string(blk.channels) +
                    " break the stage width " + std::to_string(width));
      }
      if (blk.expansion < 1) config_fail(where + ": expansion ratio must be >= 1");

      if (windowed && blk.kind != BlockKind::WindowShma) {
        config_fail(where + ": only window attention blocks may sit inside a window sequence");
      }
      switch (blk.kind) {
        case BlockKind::Conv:
          if (blk.kernel < 1 || blk.kernel % 2 == 0) {
            config_fail(where + ": conv kernel must be odd");
          }
          break;
        case BlockKind::Shma:
          if (blk.head_dim < 1 || blk.head_dim > blk.channels) {
            config_fail(where + ": head_dim must be in [1, channels]");
          }
          break;
        case BlockKind::Sha:
          break;
        case BlockKind::Mha:
          if (blk.heads < 1 || blk.channels % blk.heads != 0) {
            config_fail(where + ": channels must divide into heads");
          }
          break;
        case BlockKind::WindowShma: {
          if (blk.head_dim < 1 || blk.head_dim > blk.channels) {
            config_fail(where + ": head_dim must be in [1, channels]");
          }
          if (blk.window < 1) config_fail(where + ": window size must be positive");
          if (blk.n_chunks < 1 || blk.channels % blk.n_chunks != 0) {
            config_fail(where + ": channels must divide into n_chunks");
          }
          if (res % blk.window != 0) {
            config_fail(where + ": stage extent " + std::to_string(res) +
                        " not divisible by window " + std::to_string(blk.window));
          }
          switch (blk.role) {
            case WindowRole::PartitionEntry:
              if (windowed) config_fail(where + ": nested window partition");
              windowed = true;
              window = blk.window;
              chunks = blk.n_chunks;
              break;
            case WindowRole::Interior:
              if (!windowed) config_fail(where + ": interior window block before a partition");
              if (blk.window != window || blk.n_chunks != chunks) {
                config_fail(where + ": window geometry changes mid-sequence");
              }
              break;
            case WindowRole::ReverseExit:
              if (!windowed) config_fail(where + ": window reverse before a partition");
              if (blk.window != window || blk.n_chunks != chunks) {
                config_fail(where + ": window geometry changes mid-sequence");
              }
              windowed = false;
              break;
            case WindowRole::None:
              config_fail(where + ": window blocks need a window-role");
          }
          break;
        }
      }
      if (blk.kind != BlockKind::WindowShma && blk.role != WindowRole::None) {
        config_fail(where + ": window-role is only valid on window attention blocks");
      }
    }
    if (windowed) {
      config_fail("stage " + std::to_string(s + 1) + " ends inside a window sequence");
    }
  }
}

namespace {

BnParams identity_bn(int64_t c) {
  return BnParams{Tensor::ones({c}), Tensor::zeros({c}), Tensor::zeros({c}), Tensor::ones({c}),
                  1e-5f};
}

constexpr float kInitStd = 0.02f;

ConvBn make_conv_bn(Rng& rng, int64_t cout, int64_t cin_g, int64_t k, int stride, int padding,
                    int groups, Act act) {
  ConvBn layer;
  layer.conv.weight = rng.truncated_normal_tensor({cout, cin_g, k, k}, kInitStd);
  layer.conv.stride = stride;
  layer.conv.padding = padding;
  layer.conv.groups = groups;
  layer.bn = identity_bn(cout);
  layer.act = act;
  return layer;
}

ConvBn make_proj(Rng& rng, int64_t cout, int64_t cin, Act act = Act::None) {
  return make_conv_bn(rng, cout, cin, 1, 1, 0, 1, act);
}

CpeParams make_cpe(Rng& rng, int64_t c) {
  CpeParams p;
  p.conv.weight = rng.truncated_normal_tensor({c, 1, 3, 3}, kInitStd);
  p.conv.bias = Tensor::zeros({c});
  p.conv.stride = 1;
  p.conv.padding = 1;
  p.conv.groups = static_cast<int>(c);
  return p;
}

Block make_block(Rng& rng, const BlockSpec& spec) {
  int64_t c = spec.channels;
  if (spec.kind == BlockKind::Conv) {
    ConvBlock blk;
    blk.dw = make_conv_bn(rng, c, 1, spec.kernel, 1, (spec.kernel - 1) / 2,
                          static_cast<int>(c), Act::None);
    blk.expand = make_proj(rng, c * spec.expansion, c, Act::Gelu);
    blk.project = make_proj(rng, c, c * spec.expansion);
    return blk;
  }

  AttentionBlock blk;
  blk.kind = spec.kind;
  blk.role = spec.role;
  blk.window = spec.window;
  blk.n_chunks = spec.n_chunks;
  if (spec.kind == BlockKind::Shma || spec.kind == BlockKind::WindowShma) {
    blk.pos = make_cpe(rng, c);
    ShmaParams p;
    p.query = make_proj(rng, spec.head_dim, c);
    p.key = make_proj(rng, spec.head_dim, c);
    p.value = make_proj(rng, c, c);
    p.feature = make_proj(rng, c, c);
    p.out = make_proj(rng, c, c);
    p.attn_scale = 1.0f / std::sqrt(static_cast<float>(spec.head_dim));
    blk.core = std::move(p);
  } else {
    MhaParams p;
    p.query = make_proj(rng, c, c);
    p.key = make_proj(rng, c, c);
    p.value = make_proj(rng, c, c);
    p.out = make_proj(rng, c, c);
    p.num_heads = spec.kind == BlockKind::Sha ? 1 : spec.heads;
    blk.core = std::move(p);
  }
  blk.ffn_expand = make_proj(rng, c * spec.expansion, c, Act::Gelu);
  blk.ffn_project = make_proj(rng, c, c * spec.expansion);
  return blk;
}

}  // namespace

Model build_model(const ModelConfig& cfg, uint64_t seed) {
  validate_config(cfg);
  Rng rng(seed);
  Model m;
  m.config = cfg;
  m.stem1 = make_conv_bn(rng, cfg.stem.c1, 3, 5, 2, 2, 1, Act::Gelu);
  m.stem2 = make_conv_bn(rng, cfg.stem.c2, cfg.stem.c1, 5, 2, 2, 1, Act::Gelu);
  m.stem3 = make_proj(rng, cfg.stem.c3, cfg.stem.c2);

  int width = cfg.stem.c3;
  for (int s = 0; s < 4; ++s) {
    const StageSpec& spec = cfg.stages[s];
    Stage& stage = m.stages[s];
    if (spec.downsample) {
      const DownsampleSpec& ds = *spec.downsample;
      stage.downsample = make_conv_bn(rng, ds.out_channels, width, ds.kernel, ds.stride,
                                      (ds.kernel - 1) / 2, 1, Act::None);
      width = ds.out_channels;
    }
    for (const BlockSpec& blk : spec.blocks) {
      stage.blocks.push_back(make_block(rng, blk));
    }
  }

  m.head.bn = identity_bn(width);
  m.head.weight = rng.truncated_normal_tensor({cfg.num_classes, width}, kInitStd);
  m.head.bias = Tensor::zeros({cfg.num_classes});
  return m;
}

std::array<StageShape, 4> stage_feature_shapes(const ModelConfig& cfg, int resolution) {
  validate_config(cfg);
  if (resolution <= 0 || resolution % 32 != 0) {
    throw ArgumentError("resolution must be a positive multiple of 32");
  }
  std::array<StageShape, 4> shapes;
  int64_t width = cfg.stem.c3;
  int64_t res = resolution / 4;
  for (int s = 0; s < 4; ++s) {
    if (cfg.stages[s].downsample) {
      width = cfg.stages[s].downsample->out_channels;
      res /= 2;
    }
    shapes[s] = StageShape{width, res, res};
  }
  return shapes;
}

namespace {

Tensor conv_block_forward(const ConvBlock& blk, const Tensor& x) {
  Tensor y = apply(blk.dw, x);
  y = apply(blk.expand, y);
  y = apply(blk.project, y);
  return add(x, y);
}

struct WindowState {
  bool active = false;
  int64_t full_h = 0, full_w = 0;
};

Tensor attention_block_forward(const AttentionBlock& blk, Tensor x, WindowState& win,
                               ForwardTrace* trace, int stage_idx, int block_idx) {
  if (blk.pos) x = cpe(x, *blk.pos);

  if (blk.role == WindowRole::PartitionEntry) {
    win.full_h = x.extent(2);
    win.full_w = x.extent(3);
    win.active = true;
    x = chunked_window_partition(x, blk.window, blk.n_chunks);
  } else if (blk.role == WindowRole::ReverseExit) {
    x = chunked_window_reverse(x, blk.window, win.full_h, win.full_w, blk.n_chunks);
    win.active = false;
  }

  Tensor attn_out;
  if (const ShmaParams* p = std::get_if<ShmaParams>(&blk.core)) {
    if (trace && trace->modulation_ranges) {
      Tensor mod = shma_modulation(x, *p);
      float lo = mod.data()[0], hi = mod.data()[0];
      for (int64_t i = 1; i < mod.numel(); ++i) {
        lo = std::min(lo, mod.data()[i]);
        hi = std::max(hi, mod.data()[i]);
      }
      trace->modulation_ranges->emplace_back(lo, hi);
      attn_out = apply(p->out, mod);
    } else {
      attn_out = shma_forward(x, *p);
    }
  } else {
    const MhaParams& mp = std::get<MhaParams>(blk.core);
    if (blk.kind == BlockKind::Sha) {
      attn_out = sha_block_forward(x, mp);
    } else {
      std::vector<Tensor> heads;
      bool capture = trace && trace->head_outputs;
      attn_out = mha_forward(x, mp, capture ? &heads : nullptr);
      if (capture) trace->head_outputs->push_back(std::move(heads));
    }
  }
  if (trace) {
    AttnRecord rec;
    rec.kind = blk.kind;
    rec.stage = stage_idx;
    rec.block = block_idx;
    rec.tokens = x.extent(2) * x.extent(3);
    rec.scopes = win.active ? (win.full_h / blk.window) * (win.full_w / blk.window) : 1;
    trace->attention.push_back(rec);
  }
  x = add(x, attn_out);

  Tensor f = apply(blk.ffn_expand, x);
  f = apply(blk.ffn_project, f);
  return add(x, f);
}

}  // namespace

Tensor forward(const Model& m, const Tensor& x, ForwardTrace* trace) {
  if (x.rank() != 4 || x.extent(1) != 3) {
    throw ShapeError("forward expects [N,3,H,W] input, got " + x.shape_str());
  }
  int res = m.config.input_resolution;
  if (x.extent(2) != res || x.extent(3) != res) {
    throw ShapeError("input " + x.shape_str() + " does not match the configured resolution " +
                     std::to_string(res) + " (stem)");
  }

  LayoutCounter counter;
  LayoutCounterScope scope(counter);
  using clock = std::chrono::steady_clock;
  auto start = clock::now();

  Tensor cur = apply(m.stem1, x);
  cur = apply(m.stem2, cur);
  cur = apply(m.stem3, cur);

  for (int s = 0; s < 4; ++s) {
    auto stage_start = clock::now();
    long long permutes_before = counter.permutes;
    const Stage& stage = m.stages[s];
    if (stage.downsample) cur = apply(*stage.downsample, cur);
    WindowState win;
    for (size_t b = 0; b < stage.blocks.size(); ++b) {
      if (const ConvBlock* cb = std::get_if<ConvBlock>(&stage.blocks[b])) {
        cur = conv_block_forward(*cb, cur);
      } else {
        cur = attention_block_forward(std::get<AttentionBlock>(stage.blocks[b]), std::move(cur),
                                      win, trace, s, static_cast<int>(b));
      }
    }
    if (win.active) {
      throw ShapeError("stage " + std::to_string(s + 1) + " ended inside a window sequence");
    }
    if (trace) {
      trace->stage_shapes[s] = StageShape{cur.extent(1), cur.extent(2), cur.extent(3)};
      trace->stage_ms[s] =
          std::chrono::duration<double, std::milli>(clock::now() - stage_start).count();
      trace->stage_layout_changes[s] = counter.permutes - permutes_before;
    }
  }

  Tensor pooled = global_avg_pool(cur);
  if (m.head.bn) pooled = batchnorm_infer(pooled, *m.head.bn);
  Tensor logits = linear(pooled, m.head.weight, m.head.bias);

  if (trace) {
    trace->total_ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();
    trace->layout_changes = counter.permutes;
  }
  return logits;
}

}  // namespace iformer
