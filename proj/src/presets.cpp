// Named model configurations. Block sequences, widths, head dims, and
// expansion ratios follow the published architecture table for the four
// size variants; the two attention baselines share one skeleton and swap
// the second half of stage 3 plus all of stage 4 from conv blocks to
// attention blocks; the window variant re-expresses the M attention stages
// as a chunked window partition -> interior -> reverse sequence for
// high-resolution input.

#include "iformer/model.hpp"

namespace iformer {

namespace {

BlockSpec conv_block(int c, int expansion, int kernel = 7) {
  BlockSpec b;
  b.kind = BlockKind::Conv;
  b.channels = c;
  b.expansion = expansion;
  b.kernel = kernel;
  return b;
}

BlockSpec shma_block(int c, int head_dim, int expansion) {
  BlockSpec b;
  b.kind = BlockKind::Shma;
  b.channels = c;
  b.head_dim = head_dim;
  b.expansion = expansion;
  return b;
}

BlockSpec window_shma_block(int c, int head_dim, int expansion, int window, WindowRole role,
                            int n_chunks) {
  BlockSpec b;
  b.kind = BlockKind::WindowShma;
  b.channels = c;
  b.head_dim = head_dim;
  b.expansion = expansion;
  b.window = window;
  b.role = role;
  b.n_chunks = n_chunks;
  return b;
}

BlockSpec sha_block(int c, int expansion) {
  BlockSpec b;
  b.kind = BlockKind::Sha;
  b.channels = c;
  b.expansion = expansion;
  return b;
}

BlockSpec mha_block(int c, int heads, int expansion) {
  BlockSpec b;
  b.kind = BlockKind::Mha;
  b.channels = c;
  b.heads = heads;
  b.expansion = expansion;
  return b;
}

DownsampleSpec down(int out_channels) { return DownsampleSpec{3, 2, out_channels}; }

void repeat(std::vector<BlockSpec>& into, const BlockSpec& b, int times) {
  for (int i = 0; i < times; ++i) into.push_back(b);
}

ModelConfig iformer_t() {
  ModelConfig cfg;
  cfg.name = "iformer-t";
  cfg.stem = {16, 64, 32};
  repeat(cfg.stages[0].blocks, conv_block(32, 3), 2);
  cfg.stages[1].downsample = down(64);
  repeat(cfg.stages[1].blocks, conv_block(64, 3), 2);
  cfg.stages[2].downsample = down(128);
  repeat(cfg.stages[2].blocks, conv_block(128, 3), 6);
  repeat(cfg.stages[2].blocks, shma_block(128, 64, 2), 3);
  repeat(cfg.stages[2].blocks, conv_block(128, 3), 1);
  cfg.stages[3].downsample = down(256);
  repeat(cfg.stages[3].blocks, shma_block(256, 64, 2), 2);
  return cfg;
}

ModelConfig iformer_s() {
  ModelConfig cfg;
  cfg.name = "iformer-s";
  cfg.stem = {16, 64, 32};
  repeat(cfg.stages[0].blocks, conv_block(32, 4), 2);
  cfg.stages[1].downsample = down(64);
  repeat(cfg.stages[1].blocks, conv_block(64, 4), 2);
  cfg.stages[2].downsample = down(176);
  repeat(cfg.stages[2].blocks, conv_block(176, 4), 9);
  repeat(cfg.stages[2].blocks, shma_block(176, 88, 3), 3);
  repeat(cfg.stages[2].blocks, conv_block(176, 4), 1);
  cfg.stages[3].downsample = down(320);
  repeat(cfg.stages[3].blocks, shma_block(320, 80, 3), 2);
  return cfg;
}

ModelConfig iformer_m() {
  ModelConfig cfg;
  cfg.name = "iformer-m";
  cfg.stem = {24, 96, 48};
  repeat(cfg.stages[0].blocks, conv_block(48, 4), 2);
  cfg.stages[1].downsample = down(96);
  repeat(cfg.stages[1].blocks, conv_block(96, 4), 2);
  cfg.stages[2].downsample = down(192);
  repeat(cfg.stages[2].blocks, conv_block(192, 4), 9);
  repeat(cfg.stages[2].blocks, shma_block(192, 96, 3), 4);
  repeat(cfg.stages[2].blocks, conv_block(192, 4), 1);
  cfg.stages[3].downsample = down(384);
  repeat(cfg.stages[3].blocks, shma_block(384, 96, 3), 2);
  return cfg;
}

ModelConfig iformer_l() {
  ModelConfig cfg;
  cfg.name = "iformer-l";
  cfg.stem = {24, 96, 48};
  repeat(cfg.stages[0].blocks, conv_block(48, 4), 2);
  cfg.stages[1].downsample = down(96);
  repeat(cfg.stages[1].blocks, conv_block(96, 4), 2);
  cfg.stages[2].downsample = down(256);
  repeat(cfg.stages[2].blocks, conv_block(256, 4), 8);
  repeat(cfg.stages[2].blocks, shma_block(256, 128, 3), 8);
  repeat(cfg.stages[2].blocks, conv_block(256, 4), 1);
  cfg.stages[3].downsample = down(384);
  repeat(cfg.stages[3].blocks, shma_block(384, 96, 3), 2);
  return cfg;
}

// Shared skeleton for the attention baselines: the all-conv roadmap model
// (depths 2/2/18/2 at widths 48/96/192/384, ratio 4) with the last nine
// stage-3 blocks and both stage-4 blocks swapped for attention blocks.
ModelConfig baseline(const std::string& name, bool multi_head) {
  ModelConfig cfg;
  cfg.name = name;
  cfg.stem = {24, 96, 48};
  repeat(cfg.stages[0].blocks, conv_block(48, 4), 2);
  cfg.stages[1].downsample = down(96);
  repeat(cfg.stages[1].blocks, conv_block(96, 4), 2);
  cfg.stages[2].downsample = down(192);
  repeat(cfg.stages[2].blocks, conv_block(192, 4), 9);
  for (int i = 0; i < 9; ++i) {
    cfg.stages[2].blocks.push_back(multi_head ? mha_block(192, 192 / 32, 4)
                                              : sha_block(192, 4));
  }
  cfg.stages[3].downsample = down(384);
  for (int i = 0; i < 2; ++i) {
    cfg.stages[3].blocks.push_back(multi_head ? mha_block(384, 384 / 32, 4)
                                              : sha_block(384, 4));
  }
  return cfg;
}

ModelConfig iformer_m_window512() {
  ModelConfig cfg = iformer_m();
  cfg.name = "iformer-m-window512";
  cfg.input_resolution = 512;

  // Stage 3: partition -> two interior window blocks -> global reverse-exit.
  auto& s3 = cfg.stages[2].blocks;
  s3.erase(s3.begin() + 9, s3.begin() + 13);
  std::vector<BlockSpec> repl = {
      window_shma_block(192, 96, 3, 16, WindowRole::PartitionEntry, 16),
      window_shma_block(192, 96, 3, 16, WindowRole::Interior, 16),
      window_shma_block(192, 96, 3, 16, WindowRole::Interior, 16),
      window_shma_block(192, 96, 3, 16, WindowRole::ReverseExit, 16),
  };
  s3.insert(s3.begin() + 9, repl.begin(), repl.end());

  // Stage 4: a single-window partition block, then a global exit block with
  // the reduced head width.
  cfg.stages[3].blocks = {
      window_shma_block(384, 96, 3, 16, WindowRole::PartitionEntry, 16),
      window_shma_block(384, 64, 3, 16, WindowRole::ReverseExit, 16),
  };
  return cfg;
}

}  // namespace

ModelConfig preset_config(const std::string& name) {
  if (name == "iformer-t") return iformer_t();
  if (name == "iformer-s") return iformer_s();
  if (name == "iformer-m") return iformer_m();
  if (name == "iformer-l") return iformer_l();
  if (name == "mha-baseline") return baseline(name, true);
  if (name == "sha-baseline") return baseline(name, false);
  if (name == "iformer-m-window512") return iformer_m_window512();
  throw ArgumentError("unknown preset '" + name + "'");
}

std::vector<std::string> preset_names() {
  return {"iformer-t", "iformer-s", "iformer-m", "iformer-l",
          "mha-baseline", "sha-baseline", "iformer-m-window512"};
}

}  // namespace iformer
