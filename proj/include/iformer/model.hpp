// Model configuration, construction, and the forward executor for the
// four-stage hybrid classifier family.
#pragma once

#include <array>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "iformer/attention.hpp"
#include "iformer/nn_ops.hpp"

namespace iformer {

enum class BlockKind { Conv, Shma, Sha, Mha, WindowShma };

// Only meaningful for WindowShma blocks: where the block sits in a
// partition -> interior... -> reverse sequence. The entry block partitions
// after its position encoding; the exit block reverses after its position
// encoding and runs its attention on the full map.
enum class WindowRole { None, PartitionEntry, Interior, ReverseExit };

struct BlockSpec {
  BlockKind kind = BlockKind::Conv;
  int channels = 0;
  int expansion = 1;      // FFN / conv-block hidden ratio
  int kernel = 7;         // conv blocks: depthwise kernel size
  int head_dim = 0;       // shma/window-shma: query/key width
  int heads = 1;          // mha
  int window = 0;         // window-shma: window edge P
  WindowRole role = WindowRole::None;
  int n_chunks = 1;       // window-shma: channel chunks for partitioning
};

struct DownsampleSpec {
  int kernel = 3;
  int stride = 2;
  int out_channels = 0;
};

struct StageSpec {
  std::optional<DownsampleSpec> downsample;
  std::vector<BlockSpec> blocks;
};

struct StemSpec {
  int c1 = 0;  // first 5x5 stride-2 width
  int c2 = 0;  // second 5x5 stride-2 width
  int c3 = 0;  // final 1x1 width (stage-1 input)
};

struct ModelConfig {
  std::string name;
  int input_resolution = 224;
  int num_classes = 1000;
  StemSpec stem;
  std::array<StageSpec, 4> stages;
};

// Throws ConfigError on any inconsistency (channel handoffs, missing
// downsamples, window role sequencing, field ranges).
void validate_config(const ModelConfig& cfg);

// Named configurations: iformer-t / iformer-s / iformer-m / iformer-l,
// sha-baseline / mha-baseline, iformer-m-window512.
ModelConfig preset_config(const std::string& name);
std::vector<std::string> preset_names();

// ---- Built model ----------------------------------------------------------

struct ConvBlock {
  ConvBn dw;       // depthwise KxK + BN
  ConvBn expand;   // 1x1 up + BN + GELU
  ConvBn project;  // 1x1 down + BN
};

struct AttentionBlock {
  BlockKind kind = BlockKind::Shma;
  std::optional<CpeParams> pos;          // present on shma/window-shma blocks
  std::variant<ShmaParams, MhaParams> core;
  ConvBn ffn_expand;  // 1x1 up + BN + GELU
  ConvBn ffn_project; // 1x1 down + BN
  WindowRole role = WindowRole::None;
  int window = 0;
  int n_chunks = 1;
};

using Block = std::variant<ConvBlock, AttentionBlock>;

struct Stage {
  std::optional<ConvBn> downsample;
  std::vector<Block> blocks;
};

struct ClassifierHead {
  std::optional<BnParams> bn;  // folded away in a fused model
  Tensor weight;               // [classes, C]
  Tensor bias;                 // [classes]
};

struct Model {
  ModelConfig config;
  ConvBn stem1, stem2, stem3;
  std::array<Stage, 4> stages;
  ClassifierHead head;
  bool fused = false;
};

// Fresh weights: truncated normal (std 0.02) for conv/linear weights,
// identity BN (gamma 1, beta 0, mean 0, var 1), zero biases.
Model build_model(const ModelConfig& cfg, uint64_t seed);

struct StageShape {
  int64_t channels, height, width;
};

// Analytic per-stage output shapes for a square input. Stage strides off
// the stem and downsamples are fixed at 4/8/16/32.
std::array<StageShape, 4> stage_feature_shapes(const ModelConfig& cfg, int resolution);

// Optional instrumentation filled in by forward().
struct AttnRecord {
  BlockKind kind;
  int stage = 0;
  int block = 0;
  int64_t tokens = 0;        // tokens per attention scope
  int64_t scopes = 0;        // batched windows (1 when global, per image)
};

struct ForwardTrace {
  std::array<StageShape, 4> stage_shapes{};
  std::array<double, 4> stage_ms{};
  std::array<long long, 4> stage_layout_changes{};
  double total_ms = 0.0;
  long long layout_changes = 0;
  std::vector<AttnRecord> attention;
  // When set, every mha block appends its per-head outputs here.
  std::vector<std::vector<Tensor>>* head_outputs = nullptr;
  // When set, shma blocks append the min/max of their gated product.
  std::vector<std::pair<float, float>>* modulation_ranges = nullptr;
};

// Runs the network on [N,3,R,R] input (R must match the configured
// resolution) and returns logits [N, num_classes].
Tensor forward(const Model& m, const Tensor& x, ForwardTrace* trace = nullptr);

enum class WeightRole { Param, Buffer };  // buffers: BN running statistics

// Deterministic enumeration of every tensor in the model under its
// serialized name. The visit order and the names are the persistence
// contract documented in the README.
void for_each_weight(Model& m,
                     const std::function<void(const std::string&, Tensor&, WeightRole)>& fn);
void for_each_weight(
    const Model& m,
    const std::function<void(const std::string&, const Tensor&, WeightRole)>& fn);

}  // namespace iformer
