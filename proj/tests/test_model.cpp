#include <doctest.h>

#include <algorithm>
#include <thread>
#include <vector>

#include "iformer/io.hpp"
#include "iformer/model.hpp"
#include "iformer/rng.hpp"
#include "iformer/tensor.hpp"

using namespace iformer;

namespace {

struct ThreadGuard {
  explicit ThreadGuard(int n) { set_num_threads(n); }
  ~ThreadGuard() { set_num_threads(saved); }
  int saved = num_threads();
};

int test_threads() {
  unsigned hw = std::thread::hardware_concurrency();
  return int(std::min(8u, std::max(1u, hw)));
}

// A 32x32 four-stage model small enough for exhaustive checks. The windowed
// variant replaces stage 3's attention with a partition -> reverse pair whose
// window spans the whole stage-3 grid.
ModelConfig tiny_config(bool windowed) {
  ModelConfig cfg;
  cfg.name = windowed ? "tiny-window" : "tiny";
  cfg.input_resolution = 32;
  cfg.num_classes = 10;
  cfg.stem = StemSpec{8, 16, 8};

  BlockSpec conv;
  conv.kind = BlockKind::Conv;
  conv.channels = 8;
  conv.expansion = 2;
  conv.kernel = 3;
  cfg.stages[0].blocks = {conv};

  cfg.stages[1].downsample = DownsampleSpec{3, 2, 16};
  BlockSpec conv16 = conv;
  conv16.channels = 16;
  cfg.stages[1].blocks = {conv16};

  cfg.stages[2].downsample = DownsampleSpec{3, 2, 16};
  BlockSpec attn;
  attn.kind = windowed ? BlockKind::WindowShma : BlockKind::Shma;
  attn.channels = 16;
  attn.expansion = 2;
  attn.head_dim = 8;
  if (windowed) {
    attn.window = 2;  // stage-3 grid is 2x2, so one window covers it
    attn.n_chunks = 2;
  }
  BlockSpec entry = attn, exit_blk = attn;
  if (windowed) {
    entry.role = WindowRole::PartitionEntry;
    exit_blk.role = WindowRole::ReverseExit;
  }
  cfg.stages[2].blocks = {entry, exit_blk};

  cfg.stages[3].downsample = DownsampleSpec{3, 2, 32};
  BlockSpec conv32 = conv;
  conv32.channels = 32;
  cfg.stages[3].blocks = {conv32};
  return cfg;
}

}  // namespace

TEST_CASE("every preset validates and builds") {
  for (const std::string& name : preset_names()) {
    ModelConfig cfg = preset_config(name);
    CHECK(cfg.name == name);
    validate_config(cfg);
    Model m = build_model(cfg, 1);
    CHECK(m.config.name == name);
    CHECK_FALSE(m.fused);
  }
  CHECK_THROWS_AS(preset_config("iformer-xxl"), ArgumentError);
}

TEST_CASE("stage grids quarter then halve: 56, 28, 14, 7 at 224") {
  struct Want {
    const char* name;
    std::array<int64_t, 4> widths;
  };
  const Want wants[] = {
      {"iformer-t", {32, 64, 128, 256}},
      {"iformer-s", {32, 64, 176, 320}},
      {"iformer-m", {48, 96, 192, 384}},
      {"iformer-l", {48, 96, 256, 384}},
  };
  for (const Want& w : wants) {
    auto shapes = stage_feature_shapes(preset_config(w.name), 224);
    const int64_t grids[4] = {56, 28, 14, 7};
    for (int s = 0; s < 4; ++s) {
      CHECK(shapes[s].channels == w.widths[s]);
      CHECK(shapes[s].height == grids[s]);
      CHECK(shapes[s].width == grids[s]);
    }
  }
  CHECK_THROWS_AS(stage_feature_shapes(preset_config("iformer-t"), 50), ArgumentError);
}

TEST_CASE("config validation rejects each structural violation") {
  ModelConfig good = tiny_config(false);
  validate_config(good);

  ModelConfig bad = good;
  bad.name.clear();
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  bad = good;
  bad.input_resolution = 50;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  bad = good;
  bad.num_classes = 0;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  bad = good;
  bad.stem.c2 = 0;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  bad = good;
  bad.stages[0].downsample = DownsampleSpec{3, 2, 8};
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  bad = good;
  bad.stages[1].downsample.reset();
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  bad = good;
  bad.stages[1].downsample->stride = 1;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  bad = good;
  bad.stages[1].downsample->kernel = 4;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  bad = good;
  bad.stages[3].blocks.clear();
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  bad = good;
  bad.stages[0].blocks[0].channels = 12;  // stage width is 8
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  bad = good;
  bad.stages[0].blocks[0].expansion = 0;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  bad = good;
  bad.stages[0].blocks[0].kernel = 4;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  bad = good;
  bad.stages[2].blocks[0].head_dim = 0;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  bad = good;
  bad.stages[2].blocks[0].head_dim = 17;  // exceeds the 16 channels
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  bad = good;
  bad.stages[2].blocks[0].kind = BlockKind::Mha;
  bad.stages[2].blocks[0].heads = 5;  // 16 % 5 != 0
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  bad = good;
  bad.stages[0].blocks[0].role = WindowRole::Interior;  // role on a conv block
  CHECK_THROWS_AS(validate_config(bad), ConfigError);
}

TEST_CASE("window role sequencing is a checked state machine") {
  ModelConfig good = tiny_config(true);
  validate_config(good);

  // A window block without a role.
  ModelConfig bad = good;
  bad.stages[2].blocks[0].role = WindowRole::None;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  // Interior with no partition before it.
  bad = good;
  bad.stages[2].blocks[0].role = WindowRole::Interior;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  // Reverse with no partition before it.
  bad = good;
  bad.stages[2].blocks[0].role = WindowRole::ReverseExit;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  // Two partitions in a row.
  bad = good;
  bad.stages[2].blocks[1].role = WindowRole::PartitionEntry;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  // The stage must not end while windowed.
  bad = good;
  bad.stages[2].blocks[1].role = WindowRole::Interior;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  // Geometry may not change inside a sequence.
  bad = good;
  bad.stages[2].blocks[1].n_chunks = 4;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  // Window must tile the stage grid (stage-3 grid is 2).
  bad = good;
  bad.stages[2].blocks[0].window = 3;
  bad.stages[2].blocks[1].window = 3;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  // A non-window block may not sit inside a window sequence.
  bad = good;
  BlockSpec conv = bad.stages[2].blocks[0];
  conv.kind = BlockKind::Conv;
  conv.kernel = 3;
  conv.role = WindowRole::None;
  bad.stages[2].blocks = {bad.stages[2].blocks[0], conv, bad.stages[2].blocks[1]};
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  // n_chunks must divide the channel width.
  bad = good;
  bad.stages[2].blocks[0].n_chunks = 3;
  bad.stages[2].blocks[1].n_chunks = 3;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  // The window-512 preset exercises the same machinery at scale.
  validate_config(preset_config("iformer-m-window512"));
}

TEST_CASE("forward rejects mismatched inputs") {
  Model m = build_model(tiny_config(false), 0);
  CHECK_THROWS_AS(forward(m, Tensor({1, 3, 64, 64})), ShapeError);
  CHECK_THROWS_AS(forward(m, Tensor({1, 1, 32, 32})), ShapeError);
  CHECK_THROWS_AS(forward(m, Tensor({3, 32, 32})), ShapeError);
}

TEST_CASE("tiny model forward: logits, trace, and gate ranges") {
  Model m = build_model(tiny_config(false), 3);
  Rng rng(600);
  Tensor x = rng.normal_tensor({2, 3, 32, 32}, 0.0f, 1.0f);

  ForwardTrace trace;
  std::vector<std::pair<float, float>> ranges;
  trace.modulation_ranges = &ranges;
  Tensor logits = forward(m, x, &trace);

  CHECK(logits.shape() == std::vector<int64_t>{2, 10});
  CHECK(trace.layout_changes == 0);
  const int64_t want_c[4] = {8, 16, 16, 32};
  const int64_t want_r[4] = {8, 4, 2, 1};
  for (int s = 0; s < 4; ++s) {
    CHECK(trace.stage_shapes[s].channels == want_c[s]);
    CHECK(trace.stage_shapes[s].height == want_r[s]);
    CHECK(trace.stage_shapes[s].width == want_r[s]);
  }
  REQUIRE(trace.attention.size() == 2);
  for (const AttnRecord& rec : trace.attention) {
    CHECK(rec.kind == BlockKind::Shma);
    CHECK(rec.stage == 2);
    CHECK(rec.tokens == 4);
    CHECK(rec.scopes == 1);
  }
  REQUIRE(ranges.size() == 2);
  for (auto [lo, hi] : ranges) {
    CHECK(lo > 0.0f);
    CHECK(hi < 1.0f);
    CHECK(lo <= hi);
  }
}

TEST_CASE("batch entries pass through independently") {
  Model m = build_model(tiny_config(false), 4);
  Rng rng(601);
  Tensor a = rng.normal_tensor({1, 3, 32, 32}, 0.0f, 1.0f);
  Tensor b = rng.normal_tensor({1, 3, 32, 32}, 0.0f, 1.0f);
  Tensor both({2, 3, 32, 32});
  std::copy(a.data(), a.data() + a.numel(), both.data());
  std::copy(b.data(), b.data() + b.numel(), both.data() + a.numel());

  Tensor ya = forward(m, a);
  Tensor yb = forward(m, b);
  Tensor yboth = forward(m, both);
  CHECK(std::equal(ya.data(), ya.data() + ya.numel(), yboth.data()));
  CHECK(std::equal(yb.data(), yb.data() + yb.numel(), yboth.data() + ya.numel()));
}

TEST_CASE("the build seed pins every weight") {
  ModelConfig cfg = tiny_config(false);
  Model a = build_model(cfg, 42);
  Model b = build_model(cfg, 42);
  Model c = build_model(cfg, 43);

  bool all_equal = true;
  bool any_differs = false;
  for_each_weight(a, [&](const std::string& name, const Tensor& t, WeightRole) {
    bool found_b = false, found_c = false;
    for_each_weight(b, [&](const std::string& nb, const Tensor& tb, WeightRole) {
      if (nb == name) {
        found_b = true;
        if (t.vec() != tb.vec()) all_equal = false;
      }
    });
    for_each_weight(c, [&](const std::string& nc, const Tensor& tc, WeightRole) {
      if (nc == name) {
        found_c = true;
        if (t.vec() != tc.vec()) any_differs = true;
      }
    });
    CHECK(found_b);
    CHECK(found_c);
  });
  CHECK(all_equal);
  CHECK(any_differs);

  // Same seed, same input, same logits -- bit for bit.
  Rng rng(602);
  Tensor x = rng.normal_tensor({1, 3, 32, 32}, 0.0f, 1.0f);
  CHECK(forward(a, x).vec() == forward(b, x).vec());
}

TEST_CASE("a whole-grid window equals global attention bit for bit") {
  // Identical seeds draw identical weights for the two kinds, and a window
  // covering the full stage grid makes partitioning a pure copy.
  Model global = build_model(tiny_config(false), 9);
  Model windowed = build_model(tiny_config(true), 9);

  Rng rng(603);
  Tensor x = rng.normal_tensor({2, 3, 32, 32}, 0.0f, 1.0f);
  ForwardTrace tw;
  Tensor yg = forward(global, x);
  Tensor yw = forward(windowed, x, &tw);
  CHECK(yg.vec() == yw.vec());
  CHECK(tw.layout_changes == 0);  // partition copies are not permutes

  // The windowed trace reports one whole-grid scope per image.
  REQUIRE(tw.attention.size() == 2);
  CHECK(tw.attention[0].kind == BlockKind::WindowShma);
  CHECK(tw.attention[0].tokens == 4);
  CHECK(tw.attention[0].scopes == 1);
}

TEST_CASE("baseline layout traffic: multi-head pays permutes, single-head none") {
  ThreadGuard guard(test_threads());
  ModelConfig mha_cfg = preset_config("mha-baseline");
  ModelConfig sha_cfg = preset_config("sha-baseline");
  mha_cfg.input_resolution = 64;
  sha_cfg.input_resolution = 64;

  Model mha_m = build_model(mha_cfg, 5);
  Model sha_m = build_model(sha_cfg, 5);
  Rng rng(604);
  Tensor x = rng.normal_tensor({1, 3, 64, 64}, 0.0f, 1.0f);

  ForwardTrace t_mha, t_sha;
  (void)forward(mha_m, x, &t_mha);
  (void)forward(sha_m, x, &t_sha);

  // 11 attention blocks, 3 physical permutes each.
  CHECK(t_mha.layout_changes == 33);
  CHECK(t_sha.layout_changes == 0);
  CHECK(t_mha.layout_changes > t_sha.layout_changes);
  // Per-stage attribution: stages 3 and 4 carry all of it.
  CHECK(t_mha.stage_layout_changes[0] == 0);
  CHECK(t_mha.stage_layout_changes[1] == 0);
  CHECK(t_mha.stage_layout_changes[2] == 27);
  CHECK(t_mha.stage_layout_changes[3] == 6);
}

TEST_CASE("trace on iformer-t at full resolution") {
  ThreadGuard guard(test_threads());
  Model m = build_model(preset_config("iformer-t"), 0);
  Rng rng(605);
  Tensor x = rng.normal_tensor({1, 3, 224, 224}, 0.0f, 1.0f);
  ForwardTrace trace;
  Tensor logits = forward(m, x, &trace);
  CHECK(logits.shape() == std::vector<int64_t>{1, 1000});
  CHECK(trace.layout_changes == 0);
  const int64_t want_c[4] = {32, 64, 128, 256};
  const int64_t want_r[4] = {56, 28, 14, 7};
  for (int s = 0; s < 4; ++s) {
    CHECK(trace.stage_shapes[s].channels == want_c[s]);
    CHECK(trace.stage_shapes[s].height == want_r[s]);
  }
  // Three stage-3 attention blocks at 196 tokens, two stage-4 at 49.
  REQUIRE(trace.attention.size() == 5);
  CHECK(trace.attention[0].stage == 2);
  CHECK(trace.attention[0].block == 6);
  CHECK(trace.attention[0].tokens == 196);
  CHECK(trace.attention[3].stage == 3);
  CHECK(trace.attention[3].tokens == 49);
}
