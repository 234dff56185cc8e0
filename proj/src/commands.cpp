#include "iformer/commands.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "iformer/attention.hpp"
#include "iformer/bench.hpp"
#include "iformer/cost.hpp"
#include "iformer/fuse.hpp"
#include "iformer/io.hpp"
#include "iformer/ref_kernels.hpp"
#include "iformer/rng.hpp"
#include "iformer/window.hpp"

namespace iformer {

namespace {

std::string commas(long long v) {
  std::string digits = std::to_string(v);
  std::string out;
  int count = 0;
  for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
    if (count && count % 3 == 0 && std::isdigit(*it)) out.push_back(',');
    out.push_back(*it);
    ++count;
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::string fixed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2e", v);
  return buf;
}

// ---- synthetic layer builders for the self-checks -------------------------

BnParams rand_bn(Rng& rng, int64_t c) {
  BnParams bn;
  bn.gamma = rng.uniform_tensor({c}, 0.5f, 1.5f);
  bn.beta = rng.uniform_tensor({c}, -0.2f, 0.2f);
  bn.mean = rng.uniform_tensor({c}, -0.1f, 0.1f);
  bn.var = rng.uniform_tensor({c}, 0.5f, 1.5f);
  return bn;
}

ConvBn rand_proj(Rng& rng, int64_t cin, int64_t cout, bool with_bn = true) {
  ConvBn l;
  l.conv.weight = rng.truncated_normal_tensor({cout, cin, 1, 1}, 0.1f);
  if (with_bn) l.bn = rand_bn(rng, cout);
  return l;
}

ShmaParams rand_shma(Rng& rng, int64_t c, int64_t d) {
  ShmaParams p;
  p.query = rand_proj(rng, c, d);
  p.key = rand_proj(rng, c, d);
  p.value = rand_proj(rng, c, c);
  p.feature = rand_proj(rng, c, c);
  p.out = rand_proj(rng, c, c);
  p.attn_scale = float(1.0 / std::sqrt(double(d)));
  return p;
}

MhaParams rand_mha(Rng& rng, int64_t c, int heads) {
  MhaParams p;
  p.query = rand_proj(rng, c, c);
  p.key = rand_proj(rng, c, c);
  p.value = rand_proj(rng, c, c);
  p.out = rand_proj(rng, c, c);
  p.num_heads = heads;
  return p;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::abs(double(a.data()[i]) - double(b.data()[i])));
  }
  return worst;
}

double max_rel_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double diff = std::abs(double(a.data()[i]) - double(b.data()[i]));
    worst = std::max(worst, diff / std::max(1.0, std::abs(double(b.data()[i]))));
  }
  return worst;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (int64_t i = 0; i < a.numel(); ++i) {
    if (a.data()[i] != b.data()[i]) return false;
  }
  return true;
}

// ---- the individual checks ------------------------------------------------

CheckResult check_permute_roundtrip(uint64_t seed) {
  Rng rng(seed);
  Tensor t = rng.normal_tensor({2, 3, 4, 5}, 0.0f, 1.0f);
  LayoutCounter counter;
  Tensor back;
  {
    LayoutCounterScope scope(counter);
    back = permute(permute(t, {0, 2, 3, 1}), {0, 3, 1, 2});
  }
  bool ok = bitwise_equal(t, back) && counter.permutes == 2;
  return {"permute-roundtrip", ok,
          ok ? "inverse permutation restores the tensor; 2 layout changes recorded"
             : "roundtrip mismatch or wrong layout count (" + std::to_string(counter.permutes) +
                   ")"};
}

CheckResult check_matmul_oracle(uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int c = 0; c < 20; ++c) {
    int64_t m = rng.uniform_int(1, 8), k = rng.uniform_int(1, 8), n = rng.uniform_int(1, 8);
    bool ta = rng.uniform_int(0, 1), tb = rng.uniform_int(0, 1);
    bool batched = rng.uniform_int(0, 1);
    std::vector<int64_t> sa = ta ? std::vector<int64_t>{k, m} : std::vector<int64_t>{m, k};
    std::vector<int64_t> sb = tb ? std::vector<int64_t>{n, k} : std::vector<int64_t>{k, n};
    if (batched) {
      sa.insert(sa.begin(), 3);
      sb.insert(sb.begin(), 3);
    }
    Tensor a = rng.normal_tensor(sa, 0.0f, 1.0f);
    Tensor b = rng.normal_tensor(sb, 0.0f, 1.0f);
    worst = std::max(worst, max_rel_diff(matmul(a, b, ta, tb), ref::matmul_ref(a, b, ta, tb)));
  }
  bool ok = worst <= 1e-6;
  return {"matmul-oracle", ok, "max rel diff " + sci(worst) + " over 20 cases (bound 1e-06)"};
}

CheckResult check_conv_oracle(uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  const int kernels[4] = {1, 3, 5, 7};
  for (int c = 0; c < 20; ++c) {
    int64_t n = rng.uniform_int(1, 2), cin = 4, cout = 4;
    int k = kernels[rng.uniform_int(0, 3)];
    int stride = rng.uniform_int(1, 2);
    bool depthwise = rng.uniform_int(0, 1);
    ConvParams p;
    p.groups = depthwise ? int(cin) : 1;
    p.weight = rng.normal_tensor({cout, cin / p.groups, k, k}, 0.0f, 0.2f);
    p.bias = rng.normal_tensor({cout}, 0.0f, 0.2f);
    p.stride = stride;
    p.padding = k / 2;
    Tensor x = rng.normal_tensor({n, cin, 8, 8}, 0.0f, 1.0f);
    worst = std::max(worst, max_abs_diff(conv2d(x, p), ref::conv2d_ref(x, p)));
  }
  bool ok = worst <= 1e-5;
  return {"conv-oracle", ok, "max abs diff " + sci(worst) + " over 20 cases (bound 1e-05)"};
}

CheckResult check_bn_validation(uint64_t seed) {
  Rng rng(seed);
  BnParams bn = rand_bn(rng, 4);
  bool rejected_eps = false, rejected_shape = false;
  BnParams bad_eps = bn;
  bad_eps.eps = -1e-5f;
  try {
    validate_bn(bad_eps);
  } catch (const ArgumentError&) {
    rejected_eps = true;
  }
  BnParams bad_shape = bn;
  bad_shape.gamma = Tensor::ones({3});
  try {
    validate_bn(bad_shape);
  } catch (const ShapeError&) {
    rejected_shape = true;
  }
  bool ok = rejected_eps && rejected_shape;
  return {"bn-validation", ok,
          ok ? "negative eps and mismatched extents both rejected"
             : "a malformed BnParams slipped through validation"};
}

CheckResult check_softmax_rows(uint64_t seed) {
  Rng rng(seed);
  Tensor x = rng.normal_tensor({4, 7, 13}, 0.0f, 10.0f);
  Tensor s = softmax_lastdim(x);
  double worst_sum = 0.0;
  for (int64_t r = 0; r < 4 * 7; ++r) {
    double sum = 0.0;
    for (int64_t c = 0; c < 13; ++c) sum += s.data()[r * 13 + c];
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
  }
  // Shifting by +123 makes the naive exp overflow (e^123 > f32 max); the
  // max-subtracted form must stay finite and near-identical. The comparison
  // bound is looser than the oracle bound because adding 123 rounds the
  // inputs themselves to ~1e-5 granularity.
  Tensor shifted = x;
  for (float& v : shifted.vec()) v += 123.0f;
  Tensor s2 = softmax_lastdim(shifted);
  bool finite = true;
  for (float v : s2.vec()) finite = finite && std::isfinite(v);
  double shift_diff = max_abs_diff(s2, s);
  bool ok = worst_sum <= 1e-6 && finite && shift_diff <= 1e-4;
  return {"softmax-rows", ok,
          "row-sum error " + sci(worst_sum) + " (bound 1e-06); +123 shift stays finite, drift " +
              sci(shift_diff) + " (bound 1e-04)"};
}

CheckResult check_attention_oracle(uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int c = 0; c < 10; ++c) {
    int64_t n = rng.uniform_int(1, 2), l = rng.uniform_int(2, 16);
    int64_t d = rng.uniform_int(1, 8), cv = rng.uniform_int(1, 8);
    float scale = float(1.0 / std::sqrt(double(d)));
    Tensor q = rng.normal_tensor({n, l, d}, 0.0f, 1.0f);
    Tensor k = rng.normal_tensor({n, l, d}, 0.0f, 1.0f);
    Tensor v = rng.normal_tensor({n, l, cv}, 0.0f, 1.0f);
    worst = std::max(worst, max_abs_diff(sha(q, k, v), ref::sha_ref(q, k, v, scale)));
  }
  bool ok = worst <= 1e-6;
  return {"attention-oracle", ok, "max abs diff " + sci(worst) + " over 10 cases (bound 1e-06)"};
}

CheckResult check_window_roundtrip(uint64_t seed) {
  Rng rng(seed);
  Tensor x = rng.normal_tensor({2, 16, 8, 8}, 0.0f, 1.0f);
  for (int p : {2, 4}) {
    Tensor win = window_partition(x, p);
    if (!bitwise_equal(window_reverse(win, p, 8, 8), x)) {
      return {"window-roundtrip", false, "reverse(partition) changed data for P=" +
                                             std::to_string(p)};
    }
    for (int chunks : {1, 2, 4, 16}) {
      if (!bitwise_equal(chunked_window_partition(x, p, chunks), win)) {
        return {"window-roundtrip", false,
                "chunked partition differs for P=" + std::to_string(p) + ", chunks=" +
                    std::to_string(chunks)};
      }
      if (!bitwise_equal(chunked_window_reverse(win, p, 8, 8, chunks), x)) {
        return {"window-roundtrip", false,
                "chunked reverse differs for P=" + std::to_string(p) + ", chunks=" +
                    std::to_string(chunks)};
      }
    }
  }
  return {"window-roundtrip", true,
          "bit-exact partition/reverse roundtrips, chunked == unchunked"};
}

CheckResult check_modulation_bounds(uint64_t seed) {
  Rng rng(seed);
  ShmaParams p = rand_shma(rng, 32, 16);
  const float scales[5] = {1.0f, 10.0f, 100.0f, 1000.0f, 10000.0f};
  for (int c = 0; c < 100; ++c) {
    float s = scales[c % 5];
    Tensor x = rng.uniform_tensor({1, 32, 6, 6}, -s, s);
    Tensor m = shma_modulation(x, p);
    for (int64_t i = 0; i < m.numel(); ++i) {
      float v = m.data()[i];
      if (!std::isfinite(v) || v <= 0.0f || v >= 1.0f) {
        return {"modulation-bounds", false,
                "element " + std::to_string(v) + " escaped (0,1) at input scale " +
                    std::to_string(s)};
      }
    }
  }
  return {"modulation-bounds", true,
          "gated product strictly inside (0,1) for 100 inputs up to 1e4 magnitude"};
}

CheckResult check_gradient(uint64_t seed) {
  Rng rng(seed);
  ShmaParams p = rand_shma(rng, 4, 2);
  Tensor x = rng.normal_tensor({1, 4, 2, 2}, 0.0f, 1.0f);
  ref::GradCheckReport rep = ref::grad_check_shma(x, p, 1e-3);
  bool ok = rep.max_rel_err <= 1e-3;
  return {"gradient-check", ok,
          "max rel err " + sci(rep.max_rel_err) + " at " + rep.worst + " (bound 1e-03)"};
}

CheckResult check_fold_layer(uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int c = 0; c < 8; ++c) {
    int64_t cin = 4, cout = 6;
    ConvParams conv;
    conv.weight = rng.normal_tensor({cout, cin, 3, 3}, 0.0f, 0.2f);
    if (c % 2) conv.bias = rng.normal_tensor({cout}, 0.0f, 0.2f);
    conv.padding = 1;
    BnParams bn = rand_bn(rng, cout);
    Tensor x = rng.normal_tensor({2, cin, 8, 8}, 0.0f, 1.0f);
    Tensor unfused = batchnorm_infer(conv2d(x, conv), bn);
    Tensor fused = conv2d(x, fold_bn_into_conv(conv, bn));
    worst = std::max(worst, max_abs_diff(unfused, fused));
  }
  bool ok = worst <= 1e-4;
  return {"fold-layer", ok, "max abs diff " + sci(worst) + " over 8 layers (bound 1e-04)"};
}

CheckResult check_fuse_model(const ModelConfig& cfg, uint64_t seed) {
  Model m = build_model(cfg, seed);
  Model fused = fuse_model(m);
  Rng rng(seed + 1);
  Tensor x = rng.normal_tensor({1, 3, cfg.input_resolution, cfg.input_resolution}, 0.0f, 1.0f);
  double drift = max_abs_diff(forward(m, x), forward(fused, x));
  bool ok = drift <= 1e-3;
  return {"fuse-model", ok,
          cfg.name + " logit drift " + sci(drift) + " after folding (bound 1e-03)"};
}

CheckResult check_cost_formula(uint64_t seed) {
  Rng rng(seed);
  const int64_t sides[6] = {4, 6, 8, 12, 14, 16};
  for (int c = 0; c < 10; ++c) {
    int64_t h = sides[rng.uniform_int(0, 5)];
    int64_t w = h;
    int64_t cc = 16 * rng.uniform_int(1, 4);
    int64_t r = 1;
    do {
      r = rng.uniform_int(1, 4);
    } while (cc % r != 0);
    std::vector<int64_t> ps;
    for (int64_t p = 1; p <= h; ++p) {
      if (h % p == 0) ps.push_back(p);
    }
    int64_t p = ps[rng.uniform_int(0, int(ps.size()) - 1)];
    ShmaParams params = rand_shma(rng, cc, cc / r);
    long long counted = count_macs_shma(params, h, w, p == h ? 0 : int(p));
    long long formula = shma_complexity_formula(h, w, cc, p, r);
    if (counted != formula) {
      return {"cost-formula", false,
              "counter " + std::to_string(counted) + " != closed form " +
                  std::to_string(formula) + " at H=W=" + std::to_string(h) + " C=" +
                  std::to_string(cc) + " P=" + std::to_string(p) + " R=" + std::to_string(r)};
    }
  }
  // Ratio-4 FFN costs exactly 8HWC^2.
  int64_t h = 14, w = 14, cc = 32;
  ConvBn up = rand_proj(rng, cc, 4 * cc);
  ConvBn down = rand_proj(rng, 4 * cc, cc);
  long long ffn = count_macs_ffn(up, down, h, w);
  if (ffn != 8 * h * w * cc * cc) {
    return {"cost-formula", false, "ratio-4 FFN cost " + std::to_string(ffn) + " != 8HWC^2"};
  }
  return {"cost-formula", true,
          "counter equals the closed form exactly on 10 random shapes; ratio-4 FFN = 8HWC^2"};
}

CheckResult check_layout_counts(uint64_t seed) {
  Rng rng(seed);
  Tensor x = rng.normal_tensor({2, 32, 8, 8}, 0.0f, 1.0f);
  ShmaParams sp = rand_shma(rng, 32, 16);
  MhaParams mp = rand_mha(rng, 32, 4);
  MhaParams single = rand_mha(rng, 32, 1);

  LayoutCounter counter;
  long long shma_permutes, sha_permutes, mha_permutes;
  {
    LayoutCounterScope scope(counter);
    shma_forward(x, sp);
    shma_permutes = counter.permutes;
    sha_block_forward(x, single);
    sha_permutes = counter.permutes - shma_permutes;
    mha_forward(x, mp);
    mha_permutes = counter.permutes - shma_permutes - sha_permutes;
  }
  bool ok = shma_permutes == 0 && sha_permutes == 0 && mha_permutes == 3;
  return {"layout-counts", ok,
          "permutes per block: shma " + std::to_string(shma_permutes) + ", single-head " +
              std::to_string(sha_permutes) + ", multi-head " + std::to_string(mha_permutes) +
              " (want 0/0/3)"};
}

CheckResult check_mha_collapse(uint64_t seed) {
  Rng rng(seed);
  MhaParams p = rand_mha(rng, 16, 1);
  Tensor x = rng.normal_tensor({2, 16, 4, 4}, 0.0f, 1.0f);
  double diff = max_abs_diff(mha_forward(x, p), sha_block_forward(x, p));
  bool ok = diff <= 1e-6;
  return {"mha-h1-collapse", ok,
          "h=1 multi-head vs single-head path: max abs diff " + sci(diff) + " (bound 1e-06)"};
}

CheckResult check_shma_oracle(uint64_t seed) {
  Rng rng(seed);
  ShmaParams p = rand_shma(rng, 4, 2);
  Tensor x = rng.normal_tensor({2, 4, 2, 2}, 0.0f, 1.0f);
  double diff = max_abs_diff(shma_forward(x, p), ref::shma_forward_ref(x, p));
  bool ok = diff <= 1e-5;
  return {"shma-oracle", ok,
          "block output vs double-precision reference: max abs diff " + sci(diff) +
              " (bound 1e-05)"};
}

}  // namespace

ModelConfig resolve_config(const std::string& target) {
  for (const std::string& name : preset_names()) {
    if (name == target) return preset_config(target);
  }
  std::ifstream probe(target);
  if (probe.good()) return load_config_file(target);
  std::string names;
  for (const std::string& name : preset_names()) {
    if (!names.empty()) names += ", ";
    names += name;
  }
  throw ArgumentError("'" + target + "' is neither a preset nor a readable config file; presets: " +
                      names);
}

std::vector<CheckResult> run_verification(const ModelConfig& cfg, uint64_t seed) {
  std::vector<CheckResult> results;
  results.push_back(check_permute_roundtrip(seed + 1));
  results.push_back(check_matmul_oracle(seed + 2));
  results.push_back(check_conv_oracle(seed + 3));
  results.push_back(check_bn_validation(seed + 4));
  results.push_back(check_softmax_rows(seed + 5));
  results.push_back(check_attention_oracle(seed + 6));
  results.push_back(check_window_roundtrip(seed + 7));
  results.push_back(check_modulation_bounds(seed + 8));
  results.push_back(check_gradient(seed + 9));
  results.push_back(check_fold_layer(seed + 10));
  results.push_back(check_cost_formula(seed + 11));
  results.push_back(check_layout_counts(seed + 12));
  results.push_back(check_mha_collapse(seed + 13));
  results.push_back(check_shma_oracle(seed + 14));
  results.push_back(check_fuse_model(cfg, seed + 15));
  return results;
}

// ---- describe -------------------------------------------------------------

namespace {

std::string role_short(WindowRole r) {
  switch (r) {
    case WindowRole::PartitionEntry: return "entry";
    case WindowRole::Interior: return "interior";
    case WindowRole::ReverseExit: return "exit";
    case WindowRole::None: break;
  }
  return "none";
}

std::string block_desc(const BlockSpec& b) {
  switch (b.kind) {
    case BlockKind::Conv:
      return "conv(k" + std::to_string(b.kernel) + ",r" + std::to_string(b.expansion) + ")";
    case BlockKind::Shma:
      return "shma(hd" + std::to_string(b.head_dim) + ",r" + std::to_string(b.expansion) + ")";
    case BlockKind::Sha:
      return "sha(r" + std::to_string(b.expansion) + ")";
    case BlockKind::Mha:
      return "mha(h" + std::to_string(b.heads) + ",r" + std::to_string(b.expansion) + ")";
    case BlockKind::WindowShma:
      return "wshma(hd" + std::to_string(b.head_dim) + ",r" + std::to_string(b.expansion) +
             ",w" + std::to_string(b.window) + "," + role_short(b.role) + ",c" +
             std::to_string(b.n_chunks) + ")";
  }
  return "?";
}

bool same_spec(const BlockSpec& a, const BlockSpec& b) {
  return a.kind == b.kind && a.channels == b.channels && a.expansion == b.expansion &&
         a.kernel == b.kernel && a.head_dim == b.head_dim && a.heads == b.heads &&
         a.window == b.window && a.role == b.role && a.n_chunks == b.n_chunks;
}

}  // namespace

int cmd_describe(const std::string& target, bool as_json, std::ostream& out) {
  ModelConfig cfg = resolve_config(target);
  Model m = build_model(cfg, 0);
  CostReport cost = cost_report(m, cfg.input_resolution);
  auto shapes = stage_feature_shapes(cfg, cfg.input_resolution);

  if (as_json) {
    nlohmann::json j;
    j["config"] = nlohmann::json::parse(save_config(cfg));
    nlohmann::json metrics;
    metrics["params"] = cost.params;
    metrics["macs"] = cost.macs;
    metrics["gmacs"] = double(cost.macs) / 1e9;
    metrics["resolution"] = cfg.input_resolution;
    metrics["stem_macs"] = cost.stem_macs;
    metrics["head_macs"] = cost.head_macs;
    metrics["stages"] = nlohmann::json::array();
    for (int s = 0; s < 4; ++s) {
      metrics["stages"].push_back({{"channels", shapes[s].channels},
                                   {"height", shapes[s].height},
                                   {"width", shapes[s].width},
                                   {"macs", cost.stage_macs[s]}});
    }
    j["metrics"] = std::move(metrics);
    out << j.dump(2) << "\n";
    return 0;
  }

  out << cfg.name << "  input " << cfg.input_resolution << "x" << cfg.input_resolution
      << "  classes " << cfg.num_classes << "\n";
  out << "stem widths " << cfg.stem.c1 << "/" << cfg.stem.c2 << "/" << cfg.stem.c3
      << " (stride 4)\n\n";
  out << "stage  output    width  blocks\n";
  for (int s = 0; s < 4; ++s) {
    std::ostringstream head;
    head << "    " << (s + 1) << "  " << std::left << std::setw(8)
         << (std::to_string(shapes[s].height) + "x" + std::to_string(shapes[s].width))
         << std::right << std::setw(7) << shapes[s].channels << "  ";
    std::string indent(head.str().size(), ' ');
    const auto& blocks = cfg.stages[s].blocks;
    bool first = true;
    for (size_t b = 0; b < blocks.size();) {
      size_t run = b + 1;
      while (run < blocks.size() && same_spec(blocks[run], blocks[b])) ++run;
      out << (first ? head.str() : indent) << (run - b) << " x " << block_desc(blocks[b])
          << "\n";
      first = false;
      b = run;
    }
  }
  out << "\nparams  " << commas(cost.params) << "  (" << fixed3(double(cost.params) / 1e6)
      << "M)\n";
  out << "macs    " << commas(cost.macs) << "  (" << fixed3(double(cost.macs) / 1e9)
      << " GMACs @ " << cfg.input_resolution << ")\n";
  return 0;
}

int cmd_verify(const std::string& target, uint64_t seed, std::ostream& out) {
  ModelConfig cfg = resolve_config(target);
  std::vector<CheckResult> results = run_verification(cfg, seed);
  int passed = 0;
  for (const CheckResult& r : results) {
    out << (r.passed ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << "\n";
    if (r.passed) ++passed;
  }
  out << "verification: " << passed << "/" << results.size() << " checks passed\n";
  return passed == int(results.size()) ? 0 : 1;
}

int cmd_bench(const std::string& target, int resolution, int runs, int warmups, uint64_t seed,
              const std::string& out_path, std::ostream& out) {
  ModelConfig cfg = resolve_config(target);
  Model m = build_model(cfg, seed);
  if (resolution <= 0) resolution = cfg.input_resolution;
  BenchReport report = run_bench(m, resolution, runs, warmups, seed);
  std::string json = bench_report_json(report);
  if (!out_path.empty()) {
    std::ofstream f(out_path, std::ios::trunc);
    if (!f) throw IoError("cannot open '" + out_path + "' for writing");
    f << json;
    if (!f) throw IoError("short write to '" + out_path + "'");
  }
  out << json;
  return 0;
}

int cmd_infer(const std::string& target, const std::string& weights_path,
              const std::string& image_path, int topk, uint64_t seed, bool random_weights,
              std::ostream& out) {
  ModelConfig cfg = resolve_config(target);
  if (topk <= 0) throw ArgumentError("--topk must be positive");
  Model m = random_weights ? build_model(cfg, seed) : build_model(cfg, load_weights(weights_path));
  Tensor img = load_image_ppm(image_path);
  Tensor logits = forward(m, img);
  Tensor probs = softmax_lastdim(logits);

  int64_t classes = probs.extent(1);
  std::vector<int64_t> order(static_cast<size_t>(classes));
  std::iota(order.begin(), order.end(), 0);
  // Strict-greater comparator + stable sort: ties keep ascending index order.
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    return probs.at({0, a}) > probs.at({0, b});
  });
  int64_t k = std::min<int64_t>(topk, classes);
  for (int64_t i = 0; i < k; ++i) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", double(probs.at({0, order[i]})));
    out << order[i] << " " << buf << "\n";
  }
  return 0;
}

int cmd_similarity(const std::string& target, const std::string& weights_path,
                   const std::string& image_path, uint64_t seed, std::ostream& out) {
  ModelConfig cfg = resolve_config(target);
  Model m = weights_path.empty() ? build_model(cfg, seed)
                                 : build_model(cfg, load_weights(weights_path));
  Tensor x = image_path.empty()
                 ? Rng(seed + 1).normal_tensor(
                       {1, 3, cfg.input_resolution, cfg.input_resolution}, 0.0f, 1.0f)
                 : load_image_ppm(image_path);

  std::vector<std::vector<Tensor>> heads;
  ForwardTrace trace;
  trace.head_outputs = &heads;
  forward(m, x, &trace);
  if (heads.empty()) {
    throw ArgumentError("'" + cfg.name + "' has no multi-head attention blocks to compare");
  }

  size_t next = 0;
  for (const AttnRecord& rec : trace.attention) {
    if (rec.kind != BlockKind::Mha) continue;
    const std::vector<Tensor>& h = heads[next++];
    HeadSimilarity sim = head_cosine_similarity(h);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%+.4f", sim.mean_cosine);
    out << "stage " << (rec.stage + 1) << " block " << rec.block << "  heads " << h.size()
        << "  mean cosine " << buf << "\n";
  }
  return 0;
}

int cmd_fuse(const std::string& target, const std::string& weights_in,
             const std::string& weights_out, uint64_t seed, std::ostream& out) {
  ModelConfig cfg = resolve_config(target);
  Model m =
      weights_in.empty() ? build_model(cfg, seed) : build_model(cfg, load_weights(weights_in));
  Model fused = fuse_model(m);

  Rng rng(seed + 1);
  Tensor x = rng.normal_tensor({1, 3, cfg.input_resolution, cfg.input_resolution}, 0.0f, 1.0f);
  double drift = max_abs_diff(forward(m, x), forward(fused, x));

  save_weights(collect_weights(fused), weights_out);
  out << "wrote " << weights_out << "\n";
  out << "max logit drift " << sci(drift) << " (bound 1e-03)\n";
  return drift <= 1e-3 ? 0 : 1;
}

}  // namespace iformer
