#include "iformer/bench.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "iformer/cost.hpp"
#include "iformer/rng.hpp"

namespace iformer {

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double p95_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  size_t idx = static_cast<size_t>(std::ceil(0.95 * double(v.size()))) - 1;
  return v[std::min(idx, v.size() - 1)];
}

BenchEntry make_entry(std::string scope, std::string name, int warmups,
                      std::vector<double> samples, long long macs, long long layout_changes) {
  BenchEntry e;
  e.scope = std::move(scope);
  e.name = std::move(name);
  e.warmup_runs = warmups;
  e.measured_runs = static_cast<int>(samples.size());
  e.median_us = median_of(samples);
  e.mean_us = std::accumulate(samples.begin(), samples.end(), 0.0) / double(samples.size());
  e.p95_us = p95_of(samples);
  e.macs = macs;
  e.layout_changes = layout_changes;
  e.samples_us = std::move(samples);
  return e;
}

std::string host_descriptor() {
  std::string arch =
#if defined(__x86_64__)
      "x86_64";
#elif defined(__aarch64__)
      "aarch64";
#else
      "unknown-arch";
#endif
  return "linux/" + arch + ", " + std::to_string(std::thread::hardware_concurrency()) +
         " hardware threads";
}

}  // namespace

BenchReport run_bench(const Model& m, int resolution, int runs, int warmups, uint64_t seed) {
  if (runs < 5) throw ArgumentError("bench needs at least 5 measured runs");
  if (warmups < 3) throw ArgumentError("bench needs at least 3 warmup runs");

  // Retarget a copy of the model at the requested resolution; windows that
  // cannot tile the resulting grids surface as a shape error.
  Model bm = m;
  bm.config.input_resolution = resolution;
  try {
    validate_config(bm.config);
  } catch (const ConfigError& e) {
    throw ShapeError("resolution " + std::to_string(resolution) +
                     " is incompatible with this model: " + e.what());
  }

  Rng rng(seed);
  Tensor x = rng.normal_tensor({1, 3, resolution, resolution}, 0.0f, 1.0f);

  for (int i = 0; i < warmups; ++i) forward(bm, x);

  std::vector<double> model_samples;
  std::array<std::vector<double>, 4> stage_samples;
  ForwardTrace trace;
  for (int i = 0; i < runs; ++i) {
    trace = ForwardTrace{};
    forward(bm, x, &trace);
    model_samples.push_back(trace.total_ms * 1000.0);
    for (int s = 0; s < 4; ++s) stage_samples[s].push_back(trace.stage_ms[s] * 1000.0);
  }

  CostReport cost = cost_report(bm, resolution);

  BenchReport report;
  report.host = host_descriptor();
  report.model = m.config.name;
  report.resolution = resolution;
  report.threads = num_threads();
  report.entries.push_back(make_entry("model", m.config.name, warmups, std::move(model_samples),
                                      cost.macs, trace.layout_changes));
  for (int s = 0; s < 4; ++s) {
    report.entries.push_back(make_entry("stage", "stage" + std::to_string(s + 1), warmups,
                                        std::move(stage_samples[s]), cost.stage_macs[s],
                                        trace.stage_layout_changes[s]));
  }
  return report;
}

std::string bench_report_json(const BenchReport& r) {
  nlohmann::json j;
  j["host"] = r.host;
  j["model"] = r.model;
  j["resolution"] = r.resolution;
  j["threads"] = r.threads;
  j["entries"] = nlohmann::json::array();
  for (const BenchEntry& e : r.entries) {
    nlohmann::json je;
    je["scope"] = e.scope;
    je["name"] = e.name;
    je["warmup_runs"] = e.warmup_runs;
    je["measured_runs"] = e.measured_runs;
    je["median_us"] = e.median_us;
    je["mean_us"] = e.mean_us;
    je["p95_us"] = e.p95_us;
    je["macs"] = e.macs;
    je["layout_changes"] = e.layout_changes;
    je["samples_us"] = e.samples_us;
    j["entries"].push_back(std::move(je));
  }
  return j.dump(2) + "\n";
}

}  // namespace iformer
