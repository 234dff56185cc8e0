#pragma once

// Batch-1 forward timing on the host CPU. Numbers are informational: the
// report never claims cross-variant speed ordering; the structural
// layout-change counters are the comparable quantity.

#include <cstdint>
#include <string>
#include <vector>

#include "iformer/model.hpp"

namespace iformer {

struct BenchEntry {
  std::string scope;  // "op" | "block" | "stage" | "model"
  std::string name;
  int warmup_runs = 0;
  int measured_runs = 0;
  double median_us = 0.0;  // headline statistic
  double mean_us = 0.0;
  double p95_us = 0.0;
  long long macs = 0;
  long long layout_changes = 0;        // physical permutes per forward
  std::vector<double> samples_us;      // one per measured run
};

struct BenchReport {
  std::string host;
  std::string model;
  int resolution = 0;
  int threads = 1;
  std::vector<BenchEntry> entries;  // whole model first, then the four stages
};

// Runs `warmups` untimed forwards followed by `runs` timed ones on a seeded
// random [1,3,R,R] input. runs must be >= 5 and warmups >= 3. A resolution
// the model's windows cannot tile raises ShapeError.
BenchReport run_bench(const Model& m, int resolution, int runs, int warmups, uint64_t seed);

std::string bench_report_json(const BenchReport& r);

}  // namespace iformer
