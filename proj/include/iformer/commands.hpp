#pragma once

// The operations behind the CLI subcommands, factored out so tests can call
// them with a captured stream. Each returns a process exit code: 0 success,
// 1 verification failure. Usage, config, and I/O problems surface as the
// corresponding exceptions; the CLI maps them to exit codes 2 and 3.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "iformer/model.hpp"

namespace iformer {

// Accepts a preset name or a path to a model config JSON file.
ModelConfig resolve_config(const std::string& target);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// The self-check suite: kernel oracles, fold equivalence, window roundtrips,
// gate boundedness, the finite-difference gradient check, cost-counter
// cross-checks, and layout-counter audits. The fuse check runs on `cfg`;
// the rest use small synthetic instances. Deterministic for a given seed.
std::vector<CheckResult> run_verification(const ModelConfig& cfg, uint64_t seed);

int cmd_describe(const std::string& target, bool as_json, std::ostream& out);
int cmd_verify(const std::string& target, uint64_t seed, std::ostream& out);
int cmd_bench(const std::string& target, int resolution, int runs, int warmups, uint64_t seed,
              const std::string& out_path, std::ostream& out);
int cmd_infer(const std::string& target, const std::string& weights_path,
              const std::string& image_path, int topk, uint64_t seed, bool random_weights,
              std::ostream& out);
int cmd_similarity(const std::string& target, const std::string& weights_path,
                   const std::string& image_path, uint64_t seed, std::ostream& out);
int cmd_fuse(const std::string& target, const std::string& weights_in,
             const std::string& weights_out, uint64_t seed, std::ostream& out);

}  // namespace iformer
