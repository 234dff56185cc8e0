#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "iformer/commands.hpp"
#include "iformer/tensor.hpp"

// Exit codes: 0 success, 1 verification failure, 2 usage/config error,
// 3 I/O error.
int main(int argc, char** argv) {
  CLI::App app{"iformer: inference and analysis for mobile hybrid vision networks"};
  app.require_subcommand(1);

  uint64_t seed = 0;
  int threads = 1;
  if (const char* env = std::getenv("IFORMER_THREADS")) {
    threads = std::max(1, std::atoi(env));
  }
  app.add_option("--seed", seed, "seed for every stochastic path (default 0)");
  app.add_option("--threads", threads,
                 "worker threads for conv/matmul loops (default $IFORMER_THREADS or 1)");

  std::string de_target;
  bool de_json = false;
  CLI::App* de = app.add_subcommand("describe", "print architecture, params, and MACs");
  de->add_option("model", de_target, "preset name or config JSON path")->required();
  de->add_flag("--json", de_json, "emit config + metrics as JSON");

  std::string ve_target;
  CLI::App* ve = app.add_subcommand("verify", "run the numeric self-check suite");
  ve->add_option("model", ve_target, "preset name or config JSON path")->required();

  std::string be_target, be_out;
  int be_res = 0, be_runs = 10, be_warm = 3;
  CLI::App* be = app.add_subcommand("bench", "time batch-1 forwards on this host");
  be->add_option("model", be_target, "preset name or config JSON path")->required();
  be->add_option("--resolution", be_res, "input edge length (default: the config's)");
  be->add_option("--runs", be_runs, "measured runs, at least 5 (default 10)");
  be->add_option("--warmups", be_warm, "warmup runs, at least 3 (default 3)");
  be->add_option("--out", be_out, "also write the JSON report to this path");

  std::string in_target, in_image, in_weights;
  bool in_rand = false;
  int in_topk = 5;
  CLI::App* in = app.add_subcommand("infer", "classify a PPM image");
  in->add_option("model", in_target, "preset name or config JSON path")->required();
  in->add_option("image", in_image, "binary P6 PPM at the model resolution")->required();
  in->add_option("--weights", in_weights, "IFW1 weight snapshot");
  in->add_flag("--random-weights", in_rand, "use seeded random weights instead of a snapshot");
  in->add_option("--topk", in_topk, "ranked classes to print (default 5)");

  std::string si_target, si_weights, si_image;
  bool si_rand = false;
  CLI::App* si =
      app.add_subcommand("similarity", "mean cosine similarity between attention heads");
  si->add_option("model", si_target, "preset name or config JSON path")->required();
  si->add_option("--weights", si_weights, "IFW1 weight snapshot (default: seeded random)");
  si->add_option("--image", si_image, "probe image (default: seeded random input)");
  si->add_flag("--random-input", si_rand, "probe with a seeded random input");

  std::string fu_target, fu_in, fu_out;
  CLI::App* fu = app.add_subcommand("fuse", "fold BN away and write fused weights");
  fu->add_option("model", fu_target, "preset name or config JSON path")->required();
  fu->add_option("output", fu_out, "path for the fused IFW1 snapshot")->required();
  fu->add_option("--weights", fu_in, "input IFW1 snapshot (default: seeded random init)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    iformer::set_num_threads(threads);
    if (*de) return iformer::cmd_describe(de_target, de_json, std::cout);
    if (*ve) return iformer::cmd_verify(ve_target, seed, std::cout);
    if (*be) {
      return iformer::cmd_bench(be_target, be_res, be_runs, be_warm, seed, be_out, std::cout);
    }
    if (*in) {
      if (!in_rand && in_weights.empty()) {
        throw iformer::ArgumentError("infer needs --weights FILE or --random-weights");
      }
      if (in_rand && !in_weights.empty()) {
        throw iformer::ArgumentError("--weights and --random-weights are mutually exclusive");
      }
      return iformer::cmd_infer(in_target, in_weights, in_image, in_topk, seed, in_rand,
                                std::cout);
    }
    if (*si) {
      if (si_rand && !si_image.empty()) {
        throw iformer::ArgumentError("--image and --random-input are mutually exclusive");
      }
      return iformer::cmd_similarity(si_target, si_weights, si_image, seed, std::cout);
    }
    if (*fu) return iformer::cmd_fuse(fu_target, fu_in, fu_out, seed, std::cout);
  } catch (const iformer::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
