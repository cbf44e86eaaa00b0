#include <malloc.h>

#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "battta/bench.hpp"
#include "battta/errors.hpp"

namespace {

using namespace battta;

// Keeps freed tensor buffers in the heap instead of returning them to the OS
// after every op; the training loops allocate and free the same sizes repeatedly.
void tune_allocator() {
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Bimodal test-time adaptation benchmark"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, out_dir;
  std::optional<std::uint64_t> seed;
  const std::vector<std::pair<std::string, int (*)(const bench::CommandContext&)>> commands{
      {"pretrain", bench::cmd_pretrain},
      {"corrupt", bench::cmd_corrupt},
      {"zeroshot", bench::cmd_zeroshot},
      {"adapt", bench::cmd_adapt},
      {"gradcheck", bench::cmd_gradcheck},
  };
  const std::map<std::string, std::string> help{
      {"pretrain", "train the dual encoder and write a checkpoint"},
      {"corrupt", "write corrupted dataset archives and a preview CSV"},
      {"zeroshot", "zero-shot accuracy per corruption and severity"},
      {"adapt", "run the adaptation sweep and write reports"},
      {"gradcheck", "finite-difference audit of losses and encoders"},
  };
  for (const auto& [name, fn] : commands) {
    auto* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("--config", config_path, "experiment config (JSON)");
    sub->add_option("--checkpoint", checkpoint, "checkpoint path (default <out>/checkpoint.btc)");
    sub->add_option("--out", out_dir, "output directory (overrides out_dir)");
    sub->add_option("--seed", seed, "single seed overriding the config seeds");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    bench::CommandContext ctx;
    if (!config_path.empty()) ctx.config = bench::ExperimentConfig::load(config_path);
    if (!out_dir.empty()) ctx.config.out_dir = out_dir;
    if (seed) {
      ctx.config.seeds = {*seed};
      ctx.config.pretrain.seed = *seed;
      ctx.config.gradcheck.seeds = {*seed};
    }
    ctx.out_dir = ctx.config.out_dir;
    ctx.checkpoint = checkpoint;
    for (const auto& [name, fn] : commands) {
      if (app.got_subcommand(name)) return fn(ctx);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return bench::exit_code_for(e);
  }
  return 1;
}
