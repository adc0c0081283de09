#include <CLI11.hpp>
#include <cstdio>

#include "moma/ablation.hpp"

using namespace moma;

int main(int argc, char** argv) {
  CLI::App app{"moma-ablate: scripted ablation tables on the toy benchmark"};
  std::string name, config_path;
  AblationPaths paths;
  app.add_option("--name", name, "modes|steps|cfg_r|head_depth|components")
      ->required();
  app.add_option("--train-data", paths.train_manifest, "training manifest")
      ->required();
  app.add_option("--test-data", paths.test_manifest, "held-out manifest")
      ->required();
  app.add_option("--out-dir", paths.out_dir, "output directory")->required();
  app.add_option("--config", config_path, "key = value config file");
  app.add_option("--vae", paths.vae_ckpt, "reuse a trained VAE checkpoint");
  app.add_option("--mad", paths.mad_ckpt, "reuse a trained MAD checkpoint");
  app.add_option("--evaluator", paths.eval_ckpt, "reuse a trained evaluator");
  std::string seed;
  app.add_option("--seed", seed, "master seed");
  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = RunConfig::defaults();
    if (!config_path.empty()) cfg.load_file(config_path);
    if (!seed.empty()) cfg.set("seed", seed);
    const AblationTable table = run_ablation(name, cfg, paths);
    std::printf("%s", table.to_markdown().c_str());
    return 0;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 2;
  }
}
