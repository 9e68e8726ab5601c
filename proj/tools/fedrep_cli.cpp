#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "fedrep/fedrep.hpp"

#include <CLI11.hpp>

namespace {

fedrep::RunConfig load_config(const std::string& path) {
  fedrep::RunConfig cfg =
      path.empty() ? fedrep::RunConfig{} : fedrep::parse_config(path);
  cfg.validate();
  return cfg;
}

std::vector<std::uint64_t> to_u64(const std::vector<long long>& v) {
  std::vector<std::uint64_t> out;
  for (long long x : v) out.push_back(static_cast<std::uint64_t>(x));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated representation-ensemble learning simulator"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow subcommand arguments

  int threads = 1;
  app.add_option("--threads", threads,
                 "Worker threads for client training (does not affect output)");
  int parallel = 1;
  app.add_option("--parallel", parallel,
                 "Concurrent runs in ablate/sweep matrices (does not affect output)");

  std::string run_config_path;
  auto* run_cmd = app.add_subcommand("run", "Execute one training run");
  run_cmd->add_option("config", run_config_path,
                      "Config file (JSON); omit for the built-in defaults");

  std::string abl_config_path;
  std::vector<std::string> variant_names = {"gca+both", "gca+none", "mean+none"};
  std::vector<long long> abl_seeds = {0, 1, 2, 3, 4};
  auto* abl_cmd =
      app.add_subcommand("ablate", "Run an aggregator/regularizer matrix");
  abl_cmd->add_option("config", abl_config_path, "Base config file");
  abl_cmd->add_option("--variants", variant_names,
                      "Variants as <aggregator>+<regularizer>")
      ->delimiter(',');
  abl_cmd->add_option("--seeds", abl_seeds, "Master seeds")->delimiter(',');

  std::string sweep_config_path;
  std::vector<int> sweep_batches = {64, 128, 256};
  std::vector<int> sweep_dims = {8, 16, 32};
  std::vector<long long> sweep_seeds = {0};
  auto* sweep_cmd =
      app.add_subcommand("sweep", "Communication sweep over public-set size and dimension");
  sweep_cmd->add_option("config", sweep_config_path, "Base config file");
  sweep_cmd->add_option("--batches", sweep_batches,
                        "Public items transmitted per round")
      ->delimiter(',');
  sweep_cmd->add_option("--dims", sweep_dims, "Representation dimensions")
      ->delimiter(',');
  sweep_cmd->add_option("--seeds", sweep_seeds, "Master seeds")->delimiter(',');

  auto* grad_cmd = app.add_subcommand(
      "gradcheck", "Finite-difference verification of every loss gradient");
  int grad_probes = 32;
  grad_cmd->add_option("--probes", grad_probes, "Probed coordinates per check");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      const auto cfg = load_config(run_config_path);
      fedrep::run_experiment(cfg, false, threads);
      return 0;
    }
    if (*abl_cmd) {
      const auto cfg = load_config(abl_config_path);
      std::vector<fedrep::Variant> variants;
      for (const auto& name : variant_names)
        variants.push_back(fedrep::parse_variant(name));
      const auto res = fedrep::run_ablation(cfg, variants, to_u64(abl_seeds),
                                            false, threads, parallel);
      std::cout << "pivot written to " << res.pivot_path << '\n';
      for (const auto& [name, mean] : res.pivot_mean_r1)
        std::cout << name << " mean_final_r1_sum=" << fedrep::format_full(mean)
                  << '\n';
      for (const auto& row : res.rows)
        if (!row.ok) return 1;
      return 0;
    }
    if (*sweep_cmd) {
      const auto cfg = load_config(sweep_config_path);
      const auto res =
          fedrep::run_comm_sweep(cfg, sweep_batches, sweep_dims,
                                 to_u64(sweep_seeds), false, threads, parallel);
      std::cout << "sweep written to " << res.csv_path << '\n';
      for (const auto& row : res.rows)
        if (!row.ok) return 1;
      return 0;
    }
    if (*grad_cmd) {
      const auto worst = fedrep::gradcheck_suite(grad_probes);
      bool ok = true;
      for (const auto& [name, err] : worst) {
        std::cout << name << " max_relative_error=" << fedrep::format_full(err)
                  << '\n';
        ok = ok && err < 1e-4;
      }
      std::cout << (ok ? "all gradients verified" : "GRADIENT CHECK FAILED")
                << '\n';
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
