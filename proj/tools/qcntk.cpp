/* Copyright 2026 The qcntk Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qcntk/errors.hpp"
#include "qcntk/experiments.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qcntk: quantum-classical NTK experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir, seed;
  std::vector<std::string> overrides;
  auto* run = app.add_subcommand("run", "Run one configured experiment");
  run->add_option("--config", config_path, "INI run configuration")->required();
  run->add_option("--seed", seed, "Root seed (overrides run.seed)");
  run->add_option("--out", out_dir, "Artifact directory (overrides run.out)");
  run->add_option("--override", overrides, "section.key=value, repeatable");

  std::string plot_dir;
  auto* plot = app.add_subcommand("plotdata", "Convert run artifacts into long-format plot CSVs");
  plot->add_option("dir", plot_dir, "Artifact directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) {
      auto cfg = qcntk::experiments::RunConfig::from_file(config_path);
      for (const auto& o : overrides) cfg.apply_override(o);
      if (!seed.empty()) cfg.set("run.seed", seed);
      if (!out_dir.empty()) cfg.set("run.out", out_dir);
      if (cfg.str("run.out").empty()) throw qcntk::ConfigError("run.out: required (set it or pass --out)");
      const auto result = qcntk::experiments::run(cfg, cfg.str("run.out"));
      for (const auto& a : result.artifacts) std::cout << (std::filesystem::path(cfg.str("run.out")) / a).string() << "\n";
      return kExitOk;
    }
    for (const auto& f : qcntk::experiments::emit_plotdata(plot_dir))
      std::cout << (std::filesystem::path(plot_dir) / "plotdata" / f).string() << "\n";
    return kExitOk;
  } catch (const qcntk::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const qcntk::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
