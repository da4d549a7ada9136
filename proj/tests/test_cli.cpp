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
#include "qcntk/experiments.hpp"

#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

using namespace qcntk;
using namespace qcntk::experiments;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("qcntk_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

int line_count(const fs::path& p) {
  std::ifstream is(p);
  std::string line;
  int n = 0;
  while (std::getline(is, line))
    if (!line.empty() && line[0] != '#') ++n;
  return n;
}

RunConfig config(const std::string& text) { return RunConfig::from_string(text); }

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

int run_binary(const std::string& args) {
  const char* bin = std::getenv("QCNTK_BIN");
  REQUIRE(bin != nullptr);
  const int status = std::system((std::string(bin) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config parsing", "[cli]") {
  const auto cfg = config("[run]\nexperiment = train-qcnn\nseed = 7\n[model]\nn0 = 64\n");
  CHECK(cfg.str("run.experiment") == "train-qcnn");
  CHECK(cfg.u64("run.seed") == 7);
  CHECK(cfg.integer("model.n0") == 64);
  CHECK(cfg.str("optimizer.kind") == "sgd");
  CHECK_NOTHROW(cfg.validate());

  auto check_error = [](const std::string& text, const std::string& field) {
    try {
      config(text).validate();
      FAIL("expected ConfigError for " << field);
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(field) != std::string::npos);
    }
  };
  check_error("[run]\nexperiment = train-qcnn\n[model]\nwidth = 3\n", "model.width");
  check_error("[run]\nexperiment = train-qcnn\n[extra]\nx = 1\n", "extra");
  check_error("stray = 1\n[run]\nexperiment = compare\n", "stray");
  check_error("[run]\nexperiment = fit-everything\n", "run.experiment");
  check_error("[run]\nseed = 3\n", "run.experiment");
  check_error("[run]\nexperiment = compare\n[model]\nn0 = many\n", "model.n0");
  check_error("[run]\nexperiment = compare\n[optimizer]\nlr = -1\n", "optimizer.lr");
  check_error("[run]\nexperiment = compare\n[dataset]\ngenerator = csv\n", "dataset.path");
  check_error("[run]\nexperiment = compare\n[kernel]\nkind = Gaussian\n", "kernel.kind");
  check_error("[run]\nexperiment = compare\n[sweep]\nshots = 10,0\n", "sweep.shots");

  auto o = config("[run]\nexperiment = compare\n");
  o.apply_override("compare.seeds = 2");
  CHECK(o.integer("compare.seeds") == 2);
  CHECK_THROWS_AS(o.apply_override("compare.seeds"), ConfigError);
  CHECK_THROWS_AS(o.apply_override("nope.key=1"), ConfigError);

  const auto round = RunConfig::from_string(o.to_ini());
  CHECK(round.values() == o.values());
}

TEST_CASE("theory-kernel on three points", "[cli]") {
  const auto out = scratch("theory");
  const auto cfg = config("[run]\nexperiment = theory-kernel\n[dataset]\nn_train = 3\n[optimizer]\nsteps = 0\n");
  const auto r = run(cfg, out);
  const auto km = kernel::read_gram_csv(out / "gram.csv");
  CHECK(km.entries.rows() == 3);
  CHECK(km.entries.cols() == 3);
  CHECK(km.kind == kernel::KernelKind::ThetaQ);
  const auto pd = nlohmann::json::parse(slurp(out / "pd_report.json"));
  CHECK(pd.contains("is_pd"));
  CHECK(pd.contains("min_eigenvalue"));
  const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  CHECK(manifest["config"]["dataset.n_train"] == "3");
  CHECK(manifest.contains("wall_time_seconds"));
  CHECK(manifest["seeds"]["root"] == 0);
  CHECK(RunConfig::from_file(out / "config.ini").values() == cfg.values());
  fs::remove_all(out);
}

TEST_CASE("train-qcnn with zero steps", "[cli]") {
  const auto out = scratch("zero");
  run(config("[run]\nexperiment = train-qcnn\n[dataset]\nn_train = 8\n[model]\nn0 = 16\n[optimizer]\nsteps = 0\n"), out);
  CHECK(line_count(out / "trajectory.csv") == 2);
  fs::remove_all(out);
}

TEST_CASE("identical config and seed give identical artifacts", "[cli]") {
  const std::string text =
      "[run]\nexperiment = train-qcnn\nseed = 5\n[dataset]\nn_train = 10\nn_test = 4\n[model]\nn0 = 32\ntheory = "
      "true\n[optimizer]\nsteps = 20\nlr = 1e-3\n";
  const auto a = scratch("repro_a"), b = scratch("repro_b");
  run(config(text), a);
  run(config(text), b);
  CHECK(slurp(a / "trajectory.csv") == slurp(b / "trajectory.csv"));
  CHECK(slurp(a / "theory.csv") == slurp(b / "theory.csv"));
  auto other = config(text);
  other.set("run.seed", "6");
  const auto c = scratch("repro_c");
  run(other, c);
  CHECK(slurp(a / "trajectory.csv") != slurp(c / "trajectory.csv"));
  for (const auto& d : {a, b, c}) fs::remove_all(d);
}

TEST_CASE("locality sweep on a twelve-feature CSV", "[cli]") {
  const auto out = scratch("locality");
  const fs::path csv = out / "input" / "features.csv";
  std::ostringstream rows;
  Rng rng(3);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int a = 0; a < 8; ++a) {
    double s = 0;
    for (int j = 0; j < 12; ++j) {
      const double v = u(rng);
      s += v;
      rows << io::format_double(v) << ",";
    }
    rows << (s > 60 ? 1 : 0) << "\n";
  }
  write_text(csv, rows.str());
  auto cfg = config("[run]\nexperiment = locality-sweep\n[dataset]\ngenerator = csv\nn_features = 12\nn_train = 8\n"
                    "[encoder]\nansatz = B\n[optimizer]\nsteps = 100\nlr = 0.1\n");
  cfg.set("dataset.path", csv.string());
  const auto r = run(cfg, out / "run");
  for (int m : {1, 2, 3, 4, 6}) {
    const auto tr = dynamics::read_trajectory_csv(out / "run" / ("theory_m" + std::to_string(m) + ".csv"));
    CHECK(tr.times.back() == Catch::Approx(10.0));
    CHECK(tr.cost.back() < tr.cost.front());
  }
  CHECK(line_count(out / "run" / "locality.csv") == 6);

  cfg.set("sweep.m_values", "5");
  CHECK_THROWS_AS(run(cfg, out / "bad"), ConfigError);
  fs::remove_all(out);
}

TEST_CASE("remaining experiments at small scale", "[cli]") {
  const auto base = scratch("small");
  const std::string q = "[dataset]\ngenerator = quantum\nn_train = 12\nn_test = 6\n[encoder]\nn = 2\n";

  run(config("[run]\nexperiment = train-qnn\n" + q + "[model]\nqnn_layers = 2\n[optimizer]\nkind = adam\nsteps = 5\n"),
      base / "qnn");
  const auto qnn = nlohmann::json::parse(slurp(base / "qnn" / "manifest.json"));
  CHECK(qnn["summary"]["parameters"] == 12);
  CHECK(qnn["summary"]["circuit_evaluations"] == 2 * 12 * 5 * 12);

  run(config("[run]\nexperiment = train-cnn\n[dataset]\nn_train = 10\n[model]\nn0 = 16\n[optimizer]\nsteps = 5\n"),
      base / "cnn");
  CHECK(line_count(base / "cnn" / "trajectory.csv") == 7);

  run(config("[run]\nexperiment = compare\n[compare]\nn_values = 2\nseeds = 2\nn_train = 10\nn_test = 5\nn0 = 16\n"
             "qcnn_steps = 5\ncnn_steps = 5\nqnn_steps = 1\nqnn_layers = 1\n"),
      base / "compare");
  CHECK(line_count(base / "compare" / "report.csv") == 7);
  CHECK(line_count(base / "compare" / "summary.csv") == 4);

  run(config("[run]\nexperiment = shot-sweep\n" + q +
             "[model]\nn0 = 16\n[optimizer]\nsteps = 10\n[sweep]\nshots = 100,10000\nrepeats = 3\n"),
      base / "shots");
  CHECK(line_count(base / "shots" / "shots.csv") == 7);
  const auto shots = nlohmann::json::parse(slurp(base / "shots" / "manifest.json"));
  CHECK(shots["summary"]["shot_rmse_slope"].get<double>() < 0);

  run(config("[run]\nexperiment = ntk-convergence\n[dataset]\nn_train = 5\n[sweep]\nwidths = 10,1000\nseeds = 2\n"),
      base / "ntk");
  CHECK(line_count(base / "ntk" / "convergence.csv") == 5);

  CHECK_THROWS_AS(run(config("[run]\nexperiment = shot-sweep\n[dataset]\nn_train = 5\n"), base / "bad"), ConfigError);
  fs::remove_all(base);
}

TEST_CASE("plot data", "[cli]") {
  const auto out = scratch("plot");
  run(config("[run]\nexperiment = train-qcnn\n[dataset]\nn_train = 6\n[model]\nn0 = 8\ntheory = true\n[optimizer]\n"
             "steps = 4\n"),
      out / "qcnn");
  const auto files = emit_plotdata(out / "qcnn");
  REQUIRE(files == std::vector<std::string>{"trajectory.csv"});
  const std::string first = slurp(out / "qcnn" / "plotdata" / "trajectory.csv");
  CHECK(first.rfind("series,x,y\ncost,0,", 0) == 0);
  CHECK(first.find("\ntheory,") != std::string::npos);
  emit_plotdata(out / "qcnn");
  CHECK(slurp(out / "qcnn" / "plotdata" / "trajectory.csv") == first);

  write_text(out / "cmp" / "report.csv",
             "model,n,seed,train_rmse,test_rmse,parameters,circuit_evaluations\nqnn,2,0,1,2,12,0\nqcnn,2,0,1,0.5,10,"
             "0\nqnn,3,0,1,3,18,0\n");
  emit_plotdata(out / "cmp");
  CHECK(slurp(out / "cmp" / "plotdata" / "compare.csv") == "series,x,y\nqcnn,2,0.5\nqnn,2,2\nqnn,3,3\n");

  fs::create_directories(out / "empty");
  CHECK_THROWS_AS(emit_plotdata(out / "empty"), Error);
  CHECK_THROWS_AS(emit_plotdata(out / "missing"), Error);
  fs::remove_all(out);
}

TEST_CASE("command-line exit codes", "[cli]") {
  const auto dir = scratch("exit");
  write_text(dir / "ok.ini", "[run]\nexperiment = theory-kernel\n[dataset]\nn_train = 3\n");
  write_text(dir / "bad.ini", "[run]\nexperiment = theory-kernel\n[dataset]\nsize = 3\n");
  write_text(dir / "diverge.ini",
             "[run]\nexperiment = train-cnn\n[dataset]\nn_train = 10\n[model]\nn0 = 16\n[optimizer]\nlr = 1e6\nsteps = 500\n");
  const std::string d = dir.string();
  CHECK(run_binary("run --config " + d + "/ok.ini --out " + d + "/ok --seed 3") == 0);
  CHECK(fs::exists(dir / "ok" / "gram.csv"));
  CHECK(run_binary("run --config " + d + "/ok.ini") == 2);
  CHECK(run_binary("run --config " + d + "/bad.ini --out " + d + "/bad") == 2);
  CHECK(run_binary("run --config " + d + "/ok.ini --out " + d + "/o2 --override kernel.L=zero") == 2);
  CHECK(run_binary("run --config " + d + "/missing.ini --out " + d + "/m") == 2);
  CHECK(run_binary("run --config " + d + "/diverge.ini --out " + d + "/div") == 3);
  CHECK(run_binary("plotdata " + d + "/ok") == 0);
  CHECK(fs::exists(dir / "ok" / "plotdata" / "spectrum.csv"));
  CHECK(run_binary("plotdata " + d + "/nowhere") != 0);
  CHECK(run_binary("frobnicate") != 0);
  fs::remove_all(dir);
}
