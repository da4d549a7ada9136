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
#pragma once

/// Configuration-driven experiment runner: INI run configs, the experiment
/// catalogue, run manifests and long-format plot data.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "json.hpp"
#include "qcntk/data.hpp"
#include "qcntk/dynamics.hpp"
#include "qcntk/errors.hpp"
#include "qcntk/io.hpp"
#include "qcntk/kernel.hpp"
#include "qcntk/models.hpp"
#include "qcntk/nn.hpp"
#include "qcntk/qsim.hpp"
#include "qcntk/random.hpp"

namespace qcntk::experiments {

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"theory-kernel", "train-qcnn",     "train-qnn",  "train-cnn",
                                              "compare",       "locality-sweep", "shot-sweep", "ntk-convergence"};
  return names;
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

/// Flat `section.key -> value` map over a fixed schema. Every key has a
/// default; unknown keys are rejected.
class RunConfig {
 public:
  RunConfig() : values_(schema()) {}

  static const std::map<std::string, std::string>& schema() {
    static const std::map<std::string, std::string> s{
        {"run.experiment", ""},
        {"run.seed", "0"},
        {"run.out", ""},
        {"encoder.ansatz", "Bc"},
        {"encoder.n", "0"},
        {"encoder.seed", "0"},
        {"dataset.generator", "sin"},
        {"dataset.n_train", "50"},
        {"dataset.n_test", "0"},
        {"dataset.noise_sd", "0.05"},
        {"dataset.path", ""},
        {"dataset.n_features", "0"},
        {"dataset.task", "auto"},
        {"dataset.observable", "sum"},
        {"dataset.normalize_lo", "-1"},
        {"dataset.normalize_hi", "1"},
        {"kernel.kind", "ThetaQ"},
        {"kernel.L", "1"},
        {"kernel.xi", "auto"},
        {"kernel.activation", "relu"},
        {"kernel.mc_samples", "1000000"},
        {"kernel.m", "1"},
        {"model.n0", "1000"},
        {"model.m", "1"},
        {"model.hidden", ""},
        {"model.xi", "auto"},
        {"model.activation", "relu"},
        {"model.init", "unit_gaussian"},
        {"model.qnn_layers", "10"},
        {"model.shots", "0"},
        {"model.theory", "false"},
        {"optimizer.kind", "sgd"},
        {"optimizer.lr", "1e-3"},
        {"optimizer.steps", "1000"},
        {"optimizer.batch", "0"},
        {"compare.task", "regression"},
        {"compare.n_values", "2,3"},
        {"compare.seeds", "5"},
        {"compare.models", "qcnn,qnn,cnn"},
        {"compare.n_train", "300"},
        {"compare.n_test", "100"},
        {"compare.n0", "1000"},
        {"compare.m", "1"},
        {"compare.xi", "1"},
        {"compare.init", "he_scaled"},
        {"compare.lr", "1e-2"},
        {"compare.qcnn_steps", "2000"},
        {"compare.cnn_steps", "2000"},
        {"compare.qnn_steps", "100"},
        {"compare.qnn_layers", "10"},
        {"sweep.m_values", "1,2,3,4,6"},
        {"sweep.shots", "100,1000,10000,100000"},
        {"sweep.repeats", "20"},
        {"sweep.widths", "100,1000,10000"},
        {"sweep.seeds", "5"},
    };
    return s;
  }

  void set(const std::string& key, const std::string& value) {
    if (!values_.contains(key)) throw ConfigError(key + ": unknown key");
    values_[key] = value;
  }

  /// Applies a `section.key=value` override.
  void apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "': expected key=value");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  }

  static RunConfig from_stream(std::istream& is, const std::string& source = "<config>") {
    boost::property_tree::ptree tree;
    try {
      boost::property_tree::ini_parser::read_ini(is, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError(source + ":" + std::to_string(e.line()) + ": " + e.message());
    }
    RunConfig cfg;
    for (const auto& [section, body] : tree) {
      if (body.empty() && !body.data().empty()) throw ConfigError(section + ": key outside of a section");
      if (!known_section(section)) throw ConfigError(section + ": unknown section");
      for (const auto& [key, leaf] : body) cfg.set(section + "." + key, leaf.get_value<std::string>());
    }
    return cfg;
  }

  static RunConfig from_string(const std::string& text) {
    std::istringstream is(text);
    return from_stream(is);
  }

  static RunConfig from_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("run.config: cannot open " + path.string());
    return from_stream(is, path.string());
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  const std::string& str(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(key + ": unknown key");
    return it->second;
  }

  long integer(const std::string& key) const {
    const std::string& v = str(key);
    try {
      std::size_t used = 0;
      const long out = std::stol(v, &used);
      if (used == v.size()) return out;
    } catch (const std::exception&) {
    }
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }

  long positive(const std::string& key) const {
    const long v = integer(key);
    if (v < 1) throw ConfigError(key + ": must be >= 1");
    return v;
  }

  std::uint64_t u64(const std::string& key) const {
    const std::string& v = str(key);
    try {
      std::size_t used = 0;
      const auto out = std::stoull(v, &used);
      if (used == v.size() && !v.empty() && v[0] != '-') return out;
    } catch (const std::exception&) {
    }
    throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
  }

  double real(const std::string& key) const {
    const std::string& v = str(key);
    try {
      std::size_t used = 0;
      const double out = std::stod(v, &used);
      if (used == v.size() && std::isfinite(out)) return out;
    } catch (const std::exception&) {
    }
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }

  /// Number, or nullopt for "auto".
  std::optional<double> real_or_auto(const std::string& key) const {
    if (str(key) == "auto") return std::nullopt;
    return real(key);
  }

  bool flag(const std::string& key) const {
    const std::string& v = str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key + ": expected true/false, got '" + v + "'");
  }

  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    for (const auto& cell : io::split_csv_line(str(key))) {
      const std::string t = trim(cell);
      if (!t.empty()) out.push_back(t);
    }
    return out;
  }

  std::vector<long> int_list(const std::string& key) const {
    std::vector<long> out;
    for (const auto& cell : list(key)) {
      try {
        std::size_t used = 0;
        const long v = std::stol(cell, &used);
        if (used == cell.size() && v >= 1) {
          out.push_back(v);
          continue;
        }
      } catch (const std::exception&) {
      }
      throw ConfigError(key + ": expected a list of positive integers, got '" + str(key) + "'");
    }
    if (out.empty()) throw ConfigError(key + ": list is empty");
    return out;
  }

  /// Parses an enum-valued key, reporting failures against the key.
  template <typename F>
  auto parse(const std::string& key, F&& parser) const -> decltype(parser(std::string())) {
    try {
      return parser(str(key));
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }

  void validate() const {
    const std::string& exp = str("run.experiment");
    if (exp.empty()) throw ConfigError("run.experiment: required");
    const auto& names = experiment_names();
    if (std::find(names.begin(), names.end(), exp) == names.end())
      throw ConfigError("run.experiment: unknown experiment '" + exp + "'");
    u64("run.seed");
    static const std::vector<std::string> generators{"sin", "hard_sin", "adhoc", "csv", "quantum"};
    const std::string& gen = str("dataset.generator");
    if (std::find(generators.begin(), generators.end(), gen) == generators.end())
      throw ConfigError("dataset.generator: unknown generator '" + gen + "'");
    if (gen == "csv") {
      if (str("dataset.path").empty()) throw ConfigError("dataset.path: required for generator csv");
      positive("dataset.n_features");
    }
    positive("dataset.n_train");
    if (integer("dataset.n_test") < 0) throw ConfigError("dataset.n_test: must be >= 0");
    if (real("dataset.noise_sd") < 0) throw ConfigError("dataset.noise_sd: must be >= 0");
    if (str("dataset.task") != "auto") parse("dataset.task", data::parse_task);
    parse("dataset.observable", data::parse_observable_form);
    parse("encoder.ansatz", qsim::parse_ansatz);
    if (integer("encoder.n") < 0) throw ConfigError("encoder.n: must be >= 0");
    parse("kernel.kind", kernel::parse_kernel_kind);
    parse("kernel.activation", parse_activation);
    positive("kernel.L");
    positive("kernel.m");
    positive("kernel.mc_samples");
    positive("model.n0");
    positive("model.m");
    positive("model.qnn_layers");
    if (!str("model.hidden").empty()) int_list("model.hidden");
    parse("model.activation", parse_activation);
    parse("model.init", nn::parse_init_scheme);
    if (integer("model.shots") < 0) throw ConfigError("model.shots: must be >= 0");
    flag("model.theory");
    for (const char* key : {"kernel.xi", "model.xi"}) {
      const auto xi = real_or_auto(key);
      if (xi && *xi < 0) throw ConfigError(std::string(key) + ": must be >= 0");
    }
    parse("optimizer.kind", nn::parse_optimizer_kind);
    if (real("optimizer.lr") <= 0) throw ConfigError("optimizer.lr: must be positive");
    if (integer("optimizer.steps") < 0) throw ConfigError("optimizer.steps: must be >= 0");
    if (integer("optimizer.batch") < 0) throw ConfigError("optimizer.batch: must be >= 0");
    parse("compare.task", data::parse_task);
    int_list("compare.n_values");
    positive("compare.seeds");
    for (const auto& m : list("compare.models"))
      if (m != "qcnn" && m != "qnn" && m != "cnn") throw ConfigError("compare.models: unknown model '" + m + "'");
    parse("compare.init", nn::parse_init_scheme);
    for (const char* key : {"compare.n_train", "compare.n_test", "compare.n0", "compare.m", "compare.qnn_layers"})
      positive(key);
    for (const char* key : {"compare.qcnn_steps", "compare.cnn_steps", "compare.qnn_steps"})
      if (integer(key) < 0) throw ConfigError(std::string(key) + ": must be >= 0");
    if (real("compare.lr") <= 0) throw ConfigError("compare.lr: must be positive");
    if (real("compare.xi") < 0) throw ConfigError("compare.xi: must be >= 0");
    int_list("sweep.m_values");
    int_list("sweep.shots");
    int_list("sweep.widths");
    positive("sweep.repeats");
    positive("sweep.seeds");
  }

  /// INI text of the resolved configuration.
  std::string to_ini() const {
    std::ostringstream os;
    std::string section;
    for (const auto& [key, value] : values_) {
      const auto dot = key.find('.');
      const std::string s = key.substr(0, dot);
      if (s != section) {
        os << (section.empty() ? "" : "\n") << "[" << s << "]\n";
        section = s;
      }
      os << key.substr(dot + 1) << " = " << value << "\n";
    }
    return os.str();
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
  }

  static bool known_section(const std::string& section) {
    for (const auto& [key, value] : schema())
      if (key.compare(0, section.size() + 1, section + ".") == 0) return true;
    return false;
  }

  std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Shared setup
// ---------------------------------------------------------------------------

/// Seed substreams of one run.
struct RunSeeds {
  std::uint64_t root = 0;
  std::uint64_t data = 0;
  std::uint64_t model = 0;
  std::uint64_t shots = 0;
  std::uint64_t batch = 0;

  explicit RunSeeds(std::uint64_t seed)
      : root(seed),
        data(substream_seed(seed, {1})),
        model(substream_seed(seed, {2})),
        shots(substream_seed(seed, {3})),
        batch(substream_seed(seed, {4})) {}
};

struct Problem {
  data::Dataset train;
  std::optional<data::Dataset> test;
  qsim::EncoderSpec encoder;
  data::Task task = data::Task::Regression;
};

inline data::Task resolve_task(const RunConfig& cfg) {
  if (cfg.str("dataset.task") != "auto") return cfg.parse("dataset.task", data::parse_task);
  const std::string& gen = cfg.str("dataset.generator");
  return gen == "adhoc" || gen == "csv" ? data::Task::Classification : data::Task::Regression;
}

inline Problem build_problem(const RunConfig& cfg, const RunSeeds& seeds) {
  Problem p;
  p.task = resolve_task(cfg);
  const std::string& gen = cfg.str("dataset.generator");
  const int n_train = static_cast<int>(cfg.integer("dataset.n_train"));
  const int n_test = static_cast<int>(cfg.integer("dataset.n_test"));
  if (gen == "quantum") {
    const int n = static_cast<int>(cfg.integer("encoder.n"));
    if (n < 1) throw ConfigError("encoder.n: required for generator quantum");
    const auto qd = data::gen_quantum_data(n, n_train, std::max(n_test, 1), p.task, seeds.data,
                                           cfg.parse("dataset.observable", data::parse_observable_form));
    p.train = qd.train;
    if (n_test > 0) p.test = qd.test;
    p.encoder = qd.encoder;
    return p;
  }
  if ((gen == "sin" || gen == "hard_sin") && p.task != data::Task::Regression)
    throw ConfigError("dataset.task: generator " + gen + " is a regression task");
  data::Dataset all;
  if (gen == "sin") {
    all = data::gen_sin(n_train + n_test, seeds.data, cfg.real("dataset.noise_sd"));
  } else if (gen == "hard_sin") {
    all = data::gen_hard_sin(n_train + n_test, seeds.data);
  } else if (gen == "adhoc") {
    if ((n_train + n_test) % 2) throw ConfigError("dataset.n_train: adhoc needs an even total sample count");
    all = data::gen_adhoc_substitute((n_train + n_test) / 2, seeds.data);
  } else {
    all = data::load_csv_classification(cfg.str("dataset.path"), static_cast<int>(cfg.integer("dataset.n_features")),
                                        cfg.real("dataset.normalize_lo"), cfg.real("dataset.normalize_hi"));
  }
  if (n_test > 0) {
    if (gen == "csv" && n_test >= all.size()) throw ConfigError("dataset.n_test: larger than the CSV");
    auto [tr, te] = data::split(all, n_test, substream_seed(seeds.data, {7}));
    p.train = std::move(tr);
    p.test = std::move(te);
  } else {
    p.train = std::move(all);
  }
  const long n_cfg = cfg.integer("encoder.n");
  const int n = static_cast<int>(p.train.dim());
  if (n_cfg != 0 && n_cfg != n)
    throw ConfigError("encoder.n: " + std::to_string(n_cfg) + " does not match dataset dimension " + std::to_string(n));
  const auto ansatz = cfg.parse("encoder.ansatz", qsim::parse_ansatz);
  if (ansatz == qsim::Ansatz::QuantumData) throw ConfigError("encoder.ansatz: QuantumData requires generator quantum");
  p.encoder = qsim::EncoderSpec::make(ansatz, n, cfg.u64("encoder.seed"));
  return p;
}

inline double trace_o2(int m) {
  const qsim::CMatrix o = qsim::default_local_observable(m);
  return (o * o).trace().real();
}

inline void check_locality(const std::string& key, int n, int m) {
  if (m > n || n % m) throw ConfigError(key + ": locality " + std::to_string(m) + " does not divide " + std::to_string(n));
}

/// xi for a quantum head of locality m; "auto" is the corollary value.
inline double quantum_xi(const RunConfig& cfg, const std::string& key, int n, int m) {
  if (const auto v = cfg.real_or_auto(key)) return *v;
  return kernel::projected_kernel_xi(n / m, m, trace_o2(m));
}

inline nn::Optimizer make_optimizer(const RunConfig& cfg) {
  const double lr = cfg.real("optimizer.lr");
  return cfg.parse("optimizer.kind", nn::parse_optimizer_kind) == nn::Optimizer::Kind::Adam ? nn::Optimizer::adam(lr)
                                                                                          : nn::Optimizer::sgd(lr);
}

inline std::vector<int> hidden_widths(const RunConfig& cfg) {
  std::vector<int> out;
  if (cfg.str("model.hidden").empty()) return out;
  for (long w : cfg.int_list("model.hidden")) out.push_back(static_cast<int>(w));
  return out;
}

inline models::QcnnConfig qcnn_config(const RunConfig& cfg, int n, int n0) {
  models::QcnnConfig qc;
  qc.n0 = n0;
  qc.m = static_cast<int>(cfg.integer("model.m"));
  check_locality("model.m", n, qc.m);
  qc.hidden_widths = hidden_widths(cfg);
  qc.xi = quantum_xi(cfg, "model.xi", n, qc.m);
  qc.hidden_activation = cfg.parse("model.activation", parse_activation);
  qc.init = cfg.parse("model.init", nn::parse_init_scheme);
  return qc;
}

inline kernel::KernelConfig head_kernel_config(const nn::NetworkState& head, std::uint64_t mc_seed, long mc_samples) {
  kernel::KernelConfig kc;
  kc.L = head.config.layers();
  kc.xi = head.config.xi;
  kc.activation = head.config.hidden_activations.empty() ? Activation::ReLU : head.config.hidden_activations.front();
  kc.mc_samples = mc_samples;
  kc.mc_seed = mc_seed;
  return kc;
}

/// (step, t = eta k, cost) rows.
inline void write_training_log(const std::filesystem::path& path, const std::vector<double>& cost, double lr) {
  io::Table t;
  t.header = {"step", "t", "cost"};
  t.values.resize(static_cast<Eigen::Index>(cost.size()), 3);
  for (std::size_t k = 0; k < cost.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    t.values(r, 0) = static_cast<double>(k);
    t.values(r, 1) = lr * static_cast<double>(k);
    t.values(r, 2) = cost[k];
  }
  io::write_table(path, t);
}

inline void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << j.dump(2) << "\n";
}

inline double metric(data::Task task, const Eigen::VectorXd& out, const Eigen::VectorXd& y) {
  return task == data::Task::Regression ? models::rmse(out, y) : models::accuracy(out, y);
}

inline const char* metric_name(data::Task task) { return task == data::Task::Regression ? "rmse" : "accuracy"; }

/// Least-squares slope of log y against log x.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ShapeError("slope fit needs two or more points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
    sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
  }
  return sxy / sxx;
}

struct RunResult {
  std::vector<std::string> artifacts;
  nlohmann::ordered_json summary = nlohmann::ordered_json::object();
};

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

/// Analytic theory trajectory on a kernel, indexed by t = eta k. MSE uses the
/// closed form from f0; BCE integrates from f0 with RK4.
inline dynamics::Trajectory theory_trajectory(const Eigen::MatrixXd& k, const Eigen::VectorXd& y,
                                              const Eigen::VectorXd& f0, data::Task task, double lr, long steps) {
  const double t_end = lr * static_cast<double>(steps);
  if (task == data::Task::Classification) {
    if (steps == 0) return dynamics::bce_trajectory(k, y, f0, 1.0, 1.0, 0.0);
    return dynamics::bce_trajectory(k, y, f0, 1.0, std::min(dynamics::default_bce_step(k, 1.0), t_end), t_end);
  }
  const auto model = dynamics::diagonalize(k, y, f0);
  const long points = std::min<long>(steps, 200);
  std::vector<double> times;
  for (long i = 0; i <= points; ++i)
    times.push_back(points == 0 ? 0.0 : lr * static_cast<double>(std::lround(static_cast<double>(steps) * i / points)));
  return dynamics::mse_trajectory(model, 1.0, times);
}

inline RunResult run_theory_kernel(const RunConfig& cfg, const RunSeeds& seeds, const std::filesystem::path& out) {
  const Problem p = build_problem(cfg, seeds);
  const auto kind = cfg.parse("kernel.kind", kernel::parse_kernel_kind);
  kernel::KernelConfig kc;
  kc.L = static_cast<int>(cfg.integer("kernel.L"));
  kc.activation = cfg.parse("kernel.activation", parse_activation);
  kc.mc_samples = cfg.integer("kernel.mc_samples");
  kc.mc_seed = substream_seed(seeds.root, {5});
  const int m = static_cast<int>(cfg.integer("kernel.m"));
  const bool quantum = kind == kernel::KernelKind::SigmaQ || kind == kernel::KernelKind::ThetaQ;
  const bool tangent = kind == kernel::KernelKind::Theta || kind == kernel::KernelKind::ThetaQ;
  if (kind == kernel::KernelKind::Empirical) throw ConfigError("kernel.kind: Empirical is produced by ntk-convergence");
  kernel::KernelMatrix km;
  std::vector<std::vector<kernel::DensityMatrix>> dens;
  if (quantum) {
    check_locality("kernel.m", p.encoder.n, m);
    kc.xi = quantum_xi(cfg, "kernel.xi", p.encoder.n, m);
    dens = kernel::dataset_densities(p.train.inputs, p.encoder, m);
    km = kernel::quantum_ntk(p.train.inputs, p.encoder, m, trace_o2(m), kc, tangent);
  } else {
    kc.xi = cfg.real_or_auto("kernel.xi").value_or(1.0);
    km = kernel::classical_ntk(p.train.inputs, kc, tangent);
  }
  RunResult r;
  kernel::write_gram_csv(out / "gram.csv", km);
  const auto report = kernel::pd_check(km.entries, quantum ? &dens : nullptr, kc.xi);
  nlohmann::ordered_json pd;
  pd["min_eigenvalue"] = report.min_eigenvalue;
  pd["max_eigenvalue"] = report.max_eigenvalue;
  pd["is_pd"] = report.is_pd;
  pd["condition_i"] = report.condition_i;
  pd["condition_ii"] = report.condition_ii;
  if (report.degeneracy_witness)
    pd["degeneracy_witness"] = std::vector<double>(report.degeneracy_witness->data(),
                                                   report.degeneracy_witness->data() + report.degeneracy_witness->size());
  write_json(out / "pd_report.json", pd);
  const auto spectral = dynamics::diagonalize(km.entries, p.train.labels, Eigen::VectorXd::Zero(p.train.size()));
  dynamics::write_spectral_csv(out / "spectrum.csv", spectral);
  r.artifacts = {"gram.csv", "pd_report.json", "spectrum.csv"};
  const long steps = cfg.integer("optimizer.steps");
  if (steps > 0) {
    const auto tr = theory_trajectory(km.entries, p.train.labels, Eigen::VectorXd::Zero(p.train.size()), p.task,
                                      cfg.real("optimizer.lr"), steps);
    dynamics::write_trajectory_csv(out / "theory.csv", tr, {{"f0", "zero"}, {"loss", nn::to_string(models::task_loss(p.task))}});
    r.artifacts.push_back("theory.csv");
  }
  r.summary["xi"] = kc.xi;
  r.summary["is_pd"] = report.is_pd;
  return r;
}

inline RunResult run_train_qcnn(const RunConfig& cfg, const RunSeeds& seeds, const std::filesystem::path& out) {
  const Problem p = build_problem(cfg, seeds);
  const auto qc = qcnn_config(cfg, p.encoder.n, static_cast<int>(cfg.integer("model.n0")));
  auto model = models::make_qcnn(p.encoder, qc, p.task, seeds.model);
  const auto head0 = model.head;
  std::optional<qsim::ShotConfig> shots;
  if (cfg.integer("model.shots") > 0) shots = qsim::ShotConfig{cfg.integer("model.shots"), seeds.shots};
  auto opt = make_optimizer(cfg);
  const long steps = cfg.integer("optimizer.steps");
  Eigen::MatrixXd features;
  const auto rep = models::qcnn_train(model, p.train, opt, steps, shots, cfg.integer("optimizer.batch"), seeds.batch,
                                      &features);
  RunResult r;
  write_training_log(out / "trajectory.csv", rep.cost, cfg.real("optimizer.lr"));
  r.artifacts.push_back("trajectory.csv");
  r.summary["train_" + std::string(metric_name(p.task))] =
      metric(p.task, models::qcnn_outputs(model, features), p.train.labels);
  if (p.test)
    r.summary["test_" + std::string(metric_name(p.task))] =
        metric(p.task, models::qcnn_outputs(model, models::qcnn_features(model, p.test->inputs, shots)), p.test->labels);
  r.summary["parameters"] = model.parameter_count();
  r.summary["circuit_evaluations"] = model.circuit_evaluations;
  r.summary["xi"] = qc.xi;
  if (cfg.flag("model.theory")) {
    const auto kc = head_kernel_config(model.head, substream_seed(seeds.root, {5}), cfg.integer("kernel.mc_samples"));
    const auto theta = kernel::quantum_ntk(p.train.inputs, p.encoder, qc.m, trace_o2(qc.m), kc);
    const Eigen::VectorXd f0 = nn::forward_batch(head0, features);
    const auto tr = theory_trajectory(theta.entries, p.train.labels, f0, p.task, cfg.real("optimizer.lr"), steps);
    dynamics::write_trajectory_csv(out / "theory.csv", tr, {{"f0", "simulation"}});
    r.artifacts.push_back("theory.csv");
  }
  return r;
}

inline RunResult run_train_qnn(const RunConfig& cfg, const RunSeeds& seeds, const std::filesystem::path& out) {
  const Problem p = build_problem(cfg, seeds);
  auto model = models::make_qnn(p.encoder, static_cast<int>(cfg.integer("model.qnn_layers")), p.task, seeds.model);
  auto opt = make_optimizer(cfg);
  const auto rep = models::qnn_train(model, p.train, opt, cfg.integer("optimizer.steps"));
  RunResult r;
  write_training_log(out / "trajectory.csv", rep.cost, cfg.real("optimizer.lr"));
  r.artifacts.push_back("trajectory.csv");
  r.summary["train_" + std::string(metric_name(p.task))] =
      metric(p.task, models::qnn_outputs(model, p.train.inputs), p.train.labels);
  if (p.test)
    r.summary["test_" + std::string(metric_name(p.task))] =
        metric(p.task, models::qnn_outputs(model, p.test->inputs), p.test->labels);
  r.summary["parameters"] = model.parameter_count();
  r.summary["circuit_evaluations"] = rep.circuit_evaluations;
  return r;
}

inline RunResult run_train_cnn(const RunConfig& cfg, const RunSeeds& seeds, const std::filesystem::path& out) {
  const Problem p = build_problem(cfg, seeds);
  auto model = models::make_cnn(static_cast<int>(p.train.dim()), static_cast<int>(cfg.integer("model.n0")), p.task,
                                cfg.real_or_auto("model.xi").value_or(1.0),
                                cfg.parse("model.init", nn::parse_init_scheme), seeds.model);
  auto opt = make_optimizer(cfg);
  const auto rep = models::cnn_train(model, p.train, opt, cfg.integer("optimizer.steps"));
  RunResult r;
  write_training_log(out / "trajectory.csv", rep.cost, cfg.real("optimizer.lr"));
  r.artifacts.push_back("trajectory.csv");
  r.summary["train_" + std::string(metric_name(p.task))] =
      metric(p.task, models::cnn_outputs(model, p.train.inputs), p.train.labels);
  if (p.test)
    r.summary["test_" + std::string(metric_name(p.task))] =
        metric(p.task, models::cnn_outputs(model, p.test->inputs), p.test->labels);
  r.summary["parameters"] = model.parameter_count();
  return r;
}

inline RunResult run_compare(const RunConfig& cfg, const RunSeeds& seeds, const std::filesystem::path& out) {
  const auto task = cfg.parse("compare.task", data::parse_task);
  models::CompareConfig cc;
  cc.n_train = static_cast<int>(cfg.integer("compare.n_train"));
  cc.n_test = static_cast<int>(cfg.integer("compare.n_test"));
  cc.n0 = static_cast<int>(cfg.integer("compare.n0"));
  cc.m = static_cast<int>(cfg.integer("compare.m"));
  cc.xi = cfg.real("compare.xi");
  cc.init = cfg.parse("compare.init", nn::parse_init_scheme);
  cc.lr = cfg.real("compare.lr");
  cc.qcnn_steps = cfg.integer("compare.qcnn_steps");
  cc.cnn_steps = cfg.integer("compare.cnn_steps");
  cc.qnn_steps = cfg.integer("compare.qnn_steps");
  cc.qnn_layers = static_cast<int>(cfg.integer("compare.qnn_layers"));
  cc.models = cfg.list("compare.models");
  cc.form = cfg.parse("dataset.observable", data::parse_observable_form);
  std::vector<std::uint64_t> run_seeds;
  for (long i = 0; i < cfg.integer("compare.seeds"); ++i) run_seeds.push_back(seeds.root + static_cast<std::uint64_t>(i));
  std::vector<models::ReportRow> rows;
  for (long n : cfg.int_list("compare.n_values")) {
    check_locality("compare.m", static_cast<int>(n), cc.m);
    const auto part = models::compare_models(task, static_cast<int>(n), run_seeds, cc);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  models::write_report_csv(out / "report.csv", rows, task);
  std::ofstream os(out / "summary.csv");
  os << "model,n,train_mean,train_std,test_mean,test_std,test_median\n";
  for (const auto& s : models::summarize(rows))
    os << s.model << "," << s.n << "," << io::format_double(s.train_mean) << "," << io::format_double(s.train_std) << ","
       << io::format_double(s.test_mean) << "," << io::format_double(s.test_std) << ","
       << io::format_double(s.test_median) << "\n";
  RunResult r;
  r.artifacts = {"report.csv", "summary.csv"};
  r.summary["rows"] = rows.size();
  return r;
}

inline RunResult run_locality_sweep(const RunConfig& cfg, const RunSeeds& seeds, const std::filesystem::path& out) {
  const Problem p = build_problem(cfg, seeds);
  const double lr = cfg.real("optimizer.lr");
  const long steps = cfg.integer("optimizer.steps");
  if (steps < 1) throw ConfigError("optimizer.steps: locality-sweep needs a positive horizon");
  kernel::KernelConfig kc;
  kc.L = static_cast<int>(cfg.integer("kernel.L"));
  kc.activation = cfg.parse("kernel.activation", parse_activation);
  kc.mc_samples = cfg.integer("kernel.mc_samples");
  kc.mc_seed = substream_seed(seeds.root, {5});
  RunResult r;
  std::ofstream summary(out / "locality.csv");
  summary << "m,xi,min_eigenvalue,max_eigenvalue,final_cost\n";
  for (long m : cfg.int_list("sweep.m_values")) {
    const int mi = static_cast<int>(m);
    check_locality("sweep.m_values", p.encoder.n, mi);
    kc.xi = quantum_xi(cfg, "kernel.xi", p.encoder.n, mi);
    const auto theta = kernel::quantum_ntk(p.train.inputs, p.encoder, mi, trace_o2(mi), kc);
    const auto tr =
        theory_trajectory(theta.entries, p.train.labels, Eigen::VectorXd::Zero(p.train.size()), p.task, lr, steps);
    const std::string name = "theory_m" + std::to_string(m) + ".csv";
    dynamics::write_trajectory_csv(out / name, tr, {{"m", std::to_string(m)}, {"xi", io::format_double(kc.xi)}});
    r.artifacts.push_back(name);
    const auto pd = kernel::pd_check(theta.entries);
    summary << m << "," << io::format_double(kc.xi) << "," << io::format_double(pd.min_eigenvalue) << ","
            << io::format_double(pd.max_eigenvalue) << "," << io::format_double(tr.cost.back()) << "\n";
  }
  r.artifacts.push_back("locality.csv");
  return r;
}

inline RunResult run_shot_sweep(const RunConfig& cfg, const RunSeeds& seeds, const std::filesystem::path& out) {
  const Problem p = build_problem(cfg, seeds);
  if (p.task != data::Task::Regression) throw ConfigError("dataset.task: shot-sweep needs a regression task");
  if (!p.test) throw ConfigError("dataset.n_test: shot-sweep needs a test split");
  const auto qc = qcnn_config(cfg, p.encoder.n, static_cast<int>(cfg.integer("model.n0")));
  auto model = models::make_qcnn(p.encoder, qc, p.task, seeds.model);
  auto opt = make_optimizer(cfg);
  models::qcnn_train(model, p.train, opt, cfg.integer("optimizer.steps"), std::nullopt, cfg.integer("optimizer.batch"),
                     seeds.batch);
  const Eigen::VectorXd exact = models::qcnn_outputs(model, models::qcnn_features(model, p.test->inputs));
  const long repeats = cfg.integer("sweep.repeats");
  std::ofstream raw(out / "shots.csv");
  raw << "n_shots,repeat,test_rmse,shot_rmse\n";
  std::ofstream agg(out / "shots_summary.csv");
  agg << "n_shots,test_rmse_mean,test_rmse_std,shot_rmse_mean\n";
  std::vector<double> ns, shot_err, test_std;
  for (long n_shots : cfg.int_list("sweep.shots")) {
    std::vector<double> t_rmse, s_rmse;
    for (long rep = 0; rep < repeats; ++rep) {
      const qsim::ShotConfig sc{n_shots, substream_seed(seeds.shots, {static_cast<std::uint64_t>(n_shots),
                                                                      static_cast<std::uint64_t>(rep)})};
      const Eigen::VectorXd pred = models::qcnn_outputs(model, models::qcnn_features(model, p.test->inputs, sc));
      t_rmse.push_back(models::rmse(pred, p.test->labels));
      s_rmse.push_back(models::rmse(pred, exact));
      raw << n_shots << "," << rep << "," << io::format_double(t_rmse.back()) << ","
          << io::format_double(s_rmse.back()) << "\n";
    }
    double tm = 0, sm = 0;
    for (std::size_t i = 0; i < t_rmse.size(); ++i) {
      tm += t_rmse[i];
      sm += s_rmse[i];
    }
    tm /= static_cast<double>(repeats);
    sm /= static_cast<double>(repeats);
    double tv = 0;
    for (double v : t_rmse) tv += (v - tm) * (v - tm);
    const double tsd = repeats > 1 ? std::sqrt(tv / static_cast<double>(repeats - 1)) : 0.0;
    agg << n_shots << "," << io::format_double(tm) << "," << io::format_double(tsd) << "," << io::format_double(sm)
        << "\n";
    ns.push_back(static_cast<double>(n_shots));
    shot_err.push_back(sm);
    test_std.push_back(tsd);
  }
  RunResult r;
  r.artifacts = {"shots.csv", "shots_summary.csv"};
  r.summary["exact_test_rmse"] = models::rmse(exact, p.test->labels);
  if (ns.size() >= 2) {
    r.summary["shot_rmse_slope"] = loglog_slope(ns, shot_err);
    if (std::all_of(test_std.begin(), test_std.end(), [](double v) { return v > 0; }))
      r.summary["test_rmse_std_slope"] = loglog_slope(ns, test_std);
  }
  return r;
}

/// Relative Frobenius distance between a finite-width NTK and its limit.
inline double relative_distance(const Eigen::MatrixXd& empirical, const Eigen::MatrixXd& limit) {
  return (empirical - limit).norm() / limit.norm();
}

inline RunResult run_ntk_convergence(const RunConfig& cfg, const RunSeeds& seeds, const std::filesystem::path& out) {
  const Problem p = build_problem(cfg, seeds);
  const long n_seeds = cfg.integer("sweep.seeds");
  std::ofstream raw(out / "convergence.csv");
  raw << "n0,seed,relative_distance\n";
  std::ofstream agg(out / "convergence_summary.csv");
  agg << "n0,median_relative_distance\n";
  std::optional<Eigen::MatrixXd> limit;
  RunResult r;
  nlohmann::ordered_json medians = nlohmann::ordered_json::object();
  for (long n0 : cfg.int_list("sweep.widths")) {
    const auto qc = qcnn_config(cfg, p.encoder.n, static_cast<int>(n0));
    std::vector<double> dist;
    for (long s = 0; s < n_seeds; ++s) {
      auto model = models::make_qcnn(p.encoder, qc, p.task, substream_seed(seeds.model, {static_cast<std::uint64_t>(s)}));
      if (!limit) {
        const auto kc = head_kernel_config(model.head, substream_seed(seeds.root, {5}), cfg.integer("kernel.mc_samples"));
        limit = kernel::quantum_ntk(p.train.inputs, p.encoder, qc.m, trace_o2(qc.m), kc).entries;
      }
      const Eigen::MatrixXd features = models::qcnn_features(model, p.train.inputs);
      dist.push_back(relative_distance(kernel::empirical_ntk(model.head, features).entries, *limit));
      raw << n0 << "," << s << "," << io::format_double(dist.back()) << "\n";
    }
    const double med = models::median(dist);
    agg << n0 << "," << io::format_double(med) << "\n";
    medians[std::to_string(n0)] = med;
  }
  r.artifacts = {"convergence.csv", "convergence_summary.csv"};
  r.summary["median_relative_distance"] = medians;
  return r;
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

/// Runs the configured experiment into `out` and writes manifest.json with
/// the resolved configuration, seeds and wall time.
inline RunResult run(const RunConfig& cfg, const std::filesystem::path& out) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  std::filesystem::create_directories(out);
  const RunSeeds seeds(cfg.u64("run.seed"));
  const std::string& exp = cfg.str("run.experiment");
  RunResult r;
  if (exp == "theory-kernel") {
    r = run_theory_kernel(cfg, seeds, out);
  } else if (exp == "train-qcnn") {
    r = run_train_qcnn(cfg, seeds, out);
  } else if (exp == "train-qnn") {
    r = run_train_qnn(cfg, seeds, out);
  } else if (exp == "train-cnn") {
    r = run_train_cnn(cfg, seeds, out);
  } else if (exp == "compare") {
    r = run_compare(cfg, seeds, out);
  } else if (exp == "locality-sweep") {
    r = run_locality_sweep(cfg, seeds, out);
  } else if (exp == "shot-sweep") {
    r = run_shot_sweep(cfg, seeds, out);
  } else {
    r = run_ntk_convergence(cfg, seeds, out);
  }
  {
    std::ofstream os(out / "config.ini");
    os << cfg.to_ini();
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  nlohmann::ordered_json manifest;
  manifest["experiment"] = exp;
  manifest["config"] = cfg.values();
  manifest["seeds"] = {{"root", seeds.root},
                       {"data", seeds.data},
                       {"model", seeds.model},
                       {"shots", seeds.shots},
                       {"batch", seeds.batch}};
  manifest["threads"] = thread_count();
  manifest["wall_time_seconds"] = wall;
  manifest["artifacts"] = r.artifacts;
  manifest["summary"] = r.summary;
  write_json(out / "manifest.json", manifest);
  return r;
}

// ---------------------------------------------------------------------------
// Plot data
// ---------------------------------------------------------------------------

struct PlotRow {
  std::string series;
  double x = 0;
  double y = 0;
};

inline void write_plot(const std::filesystem::path& path, const std::vector<PlotRow>& rows) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << "series,x,y\n";
  for (const auto& r : rows) os << r.series << "," << io::format_double(r.x) << "," << io::format_double(r.y) << "\n";
}

/// Reads a CSV whose first column may be text (model names); returns header
/// and string cells.
inline std::pair<std::vector<std::string>, std::vector<std::vector<std::string>>> read_cells(
    const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path.string());
  std::string line;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header.empty()) {
      header = io::split_csv_line(line);
    } else {
      rows.push_back(io::split_csv_line(line));
    }
  }
  return {header, rows};
}

inline void append_trajectory(std::vector<PlotRow>& rows, const std::filesystem::path& path, const std::string& series,
                              int x_col, int y_col) {
  const auto t = io::read_table(path, true);
  for (Eigen::Index i = 0; i < t.values.rows(); ++i) rows.push_back({series, t.values(i, x_col), t.values(i, y_col)});
}

/// Converts the artifacts of a run directory into long-format (series, x, y)
/// files under `dir/plotdata`. Returns the files written.
inline std::vector<std::string> emit_plotdata(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw Error("artifact directory " + dir.string() + " does not exist");
  const fs::path plot = dir / "plotdata";
  std::vector<std::string> written;
  auto emit = [&](const std::string& name, const std::vector<PlotRow>& rows) {
    fs::create_directories(plot);
    write_plot(plot / name, rows);
    written.push_back(name);
  };
  if (fs::exists(dir / "trajectory.csv") || fs::exists(dir / "theory.csv")) {
    std::vector<PlotRow> rows;
    if (fs::exists(dir / "trajectory.csv")) append_trajectory(rows, dir / "trajectory.csv", "cost", 1, 2);
    if (fs::exists(dir / "theory.csv")) append_trajectory(rows, dir / "theory.csv", "theory", 0, 1);
    emit("trajectory.csv", rows);
  }
  if (fs::exists(dir / "spectrum.csv")) {
    const auto t = io::read_table(dir / "spectrum.csv", true);
    std::vector<PlotRow> rows;
    for (Eigen::Index j = 0; j < t.values.rows(); ++j)
      rows.push_back({"lambda", static_cast<double>(j + 1), t.values(j, 0)});
    emit("spectrum.csv", rows);
  }
  if (fs::exists(dir / "report.csv")) {
    const auto [header, cells] = read_cells(dir / "report.csv");
    std::vector<PlotRow> rows;
    for (const auto& c : cells) rows.push_back({c.at(0), std::stod(c.at(1)), std::stod(c.at(4))});
    std::stable_sort(rows.begin(), rows.end(), [](const PlotRow& a, const PlotRow& b) { return a.series < b.series; });
    emit("compare.csv", rows);
  }
  std::vector<fs::path> locality;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("theory_m", 0) == 0 && e.path().extension() == ".csv") locality.push_back(e.path());
  }
  if (!locality.empty()) {
    std::sort(locality.begin(), locality.end(), [](const fs::path& a, const fs::path& b) {
      return std::stol(a.stem().string().substr(8)) < std::stol(b.stem().string().substr(8));
    });
    std::vector<PlotRow> rows;
    for (const auto& p : locality) append_trajectory(rows, p, "m=" + p.stem().string().substr(8), 0, 1);
    emit("locality.csv", rows);
  }
  if (fs::exists(dir / "shots_summary.csv")) {
    const auto t = io::read_table(dir / "shots_summary.csv", true);
    std::vector<PlotRow> rows;
    for (Eigen::Index i = 0; i < t.values.rows(); ++i) rows.push_back({"test_rmse_mean", t.values(i, 0), t.values(i, 1)});
    for (Eigen::Index i = 0; i < t.values.rows(); ++i) rows.push_back({"test_rmse_std", t.values(i, 0), t.values(i, 2)});
    for (Eigen::Index i = 0; i < t.values.rows(); ++i) rows.push_back({"shot_rmse", t.values(i, 0), t.values(i, 3)});
    emit("shots.csv", rows);
  }
  if (fs::exists(dir / "convergence_summary.csv")) {
    std::vector<PlotRow> rows;
    append_trajectory(rows, dir / "convergence_summary.csv", "median_relative_distance", 0, 1);
    emit("convergence.csv", rows);
  }
  if (written.empty()) throw Error("no plottable artifacts in " + dir.string());
  return written;
}

}  // namespace qcntk::experiments
