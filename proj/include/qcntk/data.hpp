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

/// Dataset generators (sin regression, quantum-generated data, a synthetic
/// two-class set) and CSV loading/saving.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "qcntk/errors.hpp"
#include "qcntk/io.hpp"
#include "qcntk/qsim.hpp"
#include "qcntk/random.hpp"

namespace qcntk::data {

struct Provenance {
  std::string generator = "unknown";
  std::uint64_t seed = 0;
  std::map<std::string, std::string> params;
};

struct Dataset {
  Eigen::MatrixXd inputs;  // row per sample
  Eigen::VectorXd labels;
  std::string split = "train";
  Provenance provenance;

  Eigen::Index size() const { return inputs.rows(); }
  Eigen::Index dim() const { return inputs.cols(); }
  Eigen::VectorXd input(Eigen::Index a) const { return inputs.row(a).transpose(); }

  void validate() const {
    if (labels.size() != inputs.rows())
      throw ShapeError("label count " + std::to_string(labels.size()) + " != sample count " +
                       std::to_string(inputs.rows()));
  }
};

enum class Task { Regression, Classification };

inline const char* to_string(Task t) { return t == Task::Regression ? "regression" : "classification"; }

inline Task parse_task(const std::string& s) {
  if (s == "regression") return Task::Regression;
  if (s == "classification") return Task::Classification;
  throw ValidationError("unknown task '" + s + "'");
}

namespace detail {

inline Dataset scalar_embedding(int count, std::uint64_t seed, const char* name, double (*goal)(double),
                                double noise_sd) {
  if (count < 1) throw SizeError("N_D must be >= 1");
  Rng rng = make_rng(seed, {0x73696eULL});
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset d;
  d.inputs.resize(count, 4);
  d.labels.resize(count);
  for (int a = 0; a < count; ++a) {
    const double x = unif(rng);
    d.inputs.row(a) << x, x * x, x * x * x, x * x * x * x;
    d.labels[a] = goal(x) + (noise_sd > 0 ? noise_sd * noise(rng) : 0.0);
  }
  d.provenance = {name, seed, {{"n", std::to_string(count)}, {"noise_sd", io::format_double(noise_sd)}}};
  return d;
}

}  // namespace detail

inline double sin_goal(double x) { return std::sin(x); }
inline double hard_sin_goal(double x) { return (x - 0.2) * (x - 0.2) * std::sin(12 * x); }

/// x ~ U(-1, 1) embedded as (x, x^2, x^3, x^4); label sin(x) + N(0, noise_sd^2).
inline Dataset gen_sin(int count, std::uint64_t seed, double noise_sd = 0.05) {
  return detail::scalar_embedding(count, seed, "sin", &sin_goal, noise_sd);
}

/// Same embedding, label (x - 0.2)^2 sin(12 x), no noise.
inline Dataset gen_hard_sin(int count, std::uint64_t seed) {
  return detail::scalar_embedding(count, seed, "hard_sin", &hard_sin_goal, 0.0);
}

/// Label of the synthetic two-class rule.
inline int adhoc_rule(double x1, double x2) {
  return std::sin(3 * std::numbers::pi * x1) * std::sin(3 * std::numbers::pi * x2) > 0 ? 1 : 0;
}

/// Two-class points in [-1, 1]^2 labelled by sin(3 pi x1) sin(3 pi x2) > 0,
/// `per_class` of each class (rejection sampled).
inline Dataset gen_adhoc_substitute(int per_class, std::uint64_t seed) {
  if (per_class < 1) throw SizeError("per-class count must be >= 1");
  Rng rng = make_rng(seed, {0x6164686fULL});
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Dataset d;
  d.inputs.resize(2 * per_class, 2);
  d.labels.resize(2 * per_class);
  int have[2] = {0, 0};
  Eigen::Index row = 0;
  while (have[0] < per_class || have[1] < per_class) {
    const double x1 = unif(rng), x2 = unif(rng);
    const int label = adhoc_rule(x1, x2);
    if (have[label] >= per_class) continue;
    ++have[label];
    d.inputs.row(row) << x1, x2;
    d.labels[row++] = label;
  }
  d.provenance = {"adhoc_substitute", seed, {{"per_class", std::to_string(per_class)}}};
  return d;
}

/// Reads `features..., label` rows. An optional first header row is skipped.
/// Each feature column is mapped affinely onto [lo, hi]; constant columns go
/// to the midpoint.
inline Dataset load_csv_classification(const std::filesystem::path& path, int n_features, double lo = -1.0,
                                       double hi = 1.0) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::vector<double> labels;
  std::string line;
  long lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto cells = io::split_csv_line(line);
    if (static_cast<int>(cells.size()) != n_features + 1)
      throw SchemaError("line " + std::to_string(lineno) + ": expected " + std::to_string(n_features + 1) +
                        " columns, found " + std::to_string(cells.size()));
    if (rows.empty() && labels.empty()) {
      char* end = nullptr;
      const std::string& first = cells.front();
      std::strtod(first.c_str(), &end);
      if (end == first.c_str()) continue;  // header
    }
    std::vector<double> r;
    for (int j = 0; j < n_features; ++j) r.push_back(io::parse_double(cells[static_cast<std::size_t>(j)], lineno));
    const std::string& lab = cells.back();
    if (lab != "0" && lab != "1") throw ParseError("label must be 0 or 1, got '" + lab + "'", lineno);
    rows.push_back(std::move(r));
    labels.push_back(lab == "1" ? 1.0 : 0.0);
  }
  if (rows.empty()) throw SchemaError("no data rows in " + path.string());
  Dataset d;
  d.inputs.resize(static_cast<Eigen::Index>(rows.size()), n_features);
  for (std::size_t a = 0; a < rows.size(); ++a)
    for (int j = 0; j < n_features; ++j) d.inputs(static_cast<Eigen::Index>(a), j) = rows[a][static_cast<std::size_t>(j)];
  for (int j = 0; j < n_features; ++j) {
    const double cmin = d.inputs.col(j).minCoeff(), cmax = d.inputs.col(j).maxCoeff();
    if (cmax == cmin) {
      d.inputs.col(j).setConstant(0.5 * (lo + hi));
    } else {
      d.inputs.col(j) = ((d.inputs.col(j).array() - cmin) / (cmax - cmin) * (hi - lo) + lo).matrix();
    }
  }
  d.labels = Eigen::Map<Eigen::VectorXd>(labels.data(), static_cast<Eigen::Index>(labels.size()));
  d.provenance = {"csv", 0, {{"path", path.string()}, {"n_features", std::to_string(n_features)}}};
  return d;
}

/// Disjoint (train, test) split through a seeded permutation; the last
/// n_test permuted rows form the test set.
inline std::pair<Dataset, Dataset> split(const Dataset& d, int n_test, std::uint64_t seed) {
  d.validate();
  if (n_test <= 0) throw ArgumentError("n_test must be positive");
  if (n_test >= d.size()) throw ArgumentError("n_test must leave at least one training sample");
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(d.size()));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = make_rng(seed, {0x73706c6974ULL});
  std::shuffle(perm.begin(), perm.end(), rng);
  const Eigen::Index n_train = d.size() - n_test;
  auto take = [&](Eigen::Index first, Eigen::Index count, const char* tag) {
    Dataset out;
    out.inputs.resize(count, d.dim());
    out.labels.resize(count);
    for (Eigen::Index i = 0; i < count; ++i) {
      out.inputs.row(i) = d.inputs.row(perm[static_cast<std::size_t>(first + i)]);
      out.labels[i] = d.labels[perm[static_cast<std::size_t>(first + i)]];
    }
    out.split = tag;
    out.provenance = d.provenance;
    out.provenance.params["split_seed"] = std::to_string(seed);
    return out;
  };
  return {take(0, n_train, "train"), take(n_train, n_test, "test")};
}

// ---------------------------------------------------------------------------
// Quantum-generated data
// ---------------------------------------------------------------------------

/// Sum: g = sum_i <(Z_i + 1)/2>, in [0, n]. Product: g = <prod_i (Z_i + 1)/2>,
/// the |0...0> probability, in [0, 1].
enum class ObservableForm { Sum, Product };

inline const char* to_string(ObservableForm f) { return f == ObservableForm::Sum ? "sum" : "product"; }

inline ObservableForm parse_observable_form(const std::string& s) {
  if (s == "sum") return ObservableForm::Sum;
  if (s == "product") return ObservableForm::Product;
  throw ValidationError("unknown observable form '" + s + "'");
}

inline double target_observable(const qsim::Statevector& psi, ObservableForm form) {
  if (form == ObservableForm::Product) return std::norm(psi[0]);
  double g = 0;
  for (int q = 0; q < psi.num_qubits(); ++q) g += 0.5 * (qsim::expectation_z(psi, q) + 1.0);
  return g;
}

struct QuantumData {
  Dataset train;
  Dataset test;
  qsim::EncoderSpec encoder;   // generator circuit; models share it
  ObservableForm form = ObservableForm::Sum;
  double scale = 1.0;          // c, regression only
  Eigen::VectorXd train_noise; // regression noise draws
  Eigen::VectorXd test_noise;
};

inline constexpr double kQuantumLabelNoiseSd = 1e-2;

/// x ~ U[0, 2 pi]^n encoded by RX(x_i) and a frozen random block; regression
/// labels c g(x) + eps with c = 1/std(g over the training inputs) and
/// Var[eps] = 1e-4, classification labels [g >= n/2]. Train and test inputs
/// come from disjoint substreams.
inline QuantumData gen_quantum_data(int n, int n_train, int n_test, Task task, std::uint64_t seed,
                                    ObservableForm form = ObservableForm::Sum) {
  if (n_train < 2) throw SizeError("need at least two training samples");
  if (n_test <= 0) throw ArgumentError("n_test must be positive");
  QuantumData q;
  q.encoder = qsim::EncoderSpec::make(qsim::Ansatz::QuantumData, n, substream_seed(seed, {0x63697263ULL}));
  q.form = form;
  auto draw = [&](int count, std::uint64_t tag, Eigen::VectorXd& g) {
    Rng rng = make_rng(seed, {tag});
    std::uniform_real_distribution<double> unif(0.0, qsim::kTwoPi);
    Eigen::MatrixXd x(count, n);
    for (int a = 0; a < count; ++a)
      for (int i = 0; i < n; ++i) x(a, i) = unif(rng);
    g.resize(count);
    for (int a = 0; a < count; ++a) {
      const Eigen::VectorXd row = x.row(a).transpose();
      g[a] = target_observable(qsim::encode(q.encoder, std::span<const double>(row.data(), row.size())), form);
    }
    return x;
  };
  Eigen::VectorXd g_train, g_test;
  q.train.inputs = draw(n_train, 1, g_train);
  q.test.inputs = draw(n_test, 2, g_test);
  q.train.split = "train";
  q.test.split = "test";
  if (task == Task::Regression) {
    const double mean = g_train.mean();
    const double sd = std::sqrt((g_train.array() - mean).square().sum() / static_cast<double>(n_train - 1));
    if (!(sd > 0)) throw DomainError("target observable is constant on the training inputs");
    q.scale = 1.0 / sd;
    auto noise = [&](int count, std::uint64_t tag) {
      Rng rng = make_rng(seed, {tag});
      std::normal_distribution<double> nd(0.0, kQuantumLabelNoiseSd);
      Eigen::VectorXd e(count);
      for (int a = 0; a < count; ++a) e[a] = nd(rng);
      return e;
    };
    q.train_noise = noise(n_train, 3);
    q.test_noise = noise(n_test, 4);
    q.train.labels = q.scale * g_train + q.train_noise;
    q.test.labels = q.scale * g_test + q.test_noise;
  } else {
    const double threshold = 0.5 * n;
    q.train.labels = g_train.unaryExpr([&](double v) { return v >= threshold ? 1.0 : 0.0; });
    q.test.labels = g_test.unaryExpr([&](double v) { return v >= threshold ? 1.0 : 0.0; });
  }
  const Provenance p{"quantum",
                     seed,
                     {{"n", std::to_string(n)},
                      {"task", to_string(task)},
                      {"observable", to_string(form)},
                      {"encoder_seed", std::to_string(q.encoder.random_seed)},
                      {"scale", io::format_double(q.scale)}}};
  q.train.provenance = p;
  q.test.provenance = p;
  return q;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline std::filesystem::path sidecar_path(const std::filesystem::path& csv) {
  std::filesystem::path p = csv;
  p += ".json";
  return p;
}

/// Header f1..fn,y then one row per sample, plus a JSON provenance sidecar.
inline void write_dataset_csv(const std::filesystem::path& path, const Dataset& d) {
  d.validate();
  io::Table t;
  t.header = io::numbered("f", d.dim());
  t.header.push_back("y");
  t.values.resize(d.size(), d.dim() + 1);
  t.values.leftCols(d.dim()) = d.inputs;
  t.values.col(d.dim()) = d.labels;
  io::write_table(path, t);
  nlohmann::ordered_json j;
  j["generator"] = d.provenance.generator;
  j["seed"] = d.provenance.seed;
  j["split"] = d.split;
  j["params"] = d.provenance.params;
  std::ofstream os(sidecar_path(path));
  os << j.dump(2) << "\n";
}

inline Dataset read_dataset_csv(const std::filesystem::path& path) {
  const auto t = io::read_table(path, true);
  if (t.header.empty() || t.header.back() != "y") throw SchemaError("dataset CSV must end with column y");
  Dataset d;
  d.inputs = t.values.leftCols(t.values.cols() - 1);
  d.labels = t.values.col(t.values.cols() - 1);
  const auto side = sidecar_path(path);
  if (std::filesystem::exists(side)) {
    std::ifstream is(side);
    const auto j = nlohmann::json::parse(is);
    d.provenance.generator = j.value("generator", "unknown");
    d.provenance.seed = j.value("seed", std::uint64_t{0});
    d.split = j.value("split", "train");
    if (j.contains("params")) d.provenance.params = j["params"].get<std::map<std::string, std::string>>();
  }
  return d;
}

}  // namespace qcntk::data
