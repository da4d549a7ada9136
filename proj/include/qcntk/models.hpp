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

/// End-to-end models on a shared data encoder: the hybrid qcNN (random
/// measurement features feeding a trainable head), the qNN baseline trained
/// with the parameter-shift rule, and the purely classical cNN.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "qcntk/activation.hpp"
#include "qcntk/data.hpp"
#include "qcntk/errors.hpp"
#include "qcntk/io.hpp"
#include "qcntk/nn.hpp"
#include "qcntk/parallel.hpp"
#include "qcntk/qsim.hpp"
#include "qcntk/random.hpp"

namespace qcntk::models {

using data::Task;

inline nn::Loss task_loss(Task t) { return t == Task::Regression ? nn::Loss::MSE : nn::Loss::BCE; }

/// Class label from a raw (pre-sigmoid) output: sigmoid(f) >= 0.5.
inline double label_of(double raw) { return sigmoid(raw) >= 0.5 ? 1.0 : 0.0; }

inline double rmse(const Eigen::VectorXd& pred, const Eigen::VectorXd& y) {
  if (pred.size() != y.size() || y.size() == 0) throw ShapeError("rmse needs equal non-empty vectors");
  return std::sqrt((pred - y).squaredNorm() / static_cast<double>(y.size()));
}

inline double accuracy(const Eigen::VectorXd& labels, const Eigen::VectorXd& y) {
  if (labels.size() != y.size() || y.size() == 0) throw ShapeError("accuracy needs equal non-empty vectors");
  return (labels.array() == y.array()).cast<double>().mean();
}

struct TrainReport {
  std::vector<double> cost;
  long circuit_evaluations = 0;
};

// ---------------------------------------------------------------------------
// qcNN
// ---------------------------------------------------------------------------

struct QcnnConfig {
  int n0 = 1000;
  int m = 1;
  std::vector<int> hidden_widths;  // empty: single layer n0 -> 1
  double xi = 1.0;
  Activation hidden_activation = Activation::ReLU;
  nn::InitScheme init = nn::InitScheme::UnitGaussian;
};

struct QcnnModel {
  qsim::EncoderSpec encoder;
  qsim::RandomMeasurement measurement;  // frozen
  nn::NetworkState head;
  Task task = Task::Regression;
  long circuit_evaluations = 0;

  std::size_t parameter_count() const { return head.reported_parameter_count(); }
};

/// Measurement unitaries from substream (seed, 1), head from (seed, 2).
inline QcnnModel make_qcnn(const qsim::EncoderSpec& encoder, const QcnnConfig& cfg, Task task, std::uint64_t seed,
                           std::optional<qsim::CMatrix> local_observable = std::nullopt) {
  QcnnModel model;
  model.encoder = encoder;
  model.task = task;
  model.measurement = qsim::RandomMeasurement::sample(encoder.n, cfg.m, cfg.n0, substream_seed(seed, {1}),
                                                      std::move(local_observable));
  std::vector<int> widths{cfg.n0};
  widths.insert(widths.end(), cfg.hidden_widths.begin(), cfg.hidden_widths.end());
  widths.push_back(1);
  model.head = nn::init(nn::NetworkConfig::make(widths, cfg.xi, cfg.hidden_activation, cfg.init),
                        substream_seed(seed, {2}));
  return model;
}

/// Feature matrix of the inputs; counts one circuit per (sample, unitary).
inline Eigen::MatrixXd qcnn_features(QcnnModel& model, const Eigen::MatrixXd& inputs,
                                     const std::optional<qsim::ShotConfig>& shots = std::nullopt) {
  if (inputs.cols() != model.encoder.n)
    throw ShapeError("input dimension " + std::to_string(inputs.cols()) + " != encoder qubits " +
                     std::to_string(model.encoder.n));
  model.circuit_evaluations += static_cast<long>(inputs.rows()) * model.measurement.size();
  return qsim::feature_matrix(inputs, model.encoder, model.measurement, shots);
}

/// Head outputs on precomputed features: raw values for regression, class
/// labels for classification.
inline Eigen::VectorXd qcnn_outputs(const QcnnModel& model, const Eigen::MatrixXd& features) {
  const Eigen::VectorXd raw = nn::forward_batch(model.head, features);
  if (model.task == Task::Regression) return raw;
  return raw.unaryExpr([](double f) { return label_of(f); });
}

inline double qcnn_predict(QcnnModel& model, std::span<const double> x,
                           const std::optional<qsim::ShotConfig>& shots = std::nullopt) {
  Eigen::MatrixXd row = Eigen::Map<const Eigen::RowVectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  return qcnn_outputs(model, qcnn_features(model, row, shots))[0];
}

/// Trains the head on features computed once per data point. The features
/// are returned through `features_out` when given.
inline TrainReport qcnn_train(QcnnModel& model, const data::Dataset& d, nn::Optimizer& opt, long steps,
                              const std::optional<qsim::ShotConfig>& shots = std::nullopt, long batch_size = 0,
                              std::uint64_t batch_seed = 0, Eigen::MatrixXd* features_out = nullptr) {
  d.validate();
  const long before = model.circuit_evaluations;
  Eigen::MatrixXd features = qcnn_features(model, d.inputs, shots);
  TrainReport r;
  r.cost = nn::train(model.head, features, d.labels, task_loss(model.task), opt, steps, batch_size, batch_seed).cost;
  r.circuit_evaluations = model.circuit_evaluations - before;
  if (features_out) *features_out = std::move(features);
  return r;
}

// ---------------------------------------------------------------------------
// qNN
// ---------------------------------------------------------------------------

/// Layer = U3 on every qubit then CNOT ring i -> (i+1) mod n; readout Z on
/// qubit 0 scaled by w.
struct QnnModel {
  qsim::EncoderSpec encoder;
  int layers = 1;
  Eigen::VectorXd theta;  // [layer][qubit][3]
  double w = 1.0;
  Task task = Task::Regression;
  long circuit_evaluations = 0;  // parameter-shift circuits
  long forward_evaluations = 0;

  int n() const { return encoder.n; }
  std::size_t parameter_count() const { return static_cast<std::size_t>(theta.size()); }
};

inline QnnModel make_qnn(const qsim::EncoderSpec& encoder, int layers, Task task, std::uint64_t seed) {
  if (layers < 1) throw ValidationError("qNN needs at least one layer");
  QnnModel model;
  model.encoder = encoder;
  model.layers = layers;
  model.task = task;
  Rng rng = make_rng(seed, {3});
  std::uniform_real_distribution<double> angle(0.0, qsim::kTwoPi);
  model.theta.resize(3 * encoder.n * layers);
  for (Eigen::Index p = 0; p < model.theta.size(); ++p) model.theta[p] = angle(rng);
  return model;
}

inline std::vector<qsim::Gate> qnn_circuit(int n, int layers, const Eigen::VectorXd& theta) {
  if (theta.size() != 3 * n * layers) throw ShapeError("qNN parameter vector has the wrong length");
  std::vector<qsim::Gate> gates;
  for (int l = 0; l < layers; ++l) {
    for (int q = 0; q < n; ++q) {
      const Eigen::Index p = 3 * (l * n + q);
      gates.push_back(qsim::Gate::u3(q, theta[p], theta[p + 1], theta[p + 2]));
    }
    if (n == 2) {
      gates.push_back(qsim::Gate::cnot(0, 1));
      gates.push_back(qsim::Gate::cnot(1, 0));
    } else if (n > 2) {
      for (int q = 0; q < n; ++q) gates.push_back(qsim::Gate::cnot(q, (q + 1) % n));
    }
  }
  return gates;
}

/// <Z_0> after the trainable circuit acts on an encoded state.
inline double qnn_expectation(const qsim::Statevector& encoded, int layers, const Eigen::VectorXd& theta) {
  qsim::Statevector s = encoded;
  const auto gates = qnn_circuit(encoded.num_qubits(), layers, theta);
  s.apply(gates);
  return qsim::expectation_z(s, 0);
}

inline std::vector<qsim::Statevector> encode_all(const qsim::EncoderSpec& spec, const Eigen::MatrixXd& inputs) {
  if (inputs.cols() != spec.n) throw ShapeError("input dimension does not match encoder");
  std::vector<qsim::Statevector> out(static_cast<std::size_t>(inputs.rows()), qsim::Statevector(spec.n));
  parallel_for(out.size(), [&](std::size_t a) {
    const Eigen::VectorXd x = inputs.row(static_cast<Eigen::Index>(a)).transpose();
    out[a] = qsim::encode(spec, std::span<const double>(x.data(), x.size()));
  });
  return out;
}

/// <Z_0> for cached encoded states (the raw output is w times this).
inline Eigen::VectorXd qnn_readout(QnnModel& model, const std::vector<qsim::Statevector>& states) {
  Eigen::VectorXd f(static_cast<Eigen::Index>(states.size()));
  parallel_for(states.size(), [&](std::size_t a) {
    f[static_cast<Eigen::Index>(a)] = qnn_expectation(states[a], model.layers, model.theta);
  });
  model.forward_evaluations += static_cast<long>(states.size());
  return f;
}

inline Eigen::VectorXd qnn_outputs(QnnModel& model, const Eigen::MatrixXd& inputs) {
  const Eigen::VectorXd raw = model.w * qnn_readout(model, encode_all(model.encoder, inputs));
  if (model.task == Task::Regression) return raw;
  return raw.unaryExpr([](double f) { return label_of(f); });
}

/// Per-sample d<Z_0>/dtheta_p = (E(theta_p + pi/2) - E(theta_p - pi/2)) / 2,
/// rows = samples. Counts two circuits per parameter per sample.
inline Eigen::MatrixXd qnn_parameter_shift(QnnModel& model, const std::vector<qsim::Statevector>& states) {
  const Eigen::Index np = model.theta.size();
  Eigen::MatrixXd grad(static_cast<Eigen::Index>(states.size()), np);
  parallel_for(states.size(), [&](std::size_t a) {
    Eigen::VectorXd t = model.theta;
    for (Eigen::Index p = 0; p < np; ++p) {
      const double keep = t[p];
      t[p] = keep + std::numbers::pi / 2;
      const double plus = qnn_expectation(states[a], model.layers, t);
      t[p] = keep - std::numbers::pi / 2;
      const double minus = qnn_expectation(states[a], model.layers, t);
      t[p] = keep;
      grad(static_cast<Eigen::Index>(a), p) = 0.5 * (plus - minus);
    }
  });
  model.circuit_evaluations += 2 * static_cast<long>(np) * static_cast<long>(states.size());
  return grad;
}

/// Full-batch training; regression also trains w, classification keeps w = 1.
inline TrainReport qnn_train(QnnModel& model, const data::Dataset& d, nn::Optimizer& opt, long steps) {
  d.validate();
  if (steps < 0) throw ArgumentError("step count must be non-negative");
  const nn::Loss loss = task_loss(model.task);
  if (model.task == Task::Classification) model.w = 1.0;
  const auto states = encode_all(model.encoder, d.inputs);
  const bool train_w = model.task == Task::Regression;
  const Eigen::Index np = model.theta.size();
  Eigen::VectorXd params(np + (train_w ? 1 : 0));
  params.head(np) = model.theta;
  if (train_w) params[np] = model.w;
  TrainReport r;
  const long before = model.circuit_evaluations;
  for (long k = 0;; ++k) {
    const Eigen::VectorXd z = qnn_readout(model, states);
    const Eigen::VectorXd f = model.w * z;
    const double c = nn::cost(loss, f, d.labels);
    if (!std::isfinite(c)) throw DivergenceError("non-finite qNN cost", k);
    r.cost.push_back(c);
    if (k == steps) break;
    const Eigen::VectorXd g = nn::cost_derivative(loss, f, d.labels);
    const Eigen::MatrixXd dz = qnn_parameter_shift(model, states);
    Eigen::VectorXd grad(params.size());
    grad.head(np) = model.w * (dz.transpose() * g);
    if (train_w) grad[np] = g.dot(z);
    opt.step(params, grad);
    model.theta = params.head(np);
    if (train_w) model.w = params[np];
  }
  r.circuit_evaluations = model.circuit_evaluations - before;
  return r;
}

// ---------------------------------------------------------------------------
// cNN
// ---------------------------------------------------------------------------

struct CnnModel {
  nn::NetworkState net;
  Task task = Task::Regression;

  std::size_t parameter_count() const { return net.reported_parameter_count(); }
};

/// n -> n0 -> 1; sigmoid hidden layer for regression, ReLU for classification.
inline CnnModel make_cnn(int n, int n0, Task task, double xi, nn::InitScheme init, std::uint64_t seed) {
  CnnModel model;
  model.task = task;
  const Activation hidden = task == Task::Regression ? Activation::Sigmoid : Activation::ReLU;
  model.net = nn::init(nn::NetworkConfig::make({n, n0, 1}, xi, hidden, init), substream_seed(seed, {4}));
  return model;
}

inline Eigen::VectorXd cnn_outputs(const CnnModel& model, const Eigen::MatrixXd& inputs) {
  const Eigen::VectorXd raw = nn::forward_batch(model.net, inputs);
  if (model.task == Task::Regression) return raw;
  return raw.unaryExpr([](double f) { return label_of(f); });
}

inline TrainReport cnn_train(CnnModel& model, const data::Dataset& d, nn::Optimizer& opt, long steps) {
  d.validate();
  TrainReport r;
  r.cost = nn::train(model.net, d.inputs, d.labels, task_loss(model.task), opt, steps).cost;
  return r;
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

struct CompareConfig {
  int n_train = 300;
  int n_test = 100;
  int n0 = 1000;
  int m = 1;
  double xi = 1.0;
  nn::InitScheme init = nn::InitScheme::HeScaled;
  double lr = 1e-2;
  long qcnn_steps = 2000;
  long cnn_steps = 2000;
  long qnn_steps = 100;
  int qnn_layers = 10;
  std::vector<std::string> models{"qcnn", "qnn", "cnn"};
  data::ObservableForm form = data::ObservableForm::Sum;
};

struct ReportRow {
  std::string model;
  int n = 0;
  std::uint64_t seed = 0;
  double train_metric = 0;  // RMSE (regression) or accuracy (classification)
  double test_metric = 0;
  std::size_t parameters = 0;
  long circuit_evaluations = 0;
};

/// One row per (model, seed). Dataset from substream (seed, 10), models from
/// (seed, 20 + kind).
inline std::vector<ReportRow> compare_models(Task task, int n, std::span<const std::uint64_t> seeds,
                                             const CompareConfig& cfg) {
  std::vector<ReportRow> rows;
  for (const std::uint64_t seed : seeds) {
    const auto qd = data::gen_quantum_data(n, cfg.n_train, cfg.n_test, task, substream_seed(seed, {10}), cfg.form);
    auto metric = [&](const Eigen::VectorXd& out, const Eigen::VectorXd& y) {
      return task == Task::Regression ? rmse(out, y) : accuracy(out, y);
    };
    for (const auto& kind : cfg.models) {
      ReportRow row{kind, n, seed};
      if (kind == "qcnn") {
        QcnnConfig qc;
        qc.n0 = cfg.n0;
        qc.m = cfg.m;
        qc.xi = cfg.xi;
        qc.init = cfg.init;
        auto model = make_qcnn(qd.encoder, qc, task, substream_seed(seed, {21}));
        auto opt = nn::Optimizer::adam(cfg.lr);
        Eigen::MatrixXd train_features;
        const auto r = qcnn_train(model, qd.train, opt, cfg.qcnn_steps, std::nullopt, 0, 0, &train_features);
        row.train_metric = metric(qcnn_outputs(model, train_features), qd.train.labels);
        row.test_metric = metric(qcnn_outputs(model, qcnn_features(model, qd.test.inputs)), qd.test.labels);
        row.parameters = model.parameter_count();
        row.circuit_evaluations = r.circuit_evaluations;
      } else if (kind == "qnn") {
        auto model = make_qnn(qd.encoder, cfg.qnn_layers, task, substream_seed(seed, {22}));
        auto opt = nn::Optimizer::adam(cfg.lr);
        const auto r = qnn_train(model, qd.train, opt, cfg.qnn_steps);
        row.train_metric = metric(qnn_outputs(model, qd.train.inputs), qd.train.labels);
        row.test_metric = metric(qnn_outputs(model, qd.test.inputs), qd.test.labels);
        row.parameters = model.parameter_count();
        row.circuit_evaluations = r.circuit_evaluations;
      } else if (kind == "cnn") {
        auto model = make_cnn(n, cfg.n0, task, cfg.xi, cfg.init, substream_seed(seed, {23}));
        auto opt = nn::Optimizer::adam(cfg.lr);
        cnn_train(model, qd.train, opt, cfg.cnn_steps);
        row.train_metric = metric(cnn_outputs(model, qd.train.inputs), qd.train.labels);
        row.test_metric = metric(cnn_outputs(model, qd.test.inputs), qd.test.labels);
        row.parameters = model.parameter_count();
      } else {
        throw ValidationError("unknown model '" + kind + "'");
      }
      rows.push_back(row);
    }
  }
  return rows;
}

struct SummaryRow {
  std::string model;
  int n = 0;
  double test_mean = 0, test_std = 0, test_median = 0;
  double train_mean = 0, train_std = 0;
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw ShapeError("median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

/// Mean, sample standard deviation and median over seeds per (model, n).
inline std::vector<SummaryRow> summarize(const std::vector<ReportRow>& rows) {
  std::map<std::pair<int, std::string>, std::pair<std::vector<double>, std::vector<double>>> groups;
  std::vector<std::pair<int, std::string>> order;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.n, r.model);
    if (!groups.contains(key)) order.push_back(key);
    groups[key].first.push_back(r.train_metric);
    groups[key].second.push_back(r.test_metric);
  }
  auto mean_std = [](const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::make_pair(m, v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0);
  };
  std::vector<SummaryRow> out;
  for (const auto& key : order) {
    const auto& [train, test] = groups[key];
    SummaryRow s{key.second, key.first};
    std::tie(s.test_mean, s.test_std) = mean_std(test);
    std::tie(s.train_mean, s.train_std) = mean_std(train);
    s.test_median = median(test);
    out.push_back(s);
  }
  return out;
}

inline void write_report_csv(const std::filesystem::path& path, const std::vector<ReportRow>& rows, Task task) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  const char* metric = task == Task::Regression ? "rmse" : "accuracy";
  os << "model,n,seed,train_" << metric << ",test_" << metric << ",parameters,circuit_evaluations\n";
  for (const auto& r : rows)
    os << r.model << "," << r.n << "," << r.seed << "," << io::format_double(r.train_metric) << ","
       << io::format_double(r.test_metric) << "," << r.parameters << "," << r.circuit_evaluations << "\n";
}

}  // namespace qcntk::models
