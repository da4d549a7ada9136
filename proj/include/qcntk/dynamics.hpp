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

/// Gradient-flow dynamics in the constant-kernel regime: closed-form MSE
/// trajectories, predictions off the training set, RK4 integration of the
/// cross-entropy flow, and early-stopping cost estimates.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qcntk/activation.hpp"
#include "qcntk/errors.hpp"
#include "qcntk/io.hpp"
#include "qcntk/kernel.hpp"
#include "qcntk/nn.hpp"
#include "qcntk/parallel.hpp"

namespace qcntk::dynamics {

/// Eigenvalues at or below this fraction of lambda_max use the lambda -> 0
/// limit of the prediction weights.
inline constexpr double kZeroEigenvalueFloor = 1e-12;

struct SpectralModel {
  Eigen::VectorXd eigenvalues;  // descending
  Eigen::MatrixXd V;            // row j is the eigenvector of eigenvalues[j]
  Eigen::VectorXd labels;
  Eigen::VectorXd f0;

  Eigen::Index size() const { return eigenvalues.size(); }
  /// V^T diag(lambda) V.
  Eigen::MatrixXd reconstruct() const { return V.transpose() * eigenvalues.asDiagonal() * V; }
};

inline SpectralModel diagonalize(const Eigen::MatrixXd& k, const Eigen::VectorXd& y, const Eigen::VectorXd& f0) {
  if (k.rows() != k.cols() || k.rows() == 0) throw ShapeError("kernel must be a non-empty square matrix");
  if (y.size() != k.rows() || f0.size() != k.rows()) throw ShapeError("label/output length differs from kernel size");
  const double scale = std::max(k.cwiseAbs().maxCoeff(), 1e-300);
  if ((k - k.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) throw ValidationError("kernel is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (k + k.transpose()));
  if (eig.info() != Eigen::Success) throw ValidationError("eigendecomposition failed");
  const Eigen::Index n = k.rows();
  SpectralModel m;
  m.eigenvalues.resize(n);
  m.V.resize(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    m.eigenvalues[j] = eig.eigenvalues()[n - 1 - j];
    m.V.row(j) = eig.eigenvectors().col(n - 1 - j).transpose();
  }
  m.labels = y;
  m.f0 = f0;
  return m;
}

struct Trajectory {
  std::vector<double> times;
  Eigen::MatrixXd outputs;  // row per time, column per data point
  std::vector<double> cost;
};

/// (1/2) sum_a (f_a - y_a)^2.
inline double mse_cost(const Eigen::VectorXd& f, const Eigen::VectorXd& y) { return 0.5 * (f - y).squaredNorm(); }

/// f_t = V^T e^{-eta Lambda t} V (f_0 - y) + y.
inline Eigen::VectorXd mse_outputs(const SpectralModel& m, double eta, double t) {
  const Eigen::VectorXd w = m.V * (m.f0 - m.labels);
  const Eigen::VectorXd decay = (-eta * t * m.eigenvalues.array()).exp().matrix();
  return m.V.transpose() * decay.cwiseProduct(w) + m.labels;
}

inline Trajectory mse_trajectory(const SpectralModel& m, double eta, std::span<const double> times) {
  if (!(eta > 0)) throw ArgumentError("learning rate must be positive");
  Trajectory tr;
  tr.times.assign(times.begin(), times.end());
  tr.outputs.resize(static_cast<Eigen::Index>(times.size()), m.size());
  tr.cost.resize(times.size());
  parallel_for(times.size(), [&](std::size_t i) {
    const Eigen::VectorXd f = mse_outputs(m, eta, times[i]);
    tr.outputs.row(static_cast<Eigen::Index>(i)) = f.transpose();
    tr.cost[i] = mse_cost(f, m.labels);
  });
  return tr;
}

/// D_j = (1 - e^{-eta lambda_j t}) / lambda_j, or eta t on the zero branch.
inline Eigen::VectorXd prediction_weights(const SpectralModel& m, double eta, double t) {
  const double lmax = m.size() ? std::max(m.eigenvalues[0], 0.0) : 0.0;
  Eigen::VectorXd d(m.size());
  for (Eigen::Index j = 0; j < m.size(); ++j) {
    const double l = m.eigenvalues[j];
    d[j] = l <= kZeroEigenvalueFloor * lmax ? eta * t : -std::expm1(-eta * l * t) / l;
  }
  return d;
}

/// Output at an off-dataset point x given the kernel row Theta(x, x^b) and
/// the initial output f_0(x).
inline double predict(const Eigen::VectorXd& kernel_row, const SpectralModel& m, double eta, double t, double f0_x) {
  if (kernel_row.size() != m.size()) throw ShapeError("kernel row length differs from training set size");
  const Eigen::VectorXd d = prediction_weights(m, eta, t);
  return f0_x - kernel_row.dot(m.V.transpose() * d.cwiseProduct(m.V * (m.f0 - m.labels)));
}

/// Prediction averaged over initializations (f_0 centered).
inline double predict_mean(const Eigen::VectorXd& kernel_row, const SpectralModel& m, double eta, double t) {
  if (kernel_row.size() != m.size()) throw ShapeError("kernel row length differs from training set size");
  const Eigen::VectorXd d = prediction_weights(m, eta, t);
  return kernel_row.dot(m.V.transpose() * d.cwiseProduct(m.V * m.labels));
}

/// 0.1 / (eta lambda_max).
inline double default_bce_step(const Eigen::MatrixXd& k, double eta) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (k + k.transpose()), Eigen::EigenvaluesOnly);
  const double lmax = eig.eigenvalues().maxCoeff();
  if (!(lmax > 0)) throw DomainError("kernel has no positive eigenvalue");
  return 0.1 / (eta * lmax);
}

/// df/dt = -eta Theta (sigmoid(f) - y) integrated with fixed-step RK4 on
/// [0, t_end]; the step is shrunk so that it divides t_end.
inline Trajectory bce_trajectory(const Eigen::MatrixXd& k, const Eigen::VectorXd& y, const Eigen::VectorXd& f0,
                                 double eta, double step, double t_end) {
  if (!(step > 0)) throw ArgumentError("step must be positive");
  if (t_end < 0) throw ArgumentError("t_end must be non-negative");
  if (k.rows() != k.cols() || y.size() != k.rows() || f0.size() != k.rows()) throw ShapeError("size mismatch");
  for (Eigen::Index a = 0; a < y.size(); ++a)
    if (y[a] != 0.0 && y[a] != 1.0) throw ValidationError("cross-entropy labels must be 0 or 1");
  const long steps = t_end == 0 ? 0 : static_cast<long>(std::ceil(t_end / step - 1e-9));
  const double h = steps ? t_end / static_cast<double>(steps) : 0.0;
  auto rhs = [&](const Eigen::VectorXd& f) -> Eigen::VectorXd {
    return -eta * (k * (f.unaryExpr([](double q) { return sigmoid(q); }) - y));
  };
  Trajectory tr;
  tr.outputs.resize(steps + 1, k.rows());
  Eigen::VectorXd f = f0;
  for (long s = 0; s <= steps; ++s) {
    if (s > 0) {
      const Eigen::VectorXd k1 = rhs(f);
      const Eigen::VectorXd k2 = rhs(f + 0.5 * h * k1);
      const Eigen::VectorXd k3 = rhs(f + 0.5 * h * k2);
      const Eigen::VectorXd k4 = rhs(f + h * k3);
      f += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    tr.times.push_back(static_cast<double>(s) * h);
    tr.outputs.row(s) = f.transpose();
    tr.cost.push_back(nn::cost(nn::Loss::BCE, f, y));
  }
  return tr;
}

enum class CostMode { HardStep, Exact };

/// Initialization-averaged (1/N_D) sum_a (f_tau(x^a) - y^a)^2 with f_0 ~ N(0, cov).
/// HardStep keeps the modes with lambda_j < 1/(eta tau) at full weight and
/// drops the rest; Exact weights every mode by e^{-2 eta lambda_j tau}.
inline double expected_cost(const SpectralModel& m, const Eigen::MatrixXd& cov, const Eigen::VectorXd& y, double eta,
                            double tau, CostMode mode = CostMode::HardStep) {
  if (cov.rows() != m.size() || cov.cols() != m.size() || y.size() != m.size())
    throw ShapeError("covariance/labels do not match the kernel's dataset");
  if (!(eta > 0)) throw ArgumentError("learning rate must be positive");
  double total = 0;
  for (Eigen::Index j = 0; j < m.size(); ++j) {
    const Eigen::VectorXd v = m.V.row(j).transpose();
    double weight;
    if (mode == CostMode::HardStep) {
      weight = m.eigenvalues[j] * eta * tau < 1.0 ? 1.0 : 0.0;
    } else {
      weight = std::exp(-2 * eta * m.eigenvalues[j] * tau);
    }
    if (weight == 0) continue;
    const double gj = y.dot(v);
    total += weight * (v.dot(cov * v) + gj * gj);
  }
  return total / static_cast<double>(m.size());
}

/// Indices of S = {j : lambda_j < 1/(eta tau)}.
inline std::vector<Eigen::Index> slow_modes(const SpectralModel& m, double eta, double tau) {
  std::vector<Eigen::Index> s;
  for (Eigen::Index j = 0; j < m.size(); ++j)
    if (m.eigenvalues[j] * eta * tau < 1.0) s.push_back(j);
  return s;
}

struct KernelSide {
  const SpectralModel& ntk;
  const Eigen::MatrixXd& cov;
};

/// Classical expected cost minus quantum expected cost; positive favors the
/// hybrid model.
inline double advantage_gap(const KernelSide& classical, const KernelSide& quantum, const Eigen::VectorXd& y, double eta,
                            double tau, CostMode mode = CostMode::HardStep) {
  return expected_cost(classical.ntk, classical.cov, y, eta, tau, mode) -
         expected_cost(quantum.ntk, quantum.cov, y, eta, tau, mode);
}

inline void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& tr, io::Metadata meta = {}) {
  io::Table t;
  t.meta = std::move(meta);
  t.header = {"t", "cost"};
  for (Eigen::Index a = 0; a < tr.outputs.cols(); ++a) t.header.push_back("f" + std::to_string(a + 1));
  t.values.resize(static_cast<Eigen::Index>(tr.times.size()), 2 + tr.outputs.cols());
  for (std::size_t i = 0; i < tr.times.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    t.values(r, 0) = tr.times[i];
    t.values(r, 1) = tr.cost[i];
    t.values.row(r).tail(tr.outputs.cols()) = tr.outputs.row(r);
  }
  io::write_table(path, t);
}

inline Trajectory read_trajectory_csv(const std::filesystem::path& path) {
  const auto t = io::read_table(path, true);
  if (t.header.size() < 2 || t.header[0] != "t" || t.header[1] != "cost")
    throw SchemaError("trajectory CSV must start with columns t,cost");
  Trajectory tr;
  for (Eigen::Index r = 0; r < t.values.rows(); ++r) {
    tr.times.push_back(t.values(r, 0));
    tr.cost.push_back(t.values(r, 1));
  }
  tr.outputs = t.values.rightCols(t.values.cols() - 2);
  return tr;
}

inline void write_spectral_csv(const std::filesystem::path& path, const SpectralModel& m) {
  io::Table t;
  t.header = {"lambda"};
  for (Eigen::Index a = 0; a < m.size(); ++a) t.header.push_back("v" + std::to_string(a + 1));
  t.values.resize(m.size(), m.size() + 1);
  t.values.col(0) = m.eigenvalues;
  t.values.rightCols(m.size()) = m.V;
  io::write_table(path, t);
}

}  // namespace qcntk::dynamics
