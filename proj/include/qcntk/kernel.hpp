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

/// Infinite-width covariance and tangent kernels (classical and
/// projected-quantum first layer), the empirical finite-width NTK, Gram
/// assembly and positive-definiteness diagnostics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qcntk/activation.hpp"
#include "qcntk/errors.hpp"
#include "qcntk/io.hpp"
#include "qcntk/nn.hpp"
#include "qcntk/parallel.hpp"
#include "qcntk/qsim.hpp"
#include "qcntk/random.hpp"

namespace qcntk::kernel {

using qsim::DensityMatrix;

// ---------------------------------------------------------------------------
// First layer
// ---------------------------------------------------------------------------

/// x.x' / n_0 + xi^2.
inline double sigma_classical_1(std::span<const double> x, std::span<const double> xp, double xi) {
  if (x.size() != xp.size()) throw ShapeError("input dimensions differ");
  if (x.empty()) throw ShapeError("empty input");
  double dot = 0;
  for (std::size_t i = 0; i < x.size(); ++i) dot += x[i] * xp[i];
  return dot / static_cast<double>(x.size()) + xi * xi;
}

/// Projected quantum kernel sum_k Tr(rho_x^k rho_x'^k).
inline double projected_kernel(std::span<const DensityMatrix> a, std::span<const DensityMatrix> b) {
  if (a.size() != b.size()) throw ShapeError("window counts differ");
  double s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) s += qsim::trace_product(a[k], b[k]);
  return s;
}

/// Tr(O^2)/(4^m - 1) * sum_k (Tr(rho_x^k rho_x'^k) - 2^-m) + xi^2.
inline double sigma_q_1(std::span<const DensityMatrix> a, std::span<const DensityMatrix> b, double trace_o2,
                        double xi) {
  if (a.empty()) throw ShapeError("no windows");
  const int m = a.front().m;
  const double dim = std::ldexp(1.0, m);
  const double pref = trace_o2 / (dim * dim - 1.0);
  double s = 0;
  for (std::size_t k = 0; k < std::min(a.size(), b.size()); ++k) s += qsim::trace_product(a[k], b[k]) - 1.0 / dim;
  if (a.size() != b.size()) throw ShapeError("window counts differ");
  return pref * s + xi * xi;
}

inline double sigma_q_1(std::span<const double> x, std::span<const double> xp, const qsim::EncoderSpec& spec, int m,
                        const qsim::CMatrix& local_observable, double xi) {
  const qsim::WindowObservable obs(m, local_observable);
  if (std::abs(local_observable.trace()) > 1e-12) throw ValidationError("local observable is not traceless");
  const auto ra = qsim::window_densities(qsim::encode(spec, x), m);
  const auto rb = qsim::window_densities(qsim::encode(spec, xp), m);
  return sigma_q_1(ra, rb, obs.trace_sq(), xi);
}

/// Bias coefficient that turns Sigma_Q^(1) into the scaled projected kernel.
inline double projected_kernel_xi(int n_q, int m, double trace_o2) {
  const double dim = std::ldexp(1.0, m);
  return std::sqrt(n_q * trace_o2 / ((dim * dim - 1.0) * dim));
}

// ---------------------------------------------------------------------------
// Layer recursion
// ---------------------------------------------------------------------------

namespace detail {

inline double arc_cos_angle(double kxx, double kxy, double kyy) {
  if (!(kxx > 0) || !(kyy > 0)) throw DomainError("covariance diagonal must be positive");
  const double norm = std::sqrt(kxx * kyy);
  if (std::abs(kxy) > norm * (1 + 1e-10)) throw DomainError("|K_xx'| exceeds sqrt(K_xx K_x'x')");
  return std::acos(std::clamp(kxy / norm, -1.0, 1.0));
}

}  // namespace detail

/// E[ReLU(h)ReLU(h')] + xi^2 for (h, h') ~ N(0, [[kxx, kxy], [kxy, kyy]]):
/// sqrt(kxx kyy) (sin t + (pi - t) cos t) / (2 pi) + xi^2.
inline double relu_next_sigma(double kxx, double kxy, double kyy, double xi) {
  const double t = detail::arc_cos_angle(kxx, kxy, kyy);
  return std::sqrt(kxx * kyy) * (std::sin(t) + (std::numbers::pi - t) * std::cos(t)) / (2 * std::numbers::pi) +
         xi * xi;
}

/// E[1{h>0} 1{h'>0}] = (pi - t) / (2 pi).
inline double relu_sigma_dot(double kxx, double kxy, double kyy) {
  const double t = detail::arc_cos_angle(kxx, kxy, kyy);
  return (std::numbers::pi - t) / (2 * std::numbers::pi);
}

struct McEstimate {
  double mean = 0;
  double std_error = 0;
};

/// Monte-Carlo E[g(h, h')] under the centered bivariate Gaussian with
/// covariance `cov` (rank-deficient covariances allowed).
inline McEstimate mc_gaussian_expectation(const Eigen::Matrix2d& cov, const std::function<double(double, double)>& g,
                                          long samples, Rng& rng) {
  if (samples < 2) throw ArgumentError("need at least 2 samples");
  const double a = cov(0, 0), c = cov(1, 1), b = cov(0, 1);
  const double scale = std::max({std::abs(a), std::abs(b), std::abs(c), 1e-300});
  if (std::abs(b - cov(1, 0)) > 1e-12 * scale) throw DomainError("covariance is not symmetric");
  if (a < -1e-14 * scale || c < -1e-14 * scale || b * b > a * c * (1 + 1e-10) + 1e-300)
    throw DomainError("covariance is not positive semi-definite");
  const double s1 = std::sqrt(std::max(a, 0.0));
  const double l21 = s1 > 0 ? b / s1 : 0.0;
  const double l22 = std::sqrt(std::max(c - l21 * l21, 0.0));
  std::normal_distribution<double> normal(0.0, 1.0);
  double sum = 0, sum_sq = 0;
  for (long i = 0; i < samples; ++i) {
    const double z1 = normal(rng), z2 = normal(rng);
    const double v = g(s1 * z1, l21 * z1 + l22 * z2);
    sum += v;
    sum_sq += v * v;
  }
  const double n = static_cast<double>(samples);
  const double mean = sum / n;
  const double var = std::max(sum_sq / n - mean * mean, 0.0) * n / (n - 1);
  return {mean, std::sqrt(var / n)};
}

struct KernelConfig {
  int L = 1;
  double xi = 0.0;
  Activation activation = Activation::ReLU;
  long mc_samples = 1'000'000;  // sigmoid only
  std::uint64_t mc_seed = 0;

  void validate() const {
    if (L < 1) throw ValidationError("L must be >= 1");
    if (xi < 0) throw ValidationError("xi must be >= 0");
  }
};

/// Sigma^(1..L) and Sigma-dot^(1..L-1) over one point set.
struct LayerStack {
  std::vector<Eigen::MatrixXd> sigma;
  std::vector<Eigen::MatrixXd> sigma_dot;
};

namespace detail {

/// (E[s(h)s(h')], E[s'(h)s'(h')]) for one covariance entry.
inline std::pair<double, double> next_layer_entry(const KernelConfig& cfg, double kxx, double kxy, double kyy,
                                                  std::uint64_t layer, std::uint64_t a, std::uint64_t b) {
  switch (cfg.activation) {
    case Activation::ReLU:
      return {relu_next_sigma(kxx, kxy, kyy, 0.0), relu_sigma_dot(kxx, kxy, kyy)};
    case Activation::Identity:
      return {kxy, 1.0};
    case Activation::Sigmoid: {
      Eigen::Matrix2d cov;
      cov << kxx, kxy, kxy, kyy;
      Rng rng = make_rng(cfg.mc_seed, {layer, a, b});
      Rng rng_dot = rng;
      const auto s = mc_gaussian_expectation(
          cov, [](double u, double v) { return sigmoid(u) * sigmoid(v); }, cfg.mc_samples, rng);
      const auto d = mc_gaussian_expectation(
          cov,
          [](double u, double v) {
            return activate_derivative(Activation::Sigmoid, u) * activate_derivative(Activation::Sigmoid, v);
          },
          cfg.mc_samples, rng_dot);
      return {s.mean, d.mean};
    }
  }
  return {0, 0};
}

}  // namespace detail

/// Runs the covariance recursion from a first-layer matrix. The recursion only
/// sees Sigma^(1), so classical and quantum kernels share it.
inline LayerStack propagate(const Eigen::MatrixXd& sigma1, const KernelConfig& cfg) {
  cfg.validate();
  if (sigma1.rows() != sigma1.cols()) throw ShapeError("first-layer matrix must be square");
  LayerStack st;
  st.sigma.push_back(sigma1);
  const Eigen::Index n = sigma1.rows();
  for (int l = 1; l < cfg.L; ++l) {
    const Eigen::MatrixXd& prev = st.sigma.back();
    Eigen::MatrixXd next(n, n), dot(n, n);
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t ai) {
      const auto a = static_cast<Eigen::Index>(ai);
      for (Eigen::Index b = a; b < n; ++b) {
        const auto [s, d] = detail::next_layer_entry(cfg, prev(a, a), prev(a, b), prev(b, b),
                                                     static_cast<std::uint64_t>(l), ai, static_cast<std::uint64_t>(b));
        next(a, b) = s + cfg.xi * cfg.xi;
        dot(a, b) = d;
      }
    });
    for (Eigen::Index a = 0; a < n; ++a)
      for (Eigen::Index b = 0; b < a; ++b) {
        next(a, b) = next(b, a);
        dot(a, b) = dot(b, a);
      }
    st.sigma_dot.push_back(std::move(dot));
    st.sigma.push_back(std::move(next));
  }
  return st;
}

/// Theta^(1) = Sigma^(1); Theta^(l+1) = Theta^(l) * Sigma-dot^(l) + Sigma^(l+1)
/// (entrywise products).
inline Eigen::MatrixXd theta_recursion(const LayerStack& st, int L) {
  if (L < 1) throw ValidationError("L must be >= 1");
  if (static_cast<int>(st.sigma.size()) < L || static_cast<int>(st.sigma_dot.size()) < L - 1)
    throw StateError("layer stack has " + std::to_string(st.sigma.size()) + " covariance layers, need " +
                     std::to_string(L));
  Eigen::MatrixXd theta = st.sigma[0];
  for (int l = 1; l < L; ++l) theta = theta.cwiseProduct(st.sigma_dot[l - 1]) + st.sigma[l];
  return theta;
}

// ---------------------------------------------------------------------------
// Gram matrices
// ---------------------------------------------------------------------------

enum class KernelKind { Sigma, Theta, SigmaQ, ThetaQ, Empirical };

inline const char* to_string(KernelKind k) {
  switch (k) {
    case KernelKind::Sigma: return "Sigma";
    case KernelKind::Theta: return "Theta";
    case KernelKind::SigmaQ: return "SigmaQ";
    case KernelKind::ThetaQ: return "ThetaQ";
    case KernelKind::Empirical: return "Empirical";
  }
  return "?";
}

inline KernelKind parse_kernel_kind(const std::string& s) {
  for (auto k : {KernelKind::Sigma, KernelKind::Theta, KernelKind::SigmaQ, KernelKind::ThetaQ, KernelKind::Empirical})
    if (s == to_string(k)) return k;
  throw ValidationError("unknown kernel kind '" + s + "'");
}

struct KernelMatrix {
  KernelKind kind = KernelKind::Theta;
  Eigen::MatrixXd entries;
  std::vector<std::size_t> ids;  // dataset row of each entry row
  int L = 1;
  double xi = 0;
  Activation activation = Activation::ReLU;
  std::string encoder_hash = "none";

  Eigen::Index size() const { return entries.rows(); }
};

/// Symmetric Gram matrix of kernel_fn(a, b); only a <= b is evaluated.
/// Failures are rethrown with the offending pair.
template <typename KernelFn>
Eigen::MatrixXd gram(std::size_t count, KernelFn&& kernel_fn) {
  if (count == 0) throw ShapeError("empty dataset");
  const auto n = static_cast<Eigen::Index>(count);
  Eigen::MatrixXd k(n, n);
  parallel_for(count, [&](std::size_t a) {
    for (std::size_t b = a; b < count; ++b) {
      try {
        k(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = kernel_fn(a, b);
      } catch (const Error& e) {
        throw Error("kernel entry (" + std::to_string(a) + ", " + std::to_string(b) + "): " + e.what());
      }
    }
  });
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < a; ++b) k(a, b) = k(b, a);
  return k;
}

/// Rectangular block kernel_fn(row, col), e.g. test points x train points.
template <typename KernelFn>
Eigen::MatrixXd cross_gram(std::size_t rows, std::size_t cols, KernelFn&& kernel_fn) {
  Eigen::MatrixXd k(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  parallel_for(rows, [&](std::size_t a) {
    for (std::size_t b = 0; b < cols; ++b)
      k(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = kernel_fn(a, b);
  });
  return k;
}

/// Sigma^(1) Gram for raw inputs (rows of x).
inline Eigen::MatrixXd classical_sigma1_gram(const Eigen::MatrixXd& x, double xi) {
  return gram(static_cast<std::size_t>(x.rows()), [&](std::size_t a, std::size_t b) {
    const Eigen::VectorXd u = x.row(static_cast<Eigen::Index>(a)).transpose();
    const Eigen::VectorXd v = x.row(static_cast<Eigen::Index>(b)).transpose();
    return sigma_classical_1(std::span<const double>(u.data(), u.size()), std::span<const double>(v.data(), v.size()),
                             xi);
  });
}

/// Window densities of every encoded input.
inline std::vector<std::vector<DensityMatrix>> dataset_densities(const Eigen::MatrixXd& x,
                                                                 const qsim::EncoderSpec& spec, int m) {
  std::vector<std::vector<DensityMatrix>> out(static_cast<std::size_t>(x.rows()));
  parallel_for(out.size(), [&](std::size_t a) {
    const Eigen::VectorXd row = x.row(static_cast<Eigen::Index>(a)).transpose();
    out[a] = qsim::window_densities(qsim::encode(spec, std::span<const double>(row.data(), row.size())), m);
  });
  return out;
}

/// Sigma_Q^(1) Gram from precomputed window densities.
inline Eigen::MatrixXd quantum_sigma1_gram(const std::vector<std::vector<DensityMatrix>>& dens, double trace_o2,
                                           double xi) {
  return gram(dens.size(), [&](std::size_t a, std::size_t b) { return sigma_q_1(dens[a], dens[b], trace_o2, xi); });
}

/// Theta_Q^(L) (or Sigma_Q^(L)) Gram for an encoder and locality.
inline KernelMatrix quantum_ntk(const Eigen::MatrixXd& x, const qsim::EncoderSpec& spec, int m, double trace_o2,
                                const KernelConfig& cfg, bool tangent = true) {
  const auto dens = dataset_densities(x, spec, m);
  const auto st = propagate(quantum_sigma1_gram(dens, trace_o2, cfg.xi), cfg);
  KernelMatrix km;
  km.kind = tangent ? KernelKind::ThetaQ : KernelKind::SigmaQ;
  km.entries = tangent ? theta_recursion(st, cfg.L) : st.sigma.back();
  km.ids.resize(static_cast<std::size_t>(x.rows()));
  for (std::size_t i = 0; i < km.ids.size(); ++i) km.ids[i] = i;
  km.L = cfg.L;
  km.xi = cfg.xi;
  km.activation = cfg.activation;
  km.encoder_hash = spec.hash();
  return km;
}

inline KernelMatrix classical_ntk(const Eigen::MatrixXd& x, const KernelConfig& cfg, bool tangent = true) {
  const auto st = propagate(classical_sigma1_gram(x, cfg.xi), cfg);
  KernelMatrix km;
  km.kind = tangent ? KernelKind::Theta : KernelKind::Sigma;
  km.entries = tangent ? theta_recursion(st, cfg.L) : st.sigma.back();
  km.ids.resize(static_cast<std::size_t>(x.rows()));
  for (std::size_t i = 0; i < km.ids.size(); ++i) km.ids[i] = i;
  km.L = cfg.L;
  km.xi = cfg.xi;
  km.activation = cfg.activation;
  return km;
}

/// Finite-width NTK sum_p df(x)/dp df(x')/dp over rows of `inputs`.
inline KernelMatrix empirical_ntk(const nn::NetworkState& net, const Eigen::MatrixXd& inputs) {
  if (inputs.cols() != net.config.widths.front())
    throw ShapeError("input width " + std::to_string(inputs.cols()) + " != network n_0 " +
                     std::to_string(net.config.widths.front()));
  const Eigen::MatrixXd j = nn::jacobian(net, inputs);
  KernelMatrix km;
  km.kind = KernelKind::Empirical;
  km.entries = j * j.transpose();
  km.ids.resize(static_cast<std::size_t>(inputs.rows()));
  for (std::size_t i = 0; i < km.ids.size(); ++i) km.ids[i] = i;
  km.L = net.config.layers();
  km.xi = net.config.xi;
  km.activation = net.config.hidden_activations.empty() ? Activation::Identity : net.config.hidden_activations.front();
  return km;
}

// ---------------------------------------------------------------------------
// Positive definiteness
// ---------------------------------------------------------------------------

struct PDReport {
  double min_eigenvalue = 0;
  double max_eigenvalue = 0;
  bool is_pd = false;
  std::optional<Eigen::VectorXd> degeneracy_witness;
  bool condition_i = false;   // sum_a c_a rho_a^k = 0 for all k, sum_a c_a = 0
  bool condition_ii = false;  // xi = 0, sum_a c_a rho_a^k = I/2^m for all k, sum_a c_a = 1
};

inline constexpr double kDefaultPdTolerance = 1e-10;

/// Eigenvalue test min > tol * max. When it fails, the eigenvector of the
/// smallest eigenvalue is returned as witness and, if window densities are
/// supplied, checked against the two degeneracy conditions.
inline PDReport pd_check(const Eigen::MatrixXd& k, const std::vector<std::vector<DensityMatrix>>* densities = nullptr,
                         double xi = 0.0, double tol = kDefaultPdTolerance) {
  if (k.rows() != k.cols() || k.rows() == 0) throw ShapeError("PD check needs a non-empty square matrix");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (k + k.transpose()));
  PDReport r;
  r.min_eigenvalue = eig.eigenvalues()(0);
  r.max_eigenvalue = eig.eigenvalues()(k.rows() - 1);
  r.is_pd = r.min_eigenvalue > tol * std::max(r.max_eigenvalue, 0.0) && r.max_eigenvalue > 0;
  if (r.is_pd) return r;
  Eigen::VectorXd c = eig.eigenvectors().col(0);
  r.degeneracy_witness = c;
  if (densities == nullptr || densities->empty()) return r;
  if (densities->size() != static_cast<std::size_t>(k.rows())) throw ShapeError("density list size != kernel size");
  const std::size_t nq = densities->front().size();
  const int m = densities->front().front().m;
  const auto dim = static_cast<Eigen::Index>(1) << m;
  auto mixture = [&](const Eigen::VectorXd& coef, std::size_t w) {
    qsim::CMatrix acc = qsim::CMatrix::Zero(dim, dim);
    for (std::size_t a = 0; a < densities->size(); ++a) acc += coef[static_cast<Eigen::Index>(a)] * (*densities)[a][w].rho;
    return acc;
  };
  const double csum = c.sum();
  const double ctol = 1e-8 * c.cwiseAbs().sum();
  bool zero_mix = std::abs(csum) <= ctol;
  for (std::size_t w = 0; w < nq && zero_mix; ++w) zero_mix = mixture(c, w).norm() <= ctol;
  r.condition_i = zero_mix;
  if (xi == 0.0 && std::abs(csum) > ctol) {
    const Eigen::VectorXd cn = c / csum;
    bool maximally_mixed = true;
    const qsim::CMatrix target = qsim::CMatrix::Identity(dim, dim) / static_cast<double>(dim);
    for (std::size_t w = 0; w < nq && maximally_mixed; ++w)
      maximally_mixed = (mixture(cn, w) - target).norm() <= 1e-8 * cn.cwiseAbs().sum();
    r.condition_ii = maximally_mixed;
  }
  return r;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// One '#' header line (kind, L, xi, activation, encoder hash) then the rows.
inline void write_gram_csv(const std::filesystem::path& path, const KernelMatrix& km) {
  io::Table t;
  t.meta = {{"kind", to_string(km.kind)},
            {"L", std::to_string(km.L)},
            {"xi", io::format_double(km.xi)},
            {"activation", to_string(km.activation)},
            {"encoder", km.encoder_hash}};
  t.values = km.entries;
  io::write_table(path, t);
}

inline KernelMatrix read_gram_csv(const std::filesystem::path& path) {
  const auto t = io::read_table(path, false);
  for (const char* key : {"kind", "L", "xi", "activation", "encoder"})
    if (!t.meta.contains(key)) throw SchemaError(std::string("gram header lacks '") + key + "'");
  KernelMatrix km;
  km.kind = parse_kernel_kind(t.meta.at("kind"));
  km.L = std::stoi(t.meta.at("L"));
  km.xi = std::stod(t.meta.at("xi"));
  km.activation = parse_activation(t.meta.at("activation"));
  km.encoder_hash = t.meta.at("encoder");
  km.entries = t.values;
  if (km.entries.rows() != km.entries.cols()) throw SchemaError("gram matrix is not square");
  km.ids.resize(static_cast<std::size_t>(km.entries.rows()));
  for (std::size_t i = 0; i < km.ids.size(); ++i) km.ids[i] = i;
  return km;
}

}  // namespace qcntk::kernel
