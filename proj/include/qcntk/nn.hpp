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

/// Fully connected networks in NTK parameterization:
///
///   a^(0) = x,  z^(l+1) = W^(l) a^(l) / sqrt(n_l) + xi b^(l),  a^(l) = sigma_l(z^(l)),
///
/// with a linear output z^(L). The 1/sqrt(n_l) factor is applied during
/// propagation and never folded into the stored weights.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qcntk/activation.hpp"
#include "qcntk/errors.hpp"
#include "qcntk/random.hpp"

namespace qcntk::nn {

enum class InitScheme { UnitGaussian, HeScaled };

inline const char* to_string(InitScheme s) { return s == InitScheme::UnitGaussian ? "unit_gaussian" : "he_scaled"; }

inline InitScheme parse_init_scheme(const std::string& s) {
  if (s == "unit_gaussian") return InitScheme::UnitGaussian;
  if (s == "he_scaled") return InitScheme::HeScaled;
  throw ValidationError("unknown init scheme '" + s + "'");
}

struct NetworkConfig {
  std::vector<int> widths;                     // n_0 ... n_L, n_L = 1
  double xi = 1.0;
  std::vector<Activation> hidden_activations;  // one per hidden layer (L - 1 entries)
  InitScheme init = InitScheme::UnitGaussian;

  int layers() const { return static_cast<int>(widths.size()) - 1; }

  void validate() const {
    if (widths.size() < 2) throw ValidationError("network needs at least an input and an output width");
    if (widths.back() != 1) throw ValidationError("output width must be 1");
    for (int w : widths)
      if (w < 1) throw ValidationError("widths must be >= 1");
    if (static_cast<int>(hidden_activations.size()) != layers() - 1)
      throw ValidationError("expected " + std::to_string(layers() - 1) + " hidden activations, got " +
                            std::to_string(hidden_activations.size()));
    if (xi < 0) throw ValidationError("xi must be >= 0");
  }

  /// n_0 -> hidden... -> 1 with one activation shared by all hidden layers.
  static NetworkConfig make(std::vector<int> widths, double xi, Activation hidden = Activation::ReLU,
                            InitScheme init = InitScheme::UnitGaussian) {
    NetworkConfig c{std::move(widths), xi, {}, init};
    c.hidden_activations.assign(std::max(0, c.layers() - 1), hidden);
    c.validate();
    return c;
  }
};

struct NetworkState {
  NetworkConfig config;
  std::vector<Eigen::MatrixXd> weights;  // W^(l): n_{l+1} x n_l
  std::vector<Eigen::VectorXd> biases;   // b^(l): n_{l+1}
  std::uint64_t seed = 0;

  std::size_t parameter_count() const {
    std::size_t p = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) p += weights[l].size() + biases[l].size();
    return p;
  }

  /// Parameter count excluding the output-node bias.
  std::size_t reported_parameter_count() const { return parameter_count() - 1; }

  /// Flat view: per layer, W row-major then b.
  Eigen::VectorXd flat() const {
    Eigen::VectorXd p(parameter_count());
    Eigen::Index o = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      for (Eigen::Index r = 0; r < weights[l].rows(); ++r) {
        p.segment(o, weights[l].cols()) = weights[l].row(r).transpose();
        o += weights[l].cols();
      }
      p.segment(o, biases[l].size()) = biases[l];
      o += biases[l].size();
    }
    return p;
  }

  void set_flat(const Eigen::VectorXd& p) {
    if (static_cast<std::size_t>(p.size()) != parameter_count()) throw ShapeError("flat parameter size mismatch");
    Eigen::Index o = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      for (Eigen::Index r = 0; r < weights[l].rows(); ++r) {
        weights[l].row(r) = p.segment(o, weights[l].cols()).transpose();
        o += weights[l].cols();
      }
      biases[l] = p.segment(o, biases[l].size());
      o += biases[l].size();
    }
  }

  bool operator==(const NetworkState& other) const {
    return flat() == other.flat() && config.widths == other.config.widths;
  }
};

/// Gaussian initialization. UnitGaussian draws every parameter from N(0, 1);
/// HeScaled uses standard deviation sqrt(2 / N_layer) with N_layer the
/// parameter count of that layer.
inline NetworkState init(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  NetworkState s{config, {}, {}, seed};
  Rng rng = make_rng(seed, {0x6e6e696eULL});
  for (int l = 0; l < config.layers(); ++l) {
    const int rows = config.widths[l + 1], cols = config.widths[l];
    double sd = 1.0;
    if (config.init == InitScheme::HeScaled) sd = std::sqrt(2.0 / (static_cast<double>(rows) * cols + rows));
    std::normal_distribution<double> normal(0.0, sd);
    Eigen::MatrixXd w(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) w(r, c) = normal(rng);
    Eigen::VectorXd b(rows);
    for (int r = 0; r < rows; ++r) b[r] = normal(rng);
    s.weights.push_back(std::move(w));
    s.biases.push_back(std::move(b));
  }
  return s;
}

namespace detail {

inline void check_input_width(const NetworkState& s, Eigen::Index cols) {
  if (cols != s.config.widths.front())
    throw ShapeError("input width " + std::to_string(cols) + " != n_0 = " + std::to_string(s.config.widths.front()));
}

/// Forward pass over a batch (rows = samples); keeps pre-activations for the
/// backward pass. pre[l] holds z^(l+1).
struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;  // a^(l), l = 0..L-1
  std::vector<Eigen::MatrixXd> pre;     // z^(l+1)
};

/// Fills c in place; buffers are reused when shapes repeat across calls.
inline void forward_into(const NetworkState& s, const Eigen::MatrixXd& x, ForwardCache& c) {
  check_input_width(s, x.cols());
  const int L = s.config.layers();
  c.inputs.resize(static_cast<std::size_t>(L));
  c.pre.resize(static_cast<std::size_t>(L));
  c.inputs[0] = x;
  for (int l = 0; l < L; ++l) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(s.config.widths[l]));
    Eigen::MatrixXd& z = c.pre[l];
    z.noalias() = c.inputs[l] * s.weights[l].transpose();
    z *= scale;
    z.rowwise() += (s.config.xi * s.biases[l]).transpose();
    if (l + 1 < L) {
      const Activation act = s.config.hidden_activations[l];
      c.inputs[l + 1] = z.unaryExpr([act](double q) { return activate(act, q); });
    }
  }
}

inline ForwardCache forward_cache(const NetworkState& s, const Eigen::MatrixXd& x) {
  ForwardCache c;
  forward_into(s, x, c);
  return c;
}

}  // namespace detail

inline Eigen::VectorXd forward_batch(const NetworkState& s, const Eigen::MatrixXd& x) {
  auto c = detail::forward_cache(s, x);
  return c.pre.back().col(0);
}

inline double forward(const NetworkState& s, std::span<const double> x) {
  Eigen::MatrixXd row = Eigen::Map<const Eigen::RowVectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  return forward_batch(s, row)[0];
}

/// sum_a g_a df(x_a)/dtheta by reverse-mode accumulation, in flat() order.
/// delta is scratch space.
inline void vector_jacobian_into(const NetworkState& s, const detail::ForwardCache& c, const Eigen::VectorXd& g,
                                 Eigen::VectorXd& out, Eigen::MatrixXd& delta) {
  if (g.size() != c.pre.back().rows()) throw ShapeError("cotangent length does not match batch");
  const int L = s.config.layers();
  out.resize(static_cast<Eigen::Index>(s.parameter_count()));
  std::vector<Eigen::Index> offset(static_cast<std::size_t>(L) + 1, 0);
  for (int l = 0; l < L; ++l) offset[l + 1] = offset[l] + s.weights[l].size() + s.biases[l].size();
  delta = g;  // batch x n_{l+1}
  for (int l = L - 1; l >= 0; --l) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(s.config.widths[l]));
    const Eigen::Index rows = s.weights[l].rows(), cols = s.weights[l].cols();
    // flat() stores W row-major, i.e. as a column-major cols x rows block.
    Eigen::Map<Eigen::MatrixXd> dw(out.data() + offset[l], cols, rows);
    dw.noalias() = c.inputs[l].transpose() * delta;
    dw *= scale;
    out.segment(offset[l] + rows * cols, rows) = s.config.xi * delta.colwise().sum().transpose();
    if (l > 0) {
      const Activation act = s.config.hidden_activations[l - 1];
      Eigen::MatrixXd back = (delta * s.weights[l]) * scale;
      delta = back.cwiseProduct(c.inputs[l].unaryExpr([act](double a) { return derivative_from_output(act, a); }));
    }
  }
}

inline Eigen::VectorXd vector_jacobian(const NetworkState& s, const detail::ForwardCache& c, const Eigen::VectorXd& g) {
  Eigen::VectorXd out;
  Eigen::MatrixXd delta;
  vector_jacobian_into(s, c, g, out, delta);
  return out;
}

inline Eigen::VectorXd vector_jacobian(const NetworkState& s, const Eigen::MatrixXd& x, const Eigen::VectorXd& g) {
  if (g.size() != x.rows()) throw ShapeError("cotangent length does not match batch");
  return vector_jacobian(s, detail::forward_cache(s, x), g);
}

/// df/dtheta at a single input.
inline Eigen::VectorXd gradient(const NetworkState& s, std::span<const double> x) {
  Eigen::MatrixXd row = Eigen::Map<const Eigen::RowVectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  return vector_jacobian(s, row, Eigen::VectorXd::Ones(1));
}

/// Per-sample gradients as rows.
inline Eigen::MatrixXd jacobian(const NetworkState& s, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd j(x.rows(), static_cast<Eigen::Index>(s.parameter_count()));
  for (Eigen::Index a = 0; a < x.rows(); ++a) {
    Eigen::MatrixXd row = x.row(a);
    j.row(a) = vector_jacobian(s, row, Eigen::VectorXd::Ones(1)).transpose();
  }
  return j;
}

// ---------------------------------------------------------------------------
// Losses and optimizers
// ---------------------------------------------------------------------------

enum class Loss { MSE, BCE };

inline const char* to_string(Loss l) { return l == Loss::MSE ? "mse" : "bce"; }

/// MSE: (1/2) sum (f - y)^2.  BCE: -sum [y log s(f) + (1 - y) log(1 - s(f))].
inline double cost(Loss loss, const Eigen::VectorXd& f, const Eigen::VectorXd& y) {
  if (f.size() != y.size()) throw ShapeError("output and label lengths differ");
  double c = 0;
  for (Eigen::Index a = 0; a < f.size(); ++a) {
    if (loss == Loss::MSE) {
      c += 0.5 * (f[a] - y[a]) * (f[a] - y[a]);
    } else {
      c += y[a] * softplus(-f[a]) + (1.0 - y[a]) * softplus(f[a]);
    }
  }
  return c;
}

/// dL/df per sample.
inline Eigen::VectorXd cost_derivative(Loss loss, const Eigen::VectorXd& f, const Eigen::VectorXd& y) {
  if (loss == Loss::MSE) return f - y;
  return f.unaryExpr([](double q) { return sigmoid(q); }) - y;
}

struct Optimizer {
  enum class Kind { SGD, Adam };
  Kind kind = Kind::SGD;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Eigen::VectorXd m, v;
  long t = 0;

  static Optimizer sgd(double rate) {
    Optimizer o;
    o.lr = rate;
    return o;
  }
  static Optimizer adam(double rate) {
    Optimizer o;
    o.kind = Kind::Adam;
    o.lr = rate;
    return o;
  }

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
    if (grad.size() != params.size()) throw ShapeError("gradient size mismatch");
    ++t;
    if (kind == Kind::SGD) {
      params -= lr * grad;
      return;
    }
    if (m.size() != params.size()) {
      m = Eigen::VectorXd::Zero(params.size());
      v = Eigen::VectorXd::Zero(params.size());
    }
    m = beta1 * m + (1 - beta1) * grad;
    v = beta2 * v + (1 - beta2) * grad.cwiseAbs2();
    const double c1 = 1 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1 - std::pow(beta2, static_cast<double>(t));
    params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
};

inline Optimizer::Kind parse_optimizer_kind(const std::string& s) {
  if (s == "sgd" || s == "SGD") return Optimizer::Kind::SGD;
  if (s == "adam" || s == "Adam") return Optimizer::Kind::Adam;
  throw ValidationError("unknown optimizer '" + s + "'");
}

struct TrainResult {
  std::vector<double> cost;  // full-dataset cost after k updates, k = 0..steps
};

/// Gradient-descent training. batch_size 0 means full batch; minibatches walk
/// a per-epoch permutation drawn from (batch_seed, epoch).
inline TrainResult train(NetworkState& s, const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Loss loss,
                         Optimizer& opt, long steps, long batch_size = 0, std::uint64_t batch_seed = 0) {
  if (x.rows() == 0) throw ShapeError("empty dataset");
  if (x.rows() != y.size()) throw ShapeError("input and label counts differ");
  if (steps < 0) throw ArgumentError("step count must be non-negative");
  if (loss == Loss::BCE)
    for (Eigen::Index a = 0; a < y.size(); ++a)
      if (y[a] != 0.0 && y[a] != 1.0) throw ValidationError("BCE labels must be 0 or 1");
  const Eigen::Index n = x.rows();
  const bool full = batch_size <= 0 || batch_size >= n;
  TrainResult out;
  out.cost.reserve(static_cast<std::size_t>(steps) + 1);
  Eigen::VectorXd params = s.flat();
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Eigen::Index cursor = n;
  std::uint64_t epoch = 0;
  auto record = [&](long step, const Eigen::VectorXd& f) {
    const double c = cost(loss, f, y);
    if (!std::isfinite(c)) throw DivergenceError("non-finite training cost", step);
    out.cost.push_back(c);
  };
  detail::ForwardCache cache;
  Eigen::MatrixXd delta;
  Eigen::VectorXd grad;
  for (long k = 0;; ++k) {
    if (full) {
      detail::forward_into(s, x, cache);
      const Eigen::VectorXd f = cache.pre.back().col(0);
      record(k, f);
      if (k == steps) break;
      vector_jacobian_into(s, cache, cost_derivative(loss, f, y), grad, delta);
    } else {
      record(k, forward_batch(s, x));
      if (k == steps) break;
      if (cursor + batch_size > n) {
        Rng rng = make_rng(batch_seed, {epoch++});
        std::shuffle(perm.begin(), perm.end(), rng);
        cursor = 0;
      }
      Eigen::MatrixXd xb(batch_size, x.cols());
      Eigen::VectorXd yb(batch_size);
      for (Eigen::Index i = 0; i < batch_size; ++i) {
        xb.row(i) = x.row(perm[static_cast<std::size_t>(cursor + i)]);
        yb[i] = y[perm[static_cast<std::size_t>(cursor + i)]];
      }
      cursor += batch_size;
      grad = vector_jacobian(s, xb, cost_derivative(loss, forward_batch(s, xb), yb));
    }
    opt.step(params, grad);
    s.set_flat(params);
  }
  return out;
}

}  // namespace qcntk::nn
