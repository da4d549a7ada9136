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

/// Small-register statevector simulation: gates, data encoders, reduced
/// density matrices, Haar-random product measurements and shot sampling.
///
/// Qubit q of an n-qubit register is bit (n - 1 - q) of the basis index, so
/// the dense operator of a product U_0 (x) U_1 (x) ... is the ordinary
/// Kronecker product in qubit order and window k (1-based) of locality m
/// covers qubits (k-1)m ... km-1.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qcntk/errors.hpp"
#include "qcntk/io.hpp"
#include "qcntk/parallel.hpp"
#include "qcntk/random.hpp"

namespace qcntk::qsim {

using cplx = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;

inline constexpr int kMaxQubits = 14;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// ---------------------------------------------------------------------------
// Gates
// ---------------------------------------------------------------------------

enum class GateKind { H, RX, RZ, CNOT, U3 };

inline const char* to_string(GateKind k) {
  switch (k) {
    case GateKind::H: return "H";
    case GateKind::RX: return "RX";
    case GateKind::RZ: return "RZ";
    case GateKind::CNOT: return "CNOT";
    case GateKind::U3: return "U3";
  }
  return "?";
}

struct Gate {
  GateKind kind = GateKind::H;
  std::array<double, 3> params{};  // radians; RX/RZ use params[0]
  std::vector<int> targets;        // CNOT: {control, target}

  static Gate h(int q) { return {GateKind::H, {}, {q}}; }
  static Gate rx(int q, double theta) { return {GateKind::RX, {theta, 0, 0}, {q}}; }
  static Gate rz(int q, double theta) { return {GateKind::RZ, {theta, 0, 0}, {q}}; }
  static Gate cnot(int control, int target) { return {GateKind::CNOT, {}, {control, target}}; }
  static Gate u3(int q, double theta, double phi, double lambda) {
    return {GateKind::U3, {theta, phi, lambda}, {q}};
  }

  int arity() const { return kind == GateKind::CNOT ? 2 : 1; }
  bool operator==(const Gate&) const = default;
};

/// Dense matrix of a gate on its own targets (2x2, or 4x4 in |control target>
/// order for CNOT).
inline CMatrix gate_matrix(const Gate& g) {
  using namespace std::complex_literals;
  CMatrix u(2, 2);
  const double t = g.params[0];
  switch (g.kind) {
    case GateKind::H: {
      const double s = 1.0 / std::numbers::sqrt2;
      u << s, s, s, -s;
      return u;
    }
    case GateKind::RX:
      u << std::cos(t / 2), -1i * std::sin(t / 2), -1i * std::sin(t / 2), std::cos(t / 2);
      return u;
    case GateKind::RZ:
      u << std::exp(-1i * (t / 2)), 0, 0, std::exp(1i * (t / 2));
      return u;
    case GateKind::U3: {
      const double phi = g.params[1], lam = g.params[2];
      u << std::cos(t / 2), -std::exp(1i * lam) * std::sin(t / 2),
          std::exp(1i * phi) * std::sin(t / 2), std::exp(1i * (phi + lam)) * std::cos(t / 2);
      return u;
    }
    case GateKind::CNOT: {
      CMatrix c = CMatrix::Zero(4, 4);
      c(0, 0) = c(1, 1) = c(2, 3) = c(3, 2) = 1.0;
      return c;
    }
  }
  return u;
}

// ---------------------------------------------------------------------------
// Statevector
// ---------------------------------------------------------------------------

class Statevector {
 public:
  /// |0...0> on n qubits.
  explicit Statevector(int n) : n_(n) {
    if (n < 1 || n > kMaxQubits)
      throw SizeError("qubit count " + std::to_string(n) + " outside [1, " +
                      std::to_string(kMaxQubits) + "]");
    amps_.assign(std::size_t{1} << n, cplx{0.0, 0.0});
    amps_[0] = 1.0;
  }

  /// Wraps explicit amplitudes; the vector must have length 2^n and unit norm.
  static Statevector from_amplitudes(std::vector<cplx> amps) {
    const auto dim = amps.size();
    if (dim < 2 || (dim & (dim - 1)) != 0) throw SizeError("amplitude count is not a power of two");
    Statevector s(std::countr_zero(dim));
    s.amps_ = std::move(amps);
    if (std::abs(s.norm() - 1.0) > 1e-10) throw ValidationError("amplitudes are not normalized");
    return s;
  }

  int num_qubits() const { return n_; }
  std::size_t dim() const { return amps_.size(); }
  std::span<const cplx> amplitudes() const { return amps_; }
  const cplx& operator[](std::size_t i) const { return amps_[i]; }

  Eigen::VectorXcd to_eigen() const { return Eigen::Map<const Eigen::VectorXcd>(amps_.data(), dim()); }

  double norm() const {
    double s = 0;
    for (const auto& a : amps_) s += std::norm(a);
    return std::sqrt(s);
  }

  void apply(const Gate& g) {
    check_targets(g);
    if (g.kind == GateKind::CNOT) {
      apply_cnot(g.targets[0], g.targets[1]);
    } else {
      apply_1q(g.targets[0], gate_matrix(g));
    }
  }

  void apply(std::span<const Gate> gates) {
    for (const auto& g : gates) apply(g);
  }

  void apply_1q(int q, const CMatrix& u) {
    check_qubit(q);
    const std::size_t stride = stride_of(q);
    const cplx u00 = u(0, 0), u01 = u(0, 1), u10 = u(1, 0), u11 = u(1, 1);
    for (std::size_t i = 0; i < amps_.size(); ++i) {
      if (i & stride) continue;
      const cplx a = amps_[i], b = amps_[i | stride];
      amps_[i] = u00 * a + u01 * b;
      amps_[i | stride] = u10 * a + u11 * b;
    }
  }

  void apply_cnot(int control, int target) {
    check_qubit(control);
    check_qubit(target);
    if (control == target) throw IndexError("CNOT control equals target");
    const std::size_t cs = stride_of(control), ts = stride_of(target);
    for (std::size_t i = 0; i < amps_.size(); ++i) {
      if ((i & cs) && !(i & ts)) std::swap(amps_[i], amps_[i | ts]);
    }
  }

  /// Applies a 2^m x 2^m unitary to qubits first ... first+m-1.
  void apply_window(int first, int m, const CMatrix& u) {
    if (m < 1 || first < 0 || first + m > n_) throw IndexError("window outside register");
    const std::size_t wdim = std::size_t{1} << m;
    if (static_cast<std::size_t>(u.rows()) != wdim || u.cols() != u.rows())
      throw ShapeError("window operator has wrong dimension");
    const int lo_bits = n_ - first - m;
    const std::size_t lo_count = std::size_t{1} << lo_bits;
    const std::size_t hi_count = std::size_t{1} << first;
    Eigen::VectorXcd buf(wdim), out(wdim);
    for (std::size_t hi = 0; hi < hi_count; ++hi) {
      for (std::size_t lo = 0; lo < lo_count; ++lo) {
        const std::size_t base = (hi << (n_ - first)) | lo;
        for (std::size_t w = 0; w < wdim; ++w) buf[w] = amps_[base | (w << lo_bits)];
        out.noalias() = u * buf;
        for (std::size_t w = 0; w < wdim; ++w) amps_[base | (w << lo_bits)] = out[w];
      }
    }
  }

  std::size_t stride_of(int q) const { return std::size_t{1} << (n_ - 1 - q); }

 private:
  void check_qubit(int q) const {
    if (q < 0 || q >= n_)
      throw IndexError("qubit " + std::to_string(q) + " outside register of " + std::to_string(n_));
  }
  void check_targets(const Gate& g) const {
    if (static_cast<int>(g.targets.size()) != g.arity())
      throw IndexError(std::string(to_string(g.kind)) + " has wrong number of targets");
    for (int q : g.targets) check_qubit(q);
    if (g.arity() == 2 && g.targets[0] == g.targets[1]) throw IndexError("repeated target index");
  }

  int n_;
  std::vector<cplx> amps_;
};

inline Statevector zero_state(int n) { return Statevector(n); }

inline Statevector apply_gate(Statevector state, const Gate& g) {
  state.apply(g);
  return state;
}

// ---------------------------------------------------------------------------
// Encoders
// ---------------------------------------------------------------------------

enum class Ansatz { A, A4, A4c, B, Bc, QuantumData };

inline const char* to_string(Ansatz a) {
  switch (a) {
    case Ansatz::A: return "A";
    case Ansatz::A4: return "A4";
    case Ansatz::A4c: return "A4c";
    case Ansatz::B: return "B";
    case Ansatz::Bc: return "Bc";
    case Ansatz::QuantumData: return "QuantumData";
  }
  return "?";
}

inline Ansatz parse_ansatz(const std::string& s) {
  for (Ansatz a : {Ansatz::A, Ansatz::A4, Ansatz::A4c, Ansatz::B, Ansatz::Bc, Ansatz::QuantumData})
    if (s == to_string(a)) return a;
  throw ValidationError("unknown ansatz '" + s + "'");
}

inline bool has_cross_terms(Ansatz a) { return a == Ansatz::A || a == Ansatz::A4 || a == Ansatz::A4c; }
inline bool has_cnot(Ansatz a) { return a == Ansatz::A || a == Ansatz::A4 || a == Ansatz::B; }
inline int default_depth(Ansatz a) { return (a == Ansatz::A4 || a == Ansatz::A4c) ? 4 : 1; }

/// Layers of the fixed random block used by the QuantumData encoder.
inline constexpr int kRandomBlockLayers = 3;

struct EncoderSpec {
  Ansatz ansatz = Ansatz::B;
  int n = 1;
  int depth_repeats = 1;
  std::uint64_t random_seed = 0;

  static EncoderSpec make(Ansatz a, int n, std::uint64_t seed = 0) {
    EncoderSpec s{a, n, default_depth(a), seed};
    s.validate();
    return s;
  }

  void validate() const {
    if (n < 1 || n > kMaxQubits) throw SizeError("encoder qubit count " + std::to_string(n));
    if (depth_repeats < 1) throw ValidationError("depth_repeats must be >= 1");
  }

  /// Structured text, one key=value per line.
  std::string to_text() const {
    std::ostringstream os;
    os << "ansatz=" << to_string(ansatz) << "\n"
       << "n=" << n << "\n"
       << "depth=" << depth_repeats << "\n"
       << "seed=" << random_seed << "\n";
    return os.str();
  }

  static EncoderSpec from_text(const std::string& text) {
    EncoderSpec s;
    bool seen_depth = false;
    std::istringstream is(text);
    std::string line;
    long lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ParseError("expected key=value", lineno);
      const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
      try {
        if (key == "ansatz") s.ansatz = parse_ansatz(val);
        else if (key == "n") s.n = std::stoi(val);
        else if (key == "depth") s.depth_repeats = std::stoi(val), seen_depth = true;
        else if (key == "seed") s.random_seed = std::stoull(val);
        else throw ParseError("unknown key '" + key + "'", lineno);
      } catch (const std::logic_error&) {
        throw ParseError("bad value for '" + key + "'", lineno);
      }
    }
    if (!seen_depth) s.depth_repeats = default_depth(s.ansatz);
    s.validate();
    return s;
  }

  /// FNV-1a hash of the structured text, as 16 hex digits.
  std::string hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : to_text()) h = (h ^ c) * 0x100000001b3ULL;
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
  }

  bool operator==(const EncoderSpec&) const = default;
};

/// Fixed random block: kRandomBlockLayers x (U3 on every qubit, CNOT chain),
/// then a closing U3 layer; Euler angles ~ U(0, 2 pi) from `seed`.
inline std::vector<Gate> random_block(int n, std::uint64_t seed) {
  Rng rng = make_rng(seed, {0x72616e64ULL});
  std::uniform_real_distribution<double> angle(0.0, kTwoPi);
  std::vector<Gate> gates;
  auto u3_layer = [&] {
    for (int q = 0; q < n; ++q) {
      const double a = angle(rng), b = angle(rng), c = angle(rng);
      gates.push_back(Gate::u3(q, a, b, c));
    }
  };
  for (int layer = 0; layer < kRandomBlockLayers; ++layer) {
    u3_layer();
    for (int q = 0; q + 1 < n; ++q) gates.push_back(Gate::cnot(q, q + 1));
  }
  u3_layer();
  return gates;
}

/// Gate list of the encoding circuit for data vector x.
///
/// One block of the A/B families is: H on every qubit, RZ(2 pi x_i) on qubit
/// i, then (A family) RZ(2 pi x_i x_{i+1}) on qubit i+1, then (A, A4, B) the
/// CNOT chain (i, i+1). The block is repeated depth_repeats times.
/// QuantumData is RX(x_i) on qubit i followed by random_block(n, seed).
inline std::vector<Gate> compile_encoder(const EncoderSpec& spec, std::span<const double> x) {
  spec.validate();
  if (static_cast<int>(x.size()) != spec.n)
    throw ShapeError("data dimension " + std::to_string(x.size()) + " != qubit count " +
                     std::to_string(spec.n));
  const int n = spec.n;
  std::vector<Gate> gates;
  if (spec.ansatz == Ansatz::QuantumData) {
    for (int q = 0; q < n; ++q) gates.push_back(Gate::rx(q, x[q]));
    auto block = random_block(n, spec.random_seed);
    gates.insert(gates.end(), block.begin(), block.end());
    return gates;
  }
  for (int rep = 0; rep < spec.depth_repeats; ++rep) {
    for (int q = 0; q < n; ++q) gates.push_back(Gate::h(q));
    for (int q = 0; q < n; ++q) gates.push_back(Gate::rz(q, kTwoPi * x[q]));
    if (has_cross_terms(spec.ansatz))
      for (int q = 0; q + 1 < n; ++q) gates.push_back(Gate::rz(q + 1, kTwoPi * x[q] * x[q + 1]));
    if (has_cnot(spec.ansatz))
      for (int q = 0; q + 1 < n; ++q) gates.push_back(Gate::cnot(q, q + 1));
  }
  return gates;
}

/// |psi(x)> = U_enc(x)|0...0>.
inline Statevector encode(const EncoderSpec& spec, std::span<const double> x) {
  Statevector s(spec.n);
  const auto gates = compile_encoder(spec, x);
  s.apply(gates);
  return s;
}

// ---------------------------------------------------------------------------
// Reduced density matrices
// ---------------------------------------------------------------------------

struct DensityMatrix {
  int m = 1;
  CMatrix rho;
};

inline void check_window(int n, int k, int m) {
  if (m < 1 || n % m != 0)
    throw IndexError("locality " + std::to_string(m) + " does not divide qubit count " + std::to_string(n));
  if (k < 1 || k > n / m)
    throw IndexError("window " + std::to_string(k) + " outside [1, " + std::to_string(n / m) + "]");
}

/// Reduced state of qubits (k-1)m ... km-1 (k is 1-based).
inline DensityMatrix reduced_density(const Statevector& state, int k, int m) {
  const int n = state.num_qubits();
  check_window(n, k, m);
  const int first = (k - 1) * m;
  const std::size_t wdim = std::size_t{1} << m;
  const int lo_bits = n - first - m;
  const std::size_t lo_count = std::size_t{1} << lo_bits;
  const std::size_t hi_count = std::size_t{1} << first;
  const auto amps = state.amplitudes();
  CMatrix rho = CMatrix::Zero(wdim, wdim);
  Eigen::VectorXcd v(wdim);
  for (std::size_t hi = 0; hi < hi_count; ++hi) {
    for (std::size_t lo = 0; lo < lo_count; ++lo) {
      const std::size_t base = (hi << (n - first)) | lo;
      for (std::size_t w = 0; w < wdim; ++w) v[w] = amps[base | (w << lo_bits)];
      rho.noalias() += v * v.adjoint();
    }
  }
  return {m, rho};
}

/// All n/m window densities of a state.
inline std::vector<DensityMatrix> window_densities(const Statevector& state, int m) {
  std::vector<DensityMatrix> out;
  const int nq = state.num_qubits() / m;
  check_window(state.num_qubits(), 1, m);
  out.reserve(nq);
  for (int k = 1; k <= nq; ++k) out.push_back(reduced_density(state, k, m));
  return out;
}

/// Tr(rho1 rho2), real for Hermitian arguments.
inline double trace_product(const DensityMatrix& a, const DensityMatrix& b) {
  if (a.rho.rows() != b.rho.rows() || a.rho.cols() != b.rho.cols())
    throw ShapeError("density matrices have different dimensions");
  // Tr(AB) = sum_ij A_ij B_ji
  return (a.rho.array() * b.rho.transpose().array()).sum().real();
}

// ---------------------------------------------------------------------------
// Haar sampling
// ---------------------------------------------------------------------------

/// Haar-distributed U(dim): QR of a complex Ginibre matrix with the phases of
/// diag(R) divided out.
inline CMatrix haar_unitary(int dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0 / std::numbers::sqrt2);
  CMatrix z(dim, dim);
  for (int j = 0; j < dim; ++j)
    for (int i = 0; i < dim; ++i) {
      const double re = normal(rng);
      const double im = normal(rng);
      z(i, j) = cplx{re, im};
    }
  Eigen::HouseholderQR<CMatrix> qr(z);
  CMatrix q = qr.householderQ();
  const CMatrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < dim; ++j) {
    const cplx d = r(j, j);
    q.col(j) *= (std::abs(d) > 0 ? d / std::abs(d) : cplx{1.0, 0.0});
  }
  return q;
}

/// n_q independent Haar unitaries of dimension 2^m (a product 2-design).
inline std::vector<CMatrix> sample_product_2design(int m, int n_q, Rng& rng) {
  if (m < 1 || m > kMaxQubits) throw SizeError("locality out of range");
  std::vector<CMatrix> out;
  out.reserve(n_q);
  for (int k = 0; k < n_q; ++k) out.push_back(haar_unitary(1 << m, rng));
  return out;
}

// ---------------------------------------------------------------------------
// Observables
// ---------------------------------------------------------------------------

inline bool is_hermitian(const CMatrix& a, double tol = 1e-12) {
  return a.rows() == a.cols() && (a - a.adjoint()).cwiseAbs().maxCoeff() <= tol * std::max(1.0, a.cwiseAbs().maxCoeff());
}

/// sigma_z on the first qubit of an m-qubit window, identity elsewhere.
/// Traceless with Tr(O^2) = 2^m.
inline CMatrix default_local_observable(int m) {
  const int dim = 1 << m;
  CMatrix o = CMatrix::Zero(dim, dim);
  for (int w = 0; w < dim; ++w) o(w, w) = (w < dim / 2) ? 1.0 : -1.0;
  return o;
}

/// O = sum_k I (x) local (x) I over the n/m windows of locality m.
struct WindowObservable {
  int m = 1;
  CMatrix local;

  explicit WindowObservable(int m_, CMatrix local_) : m(m_), local(std::move(local_)) {
    if (local.rows() != (1 << m) || local.cols() != (1 << m)) throw ShapeError("local observable must be 2^m x 2^m");
    if (!is_hermitian(local)) throw ValidationError("local observable is not Hermitian");
  }
  static WindowObservable z_default(int m) { return WindowObservable(m, default_local_observable(m)); }

  double trace_sq() const { return (local * local).trace().real(); }
};

/// <psi|O|psi> for a dense operator on the whole register.
inline double expectation(const Statevector& state, const CMatrix& op) {
  if (op.rows() != static_cast<Eigen::Index>(state.dim()) || op.cols() != op.rows())
    throw ShapeError("observable dimension does not match register");
  if (!is_hermitian(op, 1e-10)) throw ValidationError("observable is not Hermitian");
  const Eigen::VectorXcd psi = state.to_eigen();
  return psi.dot(op * psi).real();
}

/// <psi|O|psi> for a sum of local window terms.
inline double expectation(const Statevector& state, const WindowObservable& obs) {
  double total = 0;
  for (const auto& rho : window_densities(state, obs.m)) total += (obs.local * rho.rho).trace().real();
  return total;
}

/// <psi|Z_q|psi>.
inline double expectation_z(const Statevector& state, int q) {
  if (q < 0 || q >= state.num_qubits()) throw IndexError("qubit out of range");
  const std::size_t s = state.stride_of(q);
  double e = 0;
  const auto a = state.amplitudes();
  for (std::size_t i = 0; i < a.size(); ++i) e += (i & s) ? -std::norm(a[i]) : std::norm(a[i]);
  return e;
}

/// Draws multinomial outcome counts over `probs` for n_shots trials.
inline std::vector<long> multinomial_counts(std::span<const double> probs, long n_shots, Rng& rng) {
  std::vector<long> counts(probs.size(), 0);
  long remaining = n_shots;
  double mass = 1.0;
  for (std::size_t j = 0; j + 1 < probs.size() && remaining > 0; ++j) {
    const double p = mass > 0 ? std::clamp(probs[j] / mass, 0.0, 1.0) : 0.0;
    std::binomial_distribution<long> draw(remaining, p);
    counts[j] = draw(rng);
    remaining -= counts[j];
    mass -= probs[j];
  }
  if (!probs.empty()) counts.back() += remaining;
  return counts;
}

/// Empirical mean of n_shots projective measurements of a window-sum
/// observable: each window is rotated into the eigenbasis of the local term,
/// whole-register bitstrings are sampled and the local eigenvalues summed.
inline double sample_expectation(const Statevector& state, const WindowObservable& obs, long n_shots, Rng& rng) {
  if (n_shots <= 0) throw ArgumentError("n_shots must be positive");
  const int n = state.num_qubits();
  check_window(n, 1, obs.m);
  Eigen::SelfAdjointEigenSolver<CMatrix> eig(obs.local);
  const Eigen::VectorXd evals = eig.eigenvalues();
  const CMatrix to_eigenbasis = eig.eigenvectors().adjoint();
  Statevector rotated = state;
  const int nq = n / obs.m;
  for (int k = 0; k < nq; ++k) rotated.apply_window(k * obs.m, obs.m, to_eigenbasis);
  std::vector<double> probs(rotated.dim());
  for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = std::norm(rotated[i]);
  const auto counts = multinomial_counts(probs, n_shots, rng);
  const std::size_t mask = (std::size_t{1} << obs.m) - 1;
  double sum = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) continue;
    double value = 0;
    for (int k = 0; k < nq; ++k) value += evals[(i >> (n - (k + 1) * obs.m)) & mask];
    sum += static_cast<double>(counts[i]) * value;
  }
  return sum / static_cast<double>(n_shots);
}

// ---------------------------------------------------------------------------
// Random measurement features
// ---------------------------------------------------------------------------

/// n_0 frozen product unitaries U_i = U_i^1 (x) ... (x) U_i^{n_Q} together with
/// the local observable; f_i(x) = <psi(x)| U_i^dag O U_i |psi(x)>.
struct RandomMeasurement {
  int n = 1;
  int m = 1;
  int n_q = 1;
  std::uint64_t seed = 0;
  std::vector<std::vector<CMatrix>> unitaries;  // [i][k]
  CMatrix observable_local;
  std::vector<std::vector<CMatrix>> heisenberg;  // U^dag O U, [i][k]

  /// Unitary i is drawn from the substream (seed, i).
  static RandomMeasurement sample(int n, int m, int n0, std::uint64_t seed,
                                  std::optional<CMatrix> local = std::nullopt) {
    if (n0 < 1) throw SizeError("n0 must be positive");
    check_window(n, 1, m);
    RandomMeasurement meas;
    meas.n = n;
    meas.m = m;
    meas.n_q = n / m;
    meas.seed = seed;
    meas.observable_local = local ? *local : default_local_observable(m);
    WindowObservable check(m, meas.observable_local);
    if (std::abs(meas.observable_local.trace()) > 1e-12) throw ValidationError("local observable is not traceless");
    meas.unitaries.resize(n0);
    for (int i = 0; i < n0; ++i) {
      Rng rng = make_rng(seed, {static_cast<std::uint64_t>(i)});
      meas.unitaries[i] = sample_product_2design(m, meas.n_q, rng);
    }
    meas.refresh_heisenberg();
    return meas;
  }

  /// All-identity measurement (useful as a reference point).
  static RandomMeasurement identity(int n, int m, int n0) {
    RandomMeasurement meas;
    meas.n = n;
    meas.m = m;
    meas.n_q = n / m;
    check_window(n, 1, m);
    meas.observable_local = default_local_observable(m);
    meas.unitaries.assign(n0, std::vector<CMatrix>(meas.n_q, CMatrix::Identity(1 << m, 1 << m)));
    meas.refresh_heisenberg();
    return meas;
  }

  int size() const { return static_cast<int>(unitaries.size()); }

  void refresh_heisenberg() {
    heisenberg.resize(unitaries.size());
    for (std::size_t i = 0; i < unitaries.size(); ++i) {
      heisenberg[i].clear();
      for (const auto& u : unitaries[i]) heisenberg[i].push_back(u.adjoint() * observable_local * u);
    }
  }

  double trace_sq() const { return (observable_local * observable_local).trace().real(); }
};

struct ShotConfig {
  long n_shots = 0;
  std::uint64_t seed = 0;
};

/// Feature vector f^Q(x) of length n0. Without shots the expectation is exact;
/// with shots each feature is the mean of n_shots measurements on the
/// substream (shots.seed, i).
inline std::vector<double> quantum_features(const Statevector& psi, const RandomMeasurement& meas,
                                            const std::optional<ShotConfig>& shots = std::nullopt) {
  if (psi.num_qubits() != meas.n)
    throw ShapeError("measurement compiled for " + std::to_string(meas.n) + " qubits, state has " +
                     std::to_string(psi.num_qubits()));
  std::vector<double> f(meas.size());
  if (!shots) {
    const auto rhos = window_densities(psi, meas.m);
    for (int i = 0; i < meas.size(); ++i) {
      double v = 0;
      for (int k = 0; k < meas.n_q; ++k)
        v += (meas.heisenberg[i][k].array() * rhos[k].rho.transpose().array()).sum().real();
      f[i] = v;
    }
    return f;
  }
  if (shots->n_shots <= 0) throw ArgumentError("n_shots must be positive");
  const WindowObservable obs(meas.m, meas.observable_local);
  for (int i = 0; i < meas.size(); ++i) {
    Statevector rotated = psi;
    for (int k = 0; k < meas.n_q; ++k) rotated.apply_window(k * meas.m, meas.m, meas.unitaries[i][k]);
    Rng rng = make_rng(shots->seed, {static_cast<std::uint64_t>(i)});
    f[i] = sample_expectation(rotated, obs, shots->n_shots, rng);
  }
  return f;
}

inline std::vector<double> quantum_features(std::span<const double> x, const EncoderSpec& spec,
                                            const RandomMeasurement& meas,
                                            const std::optional<ShotConfig>& shots = std::nullopt) {
  if (spec.n != meas.n) throw ShapeError("encoder and measurement qubit counts differ");
  return quantum_features(encode(spec, x), meas, shots);
}

/// Feature matrix (rows = data index a, columns = unitary index i). Shot
/// streams use the substream (shots.seed, a).
inline Eigen::MatrixXd feature_matrix(const Eigen::MatrixXd& inputs, const EncoderSpec& spec,
                                      const RandomMeasurement& meas,
                                      const std::optional<ShotConfig>& shots = std::nullopt) {
  Eigen::MatrixXd out(inputs.rows(), meas.size());
  parallel_for(static_cast<std::size_t>(inputs.rows()), [&](std::size_t a) {
    const Eigen::VectorXd x = inputs.row(static_cast<Eigen::Index>(a)).transpose();
    std::optional<ShotConfig> sc;
    if (shots) sc = ShotConfig{shots->n_shots, substream_seed(shots->seed, {a})};
    const auto f = quantum_features(std::span<const double>(x.data(), x.size()), spec, meas, sc);
    for (int i = 0; i < meas.size(); ++i) out(static_cast<Eigen::Index>(a), i) = f[i];
  });
  return out;
}

/// Rows = data index, columns u1..u{n0}.
inline void write_feature_csv(const std::filesystem::path& path, const Eigen::MatrixXd& features) {
  io::Table t;
  t.header = io::numbered("u", features.cols());
  t.values = features;
  io::write_table(path, t);
}

}  // namespace qcntk::qsim
