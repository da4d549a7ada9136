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
#include "qcntk/kernel.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

using namespace qcntk;
using namespace qcntk::kernel;
using Catch::Approx;

namespace {

constexpr double kPi = std::numbers::pi;

double min_eig(const Eigen::MatrixXd& k) {
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(k, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

double max_eig(const Eigen::MatrixXd& k) {
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(k, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
}

Eigen::MatrixXd uniform_inputs(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  Eigen::MatrixXd x(rows, cols);
  for (int a = 0; a < rows; ++a)
    for (int j = 0; j < cols; ++j) x(a, j) = u(rng);
  return x;
}

/// Random 2x2 covariance with positive diagonal.
Eigen::Matrix2d random_cov(Rng& rng) {
  std::uniform_real_distribution<double> d(0.2, 3.0), c(-0.999, 0.999);
  const double a = d(rng), b = d(rng), r = c(rng);
  Eigen::Matrix2d k;
  k << a, r * std::sqrt(a * b), r * std::sqrt(a * b), b;
  return k;
}

}  // namespace

TEST_CASE("sigma_classical_1", "[kernel]") {
  const std::vector<double> zero(4, 0.0);
  CHECK(sigma_classical_1(zero, zero, 1.0) == 1.0);
  const std::vector<double> ones(4, 1.0);
  CHECK(sigma_classical_1(ones, ones, 0.0) == Approx(1.0));
  Rng rng(3);
  std::normal_distribution<double> nd;
  for (int t = 0; t < 20; ++t) {
    std::vector<double> x(7), y(7);
    double dot = 0;
    for (int i = 0; i < 7; ++i) {
      x[i] = nd(rng);
      y[i] = nd(rng);
      dot += x[i] * y[i];
    }
    CHECK(std::abs(sigma_classical_1(x, y, 0.3) - (dot / 7 + 0.09)) <= 1e-14);
  }
  CHECK_THROWS_AS(sigma_classical_1(zero, std::vector<double>(3, 0.0), 0.0), ShapeError);
}

TEST_CASE("sigma_q_1 closed-form cases", "[kernel]") {
  qsim::DensityMatrix zero{1, qsim::CMatrix::Zero(2, 2)};
  zero.rho(0, 0) = 1;
  const std::vector<qsim::DensityMatrix> a{zero};
  CHECK(sigma_q_1(a, a, 2.0, 0.0) == Approx(1.0 / 3.0));

  const std::vector<qsim::DensityMatrix> two{zero, zero};
  CHECK_THROWS_AS(sigma_q_1(a, two, 2.0, 0.0), ShapeError);
}

TEST_CASE("projected-kernel bias makes Sigma_Q the scaled projected kernel", "[kernel]") {
  Rng rng(12);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int m : {1, 2}) {
    const int n = 4;
    const auto spec = qsim::EncoderSpec::make(qsim::Ansatz::A, n);
    const auto o = qsim::default_local_observable(m);
    const double tr = qsim::WindowObservable(m, o).trace_sq();
    const double xi = projected_kernel_xi(n / m, m, tr);
    for (int t = 0; t < 10; ++t) {
      std::vector<double> x(n), y(n);
      for (int i = 0; i < n; ++i) x[i] = u(rng), y[i] = u(rng);
      const auto rx = qsim::window_densities(qsim::encode(spec, x), m);
      const auto ry = qsim::window_densities(qsim::encode(spec, y), m);
      const double dim = std::ldexp(1.0, m);
      const double expected = tr / (dim * dim - 1) * projected_kernel(rx, ry);
      CHECK(std::abs(sigma_q_1(x, y, spec, m, o, xi) - expected) <= 1e-12);
    }
  }
}

TEST_CASE("sigma_q_1 matches the random-measurement Monte-Carlo average", "[kernel]") {
  const int n = 2, m = 1, n0 = 100000;
  const auto spec = qsim::EncoderSpec::make(qsim::Ansatz::B, n);
  const auto meas = qsim::RandomMeasurement::sample(n, m, n0, 2024);
  const std::vector<double> x{0.31, -0.52}, y{-0.77, 0.18};
  const auto fx = qsim::quantum_features(x, spec, meas);
  const auto fy = qsim::quantum_features(y, spec, meas);
  for (const auto& [p, q] : {std::pair{&fx, &fy}, std::pair{&fx, &fx}}) {
    double s = 0, s2 = 0;
    for (int i = 0; i < n0; ++i) {
      const double v = (*p)[i] * (*q)[i];
      s += v;
      s2 += v * v;
    }
    const double mean = s / n0, se = std::sqrt((s2 / n0 - mean * mean) / n0);
    const auto& b = q == &fy ? y : x;
    const double analytic = sigma_q_1(x, b, spec, m, qsim::default_local_observable(m), 0.0);
    CHECK(std::abs(mean - analytic) < 3 * se);
  }
}

TEST_CASE("sigma_q_1 symmetry and projected-kernel bound", "[kernel]") {
  Rng rng(4);
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto ansatz : {qsim::Ansatz::A, qsim::Ansatz::A4, qsim::Ansatz::B, qsim::Ansatz::Bc}) {
    const auto spec = qsim::EncoderSpec::make(ansatz, 4);
    for (int m : {1, 2, 4}) {
      const auto o = qsim::default_local_observable(m);
      const double dim = std::ldexp(1.0, m), pref = std::ldexp(1.0, m) / (dim * dim - 1);
      const int nq = 4 / m;
      for (int t = 0; t < 5; ++t) {
        std::vector<double> x(4), y(4);
        for (int i = 0; i < 4; ++i) x[i] = u(rng), y[i] = u(rng);
        const double kxy = sigma_q_1(x, y, spec, m, o, 0.0), kyx = sigma_q_1(y, x, spec, m, o, 0.0);
        CHECK(std::abs(kxy - kyx) <= 1e-12);
        CHECK(kxy >= pref * (-nq / dim) - 1e-12);
        CHECK(kxy <= pref * nq * (1 - 1 / dim) + 1e-12);
      }
    }
  }
}

TEST_CASE("relu closed forms", "[kernel]") {
  CHECK(relu_next_sigma(2.0, 2.0, 2.0, 0.5) == Approx(1.0 + 0.25));
  CHECK(relu_next_sigma(2.0, 0.0, 8.0, 0.0) == Approx(4.0 / (2 * kPi)));
  CHECK(relu_sigma_dot(1.0, 1.0, 1.0) == Approx(0.5));
  CHECK(relu_sigma_dot(1.0, -1.0, 1.0) == Approx(0.0).margin(1e-15));
  CHECK_THROWS_AS(relu_next_sigma(0.0, 0.0, 1.0, 0.0), DomainError);
  CHECK_THROWS_AS(relu_sigma_dot(1.0, 0.0, -1.0), DomainError);
  CHECK_THROWS_AS(relu_next_sigma(1.0, 1.5, 1.0, 0.0), DomainError);
  // Tolerated rounding just above the Cauchy-Schwarz bound.
  CHECK_NOTHROW(relu_sigma_dot(1.0, 1.0 + 1e-12, 1.0));
  Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    const auto k = random_cov(rng);
    const double d = relu_sigma_dot(k(0, 0), k(0, 1), k(1, 1));
    CHECK(d >= 0);
    CHECK(d <= 0.5);
  }
}

TEST_CASE("relu closed forms match Gaussian Monte-Carlo", "[kernel]") {
  Rng rng(10);
  for (int t = 0; t < 5; ++t) {
    const auto k = random_cov(rng);
    Rng mc(100 + t);
    const auto s = mc_gaussian_expectation(
        k, [](double u, double v) { return std::max(u, 0.0) * std::max(v, 0.0); }, 1'000'000, mc);
    CHECK(std::abs(s.mean - relu_next_sigma(k(0, 0), k(0, 1), k(1, 1), 0.0)) < 3 * s.std_error);
    const auto d = mc_gaussian_expectation(
        k, [](double u, double v) { return (u > 0 && v > 0) ? 1.0 : 0.0; }, 1'000'000, mc);
    CHECK(std::abs(d.mean - relu_sigma_dot(k(0, 0), k(0, 1), k(1, 1))) < 3 * d.std_error);
  }
}

TEST_CASE("mc_gaussian_expectation examples", "[kernel]") {
  Rng rng(1);
  const Eigen::Matrix2d id = Eigen::Matrix2d::Identity();
  const auto prod = mc_gaussian_expectation(id, [](double u, double v) { return u * v; }, 200000, rng);
  CHECK(std::abs(prod.mean) < 3 * prod.std_error);
  const auto relu = mc_gaussian_expectation(
      id, [](double u, double v) { return std::max(u, 0.0) * std::max(v, 0.0); }, 200000, rng);
  CHECK(std::abs(relu.mean - 1 / (2 * kPi)) < 3 * relu.std_error);
  Eigen::Matrix2d rank1;
  rank1 << 1.7, 1.7, 1.7, 1.7;
  const auto sq = mc_gaussian_expectation(
      rank1, [](double u, double v) { return std::max(u, 0.0) * std::max(v, 0.0); }, 200000, rng);
  CHECK(std::abs(sq.mean - 1.7 / 2) < 3 * sq.std_error);

  Eigen::Matrix2d bad;
  bad << 1, 2, 2, 1;
  CHECK_THROWS_AS(mc_gaussian_expectation(bad, [](double, double) { return 0.0; }, 10, rng), DomainError);
  bad << 1, 0.2, 0.1, 1;
  CHECK_THROWS_AS(mc_gaussian_expectation(bad, [](double, double) { return 0.0; }, 10, rng), DomainError);
}

TEST_CASE("theta recursion", "[kernel]") {
  const Eigen::MatrixXd x = uniform_inputs(6, 3, 1);
  KernelConfig cfg;
  cfg.xi = 0.4;
  cfg.L = 1;
  const auto s1 = classical_sigma1_gram(x, cfg.xi);
  CHECK(theta_recursion(propagate(s1, cfg), 1) == s1);

  cfg.L = 2;
  const auto st = propagate(s1, cfg);
  const auto th = theta_recursion(st, 2);
  for (Eigen::Index a = 0; a < 6; ++a) CHECK(th(a, a) == Approx(s1(a, a) + cfg.xi * cfg.xi));

  // Identity activation: every layer reproduces Sigma^(1) shifted by xi^2.
  KernelConfig lin = cfg;
  lin.activation = Activation::Identity;
  lin.L = 3;
  const auto sl = propagate(s1, lin);
  CHECK((sl.sigma[2] - (s1.array() + 2 * lin.xi * lin.xi).matrix()).cwiseAbs().maxCoeff() < 1e-14);

  LayerStack partial;
  partial.sigma.push_back(s1);
  CHECK_THROWS_AS(theta_recursion(partial, 2), StateError);
  KernelConfig bad;
  bad.L = 0;
  CHECK_THROWS_AS(propagate(s1, bad), ValidationError);
  bad.L = 1;
  bad.xi = -1;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("quantum and classical recursions differ only through the first layer", "[kernel]") {
  const Eigen::MatrixXd x = uniform_inputs(5, 4, 2);
  KernelConfig cfg;
  cfg.L = 3;
  cfg.xi = 0.2;
  const auto spec = qsim::EncoderSpec::make(qsim::Ansatz::A, 4);
  const auto q = quantum_ntk(x, spec, 1, 2.0, cfg);
  const auto s1 = quantum_sigma1_gram(dataset_densities(x, spec, 1), 2.0, cfg.xi);
  CHECK(theta_recursion(propagate(s1, cfg), cfg.L) == q.entries);
  const auto qs = quantum_ntk(x, spec, 1, 2.0, cfg, false);
  CHECK(qs.kind == KernelKind::SigmaQ);
  CHECK(q.kind == KernelKind::ThetaQ);
  CHECK(q.encoder_hash == spec.hash());
}

TEST_CASE("sigmoid recursion is seeded per entry", "[kernel]") {
  const Eigen::MatrixXd x = uniform_inputs(4, 3, 5);
  KernelConfig cfg;
  cfg.L = 2;
  cfg.activation = Activation::Sigmoid;
  cfg.mc_samples = 20000;
  cfg.mc_seed = 9;
  const auto a = classical_ntk(x, cfg);
  setenv("QCNTK_THREADS", "4", 1);
  const auto b = classical_ntk(x, cfg);
  unsetenv("QCNTK_THREADS");
  CHECK(a.entries == b.entries);
  CHECK((a.entries - a.entries.transpose()).cwiseAbs().maxCoeff() == 0.0);
  // Sigmoid'(0)^2 = 1/16 bounds the derivative kernel.
  const auto st = propagate(classical_sigma1_gram(x, 0.0), cfg);
  CHECK(st.sigma_dot[0].maxCoeff() <= 1.0 / 16 + 1e-12);
}

TEST_CASE("gram assembly", "[kernel]") {
  const auto one = gram(1, [](std::size_t, std::size_t) { return 2.5; });
  CHECK(one.rows() == 1);
  CHECK(one(0, 0) == 2.5);

  Eigen::MatrixXd dup(2, 3);
  dup << 0.1, 0.2, 0.3, 0.1, 0.2, 0.3;
  const auto k = classical_sigma1_gram(dup, 0.0);
  CHECK(std::abs(min_eig(k)) < 1e-15);

  CHECK_THROWS_AS(gram(0, [](std::size_t, std::size_t) { return 0.0; }), ShapeError);
  try {
    gram(4, [](std::size_t a, std::size_t b) -> double {
      if (a == 1 && b == 3) throw DomainError("bad entry");
      return 1.0;
    });
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("(1, 3)") != std::string::npos);
  }

  const Eigen::MatrixXd x = uniform_inputs(5, 2, 8);
  const auto spec = qsim::EncoderSpec::make(qsim::Ansatz::B, 2);
  const auto g = quantum_sigma1_gram(dataset_densities(x, spec, 1), 2.0, 0.0);
  CHECK((g - g.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(min_eig(g) >= -1e-8 * max_eig(g));

  const auto cross = cross_gram(3, 5, [&](std::size_t a, std::size_t b) { return g(a, b); });
  CHECK(cross == g.topRows(3));
}

TEST_CASE("exact kernels are PSD", "[kernel]") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Eigen::MatrixXd x = uniform_inputs(12, 4, seed);
    for (auto act : {Activation::ReLU, Activation::Identity}) {
      KernelConfig cfg;
      cfg.L = 3;
      cfg.xi = 0.1;
      cfg.activation = act;
      for (const auto& k : {classical_ntk(x, cfg).entries,
                            quantum_ntk(x, qsim::EncoderSpec::make(qsim::Ansatz::A4, 4), 2, 4.0, cfg).entries}) {
        CHECK((k - k.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * k.cwiseAbs().maxCoeff());
        CHECK(min_eig(k) >= -1e-8 * max_eig(k));
      }
    }
  }
}

TEST_CASE("empirical NTK", "[kernel]") {
  const Eigen::MatrixXd f = uniform_inputs(6, 50, 3);
  auto net = nn::init(nn::NetworkConfig::make({50, 1}, 0.7), 11);
  const auto k = empirical_ntk(net, f);
  const Eigen::MatrixXd expected = (f * f.transpose()).array() / 50.0 + 0.49;
  CHECK((k.entries - expected).cwiseAbs().maxCoeff() < 1e-13);

  auto deep = nn::init(nn::NetworkConfig::make({50, 30, 20, 1}, 0.3), 2);
  const auto kd = empirical_ntk(deep, f.topRows(1));
  CHECK(kd.entries(0, 0) > 0);
  CHECK(min_eig(empirical_ntk(deep, f).entries) >= -1e-10);
  CHECK_THROWS_AS(empirical_ntk(deep, uniform_inputs(2, 49, 1)), ShapeError);
}

TEST_CASE("empirical NTK approaches the analytic kernel as width grows", "[kernel]") {
  const Eigen::MatrixXd x = uniform_inputs(8, 3, 21);
  KernelConfig cfg;
  cfg.L = 2;
  cfg.xi = 0.5;
  const auto theta = classical_ntk(x, cfg).entries;
  std::vector<double> med;
  for (int width : {10, 100, 1000}) {
    std::vector<double> errs;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto net = nn::init(nn::NetworkConfig::make({3, width, 1}, 0.5), seed);
      errs.push_back((empirical_ntk(net, x).entries - theta).norm() / theta.norm());
    }
    std::sort(errs.begin(), errs.end());
    med.push_back(errs[2]);
  }
  CHECK(med[0] > med[1]);
  CHECK(med[1] > med[2]);
}

TEST_CASE("pd_check", "[kernel]") {
  const auto id = pd_check(Eigen::MatrixXd::Identity(4, 4));
  CHECK(id.min_eigenvalue == Approx(1.0));
  CHECK(id.is_pd);
  CHECK_FALSE(id.degeneracy_witness);

  Eigen::MatrixXd x = uniform_inputs(6, 2, 31);
  Eigen::MatrixXd with_dup(7, 2);
  with_dup << x, x.row(2);
  const auto spec = qsim::EncoderSpec::make(qsim::Ansatz::B, 2);
  KernelConfig cfg;
  cfg.L = 2;
  cfg.xi = 0.3;
  const auto dens = dataset_densities(with_dup, spec, 1);
  const auto k = theta_recursion(propagate(quantum_sigma1_gram(dens, 2.0, cfg.xi), cfg), cfg.L);
  const auto r = pd_check(k, &dens, cfg.xi);
  CHECK_FALSE(r.is_pd);
  CHECK(r.min_eigenvalue <= 1e-10 * r.max_eigenvalue);
  REQUIRE(r.degeneracy_witness);
  const Eigen::VectorXd& c = *r.degeneracy_witness;
  CHECK(std::abs(std::abs(c[2]) - 1 / std::sqrt(2.0)) < 1e-6);
  CHECK(std::abs(c[2] + c[6]) < 1e-6);
  CHECK(r.condition_i);
  CHECK_FALSE(r.condition_ii);

  const auto dens_x = dataset_densities(x, spec, 1);
  const auto kx = theta_recursion(propagate(quantum_sigma1_gram(dens_x, 2.0, cfg.xi), cfg), cfg.L);
  const auto rx = pd_check(kx, &dens_x, cfg.xi);
  CHECK(rx.is_pd);
  CHECK(rx.min_eigenvalue > 1e-10 * rx.max_eigenvalue);

  CHECK_THROWS_AS(pd_check(Eigen::MatrixXd(2, 3)), ShapeError);
}

TEST_CASE("pd_check recognises the maximally-mixed mixture", "[kernel]") {
  // |0><0| and |1><1| average to I/2; with xi = 0 the L = 1 quantum kernel
  // of {|0>, |1>} on one qubit is singular through condition (ii).
  std::vector<std::vector<qsim::DensityMatrix>> dens(2, std::vector<qsim::DensityMatrix>(1));
  dens[0][0] = {1, qsim::CMatrix::Zero(2, 2)};
  dens[1][0] = {1, qsim::CMatrix::Zero(2, 2)};
  dens[0][0].rho(0, 0) = 1;
  dens[1][0].rho(1, 1) = 1;
  const auto k = quantum_sigma1_gram(dens, 2.0, 0.0);
  const auto r = pd_check(k, &dens, 0.0);
  CHECK_FALSE(r.is_pd);
  CHECK(r.condition_ii);
  CHECK_FALSE(r.condition_i);
}

TEST_CASE("gram CSV round trip", "[kernel]") {
  const Eigen::MatrixXd x = uniform_inputs(4, 2, 6);
  KernelConfig cfg;
  cfg.L = 2;
  cfg.xi = 0.25;
  const auto spec = qsim::EncoderSpec::make(qsim::Ansatz::Bc, 2);
  const auto k = quantum_ntk(x, spec, 1, 2.0, cfg);
  const auto path = std::filesystem::temp_directory_path() / "qcntk_gram.csv";
  write_gram_csv(path, k);
  std::ifstream is(path);
  std::string first;
  std::getline(is, first);
  CHECK(first.rfind("#", 0) == 0);
  CHECK(first.find("kind=ThetaQ") != std::string::npos);
  CHECK(first.find("encoder=" + spec.hash()) != std::string::npos);
  const auto back = read_gram_csv(path);
  CHECK(back.entries == k.entries);
  CHECK(back.kind == k.kind);
  CHECK(back.L == 2);
  CHECK(back.xi == 0.25);
  CHECK(back.activation == Activation::ReLU);
  CHECK(back.encoder_hash == spec.hash());
  std::filesystem::remove(path);
}
