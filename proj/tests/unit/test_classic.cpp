#include <doctest.h>

#include <array>
#include <cmath>
#include <vector>

#include <Eigen/QR>
#include <Eigen/SVD>

#include "frflab/classic.hpp"
#include "frflab/error.hpp"
#include "generators.hpp"

using namespace frflab;
using namespace frflab::classic;

namespace {

constexpr double kRes = 0.025;
constexpr std::size_t kCenter = 100;

// Bin offset of an absolute frequency in the windows built below.
double offset_of(double omega) { return std::round(omega / kRes) - static_cast<double>(kCenter); }

LocalWindow with_eval(LocalWindow w, int eval_offset) {
  w.eval_offset = eval_offset;
  w.bin = static_cast<std::size_t>(static_cast<int>(w.center) + eval_offset);
  return w;
}

// Minimum-norm least squares through the real stacked system, independent of the library path.
CVector stacked_lstsq(const CMatrix& k, const CVector& y) {
  const Index m = k.rows();
  const Index p = k.cols();
  RMatrix a(2 * m, 2 * p);
  a << k.real(), -k.imag(), k.imag(), k.real();
  RVector b(2 * m);
  b << y.real(), y.imag();
  const RVector z = a.completeOrthogonalDecomposition().solve(b);
  CVector x(p);
  for (Index j = 0; j < p; ++j) x(j) = Complex(z(j), z(p + j));
  return x;
}

CMatrix levy_matrix(const LocalWindow& w, Orders o, double scaling) {
  const RVector x = scaled_offsets(w, scaling);
  const Index m = w.size();
  CMatrix k(m, o.n_a + o.n_b + 1 + o.n_i + 1);
  for (Index r = 0; r < m; ++r) {
    Index c = 0;
    for (int n = 1; n <= o.n_a; ++n) k(r, c++) = -w.output(r) * std::pow(x(r), n);
    for (int n = 0; n <= o.n_b; ++n) k(r, c++) = w.input(r) * std::pow(x(r), n);
    for (int n = 0; n <= o.n_i; ++n) k(r, c++) = std::pow(x(r), n);
  }
  return k;
}

Complex eval_poly(const CVector& c, double x) {
  Complex acc(0.0, 0.0);
  for (Index n = 0; n < c.size(); ++n) acc += c(n) * std::pow(x, static_cast<double>(n));
  return acc;
}

}  // namespace

TEST_CASE("LPM recovers quadratic data exactly") {
  gen::Rng rng(11);
  const CVector b = rng.cvector(3);
  const CVector t = rng.cvector(3);
  for (int eval : {0, -3, 5}) {
    auto w = with_eval(gen::window(
                           rng, 5, kCenter, kRes, [&](double om) { return eval_poly(b, offset_of(om)); },
                           [&](double om) { return eval_poly(t, offset_of(om)); }),
                       eval);
    const auto fit = lpm_fit(w, 2, 2, default_scaling(kRes));
    CHECK(std::abs(fit.g_hat - eval_poly(b, eval)) < 1e-10);
    CHECK(std::abs(fit.t_hat - eval_poly(t, eval)) < 1e-10);
    CHECK(fit.sigma2 < 1e-24);
    CHECK(fit.diagnostics.truncated == 0);
  }
}

TEST_CASE("LPM matches a pseudoinverse oracle and divides by 2l+1-n_k") {
  gen::Rng rng(12);
  for (int trial = 0; trial < 25; ++trial) {
    const int ell = rng.integer(3, 8);
    const int nb = rng.integer(0, 2);
    const int ni = rng.integer(-1, 2);
    auto w = gen::random_window(rng, ell, kCenter, kRes);
    w = with_eval(w, rng.integer(-ell, ell));
    const double alpha = default_scaling(kRes);
    const auto fit = lpm_fit(w, nb, ni, alpha);
    const auto reg = regressors(w, nb, ni, alpha);
    const CVector theta = stacked_lstsq(reg.psi, w.output);
    const double x = static_cast<double>(w.eval_offset);
    CHECK(std::abs(fit.g_hat - eval_poly(theta.head(nb + 1), x)) < 1e-10);
    const double rss = (w.output - reg.psi * theta).squaredNorm();
    const int nk = nb + ni + 2;
    CHECK(fit.sigma2 == doctest::Approx(rss / (2 * ell + 1 - nk)).epsilon(1e-10));
    CHECK(fit.loe == doctest::Approx(rss).epsilon(1e-10));
  }
}

TEST_CASE("LPM noise variance divisor for l=5 and second order") {
  gen::Rng rng(13);
  const auto w = gen::random_window(rng, 5, kCenter, kRes);
  const auto fit = lpm_fit(w, 2, 2, default_scaling(kRes));
  CHECK(fit.sigma2 == doctest::Approx(fit.loe / 5.0).epsilon(1e-14));
}

TEST_CASE("too few bins for the model order") {
  gen::Rng rng(14);
  const auto w = gen::random_window(rng, 2, kCenter, kRes);
  CHECK_THROWS_AS(lpm_fit(w, 2, 2, default_scaling(kRes)), OrderTooLarge);
  CHECK_THROWS_AS(lrm_fit(w, {2, 2, 2}, default_scaling(kRes)), OrderTooLarge);
}

TEST_CASE("LRM without a denominator is LPM") {
  gen::Rng rng(15);
  for (int trial = 0; trial < 30; ++trial) {
    const int ell = rng.integer(3, 10);
    const int nb = rng.integer(0, 3);
    const int ni = rng.integer(-1, 3);
    const auto w = with_eval(gen::random_window(rng, ell, kCenter, kRes), rng.integer(-ell, ell));
    const double alpha = default_scaling(kRes);
    const auto p = lpm_fit(w, nb, ni, alpha);
    const auto r = lrm_fit(w, {0, nb, ni}, alpha);
    CHECK(std::abs(p.g_hat - r.g_hat) <= 1e-12 * (1.0 + std::abs(p.g_hat)));
    CHECK(std::abs(p.t_hat - r.t_hat) <= 1e-12 * (1.0 + std::abs(p.t_hat)));
    CHECK(std::abs(p.sigma2 - r.sigma2) <= 1e-12 * (1.0 + p.sigma2));
  }
}

TEST_CASE("LRM recovers rational data exactly") {
  gen::Rng rng(16);
  for (int trial = 0; trial < 10; ++trial) {
    // Poles at least 1.5 bins away from every window bin.
    CVector a(2);
    a << Complex(rng.uniform(-0.1, 0.1), rng.uniform(0.05, 0.2)), Complex(rng.uniform(-0.01, 0.01), 0.0);
    const CVector b = rng.cvector(3);
    const CVector t = rng.cvector(3);
    auto den = [&](double x) { return 1.0 + a(0) * x + a(1) * x * x; };
    auto w = gen::window(
        rng, 6, kCenter, kRes, [&](double om) { return eval_poly(b, offset_of(om)) / den(offset_of(om)); },
        [&](double om) { return eval_poly(t, offset_of(om)) / den(offset_of(om)); });
    w = with_eval(w, rng.integer(-6, 6));
    const double x = w.eval_offset;
    const auto fit = lrm_fit(w, {2, 2, 2}, default_scaling(kRes));
    CHECK(std::abs(fit.g_hat - eval_poly(b, x) / den(x)) < 1e-8);
    CHECK(std::abs(fit.t_hat - eval_poly(t, x) / den(x)) < 1e-8);
    CHECK(gen::rel_err(fit.a, a) < 1e-8);
    CHECK(fit.loe < 1e-16);
    CHECK_FALSE(fit.diagnostics.pole_in_window);
  }
}

TEST_CASE("LRM matches the stacked Levy system") {
  gen::Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const int ell = rng.integer(5, 10);
    const Orders o{rng.integer(1, 2), rng.integer(0, 2), rng.integer(-1, 2)};
    const auto w = with_eval(gen::random_window(rng, ell, kCenter, kRes), rng.integer(-ell, ell));
    const double alpha = default_scaling(kRes);
    const auto fit = lrm_fit(w, o, alpha);
    const CMatrix k = levy_matrix(w, o, alpha);
    const CVector theta = stacked_lstsq(k, w.output);
    CHECK(gen::rel_err(fit.a, theta.head(o.n_a)) < 1e-8);
    CHECK(gen::rel_err(fit.b, theta.segment(o.n_a, o.n_b + 1)) < 1e-8);
    CHECK(fit.criterion == doctest::Approx((w.output - k * theta).squaredNorm()).epsilon(1e-9));
    const double x = w.eval_offset;
    const Complex den = 1.0 + eval_poly(theta.head(o.n_a), x) * x;
    CHECK(std::abs(fit.g_hat - eval_poly(theta.segment(o.n_a, o.n_b + 1), x) / den) <
          1e-8 * (1.0 + std::abs(fit.g_hat)));
  }
}

TEST_CASE("ILRM started at the truth stays there") {
  gen::Rng rng(18);
  CVector a(1);
  a << Complex(0.05, 0.15);
  const CVector b = rng.cvector(2);
  const CVector t = rng.cvector(2);
  auto den = [&](double x) { return 1.0 + a(0) * x; };
  const auto w = gen::window(
      rng, 5, kCenter, kRes, [&](double om) { return eval_poly(b, offset_of(om)) / den(offset_of(om)); },
      [&](double om) { return eval_poly(t, offset_of(om)) / den(offset_of(om)); });
  LocalFit start;
  start.orders = {1, 1, 1};
  start.scaling = default_scaling(kRes);
  start.a = a;
  start.b = b;
  start.i = t;
  start.loe = local_output_error(w, start);
  REQUIRE(start.loe < 1e-26);
  const auto fit = ilrm_fit(w, start);
  CHECK(gen::rel_err(fit.a, a) < 1e-12);
  CHECK(gen::rel_err(fit.b, b) < 1e-12);
  CHECK(gen::rel_err(fit.i, t) < 1e-12);
  CHECK(fit.loe <= start.loe + 1e-26);
  CHECK(fit.diagnostics.converged);
}

TEST_CASE("ILRM never does worse than its LRM start") {
  gen::Rng rng(19);
  for (int trial = 0; trial < 40; ++trial) {
    const int ell = rng.integer(4, 10);
    const int n = rng.integer(1, 2);
    const Orders o{n, n, n};
    if (2 * ell + 1 <= o.parameter_count()) continue;
    auto w = gen::window(
        rng, ell, kCenter, kRes,
        [&](double om) { return 1.0 / Complex(1.0 - 0.01 * offset_of(om), 0.1 + 0.02 * offset_of(om)); },
        [](double) { return Complex(0.0, 0.0); }, rng.log_uniform(1e-3, 1.0));
    w = with_eval(w, rng.integer(-ell, ell));
    const auto start = lrm_fit(w, o, default_scaling(kRes));
    const auto fit = ilrm_fit(w, start);
    CHECK(fit.loe <= start.loe + 1e-12);
    CHECK(fit.sigma2 >= 0.0);
    CHECK(fit.loe == doctest::Approx(local_output_error(w, fit)).epsilon(1e-12));
  }
}

TEST_CASE("ILRM one-parameter toy matches a grid search") {
  // Y = b U / (1 + a x) on three bins, b profiled out. Real a keeps the oracle one-dimensional.
  gen::Rng rng(20);
  for (double a_true : {-0.6, 0.1, 0.45, 0.8}) {
    const Complex b_true(0.7, -0.3);
    auto w = gen::window(
        rng, 1, kCenter, kRes, [&](double om) { return b_true / (1.0 + a_true * offset_of(om)); },
        [](double) { return Complex(0.0, 0.0); });
    auto profiled = [&](double a) {
      CVector basis(3);
      for (Index r = 0; r < 3; ++r) basis(r) = w.input(r) / (1.0 + a * static_cast<double>(r - 1));
      const Complex b = basis.dot(w.output) / basis.squaredNorm();
      return (w.output - b * basis).squaredNorm();
    };
    double best_a = -0.99;
    double best = profiled(best_a);
    for (int i = 1; i <= 198000; ++i) {
      const double a = -0.99 + 1e-5 * i;
      const double v = profiled(a);
      if (v < best) {
        best = v;
        best_a = a;
      }
    }
    LocalFit start;
    start.orders = {1, 0, -1};
    start.scaling = default_scaling(kRes);
    start.a = CVector::Zero(1);
    start.b = CVector::Constant(1, Complex(1.0, 0.0));
    start.i = CVector();
    start.loe = local_output_error(w, start);
    const auto fit = ilrm_fit(w, start);
    CHECK(std::abs(fit.a(0) - best_a) < 1e-4);
    CHECK(fit.loe <= best + 1e-12);
  }
}

TEST_CASE("MDL criterion") {
  CHECK(mdl_criterion(1.0, 5, 6) == doctest::Approx(484.0).epsilon(1e-12));
  CHECK(mdl_criterion(2.0, 5, 6) == doctest::Approx(968.0).epsilon(1e-12));
  CHECK(mdl_criterion(0.0, 5, 6) == 0.0);
  CHECK_THROWS_AS(mdl_criterion(1.0, 5, 9), InvalidArgument);
  for (int ell : {3, 5, 10, 20}) {
    for (int nk = 1; 2 * ell + 1 - (nk + 1) - 2 > 0; ++nk) {
      CHECK(mdl_criterion(0.3, ell, nk) < mdl_criterion(0.3, ell, nk + 1));
    }
  }
}

TEST_CASE("MDL picks the true polynomial degree on noise-free data") {
  gen::Rng rng(21);
  const CVector b = rng.cvector(3);
  const CVector t = rng.cvector(3);
  const auto w = gen::window(
      rng, 5, kCenter, kRes, [&](double om) { return eval_poly(b, offset_of(om)); },
      [&](double om) { return eval_poly(t, offset_of(om)); });
  const auto choice = mdl_select(w, default_degree_grid(), ModelFamily::Polynomial, default_scaling(kRes));
  CHECK(choice.fit.orders == Orders{0, 2, 2});
  // Degree 4 has no degrees of freedom left at l = 5.
  CHECK(choice.table.size() == 4);
  CHECK(std::abs(choice.fit.g_hat - b(0)) < 1e-10);
}

TEST_CASE("MDL on rational data picks the rational model") {
  gen::Rng rng(22);
  const auto w = gen::window(
      rng, 10, kCenter, kRes,
      [&](double om) { return Complex(1.0, 0.0) / Complex(1.0 + 0.02 * offset_of(om), 0.1 * offset_of(om) + 0.2); },
      [](double) { return Complex(0.0, 0.0); });
  const auto choice = mdl_select(w, default_degree_grid(), ModelFamily::Rational, default_scaling(kRes));
  CHECK(choice.fit.orders.n_a == 1);
  CHECK(choice.fit.criterion == doctest::Approx(0.0));
}

TEST_CASE("MDL errors") {
  gen::Rng rng(23);
  const auto w = gen::random_window(rng, 5, kCenter, kRes);
  CHECK_THROWS_AS(mdl_select(w, std::span<const int>(), ModelFamily::Polynomial, 1.0), InvalidArgument);
  const std::array<int, 1> too_big{10};
  CHECK_THROWS_AS(mdl_select(w, too_big, ModelFamily::Polynomial, 1.0), InvalidArgument);
}

TEST_CASE("noise variance estimates are nonnegative") {
  gen::Rng rng(24);
  for (int trial = 0; trial < 60; ++trial) {
    const int ell = rng.integer(4, 12);
    const int n = rng.integer(0, 2);
    const auto w = with_eval(gen::random_window(rng, ell, kCenter, kRes), rng.integer(-ell, ell));
    const double alpha = default_scaling(kRes) * rng.log_uniform(0.1, 10.0);
    CHECK(lpm_fit(w, n, n, alpha).sigma2 >= 0.0);
    const auto lrm = lrm_fit(w, {n, n, n}, alpha);
    CHECK(lrm.sigma2 >= 0.0);
    CHECK(ilrm_fit(w, lrm).sigma2 >= 0.0);
  }
}

TEST_CASE("LPM is unbiased at 20 dB on a smooth system") {
  // G(w) = 1/(1 + j w) near w = 2.5; the cubic remainder over 11 bins is far below the noise.
  gen::Rng rng(25);
  auto g = [](double om) { return 1.0 / Complex(1.0, om); };
  const double noise_sd = 0.1 * std::abs(g(kCenter * kRes));
  const int reps = 200;
  std::vector<Complex> err;
  double s2 = 0.0;
  for (int i = 0; i < reps; ++i) {
    const auto w = gen::window(rng, 5, kCenter, kRes, g, [](double) { return Complex(0.0, 0.0); }, noise_sd);
    const auto fit = lpm_fit(w, 2, 2, default_scaling(kRes));
    err.push_back(fit.g_hat - g(kCenter * kRes));
    s2 += fit.sigma2;
  }
  Complex mean(0.0, 0.0);
  for (const auto& e : err) mean += e;
  mean /= static_cast<double>(reps);
  double var = 0.0;
  for (const auto& e : err) var += std::norm(e - mean);
  var /= reps - 1;
  CHECK(std::abs(mean) < 4.0 * std::sqrt(var / reps));
  CHECK(s2 / reps == doctest::Approx(noise_sd * noise_sd).epsilon(0.15));
}
