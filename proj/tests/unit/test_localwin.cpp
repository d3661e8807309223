#include <doctest.h>

#include <limits>

#include "frflab/error.hpp"
#include "frflab/localwin.hpp"
#include "frflab/spectra.hpp"
#include "generators.hpp"

using namespace frflab;

namespace {

spectra::SpectraRecord record(std::size_t n = 2500, std::size_t p = 3100) {
  spectra::ExperimentConfig c;
  c.sample_count = n;
  c.multisine_period = p;
  return spectra::simulate(spectra::TestSystem::lightly_damped(c.sampling_interval), c);
}

std::size_t last_excited(const spectra::SpectraRecord& rec) {
  std::size_t last = 0;
  for (std::size_t k = 0; k < rec.bin_count(); ++k) {
    if (rec.excited[k]) last = k;
  }
  return last;
}

}  // namespace

TEST_CASE("interior window is symmetric") {
  const auto rec = record();
  const auto w = extract_window(rec, 100, 5);
  CHECK(w.size() == 11);
  CHECK(w.center == 100);
  CHECK(w.eval_offset == 0);
  for (Index i = 0; i < w.size(); ++i) {
    CHECK(w.offset_omega(i) == doctest::Approx((static_cast<double>(i) - 5.0) * rec.resolution()));
    CHECK(w.output(i) == rec.output[95 + static_cast<std::size_t>(i)]);
    CHECK(w.input(i) == rec.input[95 + static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("window at the lower band edge is shifted inward") {
  const auto rec = record();
  REQUIRE_FALSE(rec.excited[0]);
  REQUIRE(rec.excited[1]);
  const auto w = extract_window(rec, 1, 5);
  CHECK(w.center == 6);
  CHECK(w.eval_offset == -5);
  CHECK(w.absolute_omega(0) == rec.omega[1]);
  CHECK(w.absolute_omega(10) == rec.omega[11]);
}

TEST_CASE("window at the upper band edge is shifted inward") {
  const auto rec = record();
  const auto k = last_excited(rec);
  const auto w = extract_window(rec, k, 5);
  CHECK(w.eval_offset == 5);
  CHECK(w.absolute_omega(10) == rec.omega[k]);
}

TEST_CASE("window errors") {
  const auto rec = record();
  CHECK_THROWS_AS(extract_window(rec, 0, 5), InvalidArgument);
  CHECK_THROWS_AS(extract_window(rec, last_excited(rec) + 1, 5), InvalidArgument);
  CHECK_THROWS_AS(extract_window(rec, rec.bin_count() + 3, 5), InvalidArgument);
  CHECK_THROWS_AS(extract_window(rec, 10, 400), InvalidArgument);
  CHECK_THROWS_AS(extract_window(rec, 10, -1), InvalidArgument);
}

TEST_CASE("every window locates its bin and stays in the band") {
  const auto rec = record(1000, 1200);
  for (int ell : {0, 1, 3, 5, 20}) {
    for (std::size_t k = 0; k < rec.bin_count(); ++k) {
      if (!rec.excited[k]) continue;
      const auto w = extract_window(rec, k, ell);
      REQUIRE(w.size() == 2 * ell + 1);
      CHECK(w.eval_offset >= -ell);
      CHECK(w.eval_offset <= ell);
      CHECK(w.center + static_cast<std::size_t>(ell) < rec.bin_count());
      CHECK(w.center >= static_cast<std::size_t>(ell));
      const double at = rec.omega[w.center] + w.offset_omega(w.eval_offset + ell);
      CHECK(at == doctest::Approx(rec.omega[k]).epsilon(1e-12));
      CHECK(w.eval_omega() == doctest::Approx(w.offset_omega(w.eval_offset + ell)).epsilon(1e-12));
      for (Index i = 0; i < w.size(); ++i) CHECK(rec.excited[w.center - static_cast<std::size_t>(ell) + static_cast<std::size_t>(i)]);
    }
  }
}

TEST_CASE("regressor basis columns") {
  gen::Rng rng(3);
  const auto w = gen::random_window(rng, 2);
  const auto set = regressors(w, 3, 1, default_scaling(w.resolution));
  for (Index i = 0; i < w.size(); ++i) {
    CHECK(set.phi_b(i, 0) == 1.0);
    CHECK(set.phi_i(i, 0) == 1.0);
  }
  for (int n = 1; n <= 3; ++n) {
    for (Index i = 0; i < w.size(); ++i) {
      CHECK(set.phi_b(i, n) == doctest::Approx(std::pow(set.phi1(i), n)).epsilon(1e-14));
    }
  }
}

TEST_CASE("default scaling turns offsets into integers") {
  gen::Rng rng(4);
  for (double resolution : {0.025132741228718346, 2.0 * kPi / (10000 * 0.1), 0.3, 1.0 / 3.0}) {
    const auto w = gen::random_window(rng, 2, 50, resolution);
    const auto set = regressors(w, 2, 2, default_scaling(resolution));
    for (Index i = 0; i < 5; ++i) CHECK(set.phi1(i) == static_cast<double>(i - 2));
  }
  gen::Rng rng2(5);
  const auto w = gen::random_window(rng2, 5);
  const auto set = regressors(w, 2, 2, default_scaling(w.resolution));
  CHECK(set.phi1(10) == 5.0);
  CHECK(set.phi1(10) > 1.0);
}

TEST_CASE("Psi layout") {
  gen::Rng rng(6);
  const auto w = gen::random_window(rng, 5);
  const auto set = regressors(w, 2, 2, default_scaling(w.resolution));
  REQUIRE(set.psi.rows() == 11);
  REQUIRE(set.psi.cols() == 6);
  for (Index i = 0; i < 11; ++i) {
    for (Index n = 0; n < 3; ++n) {
      CHECK(std::abs(set.psi(i, n) - w.input(i) * set.phi_b(i, n)) < 1e-14);
      CHECK(set.psi(i, 3 + n) == Complex(set.phi_i(i, n), 0.0));
    }
  }
  const auto no_transient = regressors(w, 2, -1, default_scaling(w.resolution));
  CHECK(no_transient.psi.cols() == 3);
  CHECK_THROWS_AS(regressors(w, -1, 2, 1.0), InvalidArgument);
  CHECK_THROWS_AS(regressors(w, 2, 2, 0.0), InvalidArgument);
}

TEST_CASE("power basis and polynomial evaluation") {
  RVector x(3);
  x << -1.0, 0.5, 2.0;
  CHECK(power_basis(x, -1).cols() == 0);
  const auto p = power_basis(x, 2);
  CHECK(p(2, 2) == 4.0);
  CVector c(3);
  c << Complex(1, 1), Complex(0, 2), Complex(-1, 0);
  // 1+j + 2j x - x^2 at x = 2
  CHECK(std::abs(polyval(c, 2.0) - Complex(-3.0, 5.0)) < 1e-15);
  CHECK(polyval(CVector(), 3.0) == Complex(0.0, 0.0));
}
