#include "frflab/localwin.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "frflab/error.hpp"

namespace frflab {

LocalWindow extract_window(const spectra::SpectraRecord& record, std::size_t k, int half_width) {
  if (half_width < 0) throw InvalidArgument("window half-width must be non-negative");
  if (k >= record.bin_count() || !record.excited[k]) {
    throw InvalidArgument("bin " + std::to_string(k) + " is outside the excited band");
  }
  std::size_t lo = k;
  while (lo > 0 && record.excited[lo - 1]) --lo;
  std::size_t hi = k;
  while (hi + 1 < record.bin_count() && record.excited[hi + 1]) ++hi;

  const auto width = static_cast<std::size_t>(2 * half_width + 1);
  if (hi - lo + 1 < width) {
    throw InvalidArgument("excited band has fewer than 2l+1 bins around bin " + std::to_string(k));
  }
  const auto l = static_cast<std::size_t>(half_width);
  std::size_t center = k;
  if (center < lo + l) center = lo + l;
  if (center + l > hi) center = hi - l;

  LocalWindow w;
  w.bin = k;
  w.center = center;
  w.half_width = half_width;
  w.eval_offset = static_cast<int>(k) - static_cast<int>(center);
  w.resolution = record.resolution();
  const auto n = static_cast<Index>(width);
  w.offset_omega.resize(n);
  w.absolute_omega.resize(n);
  w.input.resize(n);
  w.output.resize(n);
  for (Index i = 0; i < n; ++i) {
    const std::size_t bin = center - l + static_cast<std::size_t>(i);
    w.absolute_omega(i) = record.omega[bin];
    w.offset_omega(i) = static_cast<double>(static_cast<int>(i) - half_width) * w.resolution;
    w.input(i) = record.input[bin];
    w.output(i) = record.output[bin];
  }
  return w;
}

RVector scaled_offsets(const LocalWindow& window, double scaling) {
  double unit = scaling * window.resolution;
  if (std::abs(unit - 1.0) <= 8.0 * std::numeric_limits<double>::epsilon()) unit = 1.0;
  RVector x(window.size());
  for (Index i = 0; i < x.size(); ++i) x(i) = unit * static_cast<double>(i - window.half_width);
  return x;
}

RMatrix power_basis(const RVector& x, int order) {
  if (order < -1) throw InvalidArgument("polynomial order must be >= -1");
  RMatrix phi(x.size(), order + 1);
  if (order >= 0) phi.col(0).setOnes();
  for (int n = 1; n <= order; ++n) phi.col(n) = phi.col(n - 1).cwiseProduct(x);
  return phi;
}

RegressorSet regressors(const LocalWindow& window, int n_b, int n_i, double scaling) {
  if (n_b < 0 || n_i < -1) throw InvalidArgument("polynomial orders must be non-negative");
  if (!(scaling > 0.0)) throw InvalidArgument("frequency scaling must be positive");
  RegressorSet set;
  set.scaling = scaling;
  set.n_b = n_b;
  set.n_i = n_i;
  set.phi1 = scaled_offsets(window, scaling);
  set.phi_b = power_basis(set.phi1, n_b);
  set.phi_i = power_basis(set.phi1, n_i);
  const Index rows = window.size();
  set.psi.resize(rows, set.phi_b.cols() + set.phi_i.cols());
  set.psi.leftCols(set.phi_b.cols()) = window.input.asDiagonal() * set.phi_b.cast<Complex>();
  set.psi.rightCols(set.phi_i.cols()) = set.phi_i.cast<Complex>();
  return set;
}

Complex polyval(const CVector& coefficients, double x) {
  Complex acc(0.0, 0.0);
  for (Index n = coefficients.size() - 1; n >= 0; --n) acc = acc * x + coefficients(n);
  return acc;
}

}  // namespace frflab
