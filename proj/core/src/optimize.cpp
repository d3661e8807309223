#include "frflab/optimize.hpp"

#include <cmath>
#include <limits>

#include <boost/random/sobol.hpp>

#include "frflab/error.hpp"

namespace frflab::optimize {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double safe(double v) { return std::isfinite(v) ? v : kInf; }

RVector clamp(const RVector& x, const RVector& lo, const RVector& hi) { return x.cwiseMax(lo).cwiseMin(hi); }

}  // namespace

Result minimize_box(const Objective& f, const RVector& x0, const RVector& lower, const RVector& upper,
                    const MinimizeOptions& options) {
  const Index n = x0.size();
  if (lower.size() != n || upper.size() != n) throw InvalidArgument("bounds do not match the start point");
  if ((lower.array() > upper.array()).any()) throw InvalidArgument("lower bound exceeds upper bound");

  Result r;
  r.x = clamp(x0, lower, upper);
  RVector g(n);
  r.value = safe(f(r.x, &g));
  r.evaluations = 1;
  if (!std::isfinite(r.value) || !g.allFinite()) {
    r.value = kInf;
    return r;
  }

  RMatrix h = RMatrix::Identity(n, n);
  bool h_is_identity = true;
  for (r.iterations = 0; r.iterations < options.max_iter; ++r.iterations) {
    const RVector pg = clamp(r.x - g, lower, upper) - r.x;
    if (pg.size() == 0 || pg.lpNorm<Eigen::Infinity>() <= options.gtol) {
      r.converged = true;
      break;
    }
    RVector gf = g;
    for (Index i = 0; i < n; ++i) {
      const bool at_lo = r.x(i) <= lower(i) && g(i) > 0.0;
      const bool at_hi = r.x(i) >= upper(i) && g(i) < 0.0;
      if (at_lo || at_hi) gf(i) = 0.0;
    }
    RVector d = -(h * gf);
    for (Index i = 0; i < n; ++i) {
      if (gf(i) == 0.0 && g(i) != 0.0) d(i) = 0.0;
    }
    if (!(d.dot(gf) < 0.0)) {
      h.setIdentity();
      h_is_identity = true;
      d = -gf;
    }
    const double dmax = d.lpNorm<Eigen::Infinity>();
    if (dmax > options.max_step) d *= options.max_step / dmax;

    double t = 1.0;
    bool accepted = false;
    RVector xn, gn(n), s;
    double fn = kInf;
    for (int ls = 0; ls < 40; ++ls) {
      xn = clamp(r.x + t * d, lower, upper);
      s = xn - r.x;
      if (s.lpNorm<Eigen::Infinity>() == 0.0) break;
      fn = safe(f(xn, &gn));
      ++r.evaluations;
      if (std::isfinite(fn) && gn.allFinite() && fn <= r.value + 1e-4 * g.dot(s)) {
        accepted = true;
        break;
      }
      t *= std::isfinite(fn) ? 0.5 : 0.1;
    }
    if (!accepted) {
      if (!h_is_identity) {
        h.setIdentity();
        h_is_identity = true;
        continue;
      }
      // No descent along the projected steepest-descent direction.
      r.converged = true;
      break;
    }

    const RVector y = gn - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (h_is_identity) h *= sy / y.squaredNorm();
      const double rho = 1.0 / sy;
      const RVector hy = h * y;
      h += rho * ((1.0 + rho * y.dot(hy)) * (s * s.transpose()) - (hy * s.transpose() + s * hy.transpose()));
      h_is_identity = false;
    }
    const double decrease = r.value - fn;
    r.x = xn;
    g = gn;
    r.value = fn;
    if (decrease <= options.ftol * std::max({1.0, std::abs(r.value), std::abs(r.value + decrease)})) {
      r.converged = true;
      ++r.iterations;
      break;
    }
  }
  return r;
}

RVector central_difference(const std::function<double(const RVector&)>& f, const RVector& x, const RVector& lower,
                           const RVector& upper, double h) {
  RVector g(x.size());
  RVector xp = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double hi = std::min(x(i) + h, upper(i));
    const double lo = std::max(x(i) - h, lower(i));
    if (!(hi > lo)) {
      g(i) = 0.0;
      continue;
    }
    xp(i) = hi;
    const double fp = f(xp);
    xp(i) = lo;
    const double fm = f(xp);
    xp(i) = x(i);
    g(i) = (fp - fm) / (hi - lo);
  }
  return g;
}

std::vector<RVector> sobol_points(Index dim, std::size_t count, std::uint64_t offset) {
  std::vector<RVector> out;
  if (dim <= 0 || count == 0) return out;
  boost::random::sobol engine(static_cast<std::size_t>(dim));
  engine.seed(static_cast<boost::uintmax_t>(1 + offset));
  const double span = static_cast<double>(engine.max() - engine.min()) + 1.0;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    RVector p(dim);
    for (Index i = 0; i < dim; ++i) p(i) = static_cast<double>(engine() - engine.min()) / span;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace frflab::optimize
