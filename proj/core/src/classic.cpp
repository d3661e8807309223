#include "frflab/classic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "frflab/error.hpp"

namespace frflab::classic {
namespace {

struct LsSolution {
  CVector x;
  Index rank = 0;
  Index truncated = 0;
};

// Minimum-norm least squares; singular values below eps*max(m,n)*s_max are dropped.
LsSolution truncated_lstsq(const CMatrix& a, const CVector& y) {
  Eigen::JacobiSVD<CMatrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const RVector& s = svd.singularValues();
  LsSolution out;
  out.x = CVector::Zero(a.cols());
  if (s.size() == 0 || s(0) == 0.0) {
    out.truncated = s.size();
    return out;
  }
  const double threshold =
      std::numeric_limits<double>::epsilon() * static_cast<double>(std::max(a.rows(), a.cols())) * s(0);
  CVector projected = svd.matrixU().adjoint() * y;
  for (Index j = 0; j < s.size(); ++j) {
    if (s(j) > threshold) {
      projected(j) /= s(j);
      ++out.rank;
    } else {
      projected(j) = 0.0;
      ++out.truncated;
    }
  }
  out.x = svd.matrixV() * projected;
  return out;
}

void check_overdetermined(const LocalWindow& window, int n_k) {
  if (window.size() <= n_k) {
    throw OrderTooLarge("local model with " + std::to_string(n_k) + " parameters needs more than " +
                        std::to_string(window.size()) + " bins");
  }
}

double eval_point(const LocalWindow& window, double scaling) {
  return scaled_offsets(window, scaling)(window.eval_offset + window.half_width);
}

// A(x) with the implicit leading 1.
Complex denominator(const CVector& a, double x) {
  Complex acc(0.0, 0.0);
  for (Index n = a.size() - 1; n >= 0; --n) acc = (acc + a(n)) * x;
  return acc + 1.0;
}

double denominator_scale(const CVector& a, double x) {
  double acc = 1.0;
  double p = 1.0;
  for (Index n = 0; n < a.size(); ++n) {
    p *= std::abs(x);
    acc += std::abs(a(n)) * p;
  }
  return acc;
}

void finish_rational(const LocalWindow& window, LocalFit& fit) {
  const double x = eval_point(window, fit.scaling);
  const Complex a = denominator(fit.a, x);
  fit.diagnostics.pole_in_window = std::abs(a) <= 1e-12 * denominator_scale(fit.a, x);
  fit.g_hat = polyval(fit.b, x) / a;
  fit.t_hat = fit.i.size() > 0 ? polyval(fit.i, x) / a : Complex(0.0, 0.0);
  fit.loe = local_output_error(window, fit);
  fit.sigma2 = fit.loe / static_cast<double>(window.size() - fit.orders.parameter_count());
}

struct ParameterLayout {
  Index na, nb, ni;
  Index total() const { return na + nb + ni; }
};

ParameterLayout layout(const Orders& o) {
  return {o.n_a, o.n_b + 1, o.n_i + 1};
}

CVector pack(const LocalFit& fit) {
  CVector p(fit.a.size() + fit.b.size() + fit.i.size());
  p << fit.a, fit.b, fit.i;
  return p;
}

void unpack(const CVector& p, const ParameterLayout& lay, LocalFit& fit) {
  fit.a = p.segment(0, lay.na);
  fit.b = p.segment(lay.na, lay.nb);
  fit.i = p.segment(lay.na + lay.nb, lay.ni);
}

}  // namespace

double local_output_error(const LocalWindow& window, const LocalFit& fit) {
  double acc = 0.0;
  const RVector xs = scaled_offsets(window, fit.scaling);
  for (Index r = 0; r < window.size(); ++r) {
    const double x = xs(r);
    const Complex a = denominator(fit.a, x);
    const Complex num = polyval(fit.b, x) * window.input(r) + (fit.i.size() > 0 ? polyval(fit.i, x) : Complex(0.0));
    acc += std::norm(window.output(r) - num / a);
  }
  return acc;
}

LocalFit lpm_fit(const LocalWindow& window, int n_b, int n_i, double scaling) {
  const Orders orders{0, n_b, n_i};
  check_overdetermined(window, orders.parameter_count());
  const auto reg = regressors(window, n_b, n_i, scaling);
  const auto sol = truncated_lstsq(reg.psi, window.output);

  LocalFit fit;
  fit.orders = orders;
  fit.scaling = scaling;
  fit.a.resize(0);
  fit.b = sol.x.head(n_b + 1);
  fit.i = sol.x.tail(n_i + 1);
  fit.diagnostics.rank = sol.rank;
  fit.diagnostics.truncated = sol.truncated;
  fit.diagnostics.converged = true;
  const double x = eval_point(window, scaling);
  fit.g_hat = polyval(fit.b, x);
  fit.t_hat = fit.i.size() > 0 ? polyval(fit.i, x) : Complex(0.0);
  fit.loe = (window.output - reg.psi * sol.x).squaredNorm();
  fit.criterion = fit.loe;
  fit.sigma2 = fit.loe / static_cast<double>(window.size() - orders.parameter_count());
  return fit;
}

LocalFit lrm_fit(const LocalWindow& window, Orders orders, double scaling) {
  if (orders.n_a < 0 || orders.n_b < 0 || orders.n_i < -1) throw InvalidArgument("negative model order");
  if (orders.n_a == 0) {
    auto fit = lpm_fit(window, orders.n_b, orders.n_i, scaling);
    fit.criterion = fit.loe;
    return fit;
  }
  check_overdetermined(window, orders.parameter_count());
  const auto reg = regressors(window, orders.n_b, orders.n_i, scaling);
  const RMatrix phi_a = power_basis(reg.phi1, orders.n_a);

  const Index rows = window.size();
  CMatrix k(rows, orders.n_a + reg.psi.cols());
  k.leftCols(orders.n_a) = -(window.output.asDiagonal() * phi_a.rightCols(orders.n_a).cast<Complex>());
  k.rightCols(reg.psi.cols()) = reg.psi;
  const auto sol = truncated_lstsq(k, window.output);

  LocalFit fit;
  fit.orders = orders;
  fit.scaling = scaling;
  unpack(sol.x, layout(orders), fit);
  fit.diagnostics.rank = sol.rank;
  fit.diagnostics.truncated = sol.truncated;
  fit.diagnostics.converged = true;
  finish_rational(window, fit);
  fit.criterion = (window.output - k * sol.x).squaredNorm();
  return fit;
}

LocalFit ilrm_fit(const LocalWindow& window, const LocalFit& start, IlrmOptions options) {
  const auto lay = layout(start.orders);
  if (start.a.size() != lay.na || start.b.size() != lay.nb || start.i.size() != lay.ni) {
    throw InvalidArgument("ILRM start does not match its orders");
  }
  check_overdetermined(window, start.orders.parameter_count());

  const Index m = window.size();
  const Index np = lay.total();
  const RVector xs = scaled_offsets(window, start.scaling);

  LocalFit work = start;
  auto loe_of = [&](const CVector& p) {
    unpack(p, lay, work);
    return local_output_error(window, work);
  };

  CVector p = pack(start);
  double f = start.loe;
  double mu = -1.0;
  int iterations = 0;
  bool converged = false;
  bool improved = false;

  for (; iterations < options.max_iter; ++iterations) {
    unpack(p, lay, work);
    // Complex Jacobian of e = Y - (B U + I)/A with respect to (a, b, i).
    CMatrix jc(m, np);
    CVector e(m);
    for (Index r = 0; r < m; ++r) {
      const double x = xs(r);
      const Complex a = denominator(work.a, x);
      const Complex yhat =
          (polyval(work.b, x) * window.input(r) + (work.i.size() > 0 ? polyval(work.i, x) : Complex(0.0))) / a;
      e(r) = window.output(r) - yhat;
      double xn = 1.0;
      for (Index n = 0; n < lay.nb; ++n, xn *= x) jc(r, lay.na + n) = -window.input(r) * xn / a;
      xn = 1.0;
      for (Index n = 0; n < lay.ni; ++n, xn *= x) jc(r, lay.na + lay.nb + n) = -xn / a;
      xn = x;
      for (Index n = 0; n < lay.na; ++n, xn *= x) jc(r, n) = yhat * xn / a;
    }
    RMatrix j(2 * m, 2 * np);
    j.topLeftCorner(m, np) = jc.real();
    j.topRightCorner(m, np) = -jc.imag();
    j.bottomLeftCorner(m, np) = jc.imag();
    j.bottomRightCorner(m, np) = jc.real();
    RVector res(2 * m);
    res << e.real(), e.imag();

    const RVector g = j.transpose() * res;
    if (!g.allFinite()) break;
    if (2.0 * g.lpNorm<Eigen::Infinity>() <= options.tol * (1.0 + f)) {
      converged = true;
      break;
    }
    const RMatrix jtj = j.transpose() * j;
    const double scale = std::max(jtj.diagonal().maxCoeff(), std::numeric_limits<double>::min());
    if (mu < 0.0) mu = options.initial_damping;

    bool accepted = false;
    while (mu <= options.damping_cap) {
      RMatrix lhs = jtj;
      lhs.diagonal().array() += mu * scale;
      const RVector step = lhs.ldlt().solve(-g);
      CVector cand = p;
      for (Index n = 0; n < np; ++n) cand(n) += Complex(step(n), step(np + n));
      const double fc = loe_of(cand);
      if (std::isfinite(fc) && fc < f) {
        const double decrease = f - fc;
        p = cand;
        f = fc;
        mu = std::max(mu / 10.0, 1e-15);
        accepted = true;
        improved = true;
        if (decrease <= 1e-15 * f) converged = true;
        break;
      }
      mu *= 10.0;
    }
    if (!accepted || converged) {
      ++iterations;
      break;
    }
  }

  if (!improved) {
    LocalFit out = start;
    out.diagnostics.iterations = iterations;
    out.diagnostics.improved = false;
    out.diagnostics.converged = converged;
    return out;
  }
  LocalFit out = start;
  unpack(p, lay, out);
  out.diagnostics.iterations = iterations;
  out.diagnostics.improved = true;
  out.diagnostics.converged = converged;
  finish_rational(window, out);
  // Rounding in the recomputation must not undo the descent guarantee.
  if (out.loe > start.loe) {
    LocalFit fallback = start;
    fallback.diagnostics.iterations = iterations;
    return fallback;
  }
  out.criterion = out.loe;
  return out;
}

double mdl_criterion(double sigma2, int half_width, int n_k) {
  const int dof = 2 * half_width + 1 - n_k - 2;
  if (dof <= 0) throw InvalidArgument("MDL needs 2l+1-n_k-2 > 0");
  return sigma2 * std::exp(std::log(4.0 * half_width + 2.0) * n_k / static_cast<double>(dof));
}

std::span<const int> default_degree_grid() {
  static constexpr std::array<int, 5> grid{0, 1, 2, 3, 4};
  return grid;
}

MdlChoice mdl_select(const LocalWindow& window, std::span<const int> degree_grid, ModelFamily family,
                     double scaling) {
  if (degree_grid.empty()) throw InvalidArgument("empty MDL degree grid");
  std::vector<int> degrees(degree_grid.begin(), degree_grid.end());
  auto orders_of = [&](int n) { return family == ModelFamily::Polynomial ? Orders{0, n, n} : Orders{n, n, n}; };
  std::stable_sort(degrees.begin(), degrees.end(),
                   [&](int l, int r) { return orders_of(l).parameter_count() < orders_of(r).parameter_count(); });

  // Residual power this small is indistinguishable from an exact fit.
  const double eps = std::numeric_limits<double>::epsilon();
  const double zero_floor = std::pow(1e3 * eps, 2) * window.output.squaredNorm();

  MdlChoice choice;
  bool have = false;
  double best = 0.0;
  for (int n : degrees) {
    if (n < 0) throw InvalidArgument("negative degree in MDL grid");
    const Orders o = orders_of(n);
    if (2 * window.half_width + 1 - o.parameter_count() - 2 <= 0) continue;
    LocalFit fit = family == ModelFamily::Polynomial ? lpm_fit(window, o.n_b, o.n_i, scaling)
                                                     : lrm_fit(window, o, scaling);
    const double s2 = fit.loe <= zero_floor ? 0.0 : fit.sigma2;
    const double c = mdl_criterion(s2, window.half_width, o.parameter_count());
    choice.table.emplace_back(n, c);
    if (!have || c < best) {
      have = true;
      best = c;
      choice.fit = std::move(fit);
    }
  }
  if (!have) throw InvalidArgument("no degree in the MDL grid leaves positive degrees of freedom");
  choice.fit.criterion = best;
  return choice;
}

}  // namespace frflab::classic
