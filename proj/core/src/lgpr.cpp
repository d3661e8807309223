#include "frflab/lgpr.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "frflab/error.hpp"
#include "frflab/optimize.hpp"
#include "text.hpp"

namespace frflab::lgpr {
namespace {

using cgauss::AugmentedKernel;
using kernels::PriorModel;
using kernels::PriorPair;
using kernels::Space;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

AugmentedKernel block_diagonal(const AugmentedKernel& a, const AugmentedKernel& b) {
  const Index n = a.dim() + b.dim();
  AugmentedKernel k = AugmentedKernel::zeros(n);
  k.covariance.topLeftCorner(a.dim(), a.dim()) = a.covariance;
  k.relation.topLeftCorner(a.dim(), a.dim()) = a.relation;
  k.covariance.bottomRightCorner(b.dim(), b.dim()) = b.covariance;
  k.relation.bottomRightCorner(b.dim(), b.dim()) = b.relation;
  return k;
}

AugmentedKernel observation(const PriorModel& model, const PriorPair& prior, double sigma2) {
  if (model.space() == Space::Coefficient) {
    return cgauss::coefficient_observation(model.regressors().psi, block_diagonal(prior.g, prior.t), sigma2);
  }
  return cgauss::frf_observation(model.window().input, prior.g, prior.t, sigma2);
}

double eval_x(const PriorModel& model) {
  const auto& w = model.window();
  return model.regressors().phi1(w.eval_offset + w.half_width);
}

}  // namespace

double window_nll(const PriorModel& model, const RVector& eta, double sigma2) {
  if (!(sigma2 > 0.0)) throw InvalidArgument("noise variance must be positive");
  return cgauss::nll(model.window().output, observation(model, model.evaluate(eta), sigma2));
}

cgauss::NllValue window_nll_with_gradient(const PriorModel& model, const RVector& eta, double sigma2,
                                          const std::vector<Index>& which) {
  if (!(sigma2 > 0.0)) throw InvalidArgument("noise variance must be positive");
  const auto prior = model.evaluate(eta);
  const auto s = cgauss::nll_sensitivity(model.window().output, observation(model, prior, sigma2));

  kernels::PriorWeights w;
  if (model.space() == Space::Coefficient) {
    const CMatrix& psi = model.regressors().psi;
    const CMatrix a = psi.transpose() * s.cov * psi.conjugate();
    const CMatrix b = psi.transpose() * s.rel * psi;
    const Index nb = prior.g.dim();
    const Index ni = prior.t.dim();
    w.g_cov = a.topLeftCorner(nb, nb);
    w.g_rel = b.topLeftCorner(nb, nb);
    w.t_cov = a.bottomRightCorner(ni, ni);
    w.t_rel = b.bottomRightCorner(ni, ni);
  } else {
    const CVector& u = model.window().input;
    w.g_cov = u.asDiagonal() * s.cov * u.conjugate().asDiagonal();
    w.g_rel = u.asDiagonal() * s.rel * u.asDiagonal();
    w.t_cov = s.cov;
    w.t_rel = s.rel;
  }
  cgauss::NllValue out;
  out.value = s.value;
  out.gradient.resize(static_cast<Index>(which.size()) + 1);
  out.gradient.head(static_cast<Index>(which.size())) = model.contract(eta, prior, which, w);
  out.gradient(static_cast<Index>(which.size())) = s.cov.diagonal().real().sum();
  return out;
}

WindowMap map_window(const PriorModel& model, const RVector& eta, double sigma2) {
  const auto prior = model.evaluate(eta);
  const auto& w = model.window();
  WindowMap out;
  if (model.space() == Space::Coefficient) {
    const auto& reg = model.regressors();
    const auto est = cgauss::map_theta(reg.psi, block_diagonal(prior.g, prior.t), w.output, sigma2);
    const Index nb = reg.phi_b.cols();
    out.g = est.theta.head(nb);
    out.t = est.theta.tail(est.theta.size() - nb);
    const double x = eval_x(model);
    out.g_hat = polyval(out.g, x);
    out.t_hat = out.t.size() > 0 ? polyval(out.t, x) : Complex(0.0, 0.0);
    out.conjugacy_residual = est.conjugacy_residual;
    return out;
  }
  const auto post = cgauss::map_gt(w.input, w.output, prior.g, prior.t, sigma2);
  out.g = post.g;
  out.t = post.t;
  const Index at = w.half_width + w.eval_offset;
  out.g_hat = post.g(at);
  out.t_hat = post.t(at);
  out.conjugacy_residual = post.conjugacy_residual;
  return out;
}

TunedWindow eb_tune(const PriorModel& model, const EbOptions& options, const WarmStart* warm) {
  const auto& params = model.parameters();
  std::vector<Index> free;
  RVector eta(model.size());
  for (Index i = 0; i < model.size(); ++i) {
    const auto& h = params[static_cast<std::size_t>(i)];
    eta(i) = h.lower;
    if (!h.frozen()) free.push_back(i);
  }
  const Index nf = static_cast<Index>(free.size());
  const Index dim = nf + 1;
  RVector lo(dim), hi(dim);
  for (Index i = 0; i < nf; ++i) {
    const auto& h = params[static_cast<std::size_t>(free[static_cast<std::size_t>(i)])];
    lo(i) = std::log(h.lower);
    hi(i) = std::log(h.upper);
  }
  lo(nf) = std::log(model.noise_bounds().first);
  hi(nf) = std::log(model.noise_bounds().second);

  auto unpack = [&](const RVector& z, RVector& e, double& s2) {
    e = eta;
    for (Index i = 0; i < nf; ++i) e(free[static_cast<std::size_t>(i)]) = std::exp(z(i));
    s2 = std::exp(z(nf));
  };
  auto value_at = [&](const RVector& z) {
    RVector e;
    double s2 = 0.0;
    unpack(z, e, s2);
    try {
      return window_nll(model, e, s2);
    } catch (const NumericalError&) {
      return kNaN;
    } catch (const InvalidArgument&) {
      return kNaN;
    }
  };
  optimize::Objective objective = [&](const RVector& z, RVector* grad) -> double {
    if (grad == nullptr) return value_at(z);
    if (options.gradient == GradientMode::CentralDifference) {
      const double v = value_at(z);
      if (std::isfinite(v)) *grad = optimize::central_difference(value_at, z, lo, hi, 1e-6);
      return v;
    }
    RVector e;
    double s2 = 0.0;
    unpack(z, e, s2);
    try {
      const auto v = window_nll_with_gradient(model, e, s2, free);
      grad->resize(dim);
      for (Index i = 0; i < nf; ++i) (*grad)(i) = v.gradient(i) * e(free[static_cast<std::size_t>(i)]);
      (*grad)(nf) = v.gradient(nf) * s2;
      return v.value;
    } catch (const NumericalError&) {
      return kNaN;
    } catch (const InvalidArgument&) {
      return kNaN;
    }
  };

  const int count = options.starts > 0 ? options.starts : static_cast<int>(5 * nf + 1);
  std::vector<RVector> starts;
  starts.push_back(0.5 * (lo + hi));
  if (warm != nullptr && options.warm_start && warm->eta.size() == model.size() && warm->sigma2 > 0.0 &&
      static_cast<int>(starts.size()) < count) {
    RVector z(dim);
    bool finite = true;
    for (Index i = 0; i < nf; ++i) {
      const double v = warm->eta(free[static_cast<std::size_t>(i)]);
      finite = finite && v > 0.0;
      z(i) = v > 0.0 ? std::log(v) : lo(i);
    }
    z(nf) = std::log(warm->sigma2);
    if (finite) starts.push_back(z.cwiseMax(lo).cwiseMin(hi));
  }
  const auto remaining = static_cast<std::size_t>(std::max(0, count - static_cast<int>(starts.size())));
  for (const auto& p : optimize::sobol_points(dim, remaining, options.seed % 4096)) {
    starts.push_back(lo + p.cwiseProduct(hi - lo));
  }

  optimize::MinimizeOptions local;
  local.max_iter = options.max_iter;
  local.gtol = options.gtol;
  local.ftol = options.ftol;

  TunedWindow out;
  for (const auto& h : params) out.names.push_back(h.name);
  out.starts = static_cast<int>(starts.size());
  optimize::Result best;
  best.value = std::numeric_limits<double>::infinity();
  bool best_converged = false;
  for (const auto& z0 : starts) {
    const auto r = optimize::minimize_box(objective, z0, lo, hi, local);
    out.evaluations += r.evaluations;
    if (options.keep_trace) out.trace.push_back({z0, r.x, r.value, r.converged, r.iterations});
    if (!std::isfinite(r.value)) continue;
    const bool better = (r.converged && !best_converged) || (r.converged == best_converged && r.value < best.value);
    if (better) {
      best = r;
      best_converged = r.converged;
    }
  }
  if (!std::isfinite(best.value)) {
    std::ostringstream diag;
    diag << "family=" << kernels::to_string(model.family()) << " bin=" << model.window().bin
         << " starts=" << starts.size() << " evaluations=" << out.evaluations;
    throw TuningFailed("empirical Bayes: no start produced a finite objective", diag.str());
  }
  unpack(best.x, out.eta, out.sigma2);
  out.nll = best.value;
  out.converged = best_converged;
  const auto map = map_window(model, out.eta, out.sigma2);
  out.g_hat = map.g_hat;
  out.t_hat = map.t_hat;
  return out;
}

std::vector<std::size_t> excited_bins(const spectra::SpectraRecord& record) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < record.bin_count(); ++k) {
    if (record.excited[k]) out.push_back(k);
  }
  return out;
}

std::string describe(const TunedWindow& tuned) {
  std::string s;
  for (std::size_t i = 0; i < tuned.names.size(); ++i) {
    s += tuned.names[i] + '=' + text::format_double(tuned.eta(static_cast<Index>(i))) + ';';
  }
  s += "sigma2=" + text::format_double(tuned.sigma2) + ";nll=" + text::format_double(tuned.nll);
  if (!tuned.converged) s += ";converged=0";
  return s;
}

namespace {

template <typename Factory>
FrfEstimate run_windows(const spectra::SpectraRecord& record, int half_width, std::span<const std::size_t> bins,
                        std::string method, const EbOptions& eb, Factory&& factory) {
  std::vector<std::size_t> all;
  if (bins.empty()) {
    all = excited_bins(record);
    bins = all;
  }
  FrfEstimate est;
  est.method = std::move(method);
  est.bins.reserve(bins.size());
  WarmStart warm;
  bool have_warm = false;
  for (const auto k : bins) {
    BinEstimate b;
    b.k = k;
    b.omega = k < record.bin_count() ? record.omega[k] : kNaN;
    try {
      const auto window = extract_window(record, k, half_width);
      const PriorModel model = factory(window);
      const auto tuned = eb_tune(model, eb, have_warm ? &warm : nullptr);
      b.g_hat = tuned.g_hat;
      b.t_hat = tuned.t_hat;
      b.sigma2_hat = tuned.sigma2;
      b.detail = describe(tuned);
      b.trace = tuned.trace;
      warm = {tuned.eta, tuned.sigma2};
      have_warm = true;
    } catch (const TuningFailed& e) {
      b.ok = false;
      b.detail = std::string(e.what()) + " (" + e.diagnostics() + ")";
    } catch (const std::exception& e) {
      b.ok = false;
      b.detail = e.what();
    }
    if (!b.ok) {
      b.g_hat = b.t_hat = Complex(kNaN, kNaN);
      b.sigma2_hat = kNaN;
    }
    est.bins.push_back(std::move(b));
  }
  return est;
}

}  // namespace

FrfEstimate lrpm_estimate(const spectra::SpectraRecord& record, int half_width, const LrpmOptions& options,
                          std::span<const std::size_t> bins) {
  const kernels::ModelOptions mo{options.n_b, options.n_i, options.scaling, Space::Coefficient};
  const auto spec = kernels::KernelSpec::of(kernels::Family::DI);
  return run_windows(record, half_width, bins, "LRPM(DI)", options.eb,
                     [&](const LocalWindow& w) { return PriorModel(spec, w, mo); });
}

FrfEstimate lgpr_estimate(const spectra::SpectraRecord& record, int half_width, const kernels::KernelSpec& spec,
                          const LgprOptions& options, std::span<const std::size_t> bins) {
  auto mo = options.model;
  mo.di_space = Space::Frf;
  return run_windows(record, half_width, bins, "LGPR(" + std::string(kernels::to_string(spec.family)) + ")",
                     options.eb, [&](const LocalWindow& w) { return PriorModel(spec, w, mo); });
}

}  // namespace frflab::lgpr
