#include "frflab/kernels.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <nlohmann/json.hpp>

#include "frflab/error.hpp"

namespace frflab::kernels {
namespace {

constexpr double kInvSqrt2Pi = 0.39894228040143267794;
const Complex kJ(0.0, 1.0);

struct FamilyName {
  Family family;
  std::string_view name;
};

constexpr std::array<FamilyName, 6> kFamilies{{{Family::DI, "DI"},
                                                {Family::DP, "DP"},
                                                {Family::DC, "DC"},
                                                {Family::R1, "R1"},
                                                {Family::DCpR1, "DCpR1"},
                                                {Family::DPpR1, "DPpR1"}}};

void require(bool ok, const std::string& message) {
  if (!ok) throw InvalidArgument(message);
}

AugmentedKernel from_real(const RMatrix& gamma, const RMatrix& relation) {
  return {gamma.cast<Complex>(), relation.cast<Complex>()};
}

// Dot-product pieces A = 1/(1 - lambda x x'), B = 1/(1 - kappa x x').
struct DpTerms {
  RMatrix xx;
  RMatrix a;
  RMatrix b;
};

DpTerms dp_terms(const DpParams& p, const RVector& x) {
  DpTerms t;
  t.xx = x * x.transpose();
  t.a = (1.0 - p.lambda * t.xx.array()).inverse().matrix();
  t.b = (1.0 - p.kappa * t.xx.array()).inverse().matrix();
  return t;
}

void check_dp(const DpParams& p, const RVector& x) {
  require(p.alpha_g >= 0.0 && p.beta_g >= 0.0, "DP: scales must be non-negative");
  const double x_max = x.size() > 0 ? x.cwiseAbs().maxCoeff() : 0.0;
  const double bound = dp_bound(x_max);
  require(p.lambda >= 0.0 && p.lambda <= bound * (1.0 + 1e-12), "DP: lambda outside the convergence bound");
  require(p.kappa >= 0.0 && p.kappa <= bound * (1.0 + 1e-12), "DP: kappa outside the convergence bound");
}

void check_dc(const DcParams& p) {
  require(p.lambda >= 0.0, "DC: lambda must be non-negative");
  require(p.alpha > 0.0 && p.beta > 0.0, "DC: alpha and beta must be positive");
}

void check_r1(const R1Params& p) {
  require(p.beta1 > 0.0, "R1: beta1 must be positive");
  require(p.beta2 >= 0.0 && p.gamma1 >= 0.0 && p.gamma2 >= 0.0, "R1: beta2 and gammas must be non-negative");
}

// DC value and partials in lambda, alpha, beta for Gamma (q = -j w') or C (q = +j w').
void dc_fill(const DcParams& p, const RVector& omega, double sign, CMatrix& value, std::array<CMatrix, 3>* d) {
  const Index m = omega.size();
  const double a = p.alpha + 0.5 * p.beta;
  value.resize(m, m);
  if (d != nullptr) {
    for (auto& x : *d) x.resize(m, m);
  }
  for (Index s = 0; s < m; ++s) {
    const Complex q = sign * kJ * omega(s);
    const Complex iq = 1.0 / (a + q);
    for (Index r = 0; r < m; ++r) {
      const Complex pr = kJ * omega(r);
      const Complex ip = 1.0 / (a + pr);
      const Complex e = 1.0 / (p.beta + pr + q);
      const Complex sum = ip + iq;
      const Complex base = kInvSqrt2Pi * e * sum;
      value(r, s) = p.lambda * base;
      if (d != nullptr) {
        const Complex ds = -(ip * ip + iq * iq);
        (*d)[0](r, s) = base;
        (*d)[1](r, s) = p.lambda * kInvSqrt2Pi * e * ds;
        (*d)[2](r, s) = p.lambda * kInvSqrt2Pi * (-e * e * sum + 0.5 * e * ds);
      }
    }
  }
}

struct R1Terms {
  CVector f1, f2;
  CVector df1_b1, df2_b1, df1_b2, df2_b2;
};

R1Terms r1_terms(const R1Params& p, const RVector& omega) {
  const Index m = omega.size();
  R1Terms t;
  t.f1.resize(m);
  t.f2.resize(m);
  t.df1_b1.resize(m);
  t.df2_b1.resize(m);
  t.df1_b2.resize(m);
  t.df2_b2.resize(m);
  for (Index r = 0; r < m; ++r) {
    const Complex sb = kJ * omega(r) + p.beta1;
    const Complex den = sb * sb + p.beta2 * p.beta2;
    const Complex inv = 1.0 / den;
    const Complex inv2 = inv * inv;
    t.f1(r) = sb * inv;
    t.f2(r) = p.beta2 * inv;
    t.df1_b1(r) = inv - 2.0 * sb * sb * inv2;
    t.df2_b1(r) = -2.0 * p.beta2 * sb * inv2;
    t.df1_b2(r) = -2.0 * p.beta2 * sb * inv2;
    t.df2_b2(r) = inv - 2.0 * p.beta2 * p.beta2 * inv2;
  }
  return t;
}

// w1 * f1 f1^H + w2 * f2 f2^H and the matching relation with ^T.
AugmentedKernel rank_two(const CVector& f1, const CVector& f2, double w1, double w2) {
  return {w1 * f1 * f1.adjoint() + w2 * f2 * f2.adjoint(), w1 * f1 * f1.transpose() + w2 * f2 * f2.transpose()};
}

// Symmetrized derivative of w f f^H: w (df f^H + f df^H).
AugmentedKernel rank_one_derivative(const CVector& f, const CVector& df, double w) {
  return {w * (df * f.adjoint() + f * df.adjoint()), w * (df * f.transpose() + f * df.transpose())};
}

// Diagonals of the DI G and T blocks, with partials in (alpha_G, lambda, beta_G, kappa, alpha_T).
struct DiDiagonals {
  RVector g_gamma, g_rel, t_gamma, t_rel;
};

DiDiagonals di_diagonals(const DiParams& p, int n_b, int n_i) {
  const double beta_t = p.beta_t();
  DiDiagonals out;
  out.g_gamma.resize(n_b + 1);
  out.g_rel.resize(n_b + 1);
  for (int n = 0; n <= n_b; ++n) {
    const double l = std::pow(p.lambda, n);
    const double k = std::pow(p.kappa, n);
    out.g_gamma(n) = p.alpha_g * l + p.beta_g * k;
    out.g_rel(n) = p.alpha_g * l - p.beta_g * k;
  }
  out.t_gamma.resize(n_i + 1);
  out.t_rel.resize(n_i + 1);
  for (int n = 0; n <= n_i; ++n) {
    const double l = std::pow(p.lambda, n);
    const double k = std::pow(p.kappa, n);
    out.t_gamma(n) = p.alpha_t * l + beta_t * k;
    out.t_rel(n) = p.alpha_t * l - beta_t * k;
  }
  return out;
}

// n x^(n-1) with 0^0 = 1 and the n = 0 term zero.
double dpow(double x, int n) { return n == 0 ? 0.0 : n * std::pow(x, n - 1); }

DiDiagonals di_partial(const DiParams& p, int n_b, int n_i, int which) {
  const double ratio = p.alpha_g > 0.0 ? p.beta_g / p.alpha_g : 0.0;
  const double beta_t = p.beta_t();
  DiDiagonals out;
  out.g_gamma = RVector::Zero(n_b + 1);
  out.g_rel = RVector::Zero(n_b + 1);
  out.t_gamma = RVector::Zero(n_i + 1);
  out.t_rel = RVector::Zero(n_i + 1);
  for (int n = 0; n <= n_b; ++n) {
    const double l = std::pow(p.lambda, n);
    const double k = std::pow(p.kappa, n);
    switch (which) {
      case 0: out.g_gamma(n) = l; out.g_rel(n) = l; break;
      case 1: out.g_gamma(n) = out.g_rel(n) = p.alpha_g * dpow(p.lambda, n); break;
      case 2: out.g_gamma(n) = k; out.g_rel(n) = -k; break;
      case 3: out.g_gamma(n) = p.beta_g * dpow(p.kappa, n); out.g_rel(n) = -out.g_gamma(n); break;
      default: break;
    }
  }
  for (int n = 0; n <= n_i; ++n) {
    const double l = std::pow(p.lambda, n);
    const double k = std::pow(p.kappa, n);
    double dl = 0.0;  // coefficient of lambda^n
    double dk = 0.0;  // coefficient of kappa^n
    double dlp = 0.0; // coefficient of n lambda^(n-1)
    double dkp = 0.0;
    switch (which) {
      case 0: dk = p.alpha_g > 0.0 ? -p.alpha_t * p.beta_g / (p.alpha_g * p.alpha_g) : 0.0; break;
      case 1: dlp = p.alpha_t; break;
      case 2: dk = p.alpha_g > 0.0 ? p.alpha_t / p.alpha_g : 0.0; break;
      case 3: dkp = beta_t; break;
      case 4: dl = 1.0; dk = ratio; break;
      default: break;
    }
    const double lam = dl * l + dlp * dpow(p.lambda, n);
    const double kap = dk * k + dkp * dpow(p.kappa, n);
    out.t_gamma(n) = lam + kap;
    out.t_rel(n) = lam - kap;
  }
  return out;
}

AugmentedKernel diagonal_kernel(const RVector& gamma, const RVector& relation) {
  return {gamma.cast<Complex>().asDiagonal(), relation.cast<Complex>().asDiagonal()};
}

}  // namespace

std::string_view to_string(Family family) {
  for (const auto& f : kFamilies) {
    if (f.family == family) return f.name;
  }
  return "?";
}

Family parse_family(std::string_view name) {
  for (const auto& f : kFamilies) {
    if (f.name == name) return f.family;
  }
  throw InvalidArgument("unknown kernel family '" + std::string(name) + "'");
}

double di_bound(double x_max) { return x_max > 0.0 ? (1.0 - kBoundMargin) / x_max : 1.0 - kBoundMargin; }

double dp_bound(double x_max) {
  return x_max > 0.0 ? (1.0 - kBoundMargin) / (x_max * x_max) : 1.0 - kBoundMargin;
}

AugmentedKernel di_kernel(const DiParams& p, int n_b, int n_i, double lambda_max) {
  require(n_b >= 0 && n_i >= -1, "DI: invalid orders");
  require(p.alpha_g >= 0.0 && p.beta_g >= 0.0 && p.alpha_t >= 0.0, "DI: scales must be non-negative");
  require(p.lambda >= 0.0 && p.lambda <= lambda_max * (1.0 + 1e-12), "DI: lambda outside its bound");
  require(p.kappa >= 0.0 && p.kappa <= lambda_max * (1.0 + 1e-12), "DI: kappa outside its bound");
  const auto d = di_diagonals(p, n_b, n_i);
  RVector gamma(d.g_gamma.size() + d.t_gamma.size());
  RVector relation(gamma.size());
  gamma << d.g_gamma, d.t_gamma;
  relation << d.g_rel, d.t_rel;
  return diagonal_kernel(gamma, relation);
}

AugmentedKernel dp_kernel(const DpParams& p, const RVector& x) {
  check_dp(p, x);
  const auto t = dp_terms(p, x);
  return from_real(p.alpha_g * t.a + p.beta_g * t.b, p.alpha_g * t.a - p.beta_g * t.b);
}

AugmentedKernel dc_kernel(const DcParams& p, const RVector& omega) {
  check_dc(p);
  AugmentedKernel k;
  dc_fill(p, omega, -1.0, k.covariance, nullptr);
  dc_fill(p, omega, 1.0, k.relation, nullptr);
  return k;
}

AugmentedKernel r1_kernel(const R1Params& p, const RVector& omega) {
  check_r1(p);
  const auto t = r1_terms(p, omega);
  return rank_two(t.f1, t.f2, p.gamma1 * p.gamma1, p.gamma2 * p.gamma2);
}

AugmentedKernel pushforward(const AugmentedKernel& coefficients, const RMatrix& phi) {
  require(phi.cols() == coefficients.dim(), "pushforward: basis does not match the kernel dimension");
  const CMatrix f = phi.cast<Complex>();
  return {f * coefficients.covariance * f.transpose(), f * coefficients.relation * f.transpose()};
}

std::vector<std::string> parameter_names(Family family) {
  switch (family) {
    case Family::DI: return {"alpha_G", "lambda", "beta_G", "kappa", "alpha_T"};
    case Family::DP: return {"alpha_G", "lambda", "beta_G", "kappa", "c_T"};
    case Family::DC: return {"lambda_DC", "alpha_DC", "beta_DC", "c_T"};
    case Family::R1: return {"beta1", "beta2", "gamma1", "gamma2", "c_T"};
    case Family::DCpR1: return {"lambda_DC", "alpha_DC", "beta_DC", "beta1", "beta2", "gamma1", "gamma2", "c_T"};
    case Family::DPpR1: return {"alpha_G", "lambda", "beta_G", "kappa", "beta1", "beta2", "gamma1", "gamma2", "c_T"};
  }
  return {};
}

void to_json(nlohmann::json& doc, const KernelSpec& spec) {
  doc = nlohmann::json::object();
  doc["family"] = std::string(to_string(spec.family));
  doc["eta"] = spec.eta;
  auto bounds = nlohmann::json::object();
  for (const auto& [name, b] : spec.bounds) bounds[name] = {b.first, b.second};
  doc["bounds"] = bounds;
  if (spec.c_t) {
    doc["c_T"] = *spec.c_t;
  } else {
    doc["c_T"] = nullptr;
  }
}

void from_json(const nlohmann::json& doc, KernelSpec& spec) {
  if (!doc.is_object()) throw InvalidArgument("kernel spec must be a JSON object");
  spec = KernelSpec::of(parse_family(doc.at("family").get<std::string>()));
  if (doc.contains("eta")) spec.eta = doc["eta"].get<std::map<std::string, double>>();
  if (doc.contains("bounds")) {
    for (const auto& [name, b] : doc["bounds"].items()) {
      if (!b.is_array() || b.size() != 2) throw InvalidArgument("bounds of '" + name + "' must be [lower, upper]");
      spec.bounds[name] = {b[0].get<double>(), b[1].get<double>()};
    }
  }
  if (doc.contains("c_T") && !doc["c_T"].is_null()) spec.c_t = doc["c_T"].get<double>();
}

PriorModel::PriorModel(const KernelSpec& spec, const LocalWindow& window, ModelOptions options)
    : family_(spec.family), n_b_(options.n_b), n_i_(options.n_i), window_(window) {
  require(window.size() > 0, "prior model needs a non-empty window");
  const double scaling = options.scaling > 0.0 ? options.scaling : default_scaling(window.resolution);
  x_ = scaled_offsets(window, scaling);
  omega_ = window.absolute_omega;
  x_max_ = x_.cwiseAbs().maxCoeff();
  if (!(x_max_ > 0.0)) x_max_ = 1.0;
  if (family_ == Family::DI) {
    space_ = options.di_space;
    regressors_ = frflab::regressors(window, n_b_, n_i_, scaling);
  }

  const double p_y = window.output.squaredNorm() / static_cast<double>(window.size());
  const double p_u = window.input.squaredNorm() / static_cast<double>(window.size());
  const double py = p_y > 0.0 ? p_y : 1.0;
  const double pu = p_u > 0.0 ? p_u : 1.0;
  const double g2 = py / pu;
  const double delta = window.resolution > 0.0 ? window.resolution : 1.0;
  const double ell = std::max(window.half_width, 1);
  const double w_lo = omega_.minCoeff();
  const double w_hi = omega_.maxCoeff();
  const double w_c = omega_(window.size() / 2);
  noise_bounds_ = {py * 1e-12, py * 1e4};

  const double lam_bound = family_ == Family::DI ? di_bound(x_max_) : dp_bound(x_max_);
  for (const auto& name : parameter_names(family_)) {
    Hyperparameter h{name, 0.0, 0.0};
    Id id{};
    if (name == "alpha_G" || name == "beta_G") {
      id = name == "alpha_G" ? Id::AlphaG : Id::BetaG;
      h.lower = g2 * 1e-8;
      h.upper = g2 * 1e4;
    } else if (name == "lambda" || name == "kappa") {
      id = name == "lambda" ? Id::Lambda : Id::Kappa;
      h.lower = 1e-6 * lam_bound;
      h.upper = lam_bound;
    } else if (name == "alpha_T") {
      id = Id::AlphaT;
      h.lower = py * 1e-8;
      h.upper = py * 1e4;
    } else if (name == "lambda_DC") {
      id = Id::LambdaDC;
      h.lower = g2 * (1.0 + w_c * w_c) * 1e-8;
      h.upper = g2 * (1.0 + w_c * w_c) * 1e4;
    } else if (name == "alpha_DC" || name == "beta_DC") {
      id = name == "alpha_DC" ? Id::AlphaDC : Id::BetaDC;
      h.lower = 1e-3;
      h.upper = 1e2;
    } else if (name == "beta1") {
      id = Id::Beta1;
      h.lower = 1e-3 * delta;
      h.upper = (2.0 * ell + 1.0) * delta;
    } else if (name == "beta2") {
      id = Id::Beta2;
      h.lower = std::max(w_lo - (ell + 1.0) * delta, 0.5 * delta);
      h.upper = w_hi + (ell + 1.0) * delta;
    } else if (name == "gamma1" || name == "gamma2") {
      id = name == "gamma1" ? Id::Gamma1 : Id::Gamma2;
      h.lower = std::sqrt(g2) * ell * delta * 1e-6;
      h.upper = std::sqrt(g2) * ell * delta * 1e2;
    } else {
      id = Id::CT;
      h.lower = 1e-6;
      h.upper = 1e6;
    }
    if (auto it = spec.bounds.find(name); it != spec.bounds.end()) {
      const auto [lo, hi] = it->second;
      require(lo <= hi, "bounds of '" + name + "' are reversed");
      require(lo > 0.0 || lo == hi, "free hyperparameter '" + name + "' needs a positive lower bound");
      h.lower = lo;
      h.upper = hi;
    }
    if (auto it = spec.eta.find(name); it != spec.eta.end()) {
      require(it->second >= 0.0, "hyperparameter '" + name + "' must be non-negative");
      h.lower = h.upper = it->second;
    }
    if (id == Id::CT && spec.c_t) {
      require(*spec.c_t >= 0.0, "c_T must be non-negative");
      h.lower = h.upper = *spec.c_t;
    }
    params_.push_back(h);
    ids_.push_back(id);
  }
  for (const auto& name : spec.eta) {
    const auto names = parameter_names(family_);
    if (std::find(names.begin(), names.end(), name.first) == names.end()) {
      throw InvalidArgument("'" + name.first + "' is not a hyperparameter of " + std::string(to_string(family_)));
    }
  }
  for (const auto& name : spec.bounds) {
    const auto names = parameter_names(family_);
    if (std::find(names.begin(), names.end(), name.first) == names.end()) {
      throw InvalidArgument("'" + name.first + "' is not a hyperparameter of " + std::string(to_string(family_)));
    }
  }

  // A component whose scales are all frozen at zero contributes nothing; its
  // shape parameters are frozen too so they do not enter the search.
  auto find = [&](Id id) -> Hyperparameter* {
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (ids_[i] == id) return &params_[i];
    }
    return nullptr;
  };
  auto zero = [&](Id id) {
    const auto* h = find(id);
    return h == nullptr || (h->frozen() && h->lower == 0.0);
  };
  auto freeze = [&](Id id) {
    if (auto* h = find(id); h != nullptr && !h->frozen()) {
      const double mid = std::sqrt(h->lower * h->upper);
      h->lower = h->upper = mid;
    }
  };
  if (find(Id::Gamma1) != nullptr && zero(Id::Gamma1) && zero(Id::Gamma2)) {
    freeze(Id::Beta1);
    freeze(Id::Beta2);
  }
  if (family_ != Family::DI && find(Id::AlphaG) != nullptr && zero(Id::AlphaG) && zero(Id::BetaG)) {
    freeze(Id::Lambda);
    freeze(Id::Kappa);
  }
  if (find(Id::LambdaDC) != nullptr && zero(Id::LambdaDC)) {
    freeze(Id::AlphaDC);
    freeze(Id::BetaDC);
  }
}

PriorPair PriorModel::evaluate(const RVector& eta) const { return build(eta, nullptr, nullptr); }

PriorPair PriorModel::evaluate(const RVector& eta, const std::vector<Index>& which,
                               std::vector<PriorPair>& derivatives) const {
  return build(eta, &which, &derivatives);
}

PriorPair PriorModel::build(const RVector& eta, const std::vector<Index>* which,
                            std::vector<PriorPair>* derivatives) const {
  require(eta.size() == size(), "hyperparameter vector has the wrong length");
  auto value = [&](Id id) { return value_of(eta, id); };
  const Index m = window_.size();
  const bool want = which != nullptr && derivatives != nullptr;
  if (want) derivatives->assign(which->size(), PriorPair{});

  if (family_ == Family::DI) {
    const DiParams p{value(Id::AlphaG), value(Id::Lambda), value(Id::BetaG), value(Id::Kappa), value(Id::AlphaT)};
    const double bound = di_bound(x_max_);
    di_kernel(p, n_b_, 0, bound);  // domain checks
    const auto d = di_diagonals(p, n_b_, n_i_);
    auto lift = [&](const DiDiagonals& dd) {
      PriorPair pair{diagonal_kernel(dd.g_gamma, dd.g_rel), diagonal_kernel(dd.t_gamma, dd.t_rel)};
      if (space_ == Space::Frf) {
        pair.g = pushforward(pair.g, regressors_.phi_b);
        pair.t = n_i_ >= 0 ? pushforward(pair.t, regressors_.phi_i) : AugmentedKernel::zeros(m);
      }
      return pair;
    };
    if (want) {
      for (std::size_t k = 0; k < which->size(); ++k) {
        const int slot = static_cast<int>(ids_[static_cast<std::size_t>((*which)[k])]) - static_cast<int>(Id::AlphaG);
        (*derivatives)[k] = lift(di_partial(p, n_b_, n_i_, slot));
      }
    }
    return lift(d);
  }

  PriorPair out{AugmentedKernel::zeros(m), AugmentedKernel::zeros(m)};
  std::vector<std::pair<Id, AugmentedKernel>> partials;

  const bool has_dp = family_ == Family::DP || family_ == Family::DPpR1;
  const bool has_dc = family_ == Family::DC || family_ == Family::DCpR1;
  const bool has_r1 = family_ == Family::R1 || family_ == Family::DCpR1 || family_ == Family::DPpR1;

  if (has_dp) {
    const DpParams p{value(Id::AlphaG), value(Id::Lambda), value(Id::BetaG), value(Id::Kappa)};
    check_dp(p, x_);
    const auto t = dp_terms(p, x_);
    out.g += from_real(p.alpha_g * t.a + p.beta_g * t.b, p.alpha_g * t.a - p.beta_g * t.b);
    if (want) {
      const RMatrix da = t.xx.cwiseProduct(t.a).cwiseProduct(t.a);
      const RMatrix db = t.xx.cwiseProduct(t.b).cwiseProduct(t.b);
      partials.emplace_back(Id::AlphaG, from_real(t.a, t.a));
      partials.emplace_back(Id::Lambda, from_real(p.alpha_g * da, p.alpha_g * da));
      partials.emplace_back(Id::BetaG, from_real(t.b, -t.b));
      partials.emplace_back(Id::Kappa, from_real(p.beta_g * db, -p.beta_g * db));
    }
  }
  if (has_dc) {
    const DcParams p{value(Id::LambdaDC), value(Id::AlphaDC), value(Id::BetaDC)};
    check_dc(p);
    AugmentedKernel k;
    std::array<CMatrix, 3> dg, dr;
    dc_fill(p, omega_, -1.0, k.covariance, want ? &dg : nullptr);
    dc_fill(p, omega_, 1.0, k.relation, want ? &dr : nullptr);
    out.g += k;
    if (want) {
      partials.emplace_back(Id::LambdaDC, AugmentedKernel{dg[0], dr[0]});
      partials.emplace_back(Id::AlphaDC, AugmentedKernel{dg[1], dr[1]});
      partials.emplace_back(Id::BetaDC, AugmentedKernel{dg[2], dr[2]});
    }
  }
  if (has_r1) {
    const R1Params p{value(Id::Beta1), value(Id::Beta2), value(Id::Gamma1), value(Id::Gamma2)};
    check_r1(p);
    const auto t = r1_terms(p, omega_);
    const double w1 = p.gamma1 * p.gamma1;
    const double w2 = p.gamma2 * p.gamma2;
    out.g += rank_two(t.f1, t.f2, w1, w2);
    if (want) {
      partials.emplace_back(Id::Beta1, rank_one_derivative(t.f1, t.df1_b1, w1) + rank_one_derivative(t.f2, t.df2_b1, w2));
      partials.emplace_back(Id::Beta2, rank_one_derivative(t.f1, t.df1_b2, w1) + rank_one_derivative(t.f2, t.df2_b2, w2));
      partials.emplace_back(Id::Gamma1, rank_two(t.f1, t.f2, 2.0 * p.gamma1, 0.0));
      partials.emplace_back(Id::Gamma2, rank_two(t.f1, t.f2, 0.0, 2.0 * p.gamma2));
    }
  }

  const double c_t = value(Id::CT);
  require(c_t >= 0.0, "c_T must be non-negative");
  if (c_t > 0.0) out.t = c_t * out.g;

  if (want) {
    for (std::size_t k = 0; k < which->size(); ++k) {
      const Id id = ids_[static_cast<std::size_t>((*which)[k])];
      auto& d = (*derivatives)[k];
      if (id == Id::CT) {
        d.g = AugmentedKernel::zeros(m);
        d.t = out.g;
        continue;
      }
      for (const auto& [pid, kernel] : partials) {
        if (pid == id) {
          d.g = kernel;
          d.t = c_t > 0.0 ? c_t * kernel : AugmentedKernel::zeros(m);
          break;
        }
      }
      if (d.g.dim() == 0) {
        d.g = AugmentedKernel::zeros(m);
        d.t = AugmentedKernel::zeros(m);
      }
    }
  }
  return out;
}

Index PriorModel::position(Id id) const {
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (ids_[i] == id) return static_cast<Index>(i);
  }
  return -1;
}

double PriorModel::value_of(const RVector& eta, Id id) const {
  const Index i = position(id);
  return i >= 0 ? eta(i) : 0.0;
}

namespace {

double weighted_sum(const CMatrix& w, const CMatrix& k) { return (w.array() * k.array()).real().sum(); }

// Re(a^T W b)
double bilinear(const CVector& a, const CMatrix& w, const CVector& b) { return (a.transpose() * w * b)(0, 0).real(); }

}  // namespace

RVector PriorModel::contract(const RVector& eta, const PriorPair& at, const std::vector<Index>& which,
                             const PriorWeights& w) const {
  require(eta.size() == size(), "hyperparameter vector has the wrong length");
  RVector grad = RVector::Zero(static_cast<Index>(which.size()));
  auto id_at = [&](std::size_t k) { return ids_[static_cast<std::size_t>(which[k])]; };
  auto value = [&](Id id) { return value_of(eta, id); };

  if (family_ == Family::DI) {
    const DiParams p{value(Id::AlphaG), value(Id::Lambda), value(Id::BetaG), value(Id::Kappa), value(Id::AlphaT)};
    RVector gc, gr, tc, tr;
    if (space_ == Space::Frf) {
      const RMatrix& pb = regressors_.phi_b;
      const RMatrix& pi = regressors_.phi_i;
      gc = (pb.transpose() * w.g_cov.real() * pb).diagonal();
      gr = (pb.transpose() * w.g_rel.real() * pb).diagonal();
      tc = (pi.transpose() * w.t_cov.real() * pi).diagonal();
      tr = (pi.transpose() * w.t_rel.real() * pi).diagonal();
    } else {
      gc = w.g_cov.diagonal().real();
      gr = w.g_rel.diagonal().real();
      tc = w.t_cov.diagonal().real();
      tr = w.t_rel.diagonal().real();
    }
    for (std::size_t k = 0; k < which.size(); ++k) {
      const int slot = static_cast<int>(id_at(k)) - static_cast<int>(Id::AlphaG);
      const auto d = di_partial(p, n_b_, n_i_, slot);
      grad(static_cast<Index>(k)) = gc.dot(d.g_gamma) + gr.dot(d.g_rel) + tc.dot(d.t_gamma) + tr.dot(d.t_rel);
    }
    return grad;
  }

  const double c_t = value(Id::CT);
  CMatrix wc = w.g_cov;
  CMatrix wr = w.g_rel;
  if (c_t > 0.0) {
    wc += c_t * w.t_cov;
    wr += c_t * w.t_rel;
  }
  auto wanted = [&](Id id) {
    for (std::size_t k = 0; k < which.size(); ++k) {
      if (id_at(k) == id) return static_cast<Index>(k);
    }
    return Index{-1};
  };
  auto put = [&](Id id, auto&& compute) {
    if (const Index k = wanted(id); k >= 0) grad(k) = compute();
  };

  const bool has_dp = family_ == Family::DP || family_ == Family::DPpR1;
  const bool has_dc = family_ == Family::DC || family_ == Family::DCpR1;
  const bool has_r1 = family_ == Family::R1 || family_ == Family::DCpR1 || family_ == Family::DPpR1;

  if (has_dp && (wanted(Id::AlphaG) >= 0 || wanted(Id::Lambda) >= 0 || wanted(Id::BetaG) >= 0 ||
                 wanted(Id::Kappa) >= 0)) {
    const DpParams p{value(Id::AlphaG), value(Id::Lambda), value(Id::BetaG), value(Id::Kappa)};
    const auto t = dp_terms(p, x_);
    const RMatrix plus = (wc + wr).real();
    const RMatrix minus = (wc - wr).real();
    put(Id::AlphaG, [&] { return t.a.cwiseProduct(plus).sum(); });
    put(Id::BetaG, [&] { return t.b.cwiseProduct(minus).sum(); });
    put(Id::Lambda, [&] { return p.alpha_g * (t.xx.array() * t.a.array().square() * plus.array()).sum(); });
    put(Id::Kappa, [&] { return p.beta_g * (t.xx.array() * t.b.array().square() * minus.array()).sum(); });
  }
  if (has_dc && (wanted(Id::LambdaDC) >= 0 || wanted(Id::AlphaDC) >= 0 || wanted(Id::BetaDC) >= 0)) {
    const DcParams p{value(Id::LambdaDC), value(Id::AlphaDC), value(Id::BetaDC)};
    CMatrix g, r;
    std::array<CMatrix, 3> dg, dr;
    dc_fill(p, omega_, -1.0, g, &dg);
    dc_fill(p, omega_, 1.0, r, &dr);
    put(Id::LambdaDC, [&] { return weighted_sum(wc, dg[0]) + weighted_sum(wr, dr[0]); });
    put(Id::AlphaDC, [&] { return weighted_sum(wc, dg[1]) + weighted_sum(wr, dr[1]); });
    put(Id::BetaDC, [&] { return weighted_sum(wc, dg[2]) + weighted_sum(wr, dr[2]); });
  }
  if (has_r1 && (wanted(Id::Beta1) >= 0 || wanted(Id::Beta2) >= 0 || wanted(Id::Gamma1) >= 0 ||
                 wanted(Id::Gamma2) >= 0)) {
    const R1Params p{value(Id::Beta1), value(Id::Beta2), value(Id::Gamma1), value(Id::Gamma2)};
    const auto t = r1_terms(p, omega_);
    const double w1 = p.gamma1 * p.gamma1;
    const double w2 = p.gamma2 * p.gamma2;
    // Re sum(Wc .* (f f^H)) + Re sum(Wr .* (f f^T))
    auto quad = [&](const CVector& f) { return bilinear(f, wc, f.conjugate()) + bilinear(f, wr, f); };
    // partial of quad along df
    auto dquad = [&](const CVector& f, const CVector& df) {
      return bilinear(df, wc, f.conjugate()) + bilinear(f, wc, df.conjugate()) + bilinear(df, wr, f) +
             bilinear(f, wr, df);
    };
    put(Id::Gamma1, [&] { return 2.0 * p.gamma1 * quad(t.f1); });
    put(Id::Gamma2, [&] { return 2.0 * p.gamma2 * quad(t.f2); });
    put(Id::Beta1, [&] { return w1 * dquad(t.f1, t.df1_b1) + w2 * dquad(t.f2, t.df2_b1); });
    put(Id::Beta2, [&] { return w1 * dquad(t.f1, t.df1_b2) + w2 * dquad(t.f2, t.df2_b2); });
  }
  put(Id::CT, [&] { return weighted_sum(w.t_cov, at.g.covariance) + weighted_sum(w.t_rel, at.g.relation); });
  return grad;
}

}  // namespace frflab::kernels
