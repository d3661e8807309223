#include "frflab/cgauss.hpp"

#include <atomic>
#include <cmath>
#include <mutex>

#include "frflab/error.hpp"

namespace frflab::cgauss {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

template <typename Matrix>
Eigen::LLT<Matrix> factor_with_jitter(const Matrix& a, const char* what) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() == Eigen::Success) return llt;
  const double jitter = 1e-10 * std::abs(a.trace()) / static_cast<double>(a.rows());
  Matrix b = a;
  b.diagonal().array() += jitter;
  llt.compute(b);
  if (llt.info() != Eigen::Success) throw NumericalError(std::string(what) + ": matrix is not positive definite");
  return llt;
}

CVector augment(const CVector& y) {
  CVector out(2 * y.size());
  out << y, y.conjugate();
  return out;
}

// The exact solution of a structured system with structured right-hand side is [a; conj(a)];
// projecting onto that subspace removes the rounding that breaks the pairing.
void pair_conjugates(CVector& w) {
  const Index n = w.size() / 2;
  const CVector top = 0.5 * (w.head(n) + w.tail(n).conjugate());
  w.head(n) = top;
  w.tail(n) = top.conjugate();
}

RVector stack_real(const CVector& y) {
  RVector z(2 * y.size());
  z << y.real(), y.imag();
  return z;
}

void check_square_pair(const AugmentedKernel& k, Index n, const char* what) {
  if (k.covariance.rows() != n || k.covariance.cols() != n || k.relation.rows() != n || k.relation.cols() != n) {
    throw InvalidArgument(std::string(what) + ": kernel dimension mismatch");
  }
}

struct Stats {
  std::atomic<std::uint64_t> calls{0};
  std::atomic<double> max_residual{0.0};
};

Stats& stats() {
  static Stats s;
  return s;
}

void record_residual(double r) {
  auto& s = stats();
  s.calls.fetch_add(1, std::memory_order_relaxed);
  double prev = s.max_residual.load(std::memory_order_relaxed);
  while ((r > prev || std::isnan(r)) && !s.max_residual.compare_exchange_weak(prev, r, std::memory_order_relaxed)) {
  }
}

}  // namespace

CMatrix AugmentedKernel::composite() const {
  const Index n = dim();
  CMatrix m(2 * n, 2 * n);
  m.topLeftCorner(n, n) = covariance;
  m.topRightCorner(n, n) = relation;
  m.bottomLeftCorner(n, n) = relation.conjugate();
  m.bottomRightCorner(n, n) = covariance.conjugate();
  return m;
}

AugmentedKernel AugmentedKernel::zeros(Index n) { return {CMatrix::Zero(n, n), CMatrix::Zero(n, n)}; }

AugmentedKernel& AugmentedKernel::operator+=(const AugmentedKernel& other) {
  covariance += other.covariance;
  relation += other.relation;
  return *this;
}

AugmentedKernel& AugmentedKernel::operator*=(double s) {
  covariance *= s;
  relation *= s;
  return *this;
}

AugmentedKernel compose(const RealCompositeKernel& k) {
  const Index n = k.dim();
  if (k.matrix.rows() != 2 * n || k.matrix.cols() != 2 * n) throw InvalidArgument("composite kernel must be 2n x 2n");
  const double scale = std::max(k.matrix.cwiseAbs().maxCoeff(), 1e-300);
  if ((k.matrix - k.matrix.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw InvalidArgument("real composite kernel is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<RMatrix> eig(k.matrix, Eigen::EigenvaluesOnly);
  const auto& ev = eig.eigenvalues();
  if (ev(0) < -1e-10 * std::max(ev(ev.size() - 1), 0.0) - 1e-300) {
    throw InvalidArgument("real composite kernel is not positive semidefinite");
  }
  const Complex j(0.0, 1.0);
  AugmentedKernel m;
  m.covariance = (k.rr() + k.ii()).cast<Complex>() + j * (k.ir() - k.ri()).cast<Complex>();
  m.relation = (k.rr() - k.ii()).cast<Complex>() + j * (k.ir() + k.ri()).cast<Complex>();
  return m;
}

RealCompositeKernel decompose(const AugmentedKernel& m) {
  const Index n = m.dim();
  RealCompositeKernel k;
  k.matrix.resize(2 * n, 2 * n);
  const CMatrix sum = m.covariance + m.relation;
  const CMatrix diff = m.covariance - m.relation;
  k.matrix.topLeftCorner(n, n) = 0.5 * sum.real();
  k.matrix.bottomRightCorner(n, n) = 0.5 * diff.real();
  k.matrix.bottomLeftCorner(n, n) = 0.5 * sum.imag();
  k.matrix.topRightCorner(n, n) = -0.5 * diff.imag();
  return k;
}

double min_eigen_ratio(const AugmentedKernel& m) {
  Eigen::SelfAdjointEigenSolver<CMatrix> eig(m.composite(), Eigen::EigenvaluesOnly);
  const auto& ev = eig.eigenvalues();
  const double hi = ev(ev.size() - 1);
  if (hi <= 0.0) return ev(0) == 0.0 ? 0.0 : -1.0;
  return ev(0) / hi;
}

bool is_valid(const AugmentedKernel& m, double tol) {
  const double scale = std::max(m.covariance.cwiseAbs().maxCoeff(), 1e-300);
  if ((m.covariance - m.covariance.adjoint()).cwiseAbs().maxCoeff() > 1e-12 * scale) return false;
  if ((m.relation - m.relation.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) return false;
  return min_eigen_ratio(m) >= -tol;
}

ThetaEstimate map_theta(const CMatrix& psi, const AugmentedKernel& prior, const CVector& y, double sigma2) {
  if (!(sigma2 > 0.0)) throw InvalidArgument("noise variance must be positive");
  const Index m = psi.rows();
  const Index p = psi.cols();
  if (y.size() != m) throw InvalidArgument("map_theta: output length does not match Psi");
  check_square_pair(prior, p, "map_theta");

  CMatrix psi_aug = CMatrix::Zero(2 * m, 2 * p);
  psi_aug.topLeftCorner(m, p) = psi;
  psi_aug.bottomRightCorner(m, p) = psi.conjugate();
  const CMatrix mm = prior.composite();
  const CMatrix mp = mm * psi_aug.adjoint();
  CMatrix s = psi_aug * mp;
  s.diagonal().array() += sigma2;
  s = 0.5 * (s + s.adjoint()).eval();
  const auto llt = factor_with_jitter(s, "map_theta");
  CVector w = llt.solve(augment(y));
  pair_conjugates(w);
  const CVector theta_aug = mp * w;

  ThetaEstimate out;
  out.theta = theta_aug.head(p);
  const double top = out.theta.norm();
  const double mismatch = (theta_aug.tail(p) - out.theta.conjugate()).norm();
  out.conjugacy_residual = top > 0.0 ? mismatch / top : mismatch;
  return out;
}

FrfPosterior map_gt(const CVector& u, const CVector& y, const AugmentedKernel& prior_g,
                    const AugmentedKernel& prior_t, double sigma2) {
  if (!(sigma2 > 0.0)) throw InvalidArgument("noise variance must be positive");
  const Index m = y.size();
  if (u.size() != m) throw InvalidArgument("map_gt: input and output lengths differ");
  check_square_pair(prior_g, m, "map_gt");
  check_square_pair(prior_t, m, "map_gt");

  CVector u_aug = augment(u);
  const CMatrix mg = prior_g.composite();
  const CMatrix mt = prior_t.composite();
  const CMatrix mg_uh = mg * u_aug.conjugate().asDiagonal();
  CMatrix o = u_aug.asDiagonal() * mg_uh + mt;
  o.diagonal().array() += sigma2;
  o = 0.5 * (o + o.adjoint()).eval();
  const CVector y_aug = augment(y);
  const auto llt = factor_with_jitter(o, "map_gt");
  CVector w = llt.solve(y_aug);
  w += llt.solve(y_aug - o * w);
  pair_conjugates(w);

  FrfPosterior out;
  const CVector g_aug = mg_uh * w;
  const CVector t_aug = mt * w;
  out.g = g_aug.head(m);
  out.t = t_aug.head(m);

  const CVector identity = u_aug.cwiseProduct(g_aug) + t_aug + sigma2 * w - y_aug;
  // Normwise backward error: a stable solve cannot do better than eps * |O| |w|.
  const double scale = o.norm() * w.norm() + y_aug.norm();
  out.identity_residual = scale > 0.0 ? identity.norm() / scale : identity.norm();
  const double top = out.g.norm();
  const double mismatch = (g_aug.tail(m) - out.g.conjugate()).norm();
  out.conjugacy_residual = top > 0.0 ? mismatch / top : mismatch;
  record_residual(out.identity_residual);
  return out;
}

MapGtStats map_gt_stats() {
  return {stats().calls.load(), stats().max_residual.load()};
}

void reset_map_gt_stats() {
  stats().calls.store(0);
  stats().max_residual.store(0.0);
}

AugmentedKernel frf_observation(const CVector& u, const AugmentedKernel& prior_g, const AugmentedKernel& prior_t,
                                double sigma2) {
  const Index m = u.size();
  check_square_pair(prior_g, m, "frf_observation");
  check_square_pair(prior_t, m, "frf_observation");
  AugmentedKernel o;
  o.covariance = u.asDiagonal() * prior_g.covariance * u.conjugate().asDiagonal();
  o.covariance += prior_t.covariance;
  o.covariance.diagonal().array() += sigma2;
  o.relation = u.asDiagonal() * prior_g.relation * u.asDiagonal();
  o.relation += prior_t.relation;
  return o;
}

AugmentedKernel coefficient_observation(const CMatrix& psi, const AugmentedKernel& prior, double sigma2) {
  check_square_pair(prior, psi.cols(), "coefficient_observation");
  AugmentedKernel o;
  o.covariance = psi * prior.covariance * psi.adjoint();
  o.covariance.diagonal().array() += sigma2;
  o.relation = psi * prior.relation * psi.transpose();
  return o;
}

double nll(const CVector& y, const AugmentedKernel& observation) {
  check_square_pair(observation, y.size(), "nll");
  const RMatrix sigma = decompose(observation).matrix;
  const auto llt = factor_with_jitter(sigma, "nll");
  const RVector z = stack_real(y);
  const RVector a = llt.matrixL().solve(z);
  const double logdet = llt.matrixLLT().diagonal().array().log().sum();
  return 0.5 * a.squaredNorm() + logdet + static_cast<double>(y.size()) * kLog2Pi;
}

double nll_augmented(const CVector& y, const AugmentedKernel& observation) {
  check_square_pair(observation, y.size(), "nll_augmented");
  CMatrix o = observation.composite();
  const auto llt = factor_with_jitter(o, "nll_augmented");
  const CVector y_aug = augment(y);
  const Complex quad = y_aug.dot(llt.solve(y_aug));
  const double logdet = 2.0 * llt.matrixLLT().diagonal().real().array().log().sum();
  const double m = static_cast<double>(y.size());
  return 0.5 * quad.real() + 0.5 * logdet - m * std::log(2.0) + m * kLog2Pi;
}

double nll(const CVector& u, const CVector& y, const AugmentedKernel& prior_g, const AugmentedKernel& prior_t,
           double sigma2) {
  if (!(sigma2 > 0.0)) throw InvalidArgument("noise variance must be positive");
  return nll(y, frf_observation(u, prior_g, prior_t, sigma2));
}

NllSensitivity nll_sensitivity(const CVector& y, const AugmentedKernel& observation) {
  check_square_pair(observation, y.size(), "nll_sensitivity");
  const Index n = y.size();
  const RMatrix sigma = decompose(observation).matrix;
  const auto llt = factor_with_jitter(sigma, "nll");
  const RVector z = stack_real(y);
  const RVector alpha = llt.solve(z);
  NllSensitivity out;
  out.value = 0.5 * z.dot(alpha) + llt.matrixLLT().diagonal().array().log().sum() +
              static_cast<double>(n) * kLog2Pi;
  RMatrix w = llt.solve(RMatrix::Identity(2 * n, 2 * n));
  w.noalias() -= alpha * alpha.transpose();
  // d nll = 1/2 <W, dSigma>, pulled back through decompose.
  const auto wrr = w.topLeftCorner(n, n);
  const auto wri = w.topRightCorner(n, n);
  const auto wir = w.bottomLeftCorner(n, n);
  const auto wii = w.bottomRightCorner(n, n);
  const Complex j(0.0, 1.0);
  out.cov = 0.25 * ((wrr + wii).cast<Complex>() - j * (wir - wri).cast<Complex>());
  out.rel = 0.25 * ((wrr - wii).cast<Complex>() - j * (wir + wri).cast<Complex>());
  return out;
}

NllValue nll_with_gradient(const CVector& y, const AugmentedKernel& observation,
                           std::span<const AugmentedKernel> derivatives) {
  const auto s = nll_sensitivity(y, observation);
  NllValue out;
  out.value = s.value;
  out.gradient.resize(static_cast<Index>(derivatives.size()));
  for (std::size_t p = 0; p < derivatives.size(); ++p) {
    const auto& d = derivatives[p];
    check_square_pair(d, y.size(), "nll_with_gradient");
    out.gradient(static_cast<Index>(p)) =
        (s.cov.array() * d.covariance.array()).real().sum() + (s.rel.array() * d.relation.array()).real().sum();
  }
  return out;
}

}  // namespace frflab::cgauss
