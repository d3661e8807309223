#include "frflab/spectra.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <string>

#include <nlohmann/json.hpp>
#include <unsupported/Eigen/FFT>

#include "frflab/error.hpp"
#include "text.hpp"

namespace frflab::spectra {

void ExperimentConfig::validate() const {
  if (sample_count == 0) throw InvalidArgument("sample_count must be positive");
  if (!(sampling_interval > 0.0)) throw InvalidArgument("sampling_interval must be > 0");
  if (multisine_period < sample_count) {
    throw InvalidArgument("sample_count must not exceed multisine_period");
  }
  if (!(excited_fraction > 0.0 && excited_fraction <= 1.0)) {
    throw InvalidArgument("excited_fraction must lie in (0, 1]");
  }
  if (warmup_periods == 0) throw InvalidArgument("warmup_periods must be positive");
  if (std::isnan(snr_db)) throw InvalidArgument("snr_db is NaN");
  if (excited_period_bins() == 0) throw InvalidArgument("excited_fraction leaves no excited bins");
}

std::size_t ExperimentConfig::excited_period_bins() const {
  return static_cast<std::size_t>(std::floor(excited_fraction * static_cast<double>(multisine_period / 2)));
}

double ExperimentConfig::max_excited_omega() const { return excited_fraction * kPi / sampling_interval; }

Complex Biquad::response(Complex q) const {
  return (b[0] + q * (b[1] + q * b[2])) / (a[0] + q * (a[1] + q * a[2]));
}

bool Biquad::is_stable() const {
  // Jury conditions for z^2 + a1 z + a2.
  return std::abs(a[2]) < 1.0 && std::abs(a[1]) < 1.0 + a[2];
}

TestSystem TestSystem::from_modes(std::vector<Mode> modes, double sampling_interval, double feedthrough) {
  if (!(sampling_interval > 0.0)) throw InvalidArgument("sampling_interval must be > 0");
  TestSystem sys;
  sys.sampling_interval_ = sampling_interval;
  sys.feedthrough_ = feedthrough;
  const double nyquist = kPi / sampling_interval;
  for (const auto& m : modes) {
    if (!(m.natural_frequency > 0.0 && m.natural_frequency < nyquist)) {
      throw InvalidArgument("mode natural frequency must lie in (0, pi/T_s)");
    }
    const double wn = m.natural_frequency;
    const double c = wn / std::tan(wn * sampling_interval / 2.0);
    const double a0 = c * c + 2.0 * m.damping_ratio * wn * c + wn * wn;
    Biquad s;
    const double num = m.gain * wn * wn / a0;
    s.b = {num, 2.0 * num, num};
    s.a = {1.0, 2.0 * (wn * wn - c * c) / a0, (c * c - 2.0 * m.damping_ratio * wn * c + wn * wn) / a0};
    sys.sections_.push_back(s);
  }
  sys.modes_ = std::move(modes);
  return sys;
}

TestSystem TestSystem::lightly_damped(double sampling_interval) {
  return from_modes({{1.5, 0.005, 1.0}, {3.0, 0.003, 1.0}, {5.0, 0.008, 1.0}}, sampling_interval);
}

TestSystem TestSystem::unit_gain(double sampling_interval) { return from_modes({}, sampling_interval, 1.0); }

Complex TestSystem::response(double omega) const {
  const Complex q = std::polar(1.0, -omega * sampling_interval_);
  Complex g = feedthrough_;
  for (const auto& s : sections_) g += s.response(q);
  return g;
}

std::vector<double> TestSystem::filter(std::span<const double> x) const {
  std::vector<double> y(x.size());
  for (std::size_t n = 0; n < x.size(); ++n) y[n] = feedthrough_ * x[n];
  for (const auto& s : sections_) {
    double z1 = 0.0, z2 = 0.0;
    for (std::size_t n = 0; n < x.size(); ++n) {
      const double out = s.b[0] * x[n] + z1;
      z1 = s.b[1] * x[n] - s.a[1] * out + z2;
      z2 = s.b[2] * x[n] - s.a[2] * out;
      y[n] += out;
    }
  }
  return y;
}

bool TestSystem::is_stable() const {
  return std::all_of(sections_.begin(), sections_.end(), [](const Biquad& s) { return s.is_stable(); });
}

bool TestSystem::is_lightly_damped() const {
  return std::any_of(modes_.begin(), modes_.end(), [](const Mode& m) { return m.damping_ratio <= 0.01; });
}

bool TestSystem::modes_within(double omega_max) const {
  return std::all_of(modes_.begin(), modes_.end(),
                     [&](const Mode& m) { return m.natural_frequency >= 0.0 && m.natural_frequency < omega_max; });
}

double TestSystem::slowest_time_constant() const {
  double tau = 0.0;
  for (const auto& m : modes_) {
    if (m.damping_ratio > 0.0) tau = std::max(tau, 1.0 / (m.damping_ratio * m.natural_frequency));
  }
  return tau;
}

double SpectraRecord::resolution() const {
  if (omega.size() < 2) throw InvalidArgument("record needs at least two bins");
  return omega[1] - omega[0];
}

void SpectraRecord::validate() const {
  const auto n = omega.size();
  if (n < 2) throw InvalidArgument("record needs at least two bins");
  if (input.size() != n || output.size() != n || excited.size() != n) {
    throw InvalidArgument("record columns have different lengths");
  }
  if (g_true && g_true->size() != n) throw InvalidArgument("ground-truth FRF length mismatch");
  if (sigma2_true && sigma2_true->size() != n) throw InvalidArgument("ground-truth variance length mismatch");
  const double d = resolution();
  if (!(d > 0.0)) throw InvalidArgument("frequency grid must be increasing");
  for (std::size_t k = 0; k < n; ++k) {
    if (std::abs(omega[k] - omega[0] - static_cast<double>(k) * d) > 1e-9 * std::max(1.0, std::abs(omega[k]))) {
      throw InvalidArgument("frequency grid is not uniform");
    }
  }
}

std::vector<Complex> dft(std::span<const double> x) {
  if (x.empty()) throw InvalidArgument("dft of an empty sequence");
  if (x.size() == 1) return {Complex(x[0], 0.0)};  // kissfft does not handle length one
  Eigen::FFT<double> fft;
  std::vector<double> in(x.begin(), x.end());
  std::vector<Complex> out;
  fft.fwd(out, in);
  const double scale = 1.0 / std::sqrt(static_cast<double>(x.size()));
  for (auto& v : out) v *= scale;
  return out;
}

std::vector<double> idft_real(std::span<const Complex> spectrum) {
  if (spectrum.empty()) throw InvalidArgument("idft of an empty sequence");
  if (spectrum.size() == 1) return {spectrum[0].real()};
  Eigen::FFT<double> fft;
  std::vector<Complex> in(spectrum.begin(), spectrum.end());
  std::vector<Complex> out;
  fft.inv(out, in);
  const double scale = std::sqrt(static_cast<double>(spectrum.size()));
  std::vector<double> x(out.size());
  for (std::size_t n = 0; n < out.size(); ++n) x[n] = out[n].real() * scale;
  return x;
}

std::vector<double> multisine(const ExperimentConfig& config) {
  config.validate();
  const std::size_t p = config.multisine_period;
  const std::size_t excited = config.excited_period_bins();
  std::mt19937_64 rng(config.rng_seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
  std::vector<Complex> spectrum(p, Complex(0.0, 0.0));
  for (std::size_t k = 1; k <= excited; ++k) {
    const double phi = phase(rng);
    if (2 * k == p) {
      // Nyquist line of an even period must be real.
      spectrum[k] = Complex(std::cos(phi) >= 0.0 ? 1.0 : -1.0, 0.0);
    } else {
      spectrum[k] = std::polar(1.0, phi);
      spectrum[p - k] = std::conj(spectrum[k]);
    }
  }
  auto u = idft_real(spectrum);
  const double ms = std::inner_product(u.begin(), u.end(), u.begin(), 0.0) / static_cast<double>(p);
  const double scale = 1.0 / std::sqrt(ms);
  for (auto& v : u) v *= scale;
  return u;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ (b * 0xd1b54a32d192ed03ULL));
}

namespace {

double population_variance(std::span<const double> x) {
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double acc = 0.0;
  for (double v : x) acc += (v - mean) * (v - mean);
  return acc / static_cast<double>(x.size());
}

}  // namespace

SpectraRecord simulate(const TestSystem& system, const ExperimentConfig& config, const TestSystem* noise_filter) {
  config.validate();
  if (!system.is_stable()) throw NumericalError("test system is unstable after discretization");
  if (noise_filter && !noise_filter->is_stable()) throw NumericalError("noise filter is unstable");

  const std::size_t n = config.sample_count;
  const std::size_t p = config.multisine_period;
  const auto period = multisine(config);
  const std::size_t total = config.warmup_periods * p + n;
  std::vector<double> u(total);
  for (std::size_t i = 0; i < total; ++i) u[i] = period[i % p];
  const auto y_full = system.filter(u);

  std::vector<double> u_kept(u.end() - static_cast<std::ptrdiff_t>(n), u.end());
  std::vector<double> y_kept(y_full.end() - static_cast<std::ptrdiff_t>(n), y_full.end());

  const std::size_t bins = n / 2 + 1;
  const double resolution = 2.0 * kPi / (static_cast<double>(n) * config.sampling_interval);
  std::vector<double> sigma2(bins, 0.0);

  if (std::isfinite(config.snr_db)) {
    const double var_y = population_variance(y_kept);
    const double var_v = var_y / std::pow(10.0, config.snr_db / 10.0);
    std::mt19937_64 rng(derive_seed(config.rng_seed, 0x6e6f697365ULL));
    std::normal_distribution<double> gauss(0.0, 1.0);
    if (noise_filter == nullptr) {
      const double sd = std::sqrt(var_v);
      for (auto& y : y_kept) y += sd * gauss(rng);
      std::fill(sigma2.begin(), sigma2.end(), var_v);
    } else {
      std::vector<double> e(total);
      for (auto& v : e) v = gauss(rng);
      auto v = noise_filter->filter(e);
      double mean_h2 = 0.0;
      for (std::size_t k = 0; k < n; ++k) mean_h2 += std::norm(noise_filter->response(static_cast<double>(k) * resolution));
      mean_h2 /= static_cast<double>(n);
      const double var_e = var_v / mean_h2;
      const double sd = std::sqrt(var_e);
      for (std::size_t i = 0; i < n; ++i) y_kept[i] += sd * v[total - n + i];
      for (std::size_t k = 0; k < bins; ++k) {
        sigma2[k] = var_e * std::norm(noise_filter->response(static_cast<double>(k) * resolution));
      }
    }
  }

  const auto u_spec = dft(u_kept);
  const auto y_spec = dft(y_kept);

  SpectraRecord rec;
  rec.omega.resize(bins);
  rec.input.assign(u_spec.begin(), u_spec.begin() + static_cast<std::ptrdiff_t>(bins));
  rec.output.assign(y_spec.begin(), y_spec.begin() + static_cast<std::ptrdiff_t>(bins));
  rec.excited.assign(bins, false);
  std::vector<Complex> g(bins);
  const double max_omega = config.max_excited_omega() * (1.0 + 1e-12);
  for (std::size_t k = 0; k < bins; ++k) {
    rec.omega[k] = static_cast<double>(k) * resolution;
    rec.excited[k] = k > 0 && rec.omega[k] <= max_omega;
    g[k] = system.response(rec.omega[k]);
  }
  rec.g_true = std::move(g);
  rec.sigma2_true = std::move(sigma2);
  return rec;
}

void write_csv(const SpectraRecord& record, std::ostream& out) {
  using text::format_double;
  const bool truth = record.has_ground_truth();
  out << "k,omega,re_U,im_U,re_Y,im_Y";
  if (truth) out << ",re_Gtrue,im_Gtrue,sigma2_true";
  out << ",excited\n";
  for (std::size_t k = 0; k < record.bin_count(); ++k) {
    out << k << ',' << format_double(record.omega[k]) << ',' << format_double(record.input[k].real()) << ','
        << format_double(record.input[k].imag()) << ',' << format_double(record.output[k].real()) << ','
        << format_double(record.output[k].imag());
    if (truth) {
      out << ',' << format_double((*record.g_true)[k].real()) << ',' << format_double((*record.g_true)[k].imag())
          << ',' << format_double((*record.sigma2_true)[k]);
    }
    out << ',' << (record.excited[k] ? 1 : 0) << '\n';
  }
}

SpectraRecord read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("empty spectra CSV");
  std::map<std::string, std::size_t, std::less<>> col;
  {
    auto names = text::split_csv(line);
    for (std::size_t i = 0; i < names.size(); ++i) col.emplace(std::string(names[i]), i);
  }
  for (const char* required : {"k", "omega", "re_U", "im_U", "re_Y", "im_Y"}) {
    if (!col.contains(required)) throw InvalidArgument(std::string("spectra CSV lacks column ") + required);
  }
  const bool has_g = col.contains("re_Gtrue") && col.contains("im_Gtrue");
  const bool has_s = col.contains("sigma2_true");
  const bool has_x = col.contains("excited");

  SpectraRecord rec;
  std::vector<Complex> g;
  std::vector<double> s2;
  std::size_t expected_k = 0;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    auto f = text::split_csv(line);
    if (f.size() < col.size()) throw InvalidArgument("short row in spectra CSV");
    auto get = [&](const char* name) { return text::parse_double(f[col.find(name)->second]); };
    if (static_cast<std::size_t>(get("k")) != expected_k) throw InvalidArgument("spectra CSV bins must be 0,1,2,...");
    ++expected_k;
    rec.omega.push_back(get("omega"));
    rec.input.emplace_back(get("re_U"), get("im_U"));
    rec.output.emplace_back(get("re_Y"), get("im_Y"));
    rec.excited.push_back(has_x ? get("excited") != 0.0 : expected_k > 1);
    if (has_g) g.emplace_back(get("re_Gtrue"), get("im_Gtrue"));
    if (has_s) s2.push_back(get("sigma2_true"));
  }
  if (has_g) rec.g_true = std::move(g);
  if (has_s) rec.sigma2_true = std::move(s2);
  rec.validate();
  return rec;
}

nlohmann::json to_json(const SpectraRecord& record) {
  nlohmann::json bins = nlohmann::json::array();
  const bool truth = record.has_ground_truth();
  for (std::size_t k = 0; k < record.bin_count(); ++k) {
    nlohmann::json b = {{"k", k},
                        {"omega", record.omega[k]},
                        {"re_U", record.input[k].real()},
                        {"im_U", record.input[k].imag()},
                        {"re_Y", record.output[k].real()},
                        {"im_Y", record.output[k].imag()},
                        {"excited", record.excited[k]}};
    if (truth) {
      b["re_Gtrue"] = (*record.g_true)[k].real();
      b["im_Gtrue"] = (*record.g_true)[k].imag();
      b["sigma2_true"] = (*record.sigma2_true)[k];
    }
    bins.push_back(std::move(b));
  }
  return {{"bins", std::move(bins)}};
}

SpectraRecord record_from_json(const nlohmann::json& doc) {
  const auto& bins = doc.at("bins");
  SpectraRecord rec;
  std::vector<Complex> g;
  std::vector<double> s2;
  bool has_g = !bins.empty() && bins.front().contains("re_Gtrue");
  bool has_s = !bins.empty() && bins.front().contains("sigma2_true");
  for (std::size_t k = 0; k < bins.size(); ++k) {
    const auto& b = bins[k];
    if (b.at("k").get<std::size_t>() != k) throw InvalidArgument("spectra JSON bins must be 0,1,2,...");
    rec.omega.push_back(b.at("omega").get<double>());
    rec.input.emplace_back(b.at("re_U").get<double>(), b.at("im_U").get<double>());
    rec.output.emplace_back(b.at("re_Y").get<double>(), b.at("im_Y").get<double>());
    rec.excited.push_back(b.contains("excited") ? b["excited"].get<bool>() : k > 0);
    if (has_g) g.emplace_back(b.at("re_Gtrue").get<double>(), b.at("im_Gtrue").get<double>());
    if (has_s) s2.push_back(b.at("sigma2_true").get<double>());
  }
  if (has_g) rec.g_true = std::move(g);
  if (has_s) rec.sigma2_true = std::move(s2);
  rec.validate();
  return rec;
}

namespace {

double snr_from_json(const nlohmann::json& v) {
  if (v.is_string()) return text::parse_double(v.get<std::string>());
  if (v.is_null()) return INFINITY;
  return v.get<double>();
}

}  // namespace

void to_json(nlohmann::json& doc, const ExperimentConfig& c) {
  doc = {{"sample_count", c.sample_count},
         {"sampling_interval", c.sampling_interval},
         {"multisine_period", c.multisine_period},
         {"excited_fraction", c.excited_fraction},
         {"warmup_periods", c.warmup_periods},
         {"rng_seed", c.rng_seed}};
  if (std::isfinite(c.snr_db)) {
    doc["snr_db"] = c.snr_db;
  } else {
    doc["snr_db"] = text::format_double(c.snr_db);
  }
}

void from_json(const nlohmann::json& doc, ExperimentConfig& c) {
  c.sample_count = doc.value("sample_count", c.sample_count);
  c.sampling_interval = doc.value("sampling_interval", c.sampling_interval);
  c.multisine_period = doc.value("multisine_period", c.multisine_period);
  c.excited_fraction = doc.value("excited_fraction", c.excited_fraction);
  c.warmup_periods = doc.value("warmup_periods", c.warmup_periods);
  c.rng_seed = doc.value("rng_seed", c.rng_seed);
  if (doc.contains("snr_db")) c.snr_db = snr_from_json(doc["snr_db"]);
}

}  // namespace frflab::spectra
