#include "frflab/harness.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "frflab/classic.hpp"
#include "frflab/error.hpp"
#include "frflab/localwin.hpp"
#include "text.hpp"

namespace frflab::harness {
namespace {

using text::format_double;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct MethodName {
  MethodId id;
  std::string_view name;
};

constexpr std::array<MethodName, 12> kMethods{{{MethodId::Lpm2, "LPM(2)"},
                                               {MethodId::LpmMdl, "LPM(MDL)"},
                                               {MethodId::Lrm2, "LRM(2)"},
                                               {MethodId::LrmMdl, "LRM(MDL)"},
                                               {MethodId::IlrmMdl, "ILRM(MDL)"},
                                               {MethodId::LrpmDi, "LRPM(DI)"},
                                               {MethodId::LgprDp, "LGPR(DP)"},
                                               {MethodId::LgprDc, "LGPR(DC)"},
                                               {MethodId::LgprDcpR1, "LGPR(DCpR1)"},
                                               {MethodId::LgprDppR1, "LGPR(DPpR1)"},
                                               {MethodId::LgprR1, "LGPR(R1)"},
                                               {MethodId::LgprDi, "LGPR(DI)"}}};

std::string canonical(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '(' || c == ')' || c == '-' || c == '_' || c == ' ') continue;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

std::string file_stem(std::string_view method) {
  std::string out;
  for (char c : method) {
    if (c == '(') {
      out += '-';
    } else if (c != ')') {
      out += c;
    }
  }
  return out;
}

nlohmann::json number(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

double number_from(const nlohmann::json& j) {
  if (j.is_string()) return text::parse_double(j.get<std::string>());
  if (j.is_null()) return std::numeric_limits<double>::infinity();
  return j.get<double>();
}

template <typename Fit>
void fill_classic(BinEstimate& b, const Fit& fit) {
  b.g_hat = fit.g_hat;
  b.t_hat = fit.t_hat;
  b.sigma2_hat = fit.sigma2;
  b.loe = fit.loe;
  b.detail = "na=" + std::to_string(fit.orders.n_a) + ";nb=" + std::to_string(fit.orders.n_b) +
             ";ni=" + std::to_string(fit.orders.n_i);
}

FrfEstimate classic_estimate(MethodId method, const spectra::SpectraRecord& record, int half_width,
                             std::span<const std::size_t> bins) {
  FrfEstimate est;
  est.method = std::string(method_name(method));
  for (const auto k : bins) {
    BinEstimate b;
    b.k = k;
    b.omega = k < record.bin_count() ? record.omega[k] : kNaN;
    try {
      const auto w = extract_window(record, k, half_width);
      const double alpha = default_scaling(w.resolution);
      switch (method) {
        case MethodId::Lpm2: fill_classic(b, classic::lpm_fit(w, 2, 2, alpha)); break;
        case MethodId::LpmMdl:
          fill_classic(b, classic::mdl_select(w, classic::default_degree_grid(), classic::ModelFamily::Polynomial,
                                              alpha).fit);
          break;
        case MethodId::Lrm2: fill_classic(b, classic::lrm_fit(w, classic::Orders{2, 2, 2}, alpha)); break;
        case MethodId::LrmMdl:
          fill_classic(b, classic::mdl_select(w, classic::default_degree_grid(), classic::ModelFamily::Rational,
                                              alpha).fit);
          break;
        case MethodId::IlrmMdl: {
          const auto start =
              classic::mdl_select(w, classic::default_degree_grid(), classic::ModelFamily::Rational, alpha).fit;
          const auto fit = classic::ilrm_fit(w, start);
          fill_classic(b, fit);
          b.start_loe = start.loe;
          b.detail += ";iterations=" + std::to_string(fit.diagnostics.iterations);
          break;
        }
        default: throw InvalidArgument("not a classic method");
      }
    } catch (const std::exception& e) {
      b.ok = false;
      b.detail = e.what();
      b.g_hat = b.t_hat = Complex(kNaN, kNaN);
      b.sigma2_hat = kNaN;
    }
    est.bins.push_back(std::move(b));
  }
  return est;
}

struct BinOutcome {
  std::size_t k = 0;
  double omega = 0.0;
  double err2 = 0.0;
  double sigma2_hat = 0.0;
  double sigma2_true = 0.0;
  bool ok = false;
};

struct Cell {
  bool ok = false;
  std::string error;
  double mse = kNaN;
  std::size_t failed_bins = 0;
  std::size_t ilrm_violations = 0;
  std::vector<BinOutcome> bins;
};

Cell run_cell(const RunConfig& config, std::size_t s, std::size_t r, MethodId method) {
  Cell cell;
  try {
    const auto record = replicate_record(config, s, r);
    const auto band = evaluation_band(record, config.band_max_omega);
    auto eb = config.eb;
    eb.seed = config.seed;
    const auto est = estimate(method, record, config.scenarios[s].half_width, band, eb);
    cell.failed_bins = est.failures();
    for (const auto& b : est.bins) {
      BinOutcome o;
      o.k = b.k;
      o.omega = b.omega;
      o.ok = b.ok;
      o.sigma2_true = (*record.sigma2_true)[b.k];
      if (b.ok) {
        o.err2 = std::norm(b.g_hat - (*record.g_true)[b.k]);
        o.sigma2_hat = b.sigma2_hat;
      }
      if (b.loe && b.start_loe && *b.loe > *b.start_loe + 1e-12) ++cell.ilrm_violations;
      cell.bins.push_back(o);
    }
    cell.mse = mse_db(est, record, band);
    cell.ok = true;
  } catch (const std::exception& e) {
    cell.error = e.what();
  }
  return cell;
}

MethodSummary summarize(const RunConfig& config, std::size_t s, MethodId method, std::span<const Cell> cells) {
  MethodSummary row;
  row.scenario = config.scenarios[s].name;
  row.method = std::string(method_name(method));
  std::string first_error;
  for (const auto& c : cells) {
    row.failed_bins += c.failed_bins;
    row.ilrm_violations += c.ilrm_violations;
    if (!c.ok) {
      ++row.failed_replicates;
      if (first_error.empty()) first_error = c.error;
      continue;
    }
    row.mse_db_per_replicate.push_back(c.mse);
  }
  const auto& v = row.mse_db_per_replicate;
  row.replicates = v.size();
  if (v.empty()) {
    row.mean_mse_db = row.std_mse_db = row.min_mse_db = row.max_mse_db = kNaN;
    row.status = "failed: " + first_error;
  } else {
    double sum = 0.0;
    for (double x : v) sum += x;
    row.mean_mse_db = sum / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - row.mean_mse_db) * (x - row.mean_mse_db);
    row.std_mse_db = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    row.min_mse_db = *std::min_element(v.begin(), v.end());
    row.max_mse_db = *std::max_element(v.begin(), v.end());
    if (row.failed_replicates > 0) {
      row.status = "partial: " + std::to_string(row.failed_replicates) + " replicate(s) failed: " + first_error;
    }
  }

  std::vector<std::size_t> ks;
  for (const auto& c : cells) {
    for (const auto& b : c.bins) ks.push_back(b.k);
  }
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  for (const auto k : ks) {
    BinSeries series;
    series.k = k;
    std::size_t n = 0;
    std::size_t n_true = 0;
    double err2 = 0.0, err = 0.0, s2 = 0.0, s2_true = 0.0;
    for (const auto& c : cells) {
      for (const auto& b : c.bins) {
        if (b.k != k) continue;
        series.omega = b.omega;
        s2_true += b.sigma2_true;
        ++n_true;
        if (!b.ok) {
          ++series.failed;
          continue;
        }
        err2 += b.err2;
        err += std::sqrt(b.err2);
        s2 += b.sigma2_hat;
        ++n;
      }
    }
    const double dn = static_cast<double>(n);
    series.residual_rms = n > 0 ? std::sqrt(err2 / dn) : kNaN;
    series.residual_mean = n > 0 ? err / dn : kNaN;
    series.sigma2_hat_mean = n > 0 ? s2 / dn : kNaN;
    series.sigma2_true_mean = n_true > 0 ? s2_true / static_cast<double>(n_true) : kNaN;
    row.bins.push_back(series);
  }
  return row;
}

void check_output_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory '" + dir.string() + "': " + ec.message());
  const auto probe = dir / ".write-probe";
  {
    std::ofstream out(probe);
    if (!out || !(out << "probe")) throw std::runtime_error("output directory '" + dir.string() + "' is not writable");
  }
  std::filesystem::remove(probe, ec);
}

}  // namespace

std::string_view method_name(MethodId id) {
  for (const auto& m : kMethods) {
    if (m.id == id) return m.name;
  }
  return "?";
}

MethodId parse_method(std::string_view name) {
  const auto key = canonical(name);
  for (const auto& m : kMethods) {
    if (canonical(m.name) == key) return m.id;
  }
  throw InvalidArgument("unknown method '" + std::string(name) + "'");
}

std::vector<MethodId> default_methods() {
  return {MethodId::Lpm2,   MethodId::LpmMdl, MethodId::Lrm2,      MethodId::LrmMdl,   MethodId::IlrmMdl,
          MethodId::LrpmDi, MethodId::LgprDp, MethodId::LgprDc,    MethodId::LgprDcpR1, MethodId::LgprDppR1};
}

void RunConfig::validate() const {
  if (scenarios.empty()) throw InvalidArgument("run config needs at least one scenario");
  if (methods.empty()) throw InvalidArgument("run config needs at least one method");
  if (replicates < 1) throw InvalidArgument("replicate count must be at least 1");
  if (!(band_max_omega > 0.0)) throw InvalidArgument("evaluation band must be non-empty");
  for (const auto& s : scenarios) {
    s.experiment.validate();
    if (s.half_width < 0) throw InvalidArgument("scenario '" + s.name + "': negative half-width");
    const double resolution = 2.0 * kPi / (static_cast<double>(s.experiment.sample_count) * s.experiment.sampling_interval);
    const auto excited = static_cast<std::size_t>(std::floor(s.experiment.max_excited_omega() / resolution + 1e-9));
    if (static_cast<std::size_t>(2 * s.half_width + 1) >= excited) {
      throw InvalidArgument("scenario '" + s.name + "': window 2l+1 must be smaller than the excited-bin count");
    }
  }
}

spectra::TestSystem RunConfig::system(double sampling_interval) const {
  if (modes) return spectra::TestSystem::from_modes(*modes, sampling_interval);
  return spectra::TestSystem::lightly_damped(sampling_interval);
}

void to_json(nlohmann::json& doc, const RunConfig& config) {
  auto scenarios = nlohmann::json::array();
  for (const auto& s : config.scenarios) {
    nlohmann::json j;
    spectra::to_json(j, s.experiment);
    j["name"] = s.name;
    j["half_width"] = s.half_width;
    scenarios.push_back(std::move(j));
  }
  auto methods = nlohmann::json::array();
  for (auto m : config.methods) methods.push_back(std::string(method_name(m)));
  doc = {{"scenarios", scenarios},
         {"methods", methods},
         {"replicates", config.replicates},
         {"seed", config.seed},
         {"output_dir", config.output_dir},
         {"band_max_omega", config.band_max_omega},
         {"eb",
          {{"starts", config.eb.starts},
           {"gradient", config.eb.gradient == lgpr::GradientMode::Analytic ? "analytic" : "central"},
           {"max_iter", config.eb.max_iter},
           {"gtol", config.eb.gtol},
           {"ftol", config.eb.ftol},
           {"warm_start", config.eb.warm_start}}}};
  if (config.modes) {
    auto modes = nlohmann::json::array();
    for (const auto& m : *config.modes) {
      modes.push_back({{"natural_frequency", m.natural_frequency}, {"damping_ratio", m.damping_ratio}, {"gain", m.gain}});
    }
    doc["modes"] = modes;
  }
}

void from_json(const nlohmann::json& doc, RunConfig& config) {
  if (!doc.is_object()) throw InvalidArgument("run config must be a JSON object");
  config = RunConfig{};
  if (doc.contains("scenarios")) {
    config.scenarios.clear();
    for (const auto& j : doc["scenarios"]) {
      Scenario s;
      spectra::from_json(j, s.experiment);
      s.half_width = j.value("half_width", j.value("ell", s.half_width));
      s.name = j.value("name", "N" + std::to_string(s.experiment.sample_count) + "_l" + std::to_string(s.half_width));
      config.scenarios.push_back(std::move(s));
    }
  }
  if (doc.contains("methods")) {
    config.methods.clear();
    for (const auto& m : doc["methods"]) config.methods.push_back(parse_method(m.get<std::string>()));
  }
  config.replicates = doc.value("replicates", config.replicates);
  config.seed = doc.value("seed", config.seed);
  config.output_dir = doc.value("output_dir", config.output_dir);
  if (doc.contains("band_max_omega")) config.band_max_omega = number_from(doc["band_max_omega"]);
  if (doc.contains("eb")) {
    const auto& e = doc["eb"];
    config.eb.starts = e.value("starts", config.eb.starts);
    config.eb.max_iter = e.value("max_iter", config.eb.max_iter);
    config.eb.gtol = e.value("gtol", config.eb.gtol);
    config.eb.ftol = e.value("ftol", config.eb.ftol);
    config.eb.warm_start = e.value("warm_start", config.eb.warm_start);
    const auto g = e.value("gradient", std::string("analytic"));
    if (g == "analytic") {
      config.eb.gradient = lgpr::GradientMode::Analytic;
    } else if (g == "central") {
      config.eb.gradient = lgpr::GradientMode::CentralDifference;
    } else {
      throw InvalidArgument("eb.gradient must be 'analytic' or 'central'");
    }
  }
  if (doc.contains("modes")) {
    std::vector<spectra::Mode> modes;
    for (const auto& m : doc["modes"]) {
      modes.push_back({m.at("natural_frequency").get<double>(), m.at("damping_ratio").get<double>(),
                       m.value("gain", 1.0)});
    }
    config.modes = std::move(modes);
  }
}

std::vector<std::size_t> evaluation_band(const spectra::SpectraRecord& record, double omega_max) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < record.bin_count(); ++k) {
    if (record.excited[k] && record.omega[k] >= 0.0 && record.omega[k] < omega_max) out.push_back(k);
  }
  return out;
}

double mse_db(const FrfEstimate& estimate, const spectra::SpectraRecord& record, std::span<const std::size_t> band) {
  if (!record.g_true) throw InvalidArgument("MSE needs the true FRF");
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto k : band) {
    const auto* b = estimate.find(k);
    if (b == nullptr || !b->ok || k >= record.bin_count()) continue;
    sum += std::norm(b->g_hat - (*record.g_true)[k]);
    ++n;
  }
  if (n == 0) throw InvalidArgument("no successfully estimated bin in the evaluation band");
  if (sum == 0.0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(sum / static_cast<double>(n));
}

FrfEstimate estimate(MethodId method, const spectra::SpectraRecord& record, int half_width,
                     std::span<const std::size_t> bins, const lgpr::EbOptions& eb) {
  std::vector<std::size_t> all;
  if (bins.empty()) {
    all = lgpr::excited_bins(record);
    bins = all;
  }
  using kernels::Family;
  lgpr::LgprOptions lo;
  lo.eb = eb;
  switch (method) {
    case MethodId::LrpmDi: {
      lgpr::LrpmOptions o;
      o.eb = eb;
      return lgpr::lrpm_estimate(record, half_width, o, bins);
    }
    case MethodId::LgprDp: return lgpr::lgpr_estimate(record, half_width, kernels::KernelSpec::of(Family::DP), lo, bins);
    case MethodId::LgprDc: return lgpr::lgpr_estimate(record, half_width, kernels::KernelSpec::of(Family::DC), lo, bins);
    case MethodId::LgprDcpR1:
      return lgpr::lgpr_estimate(record, half_width, kernels::KernelSpec::of(Family::DCpR1), lo, bins);
    case MethodId::LgprDppR1:
      return lgpr::lgpr_estimate(record, half_width, kernels::KernelSpec::of(Family::DPpR1), lo, bins);
    case MethodId::LgprR1: return lgpr::lgpr_estimate(record, half_width, kernels::KernelSpec::of(Family::R1), lo, bins);
    case MethodId::LgprDi: return lgpr::lgpr_estimate(record, half_width, kernels::KernelSpec::of(Family::DI), lo, bins);
    default: return classic_estimate(method, record, half_width, bins);
  }
}

spectra::SpectraRecord replicate_record(const RunConfig& config, std::size_t scenario, std::size_t replicate) {
  auto experiment = config.scenarios.at(scenario).experiment;
  experiment.rng_seed = spectra::derive_seed(config.seed, scenario, replicate);
  return spectra::simulate(config.system(experiment.sampling_interval), experiment);
}

const MethodSummary* ResultTable::find(std::string_view scenario, MethodId method) const {
  for (const auto& r : rows) {
    if (r.scenario == scenario && r.method == method_name(method)) return &r;
  }
  return nullptr;
}

std::size_t ResultTable::failures() const {
  std::size_t n = 0;
  for (const auto& r : rows) n += r.failed_replicates + r.failed_bins;
  return n;
}

std::size_t ResultTable::ilrm_violations() const {
  std::size_t n = 0;
  for (const auto& r : rows) n += r.ilrm_violations;
  return n;
}

unsigned worker_count() {
  if (const char* env = std::getenv("FRF_LAB_THREADS"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

ResultTable run(const RunConfig& config) {
  config.validate();
  const std::filesystem::path out_dir = config.output_dir;
  if (!config.output_dir.empty()) check_output_dir(out_dir);

  const std::size_t ns = config.scenarios.size();
  const std::size_t nm = config.methods.size();
  const std::size_t nr = config.replicates;
  const std::size_t total = ns * nm * nr;
  std::vector<Cell> cells(total);
  auto slot = [&](std::size_t s, std::size_t m, std::size_t r) { return (s * nm + m) * nr + r; };

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < total; i = next++) {
      const std::size_t r = i % nr;
      const std::size_t m = (i / nr) % nm;
      const std::size_t s = i / (nr * nm);
      cells[slot(s, m, r)] = run_cell(config, s, r, config.methods[m]);
    }
  };
  const auto workers = static_cast<std::size_t>(std::min<std::size_t>(worker_count(), total));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }

  ResultTable table;
  for (std::size_t s = 0; s < ns; ++s) {
    for (std::size_t m = 0; m < nm; ++m) {
      table.rows.push_back(summarize(config, s, config.methods[m], std::span(cells).subspan(slot(s, m, 0), nr)));
    }
  }

  if (!config.output_dir.empty()) {
    std::ostringstream csv;
    write_summary_csv(table, csv);
    write_atomic(out_dir / "summary.csv", csv.str());
    write_atomic(out_dir / "summary.json", summary_json(table).dump(2) + "\n");
    std::filesystem::create_directories(out_dir / "bins");
    for (const auto& row : table.rows) {
      std::ostringstream b;
      write_bins_csv(row, b);
      write_atomic(out_dir / "bins" / (row.scenario + "__" + file_stem(row.method) + ".csv"), b.str());
    }
  }
  return table;
}

std::vector<std::filesystem::path> generate(const RunConfig& config) {
  config.validate();
  if (config.output_dir.empty()) throw InvalidArgument("generate needs an output directory");
  const std::filesystem::path out_dir = config.output_dir;
  check_output_dir(out_dir);
  std::vector<std::filesystem::path> paths;
  for (std::size_t s = 0; s < config.scenarios.size(); ++s) {
    const auto dir = out_dir / config.scenarios[s].name;
    std::filesystem::create_directories(dir);
    for (std::size_t r = 0; r < config.replicates; ++r) {
      std::ostringstream csv;
      spectra::write_csv(replicate_record(config, s, r), csv);
      const auto path = dir / ("rep" + std::to_string(r) + ".csv");
      write_atomic(path, csv.str());
      paths.push_back(path);
    }
  }
  nlohmann::json doc;
  to_json(doc, config);
  write_atomic(out_dir / "config.json", doc.dump(2) + "\n");
  return paths;
}

void write_summary_csv(const ResultTable& table, std::ostream& out) {
  out << "scenario,method,replicates,mean_mse_db,std_mse_db,min_mse_db,max_mse_db,failed_replicates,failed_bins,"
         "ilrm_violations,status\n";
  for (const auto& r : table.rows) {
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    out << r.scenario << ',' << r.method << ',' << r.replicates << ',' << format_double(r.mean_mse_db) << ','
        << format_double(r.std_mse_db) << ',' << format_double(r.min_mse_db) << ',' << format_double(r.max_mse_db)
        << ',' << r.failed_replicates << ',' << r.failed_bins << ',' << r.ilrm_violations << ',' << status << '\n';
  }
}

nlohmann::json summary_json(const ResultTable& table) {
  auto rows = nlohmann::json::array();
  for (const auto& r : table.rows) {
    auto per = nlohmann::json::array();
    for (double v : r.mse_db_per_replicate) per.push_back(number(v));
    rows.push_back({{"scenario", r.scenario},
                    {"method", r.method},
                    {"replicates", r.replicates},
                    {"mean_mse_db", number(r.mean_mse_db)},
                    {"std_mse_db", number(r.std_mse_db)},
                    {"min_mse_db", number(r.min_mse_db)},
                    {"max_mse_db", number(r.max_mse_db)},
                    {"mse_db", per},
                    {"failed_replicates", r.failed_replicates},
                    {"failed_bins", r.failed_bins},
                    {"ilrm_violations", r.ilrm_violations},
                    {"status", r.status}});
  }
  return {{"rows", rows}};
}

void write_bins_csv(const MethodSummary& row, std::ostream& out) {
  out << "k,omega,residual_rms,residual_mean,sigma2_hat_mean,sigma2_true_mean,failed\n";
  for (const auto& b : row.bins) {
    out << b.k << ',' << format_double(b.omega) << ',' << format_double(b.residual_rms) << ','
        << format_double(b.residual_mean) << ',' << format_double(b.sigma2_hat_mean) << ','
        << format_double(b.sigma2_true_mean) << ',' << b.failed << '\n';
  }
}

void write_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
    out << contents;
    out.flush();
    if (!out) throw std::runtime_error("failed writing '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace frflab::harness
