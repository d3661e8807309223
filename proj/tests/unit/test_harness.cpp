#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "frflab/error.hpp"
#include "frflab/harness.hpp"

using namespace frflab;
using namespace frflab::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("frflab_harness_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

spectra::SpectraRecord toy_record(std::size_t bins) {
  spectra::SpectraRecord r;
  for (std::size_t k = 0; k < bins; ++k) {
    r.omega.push_back(0.5 * static_cast<double>(k));
    r.input.push_back({1.0, 0.0});
    r.output.push_back({1.0, 0.0});
    r.excited.push_back(k > 0);
  }
  r.g_true = std::vector<Complex>(bins, Complex(2.0, -1.0));
  r.sigma2_true = std::vector<double>(bins, 0.0);
  return r;
}

FrfEstimate toy_estimate(const spectra::SpectraRecord& r, const std::vector<Complex>& errors) {
  FrfEstimate e;
  e.method = "toy";
  for (std::size_t i = 0; i < errors.size(); ++i) {
    BinEstimate b;
    b.k = i + 1;
    b.omega = r.omega[i + 1];
    b.g_hat = (*r.g_true)[i + 1] + errors[i];
    e.bins.push_back(b);
  }
  return e;
}

RunConfig small_config(std::vector<MethodId> methods) {
  RunConfig c;
  c.scenarios[0].experiment.sample_count = 1000;
  c.scenarios[0].experiment.multisine_period = 1200;
  c.scenarios[0].name = "small";
  c.methods = std::move(methods);
  c.replicates = 2;
  return c;
}

}  // namespace

TEST_CASE("mse in dB") {
  const auto r = toy_record(3);
  const std::vector<std::size_t> band{1, 2};
  CHECK(mse_db(toy_estimate(r, {0.0, 0.0}), r, band) == -std::numeric_limits<double>::infinity());
  CHECK(mse_db(toy_estimate(r, {1.0, Complex(0.0, 1.0)}), r, band) == doctest::Approx(0.0));
  CHECK(mse_db(toy_estimate(r, {1.0, 3.0}), r, band) == doctest::Approx(6.9897).epsilon(1e-5));
  CHECK(mse_db(toy_estimate(r, {1.0, 3.0}), r, band) == doctest::Approx(10.0 * std::log10(5.0)).epsilon(1e-14));
}

TEST_CASE("mse skips failed bins and needs ground truth") {
  auto r = toy_record(3);
  auto e = toy_estimate(r, {1.0, 3.0});
  e.bins[1].ok = false;
  e.bins[1].g_hat = Complex(std::numeric_limits<double>::quiet_NaN(), 0.0);
  const std::vector<std::size_t> band{1, 2};
  CHECK(mse_db(e, r, band) == doctest::Approx(0.0));
  e.bins[0].ok = false;
  CHECK_THROWS_AS(mse_db(e, r, band), InvalidArgument);
  r.g_true.reset();
  CHECK_THROWS_AS(mse_db(toy_estimate(toy_record(3), {1.0, 1.0}), r, band), InvalidArgument);
}

TEST_CASE("evaluation band") {
  spectra::ExperimentConfig c;
  const auto rec = spectra::simulate(spectra::TestSystem::lightly_damped(), c);
  const auto band = evaluation_band(rec);
  REQUIRE_FALSE(band.empty());
  for (auto k : band) {
    CHECK(rec.excited[k]);
    CHECK(rec.omega[k] < 2.0 * kPi);
  }
  CHECK(band.front() == 1);
  CHECK(rec.omega[band.back() + 1] >= 2.0 * kPi);
  CHECK(evaluation_band(rec, 1.0).size() < band.size());
}

TEST_CASE("method names") {
  CHECK(default_methods().size() == 10);
  for (auto m : default_methods()) CHECK(parse_method(method_name(m)) == m);
  CHECK(parse_method("LGPR-DPpR1") == MethodId::LgprDppR1);
  CHECK(parse_method("lgpr(dcpr1)") == MethodId::LgprDcpR1);
  CHECK(parse_method("lpm(2)") == MethodId::Lpm2);
  CHECK(parse_method("ILRM-MDL") == MethodId::IlrmMdl);
  CHECK(method_name(MethodId::LrpmDi) == "LRPM(DI)");
  CHECK_THROWS_AS(parse_method("LGPR(XYZ)"), InvalidArgument);
  CHECK_THROWS_AS(parse_method(""), InvalidArgument);
}

TEST_CASE("run config JSON") {
  auto c = small_config({MethodId::Lpm2, MethodId::LgprDppR1});
  c.seed = 99;
  c.eb.starts = 7;
  c.eb.gradient = lgpr::GradientMode::CentralDifference;
  c.modes = std::vector<spectra::Mode>{{2.0, 0.05, 1.5}};
  const nlohmann::json doc = c;
  const auto back = doc.get<RunConfig>();
  CHECK(back.seed == 99);
  CHECK(back.replicates == 2);
  CHECK(back.methods == c.methods);
  CHECK(back.eb.starts == 7);
  CHECK(back.eb.gradient == lgpr::GradientMode::CentralDifference);
  REQUIRE(back.modes.has_value());
  CHECK(back.modes->at(0).natural_frequency == 2.0);
  REQUIRE(back.scenarios.size() == 1);
  CHECK(back.scenarios[0].name == "small");
  CHECK(back.scenarios[0].experiment.sample_count == 1000);
  CHECK(back.scenarios[0].half_width == 5);

  const auto minimal = nlohmann::json::parse(R"({"scenarios": [{"sample_count": 10000, "multisine_period": 10240, "ell": 20}]})");
  const auto m = minimal.get<RunConfig>();
  CHECK(m.scenarios[0].half_width == 20);
  CHECK(m.methods.size() == 10);
  CHECK_THROWS_AS(nlohmann::json::parse(R"({"methods": ["nope"]})").get<RunConfig>(), InvalidArgument);
  CHECK_THROWS_AS(nlohmann::json::parse(R"({"eb": {"gradient": "magic"}})").get<RunConfig>(), InvalidArgument);
}

TEST_CASE("run config validation") {
  auto c = small_config({MethodId::Lpm2});
  CHECK_NOTHROW(c.validate());
  auto none = c;
  none.replicates = 0;
  CHECK_THROWS_AS(none.validate(), InvalidArgument);
  auto wide = c;
  wide.scenarios[0].half_width = 1000;
  CHECK_THROWS_AS(wide.validate(), InvalidArgument);
  auto empty = c;
  empty.methods.clear();
  CHECK_THROWS_AS(empty.validate(), InvalidArgument);
}

TEST_CASE("replicates share data across methods and differ across replicates") {
  const auto c = small_config({MethodId::Lpm2});
  const auto a = replicate_record(c, 0, 0);
  const auto b = replicate_record(c, 0, 0);
  const auto d = replicate_record(c, 0, 1);
  CHECK(a.output == b.output);
  CHECK(a.output != d.output);
  CHECK(a.g_true == d.g_true);
}

TEST_CASE("classic methods through the harness") {
  const auto c = small_config({});
  const auto rec = replicate_record(c, 0, 0);
  const auto band = evaluation_band(rec);
  for (MethodId m : {MethodId::Lpm2, MethodId::LpmMdl, MethodId::Lrm2, MethodId::LrmMdl, MethodId::IlrmMdl}) {
    const auto est = estimate(m, rec, 5, band);
    CHECK(est.method == method_name(m));
    REQUIRE(est.bins.size() == band.size());
    CHECK(est.failures() == 0);
    CHECK(std::isfinite(mse_db(est, rec, band)));
  }
  const auto ilrm = estimate(MethodId::IlrmMdl, rec, 5, band);
  for (const auto& b : ilrm.bins) {
    REQUIRE(b.loe.has_value());
    REQUIRE(b.start_loe.has_value());
    CHECK(*b.loe <= *b.start_loe + 1e-12);
  }
}

TEST_CASE("minimal run writes one row and one bin file") {
  const auto dir = scratch("minimal");
  auto c = small_config({MethodId::Lpm2});
  c.replicates = 1;
  c.output_dir = dir.string();
  const auto table = run(c);
  REQUIRE(table.rows.size() == 1);
  CHECK(table.rows[0].method == "LPM(2)");
  CHECK(table.rows[0].replicates == 1);
  CHECK(table.rows[0].status == "ok");
  CHECK(std::isfinite(table.rows[0].mean_mse_db));
  CHECK(table.failures() == 0);

  std::istringstream csv(slurp(dir / "summary.csv"));
  std::string line;
  int lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 2);
  CHECK(fs::exists(dir / "summary.json"));
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir / "bins")) files += e.is_regular_file() ? 1 : 0;
  CHECK(files == 1);
  const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
  CHECK(summary.is_object());
  fs::remove_all(dir);
}

TEST_CASE("per-bin series") {
  auto c = small_config({MethodId::Lpm2, MethodId::Lrm2});
  const auto table = run(c);
  REQUIRE(table.rows.size() == 2);
  const auto* lpm = table.find("small", MethodId::Lpm2);
  REQUIRE(lpm != nullptr);
  const auto rec = replicate_record(c, 0, 0);
  CHECK(lpm->bins.size() == evaluation_band(rec).size());
  for (const auto& b : lpm->bins) {
    CHECK(b.residual_rms >= b.residual_mean * (1.0 - 1e-12));
    CHECK(b.sigma2_true_mean > 0.0);
    CHECK(b.sigma2_hat_mean >= 0.0);
  }
  std::ostringstream out;
  write_bins_csv(*lpm, out);
  CHECK(out.str().rfind("k,", 0) == 0);
  CHECK(table.find("small", MethodId::LgprDp) == nullptr);
}

TEST_CASE("runs are reproducible to the byte") {
  const auto a = scratch("det_a");
  const auto b = scratch("det_b");
  auto c = small_config({MethodId::Lpm2, MethodId::IlrmMdl, MethodId::LgprDp});
  c.output_dir = a.string();
  run(c);
  c.output_dir = b.string();
  const auto table = run(c);
  CHECK(slurp(a / "summary.csv") == slurp(b / "summary.csv"));
  CHECK(slurp(a / "summary.json") == slurp(b / "summary.json"));
  CHECK(table.ilrm_violations() == 0);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("thread count does not change the results") {
  auto c = small_config({MethodId::Lpm2, MethodId::LrmMdl});
  setenv("FRF_LAB_THREADS", "1", 1);
  CHECK(worker_count() == 1);
  std::ostringstream one;
  write_summary_csv(run(c), one);
  setenv("FRF_LAB_THREADS", "3", 1);
  CHECK(worker_count() == 3);
  std::ostringstream three;
  write_summary_csv(run(c), three);
  unsetenv("FRF_LAB_THREADS");
  CHECK(one.str() == three.str());
}

TEST_CASE("negative infinity is written literally") {
  ResultTable t;
  MethodSummary row;
  row.scenario = "s";
  row.method = "m";
  row.replicates = 1;
  row.mean_mse_db = row.min_mse_db = row.max_mse_db = -std::numeric_limits<double>::infinity();
  row.mse_db_per_replicate = {row.mean_mse_db};
  t.rows.push_back(row);
  std::ostringstream out;
  write_summary_csv(t, out);
  CHECK(out.str().find("-inf") != std::string::npos);
  CHECK(summary_json(t).dump().find("\"-inf\"") != std::string::npos);
}

TEST_CASE("unwritable output directory is a startup error") {
  const auto dir = scratch("blocked");
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "file");
    f << "x";
  }
  auto c = small_config({MethodId::Lpm2});
  c.output_dir = (dir / "file" / "sub").string();
  CHECK_THROWS(run(c));
  CHECK_THROWS(generate(c));
  fs::remove_all(dir);
}

TEST_CASE("generate writes one record per replicate") {
  const auto dir = scratch("gen");
  auto c = small_config({MethodId::Lpm2});
  c.output_dir = dir.string();
  const auto paths = generate(c);
  CHECK(paths.size() == 2);
  for (const auto& p : paths) {
    CHECK(fs::exists(p));
    std::ifstream in(p);
    const auto rec = spectra::read_csv(in);
    CHECK(rec.has_ground_truth());
    CHECK(rec.bin_count() > 0);
  }
  fs::remove_all(dir);
}
