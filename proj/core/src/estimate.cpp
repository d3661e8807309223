#include "frflab/estimate.hpp"

#include <algorithm>
#include <ostream>

#include <nlohmann/json.hpp>

#include "text.hpp"

namespace frflab {
namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

nlohmann::json number(double v) {
  if (std::isfinite(v)) return v;
  return text::format_double(v);
}

nlohmann::json vector_json(const RVector& v) {
  auto arr = nlohmann::json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(number(v(i)));
  return arr;
}

}  // namespace

std::size_t FrfEstimate::failures() const {
  return static_cast<std::size_t>(std::count_if(bins.begin(), bins.end(), [](const auto& b) { return !b.ok; }));
}

const BinEstimate* FrfEstimate::find(std::size_t k) const {
  for (const auto& b : bins) {
    if (b.k == k) return &b;
  }
  return nullptr;
}

void write_csv(const FrfEstimate& estimate, std::ostream& out) {
  using text::format_double;
  out << "k,omega,re_Ghat,im_Ghat,re_That,im_That,sigma2_hat,method,detail\n";
  for (const auto& b : estimate.bins) {
    out << b.k << ',' << format_double(b.omega) << ',' << format_double(b.g_hat.real()) << ','
        << format_double(b.g_hat.imag()) << ',' << format_double(b.t_hat.real()) << ','
        << format_double(b.t_hat.imag()) << ',' << format_double(b.sigma2_hat) << ',' << csv_field(estimate.method)
        << ',' << csv_field(b.detail) << '\n';
  }
}

nlohmann::json to_json(const FrfEstimate& estimate, bool with_trace) {
  nlohmann::json doc;
  doc["method"] = estimate.method;
  auto bins = nlohmann::json::array();
  for (const auto& b : estimate.bins) {
    nlohmann::json j;
    j["k"] = b.k;
    j["omega"] = number(b.omega);
    j["g_hat"] = {number(b.g_hat.real()), number(b.g_hat.imag())};
    j["t_hat"] = {number(b.t_hat.real()), number(b.t_hat.imag())};
    j["sigma2_hat"] = number(b.sigma2_hat);
    j["ok"] = b.ok;
    j["detail"] = b.detail;
    if (b.loe) j["loe"] = number(*b.loe);
    if (b.start_loe) j["start_loe"] = number(*b.start_loe);
    if (with_trace && !b.trace.empty()) {
      auto trace = nlohmann::json::array();
      for (const auto& t : b.trace) {
        trace.push_back({{"start", vector_json(t.start)},
                         {"point", vector_json(t.point)},
                         {"value", number(t.value)},
                         {"converged", t.converged},
                         {"iterations", t.iterations}});
      }
      j["trace"] = std::move(trace);
    }
    bins.push_back(std::move(j));
  }
  doc["bins"] = std::move(bins);
  return doc;
}

}  // namespace frflab
