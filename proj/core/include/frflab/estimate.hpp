#pragma once

// Per-bin FRF estimates produced by every method, with CSV and JSON output.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "frflab/types.hpp"

namespace frflab {

/// One local optimization run of the empirical-Bayes search.
struct StartTrace {
  RVector start;   // log-space start point
  RVector point;   // log-space end point
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
};

struct BinEstimate {
  std::size_t k = 0;
  double omega = 0.0;
  Complex g_hat{};
  Complex t_hat{};
  double sigma2_hat = 0.0;
  bool ok = true;
  std::string detail;  // selected orders, tuned hyperparameters or the failure reason
  std::optional<double> loe;
  std::optional<double> start_loe;  // LOE of the start of an iterative refinement
  std::vector<StartTrace> trace;
};

struct FrfEstimate {
  std::string method;
  std::vector<BinEstimate> bins;

  std::size_t failures() const;
  const BinEstimate* find(std::size_t k) const;
};

/// Columns k, omega, re_Ghat, im_Ghat, re_That, im_That, sigma2_hat, method, detail.
void write_csv(const FrfEstimate& estimate, std::ostream& out);

/// Bins as objects; traces are embedded when with_trace is set.
nlohmann::json to_json(const FrfEstimate& estimate, bool with_trace = false);

}  // namespace frflab
