#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace savt {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

struct AcceptanceOptions {
  std::uint64_t seed = 7;
  std::string work_dir;  // empty: unique directory under the system temp path
  double entmax_tau_perturbation = 0.0;  // negative-control hook
  std::size_t threads = 1;
};

struct AcceptanceSummary {
  std::vector<CriterionResult> criteria;
  bool all_pass = false;
  double total_seconds = 0.0;
};

// Runs the full acceptance suite, printing one pass/fail line per criterion.
AcceptanceSummary run_acceptance(const AcceptanceOptions& opts, std::ostream& out);

nlohmann::json acceptance_to_json(const AcceptanceSummary& summary);

}  // namespace savt
