#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ardsparse/objectives.hpp"

namespace ardsparse {

struct CheckResult {
  std::string name;
  bool passed = false;
  double observed = 0.0;   // worst error (or ratio) seen
  double tolerance = 0.0;  // bound it was compared against
  std::string detail;
};

struct VerifyOptions {
  SvdoConstants svdo{};
  std::uint64_t seed = 20180705;
};

// Runs every analytic identity of the objectives module against an
// independent route (finite differences, substitution, grid scans, quadrature).
std::vector<CheckResult> run_verification(const VerifyOptions& opts = {});

bool all_passed(const std::vector<CheckResult>& results);
void print_verification_table(std::ostream& out, const std::vector<CheckResult>& results);

}  // namespace ardsparse
