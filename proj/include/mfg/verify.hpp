#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "mfg/config.hpp"

namespace mfg {

// ============================================================================
// Self-verification suite: every module's mathematical contract re-checked at
// runtime against independent oracles (finite differences, re-integration,
// order-of-convergence ratios, Monte Carlo). Used by the `verify` command.
// ============================================================================

struct CheckResult {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double bound = 0.0;
  std::string detail;
};

struct VerifyOptions {
  bool quick = false;      // skip the Monte Carlo population checks
  double perturb_s = 0.0;  // fault injection: shift s2 before the residual checks
};

// Runs the suite against the configured scenario, streaming one [PASS]/[FAIL]
// line per check to `out`; returns every result.
std::vector<CheckResult> run_verification(const RunConfig& cfg,
                                          const VerifyOptions& opt,
                                          std::ostream& out);

bool all_passed(const std::vector<CheckResult>& results);

}  // namespace mfg
