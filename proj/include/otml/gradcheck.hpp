#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace otml::gradcheck {

struct OpCheck {
  std::string name;
  double max_rel_err = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

struct Report {
  std::vector<OpCheck> checks;
  bool all_pass = false;

  std::string to_string() const;  // one line per op plus a verdict
};

// Central finite differences (step 1e-6) against every registered adjoint on
// seeded random inputs, plus composite checks (batchnorm, cross-attention,
// regularizers, unrolled transport, the full training objective).
// `corrupt_op` perturbs that op's analytic gradients before comparison; the
// negative control for the checker itself.
Report run(std::uint64_t seed, const std::string& corrupt_op = "");

}  // namespace otml::gradcheck
