#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fstd/autodiff.hpp"

namespace fstd {

struct GradSuiteRow {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  int seeds = 0;
};

/// Finite-difference checks of every primitive and of the RoI-pool, cosine
/// and loss composites, each over `seeds` random instances.
std::vector<GradSuiteRow> run_grad_suite(int seeds);

/// d(l_total)/d(params) against central differences on a tiny episode with
/// its sampling decisions frozen.
ad::GradCheckResult end_to_end_grad_check(std::uint64_t seed);

}  // namespace fstd
