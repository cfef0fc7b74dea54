#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "crossrec/tensor.hpp"

namespace crossrec {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double tape_grad = 0.0;
  double fd_grad = 0.0;
};

// Central-difference check of the tape gradient of a deterministic scalar
// function, with one Richardson refinement step to cancel the leading
// truncation term. `f` must rebuild its graph from the current parameter
// values on every call; value-only evaluations run on a non-recording tape.
// The relative error per element is
// |g_tape - g_fd| / max(1e-8, |g_tape| + |g_fd|).
GradCheckReport grad_check(const std::function<Tensor(Tape&)>& f,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           double eps = 1e-3);

}  // namespace crossrec
