#pragma once

#include <string>
#include <vector>

#include "crossrec/config.hpp"

namespace crossrec {

// Exit codes: distinct families so scripts can tell failures apart.
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;       // unclassified
inline constexpr int kExitConfig = 2;      // bad config / arguments
inline constexpr int kExitData = 3;        // IO and data-format problems
inline constexpr int kExitNumeric = 4;     // non-finite values, shape errors
inline constexpr int kExitCheckFail = 5;   // self-check violations

int cmd_gen_data(const RunConfig& cfg);
int cmd_preprocess(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg);
int cmd_eval(const RunConfig& cfg);
int cmd_ablate(const RunConfig& cfg);
int cmd_bench(const RunConfig& cfg);
int cmd_check(const RunConfig& cfg);

// Full argv entry point used by the binary; exceptions are mapped onto the
// exit codes above.
int run_cli(const std::vector<std::string>& args);

}  // namespace crossrec
