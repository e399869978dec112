#pragma once

#include <filesystem>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "emoshift/config.hpp"
#include "emoshift/evaluation.hpp"
#include "emoshift/synthdata.hpp"
#include "emoshift/training.hpp"

namespace emoshift::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitInvariant = 2;

/// A post-condition of a command did not hold (exit code 2).
class InvariantViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The unsmoothed corpus used for fine-tuning and evaluation, and its lambda-smoothed twin for
/// backbone pretraining. Both share scripts; only the prosody draws differ.
struct Corpora {
  Corpus clean;
  Corpus pretrain;
};
Corpora make_corpora(const RunConfig& config);

/// Checks the evaluation invariants (overall is the per-emotion mean, oracle ceiling) and throws
/// InvariantViolation when one fails.
void check_report(const EvalReport& report, double bayes_ceiling_percent);
double bayes_ceiling_percent(const RunConfig& config);

std::string epoch_log_line(const EpochRecord& record);

/// Entry point shared by the binary and the tests. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace emoshift::cli
