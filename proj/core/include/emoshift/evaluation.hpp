#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "emoshift/synthdata.hpp"
#include "emoshift/training.hpp"

namespace emoshift {

struct EvalOptions {
  std::optional<double> alpha;  // steering gain; defaults to 1 for checkpoints with a steering bank
  std::uint64_t seed = 0;
  double temperature = 1.0;
  std::size_t max_len = 0;  // 0 = fill the context window
  bool passthrough = false;  // classify ground-truth tokens instead of generating (oracle mode)
};

struct EvalReport {
  std::string model;
  std::optional<double> alpha;
  bool extrapolated = false;  // alpha < 1: attenuation rather than intensification
  std::vector<std::string> labels;
  std::vector<double> per_emotion_accuracy;  // percent
  std::vector<std::size_t> per_emotion_count;
  double overall_accuracy = 0;       // unweighted mean of per-emotion accuracies, percent
  double content_error_rate = 0;     // mean over generations
  double unterminated_fraction = 0;  // generations that hit max_len without E
  std::size_t trainable_params = 0;
  std::uint64_t seed = 0;

  bool operator==(const EvalReport&) const = default;
};

/// Generates every test utterance conditioned on (speaker, emotion, script), classifies the
/// prosody positions with the Bayes oracle and scores content fidelity. Each utterance samples
/// from its own stream keyed by (seed, utterance id).
EvalReport evaluate(const TrainedCheckpoint& ckpt, const std::vector<Utterance>& test, const EmotionSpec& spec,
                    const EvalOptions& options, std::string model_tag);

struct SweepPoint {
  double alpha = 0;
  double overall_accuracy = 0;
  double content_error_rate = 0;
  double unterminated_fraction = 0;
  bool operator==(const SweepPoint&) const = default;
};

struct SweepResult {
  std::string model;
  std::uint64_t seed = 0;
  std::vector<SweepPoint> points;
  std::vector<EvalReport> reports;
};

/// One evaluate call per alpha with a shared seed. Alphas must be non-empty and strictly increasing.
SweepResult alpha_sweep(const TrainedCheckpoint& ckpt, const std::vector<Utterance>& test, const EmotionSpec& spec,
                        const std::vector<double>& alphas, const EvalOptions& base, std::string model_tag);

/// Parses "start:stop:step" (inclusive of stop when it lands on the grid) or a comma list.
std::vector<double> parse_alpha_list(const std::string& text);

struct ComparisonTable {
  std::string text;  // aligned columns
  std::string json;  // machine-readable, parseable by parse_reports
};

ComparisonTable compare_table(const std::vector<EvalReport>& reports);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);
std::vector<EvalReport> parse_reports(const std::string& json_text);

/// Two columns: alpha, overall_accuracy.
std::string sweep_to_csv(const SweepResult& sweep);
std::string sweep_to_json(const SweepResult& sweep);

}  // namespace emoshift
