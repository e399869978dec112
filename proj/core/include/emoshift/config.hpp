#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "emoshift/model.hpp"
#include "emoshift/synthdata.hpp"
#include "emoshift/training.hpp"

namespace emoshift {

/// Malformed or unknown configuration entries. The message names the offending key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EmotionConfig {
  std::vector<std::string> labels = EmotionSpec::default_labels();
  double peak = 0.6;
  double second = 0.2;
  double pretrain_smoothing = 0.5;
  bool operator==(const EmotionConfig&) const = default;
};

struct CorpusConfig {
  std::size_t train_scripts = 300;
  std::size_t dev_scripts = 20;
  std::size_t test_scripts = 30;
  std::size_t min_script_len = 8;
  std::size_t max_script_len = 16;
  bool operator==(const CorpusConfig&) const = default;
};

struct TrainingConfig {
  double pretrain_learning_rate = 3e-4;
  std::size_t pretrain_epochs = 10;
  double learning_rate = 1e-4;
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  std::size_t steer_batch_size = 1;
  double epsilon = 0.001;
  double grad_clip = 1.0;
  double weight_decay = 0.01;
  bool operator==(const TrainingConfig&) const = default;
};

struct EvalConfig {
  double alpha = 1.0;
  std::string sweep_alphas = "1:4:0.5";
  double temperature = 1.0;
  std::size_t max_len = 0;
  bool operator==(const EvalConfig&) const = default;
};

/// Everything a run needs in one document. Every field has a default, so `{}` is a valid config.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  ModelConfig model;
  EmotionConfig emotions;
  CorpusConfig corpus;
  TrainingConfig training;
  EvalConfig eval;

  void validate() const;

  /// Unsmoothed spec used for fine-tuning data and classification.
  EmotionSpec emotion_spec() const;
  CorpusOptions corpus_options() const;
  TrainConfig train_config(Regime regime) const;
  std::uint64_t eval_seed() const;

  bool operator==(const RunConfig&) const = default;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& config);

}  // namespace emoshift
