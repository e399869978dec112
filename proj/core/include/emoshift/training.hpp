#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "emoshift/model.hpp"
#include "emoshift/steer.hpp"
#include "emoshift/synthdata.hpp"

namespace emoshift {

/// pretrain: backbone from scratch on the smoothed corpus. sft: full fine-tune of a pretrained
/// backbone. emoshift: steering bank only, on the frozen pretrained backbone. sft-shift: steering
/// bank only, on top of an sft checkpoint.
enum class Regime { kPretrain, kSft, kEmoShift, kSftShift };

std::string_view regime_name(Regime r);
Regime parse_regime(std::string_view name);
inline bool is_steer_regime(Regime r) { return r == Regime::kEmoShift || r == Regime::kSftShift; }

struct TrainConfig {
  Regime regime = Regime::kEmoShift;
  double learning_rate = 1e-4;
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double epsilon = 0.001;
  double smoothing = 0.5;  // lambda the pretraining corpus must carry
  double grad_clip = 1.0;
  double weight_decay = 0.01;
  SteerInit steer_init = SteerInit::kZeros;
  double steer_init_sigma = 0.02;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double train_loss = 0;  // mean over the epoch's batches; NaN for epoch 0
  double dev_loss = 0;
  double seconds = 0;     // wall clock, excluded from checkpoints
};

/// Checkpoint contents in working (32-bit) precision.
struct TrainedCheckpoint {
  TransformerParams<float> params;
  std::optional<SteerBank<float>> steer;
  Regime regime = Regime::kPretrain;
  std::optional<Regime> parent_regime;
  std::uint64_t parent_backbone_hash = 0;
  std::uint64_t backbone_hash = 0;
  double final_train_loss = 0;
  double final_dev_loss = 0;
  std::size_t trainable_params = 0;
  std::vector<EpochRecord> history;  // epoch 0 is the pre-training dev loss

  const ModelConfig& config() const { return params.config; }
};

/// Hash over every backbone buffer (names, shapes, raw bytes) in canonical order.
std::uint64_t backbone_hash(const TransformerParams<float>& params);

/// Teacher-forced mean NLL over the positions predicting y_1..y_m and E.
template <typename T>
Var<T> compute_loss(Tape<T>& tape, std::span<const SequenceLayout> batch, TransformerParams<T>& params,
                    const SteerRequest<T>* steer = nullptr, std::mt19937_64* dropout_rng = nullptr);

/// Loss-mask rows and targets of a stacked batch; exposed for the mask-invariant tests.
struct LossTargets {
  std::vector<int> targets;
  std::vector<std::uint8_t> mask;
};
LossTargets loss_targets(std::span<const SequenceLayout> batch, const ModelConfig& config);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Runs one regime end to end. Throws std::invalid_argument on a regime/init/corpus mismatch
/// before any step is taken.
TrainedCheckpoint run_regime(const TrainConfig& config, const Corpus& corpus, const ModelConfig& model_config,
                             const TrainedCheckpoint* init, const EpochCallback& on_epoch = {});

/// Permutation of [0, n) used for `epoch`; a pure function of (seed, epoch).
std::vector<std::size_t> epoch_permutation(std::uint64_t seed, std::size_t epoch, std::size_t n);

}  // namespace emoshift
