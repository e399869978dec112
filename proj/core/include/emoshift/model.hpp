#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "emoshift/autograd.hpp"
#include "emoshift/ops.hpp"
#include "emoshift/steer.hpp"

namespace emoshift {

/// Boundary markers: start of sequence, end of prompt, turn of speech, end of sequence.
enum class Special : int { kStart = 0, kEndPrompt = 1, kTurn = 2, kEnd = 3 };
inline constexpr int kNumSpecial = 4;

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t content_vocab = 16;
  std::size_t prosody_vocab = 16;
  std::size_t n_special = kNumSpecial;
  std::size_t n_emotions = 5;
  std::size_t n_speakers = 4;
  std::size_t max_seq_len = 128;
  double dropout = 0.0;

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;

  /// Content-image tokens followed by prosody tokens.
  std::size_t speech_vocab() const { return content_vocab + prosody_vocab; }
  /// LM-head width: special tokens followed by the speech vocabulary.
  std::size_t output_vocab() const { return n_special + speech_vocab(); }
  /// Token-embedding rows: the output vocabulary followed by text (content) tokens.
  std::size_t input_vocab() const { return output_vocab() + content_vocab; }

  int special_id(Special s) const { return static_cast<int>(s); }
  int speech_id(int speech_token) const { return static_cast<int>(n_special) + speech_token; }
  int text_id(int content_token) const { return static_cast<int>(output_vocab()) + content_token; }
  /// Inverse of speech_id; -1 for special tokens.
  int speech_token_of(int output_id) const { return output_id - static_cast<int>(n_special); }

  bool operator==(const ModelConfig&) const = default;
};

/// One utterance arranged as [S, speaker, prompt, P, x_1..x_n, T, y_1..y_m, E].
/// The emotion prompt is a single learned embedding (prompt length 1). Conditioning layouts for
/// inference carry no speech tokens and stop at T.
struct SequenceLayout {
  enum class SlotKind { kSpecial, kSpeaker, kPrompt, kText, kSpeech };
  struct Slot {
    SlotKind kind;
    int value;
    bool operator==(const Slot&) const = default;
  };

  int speaker = 0;
  int emotion = 0;
  std::vector<int> text;
  std::vector<int> speech;
  bool terminated = true;  // whether E follows the speech tokens

  static constexpr std::size_t kPromptLength = 1;

  static SequenceLayout training(int speaker, int emotion, std::vector<int> text, std::vector<int> speech);
  static SequenceLayout conditioning(int speaker, int emotion, std::vector<int> text);

  std::size_t speaker_pos() const { return 1; }
  std::size_t prompt_pos() const { return 2; }
  std::size_t end_prompt_pos() const { return 2 + kPromptLength; }
  std::size_t text_pos(std::size_t j) const { return end_prompt_pos() + 1 + j; }
  std::size_t turn_pos() const { return end_prompt_pos() + 1 + text.size(); }
  std::size_t speech_pos(std::size_t k) const { return turn_pos() + 1 + k; }
  std::size_t end_pos() const { return turn_pos() + 1 + speech.size(); }
  std::size_t length() const { return end_pos() + (terminated ? 1 : 0); }

  std::vector<Slot> slots() const;
  /// Rebuilds a layout from its slot sequence; throws std::invalid_argument on any ordering violation.
  static SequenceLayout from_slots(std::span<const Slot> slots);

  /// Range checks against a model configuration (ids, sequence length).
  void validate(const ModelConfig& config) const;

  bool operator==(const SequenceLayout&) const = default;
};

template <typename T>
struct LayerParams {
  Parameter<T> ln1_gain, ln1_bias;
  Parameter<T> qkv_weight, qkv_bias;
  Parameter<T> out_weight, out_bias;
  Parameter<T> ln2_gain, ln2_bias;
  Parameter<T> ff1_weight, ff1_bias;
  Parameter<T> ff2_weight, ff2_bias;
};

template <typename T>
struct TransformerParams {
  ModelConfig config;
  Parameter<T> token_embedding;
  Parameter<T> position_embedding;
  Parameter<T> speaker_embedding;
  Parameter<T> prompt_embedding;
  std::vector<LayerParams<T>> layers;
  Parameter<T> final_gain, final_bias;
  Parameter<T> head_weight, head_bias;

  /// Weights ~ N(0, 0.02^2), biases 0, norm gains 1.
  static TransformerParams init(const ModelConfig& config, std::uint64_t seed);

  /// Canonical order; this order fixes checkpoint layout and backbone hashes.
  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;
  std::size_t parameter_count() const;
  void set_trainable(bool on);
};

/// Row ranges and steering metadata of each sequence in a stacked batch.
struct SegmentInfo {
  ops::Segment rows;
  int emotion = 0;
  std::size_t turn_row = 0;  // absolute row of T
};

template <typename T>
struct Embedded {
  Var<T> x;
  std::vector<SegmentInfo> segments;
};

/// Row t = (token | speaker | prompt embedding at t) + positional embedding at t.
template <typename T>
Embedded<T> embed_layout(Tape<T>& tape, TransformerParams<T>& params, const SequenceLayout& layout);

template <typename T>
Embedded<T> embed_batch(Tape<T>& tape, TransformerParams<T>& params, std::span<const SequenceLayout> layouts);

/// Steering applied in a forward pass. When `emotion` is unset each segment steers toward its own
/// layout emotion.
template <typename T>
struct SteerRequest {
  SteerBank<T>* bank = nullptr;
  T gain = T(1);
  std::optional<int> emotion;
};

template <typename T>
struct ForwardResult {
  Var<T> logits;  // [L x output_vocab]
  Var<T> hidden;  // final hidden rows after steering
};

/// Final-layer-norm output of the causal transformer stack (before any steering).
template <typename T>
Var<T> backbone_hidden(TransformerParams<T>& params, const Embedded<T>& emb, std::mt19937_64* dropout_rng = nullptr);

/// Applies steering to rows at or after each segment's T position, then the LM head.
template <typename T>
ForwardResult<T> head_forward(TransformerParams<T>& params, Var<T> hidden, std::span<const SegmentInfo> segments,
                              const SteerRequest<T>* steer);

template <typename T>
ForwardResult<T> forward(TransformerParams<T>& params, const Embedded<T>& emb, const SteerRequest<T>* steer = nullptr,
                         std::mt19937_64* dropout_rng = nullptr);

/// Tape-free decoder that appends one position at a time, caching per-layer keys and values.
/// Produces the same logits as `forward` on the full prefix.
template <typename T>
class IncrementalDecoder {
 public:
  IncrementalDecoder(const TransformerParams<T>& params, const SteerBank<T>* bank, int steer_emotion, T gain);

  /// Appends the slot at the next position; returns the logits row predicting the following token.
  /// Steering (when configured) applies from the T slot onward.
  std::span<const T> push(const SequenceLayout::Slot& slot);
  std::size_t position() const { return pos_; }

 private:
  const TransformerParams<T>& params_;
  const SteerBank<T>* bank_;
  int emotion_;
  T coef_;
  bool steering_ = false;
  std::size_t pos_ = 0;
  std::vector<std::vector<T>> keys_, values_;
  std::vector<T> x_, a_, qkv_, att_, proj_, ff_, probs_, hidden_, steered_, scratch_, logits_;
};

struct GenerationResult {
  std::vector<int> speech;  // speech-vocab ids, E excluded
  bool terminated = false;
};

template <typename T>
struct GenerateOptions {
  const SteerBank<T>* bank = nullptr;
  T gain = T(1);
  std::uint64_t seed = 0;
  std::size_t max_len = 0;  // 0 = fill the context window
  double temperature = 1.0;  // <= 0 selects argmax decoding
};

/// Samples speech tokens after T until E or `max_len`. S, P and T are never emitted.
template <typename T>
GenerationResult generate(const SequenceLayout& cond, const TransformerParams<T>& params,
                          const GenerateOptions<T>& options);

}  // namespace emoshift
