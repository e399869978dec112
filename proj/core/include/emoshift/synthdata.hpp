#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "emoshift/model.hpp"

namespace emoshift {

/// Emotion labels and the prosody-token distribution each emotion emits.
///
/// Speech tokens alternate [content image, prosody]; only the prosody tokens carry emotion.
/// `smoothing` (lambda) mixes every emotion toward neutral when sampling, which is how the weaker
/// backbone pretraining corpus is produced. Classification always uses the unsmoothed rows.
struct EmotionSpec {
  std::vector<std::string> labels;
  std::vector<std::vector<double>> prosody;  // [E][P]
  double smoothing = 0.0;

  /// Emotion e puts `peak` on token 3e, `second` on 3e+1 and spreads the rest uniformly.
  static EmotionSpec make_default(std::vector<std::string> labels = default_labels(), std::size_t prosody_tokens = 16,
                                  double peak = 0.6, double second = 0.2);
  static std::vector<std::string> default_labels() { return {"neutral", "angry", "happy", "sad", "surprise"}; }

  std::size_t n_emotions() const { return labels.size(); }
  std::size_t n_prosody() const { return prosody.empty() ? 0 : prosody.front().size(); }

  /// (1 - lambda) * pi_e + lambda * pi_neutral
  std::vector<double> sampling_distribution(std::size_t e) const;
  EmotionSpec with_smoothing(double lambda) const;

  /// Resolves a label or a decimal index; throws std::invalid_argument when neither matches.
  int emotion_index(std::string_view name_or_index) const;

  void validate() const;
  bool operator==(const EmotionSpec&) const = default;
};

struct CorpusOptions {
  std::size_t train_scripts = 300;
  std::size_t dev_scripts = 20;
  std::size_t test_scripts = 30;
  std::size_t speakers = 4;
  std::size_t min_script_len = 8;
  std::size_t max_script_len = 16;
  std::size_t content_vocab = 16;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const CorpusOptions&) const = default;
};

struct Utterance {
  std::size_t id = 0;
  int script_id = 0;
  int speaker = 0;
  int emotion = 0;
  std::vector<int> script;  // content token ids
  std::vector<int> speech;  // speech-vocab ids, length 2 * script.size()

  SequenceLayout layout() const { return SequenceLayout::training(speaker, emotion, script, speech); }
  SequenceLayout conditioning() const { return SequenceLayout::conditioning(speaker, emotion, script); }
  bool operator==(const Utterance&) const = default;
};

struct Corpus {
  EmotionSpec spec;
  CorpusOptions options;
  std::vector<Utterance> train, dev, test;

  bool operator==(const Corpus&) const = default;
};

/// Every script is instantiated for every (speaker, emotion) pair inside its own split.
Corpus gen_corpus(const EmotionSpec& spec, const CorpusOptions& options);

/// Speech-vocab id of a content token's image (the identity mapping onto the first C ids).
inline int content_image(int content_token) { return content_token; }
inline int prosody_token_id(int prosody, std::size_t content_vocab) {
  return static_cast<int>(content_vocab) + prosody;
}

/// Prosody indices read from the odd (prosody) positions; non-prosody tokens there are skipped.
std::vector<int> prosody_evidence(std::span<const int> speech, std::size_t content_vocab, std::size_t prosody_vocab);

/// Content ids read from the even positions; anything that is not a content image becomes -1.
std::vector<int> decode_content(std::span<const int> speech, std::size_t content_vocab);

struct Classification {
  int emotion = 0;
  std::vector<double> posterior;
  bool degenerate = false;  // no prosody evidence
};

/// Exact posterior under a uniform prior (rows floored at 1e-9 and renormalized); ties go to the
/// lowest emotion id.
Classification bayes_classify(std::span<const int> speech, const EmotionSpec& spec, std::size_t content_vocab);

std::size_t levenshtein(std::span<const int> a, std::span<const int> b);

/// Edit distance between the decoded content positions and the script, over the script length.
double content_error_rate(std::span<const int> speech, std::span<const int> script, std::size_t content_vocab);

/// Expected accuracy of `bayes_classify` on clean utterances, estimated by simulation.
double monte_carlo_bayes_accuracy(const EmotionSpec& spec, const CorpusOptions& options, std::size_t samples,
                                  std::uint64_t seed);

/// Writes train.jsonl, dev.jsonl, test.jsonl and corpus_meta.json into `dir`.
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus read_corpus(const std::filesystem::path& dir);

}  // namespace emoshift
