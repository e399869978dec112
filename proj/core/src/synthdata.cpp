#include "emoshift/synthdata.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "emoshift/rng.hpp"

namespace emoshift {

using nlohmann::json;

EmotionSpec EmotionSpec::make_default(std::vector<std::string> labels, std::size_t prosody_tokens, double peak,
                                      double second) {
  const std::size_t e_count = labels.size();
  if (prosody_tokens < 3 * e_count - 1) {
    throw std::invalid_argument("need at least 3E-1 prosody tokens for the default emotion layout");
  }
  EmotionSpec spec;
  spec.labels = std::move(labels);
  const double rest = (1.0 - peak - second) / static_cast<double>(prosody_tokens - 2);
  for (std::size_t e = 0; e < e_count; ++e) {
    std::vector<double> row(prosody_tokens, rest);
    row[3 * e] = peak;
    row[3 * e + 1] = second;
    spec.prosody.push_back(std::move(row));
  }
  spec.validate();
  return spec;
}

std::vector<double> EmotionSpec::sampling_distribution(std::size_t e) const {
  std::vector<double> out(n_prosody());
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = (1.0 - smoothing) * prosody[e][p] + smoothing * prosody[0][p];
  return out;
}

EmotionSpec EmotionSpec::with_smoothing(double lambda) const {
  EmotionSpec s = *this;
  s.smoothing = lambda;
  s.validate();
  return s;
}

int EmotionSpec::emotion_index(std::string_view name) const {
  for (std::size_t e = 0; e < labels.size(); ++e) {
    if (labels[e] == name) return static_cast<int>(e);
  }
  int idx = -1;
  auto [ptr, ec] = std::from_chars(name.data(), name.data() + name.size(), idx);
  if (ec == std::errc() && ptr == name.data() + name.size() && idx >= 0 && static_cast<std::size_t>(idx) < labels.size()) {
    return idx;
  }
  throw std::invalid_argument("unknown emotion '" + std::string(name) + "'");
}

void EmotionSpec::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("emotion spec: " + m); };
  if (labels.size() < 2) fail("at least two emotions are required");
  if (prosody.size() != labels.size()) fail("one prosody distribution per emotion is required");
  const std::size_t p = n_prosody();
  if (p < 2) fail("at least two prosody tokens are required");
  for (const auto& row : prosody) {
    if (row.size() != p) fail("prosody rows differ in length");
    double s = 0;
    for (double v : row) {
      if (!(v >= 0)) fail("prosody probabilities must be nonnegative");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) fail("prosody row sums to " + std::to_string(s));
  }
  for (std::size_t a = 0; a < prosody.size(); ++a) {
    for (std::size_t b = a + 1; b < prosody.size(); ++b) {
      if (prosody[a] == prosody[b]) fail("emotions '" + labels[a] + "' and '" + labels[b] + "' share a distribution");
    }
  }
  if (!(smoothing >= 0.0 && smoothing <= 1.0)) fail("smoothing must lie in [0, 1]");
}

void CorpusOptions::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("corpus options: " + m); };
  if (train_scripts < 1 || dev_scripts < 1 || test_scripts < 1) fail("every split needs at least one script");
  if (speakers < 1) fail("at least one speaker is required");
  if (min_script_len < 1 || min_script_len > max_script_len) fail("invalid script length range");
  if (content_vocab < 2) fail("content vocabulary must have at least 2 tokens");
}

Corpus gen_corpus(const EmotionSpec& spec, const CorpusOptions& options) {
  spec.validate();
  options.validate();
  Corpus corpus;
  corpus.spec = spec;
  corpus.options = options;

  std::vector<std::vector<double>> dists;
  for (std::size_t e = 0; e < spec.n_emotions(); ++e) dists.push_back(spec.sampling_distribution(e));

  std::size_t next_id = 0;
  int script_id = 0;
  auto fill = [&](std::vector<Utterance>& split, std::size_t n_scripts) {
    for (std::size_t s = 0; s < n_scripts; ++s, ++script_id) {
      auto srng = make_rng(options.seed, "script", static_cast<std::uint64_t>(script_id));
      const auto len = static_cast<std::size_t>(uniform_int(srng, static_cast<std::int64_t>(options.min_script_len),
                                                            static_cast<std::int64_t>(options.max_script_len)));
      std::vector<int> script(len);
      for (auto& x : script) x = static_cast<int>(uniform_int(srng, 0, static_cast<std::int64_t>(options.content_vocab) - 1));
      for (std::size_t spk = 0; spk < options.speakers; ++spk) {
        for (std::size_t e = 0; e < spec.n_emotions(); ++e) {
          Utterance u;
          u.id = next_id++;
          u.script_id = script_id;
          u.speaker = static_cast<int>(spk);
          u.emotion = static_cast<int>(e);
          u.script = script;
          auto prng = make_rng(options.seed, "prosody", u.id);
          u.speech.reserve(2 * len);
          for (int x : script) {
            u.speech.push_back(content_image(x));
            const auto p = sample_categorical(std::span<const double>(dists[e]), prng);
            u.speech.push_back(prosody_token_id(static_cast<int>(p), options.content_vocab));
          }
          split.push_back(std::move(u));
        }
      }
    }
  };
  fill(corpus.train, options.train_scripts);
  fill(corpus.dev, options.dev_scripts);
  fill(corpus.test, options.test_scripts);
  return corpus;
}

std::vector<int> prosody_evidence(std::span<const int> speech, std::size_t content_vocab, std::size_t prosody_vocab) {
  std::vector<int> out;
  const int lo = static_cast<int>(content_vocab);
  const int hi = lo + static_cast<int>(prosody_vocab);
  for (std::size_t k = 1; k < speech.size(); k += 2) {
    if (speech[k] >= lo && speech[k] < hi) out.push_back(speech[k] - lo);
  }
  return out;
}

std::vector<int> decode_content(std::span<const int> speech, std::size_t content_vocab) {
  std::vector<int> out;
  for (std::size_t k = 0; k < speech.size(); k += 2) {
    const int t = speech[k];
    out.push_back(t >= 0 && static_cast<std::size_t>(t) < content_vocab ? t : -1);
  }
  return out;
}

Classification bayes_classify(std::span<const int> speech, const EmotionSpec& spec, std::size_t content_vocab) {
  const std::size_t e_count = spec.n_emotions();
  const std::size_t p_count = spec.n_prosody();
  Classification out;
  const auto evidence = prosody_evidence(speech, content_vocab, p_count);
  if (evidence.empty()) {
    out.posterior.assign(e_count, 1.0 / static_cast<double>(e_count));
    out.emotion = 0;
    out.degenerate = true;
    return out;
  }
  std::vector<double> loglik(e_count, 0.0);
  for (std::size_t e = 0; e < e_count; ++e) {
    std::vector<double> row(p_count);
    double z = 0;
    for (std::size_t p = 0; p < p_count; ++p) {
      row[p] = std::max(spec.prosody[e][p], 1e-9);
      z += row[p];
    }
    for (int t : evidence) loglik[e] += std::log(row[static_cast<std::size_t>(t)] / z);
  }
  std::size_t best = 0;
  for (std::size_t e = 1; e < e_count; ++e) {
    if (loglik[e] > loglik[best]) best = e;
  }
  const double mx = loglik[best];
  double z = 0;
  out.posterior.resize(e_count);
  for (std::size_t e = 0; e < e_count; ++e) {
    out.posterior[e] = std::exp(loglik[e] - mx);
    z += out.posterior[e];
  }
  for (auto& v : out.posterior) v /= z;
  out.emotion = static_cast<int>(best);
  return out;
}

std::size_t levenshtein(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> row(b.size() + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

double content_error_rate(std::span<const int> speech, std::span<const int> script, std::size_t content_vocab) {
  if (script.empty()) throw std::invalid_argument("content_error_rate: empty script");
  const auto decoded = decode_content(speech, content_vocab);
  return static_cast<double>(levenshtein(decoded, script)) / static_cast<double>(script.size());
}

double monte_carlo_bayes_accuracy(const EmotionSpec& spec, const CorpusOptions& options, std::size_t samples,
                                  std::uint64_t seed) {
  if (samples == 0) throw std::invalid_argument("monte_carlo_bayes_accuracy: zero samples");
  auto rng = make_rng(seed, "bayes-monte-carlo");
  std::size_t correct = 0;
  std::vector<int> speech;
  for (std::size_t i = 0; i < samples; ++i) {
    const auto e = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(spec.n_emotions()) - 1));
    const auto n = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(options.min_script_len),
                                                        static_cast<std::int64_t>(options.max_script_len)));
    speech.clear();
    for (std::size_t k = 0; k < n; ++k) {
      speech.push_back(0);
      const auto p = sample_categorical(std::span<const double>(spec.prosody[e]), rng);
      speech.push_back(prosody_token_id(static_cast<int>(p), options.content_vocab));
    }
    if (bayes_classify(speech, spec, options.content_vocab).emotion == static_cast<int>(e)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples);
}

// ---------------------------------------------------------------------------------------------
// Persistence

namespace {

json spec_to_json(const EmotionSpec& s) {
  return json{{"labels", s.labels}, {"prosody", s.prosody}, {"smoothing", s.smoothing}};
}

EmotionSpec spec_from_json(const json& j) {
  EmotionSpec s;
  s.labels = j.at("labels").get<std::vector<std::string>>();
  s.prosody = j.at("prosody").get<std::vector<std::vector<double>>>();
  s.smoothing = j.at("smoothing").get<double>();
  s.validate();
  return s;
}

json options_to_json(const CorpusOptions& o) {
  return json{{"train_scripts", o.train_scripts}, {"dev_scripts", o.dev_scripts},
              {"test_scripts", o.test_scripts},   {"speakers", o.speakers},
              {"min_script_len", o.min_script_len}, {"max_script_len", o.max_script_len},
              {"content_vocab", o.content_vocab}, {"seed", o.seed}};
}

CorpusOptions options_from_json(const json& j) {
  CorpusOptions o;
  o.train_scripts = j.at("train_scripts").get<std::size_t>();
  o.dev_scripts = j.at("dev_scripts").get<std::size_t>();
  o.test_scripts = j.at("test_scripts").get<std::size_t>();
  o.speakers = j.at("speakers").get<std::size_t>();
  o.min_script_len = j.at("min_script_len").get<std::size_t>();
  o.max_script_len = j.at("max_script_len").get<std::size_t>();
  o.content_vocab = j.at("content_vocab").get<std::size_t>();
  o.seed = j.at("seed").get<std::uint64_t>();
  o.validate();
  return o;
}

void write_split(const std::vector<Utterance>& split, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  for (const auto& u : split) {
    json j{{"id", u.id},         {"script_id", u.script_id}, {"speaker", u.speaker},
           {"emotion", u.emotion}, {"script", u.script},     {"speech", u.speech}};
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + file.string());
}

std::vector<Utterance> read_split(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  std::vector<Utterance> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    Utterance u;
    u.id = j.at("id").get<std::size_t>();
    u.script_id = j.at("script_id").get<int>();
    u.speaker = j.at("speaker").get<int>();
    u.emotion = j.at("emotion").get<int>();
    u.script = j.at("script").get<std::vector<int>>();
    u.speech = j.at("speech").get<std::vector<int>>();
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_split(corpus.train, dir / "train.jsonl");
  write_split(corpus.dev, dir / "dev.jsonl");
  write_split(corpus.test, dir / "test.jsonl");
  std::ofstream meta(dir / "corpus_meta.json", std::ios::binary | std::ios::trunc);
  if (!meta) throw std::runtime_error("cannot write " + (dir / "corpus_meta.json").string());
  meta << json{{"spec", spec_to_json(corpus.spec)}, {"options", options_to_json(corpus.options)}}.dump(2) << '\n';
}

Corpus read_corpus(const std::filesystem::path& dir) {
  std::ifstream meta(dir / "corpus_meta.json", std::ios::binary);
  if (!meta) throw std::runtime_error("cannot read " + (dir / "corpus_meta.json").string());
  const json j = json::parse(meta);
  Corpus c;
  c.spec = spec_from_json(j.at("spec"));
  c.options = options_from_json(j.at("options"));
  c.train = read_split(dir / "train.jsonl");
  c.dev = read_split(dir / "dev.jsonl");
  c.test = read_split(dir / "test.jsonl");
  return c;
}

}  // namespace emoshift
