#include "emoshift/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "emoshift/rng.hpp"

namespace emoshift {

using nlohmann::json;

namespace {

// Reads the known keys of one object and rejects everything else.
class Reader {
 public:
  Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError("config: '" + where() + "' must be an object");
  }

  template <typename V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      out = it->template get<V>();
    } catch (const json::exception&) {
      throw ConfigError("config: bad value for '" + path_ + key + "'");
    }
  }

  Reader child(const char* key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    static const json empty = json::object();
    return Reader(it == obj_.end() ? empty : *it, path_ + key + ".");
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("config: unknown key '" + path_ + it.key() + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "<root>" : path_.substr(0, path_.size() - 1); }

  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

void RunConfig::validate() const {
  try {
    model.validate();
    emotion_spec().validate();
    corpus_options().validate();
    for (auto r : {Regime::kPretrain, Regime::kSft, Regime::kEmoShift}) train_config(r).validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (emotions.labels.size() != model.n_emotions) {
    throw ConfigError("config: emotions.labels has " + std::to_string(emotions.labels.size()) +
                      " entries but model.n_emotions is " + std::to_string(model.n_emotions));
  }
  if (emotions.pretrain_smoothing < 0 || emotions.pretrain_smoothing > 1) {
    throw ConfigError("config: emotions.pretrain_smoothing must lie in [0, 1]");
  }
  if (eval.alpha < 0) throw ConfigError("config: eval.alpha must be >= 0");
}

EmotionSpec RunConfig::emotion_spec() const {
  return EmotionSpec::make_default(emotions.labels, model.prosody_vocab, emotions.peak, emotions.second);
}

CorpusOptions RunConfig::corpus_options() const {
  CorpusOptions o;
  o.train_scripts = corpus.train_scripts;
  o.dev_scripts = corpus.dev_scripts;
  o.test_scripts = corpus.test_scripts;
  o.speakers = model.n_speakers;
  o.min_script_len = corpus.min_script_len;
  o.max_script_len = corpus.max_script_len;
  o.content_vocab = model.content_vocab;
  o.seed = derive_seed(seed, "corpus");
  return o;
}

TrainConfig RunConfig::train_config(Regime regime) const {
  TrainConfig c;
  c.regime = regime;
  c.seed = derive_seed(seed, "train", static_cast<std::uint64_t>(regime));
  c.epsilon = training.epsilon;
  c.smoothing = emotions.pretrain_smoothing;
  c.grad_clip = training.grad_clip;
  c.weight_decay = training.weight_decay;
  if (regime == Regime::kPretrain) {
    c.learning_rate = training.pretrain_learning_rate;
    c.epochs = training.pretrain_epochs;
    c.batch_size = training.batch_size;
  } else {
    c.learning_rate = training.learning_rate;
    c.epochs = training.epochs;
    c.batch_size = is_steer_regime(regime) ? training.steer_batch_size : training.batch_size;
  }
  return c;
}

std::uint64_t RunConfig::eval_seed() const { return derive_seed(seed, "eval"); }

RunConfig parse_run_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  RunConfig c;
  Reader root(doc, "");
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);

  auto m = root.child("model");
  m.get("d_model", c.model.d_model);
  m.get("n_layers", c.model.n_layers);
  m.get("n_heads", c.model.n_heads);
  m.get("d_ff", c.model.d_ff);
  m.get("content_vocab", c.model.content_vocab);
  m.get("prosody_vocab", c.model.prosody_vocab);
  m.get("n_emotions", c.model.n_emotions);
  m.get("n_speakers", c.model.n_speakers);
  m.get("max_seq_len", c.model.max_seq_len);
  m.get("dropout", c.model.dropout);
  m.finish();

  auto e = root.child("emotions");
  e.get("labels", c.emotions.labels);
  e.get("peak", c.emotions.peak);
  e.get("second", c.emotions.second);
  e.get("pretrain_smoothing", c.emotions.pretrain_smoothing);
  e.finish();

  auto k = root.child("corpus");
  k.get("train_scripts", c.corpus.train_scripts);
  k.get("dev_scripts", c.corpus.dev_scripts);
  k.get("test_scripts", c.corpus.test_scripts);
  k.get("min_script_len", c.corpus.min_script_len);
  k.get("max_script_len", c.corpus.max_script_len);
  k.finish();

  auto t = root.child("training");
  t.get("pretrain_learning_rate", c.training.pretrain_learning_rate);
  t.get("pretrain_epochs", c.training.pretrain_epochs);
  t.get("learning_rate", c.training.learning_rate);
  t.get("epochs", c.training.epochs);
  t.get("batch_size", c.training.batch_size);
  t.get("steer_batch_size", c.training.steer_batch_size);
  t.get("epsilon", c.training.epsilon);
  t.get("grad_clip", c.training.grad_clip);
  t.get("weight_decay", c.training.weight_decay);
  t.finish();

  auto v = root.child("eval");
  v.get("alpha", c.eval.alpha);
  v.get("sweep_alphas", c.eval.sweep_alphas);
  v.get("temperature", c.eval.temperature);
  v.get("max_len", c.eval.max_len);
  v.finish();

  root.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_to_json(const RunConfig& c) {
  json j{
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"model",
       {{"d_model", c.model.d_model},
        {"n_layers", c.model.n_layers},
        {"n_heads", c.model.n_heads},
        {"d_ff", c.model.d_ff},
        {"content_vocab", c.model.content_vocab},
        {"prosody_vocab", c.model.prosody_vocab},
        {"n_emotions", c.model.n_emotions},
        {"n_speakers", c.model.n_speakers},
        {"max_seq_len", c.model.max_seq_len},
        {"dropout", c.model.dropout}}},
      {"emotions",
       {{"labels", c.emotions.labels},
        {"peak", c.emotions.peak},
        {"second", c.emotions.second},
        {"pretrain_smoothing", c.emotions.pretrain_smoothing}}},
      {"corpus",
       {{"train_scripts", c.corpus.train_scripts},
        {"dev_scripts", c.corpus.dev_scripts},
        {"test_scripts", c.corpus.test_scripts},
        {"min_script_len", c.corpus.min_script_len},
        {"max_script_len", c.corpus.max_script_len}}},
      {"training",
       {{"pretrain_learning_rate", c.training.pretrain_learning_rate},
        {"pretrain_epochs", c.training.pretrain_epochs},
        {"learning_rate", c.training.learning_rate},
        {"epochs", c.training.epochs},
        {"batch_size", c.training.batch_size},
        {"steer_batch_size", c.training.steer_batch_size},
        {"epsilon", c.training.epsilon},
        {"grad_clip", c.training.grad_clip},
        {"weight_decay", c.training.weight_decay}}},
      {"eval",
       {{"alpha", c.eval.alpha},
        {"sweep_alphas", c.eval.sweep_alphas},
        {"temperature", c.eval.temperature},
        {"max_len", c.eval.max_len}}},
  };
  return j.dump(2) + "\n";
}

}  // namespace emoshift
