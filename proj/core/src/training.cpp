#include "emoshift/training.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "emoshift/optim.hpp"
#include "emoshift/rng.hpp"

namespace emoshift {

std::string_view regime_name(Regime r) {
  switch (r) {
    case Regime::kPretrain:
      return "pretrain";
    case Regime::kSft:
      return "sft";
    case Regime::kEmoShift:
      return "emoshift";
    case Regime::kSftShift:
      return "sft-shift";
  }
  return "unknown";
}

Regime parse_regime(std::string_view name) {
  for (auto r : {Regime::kPretrain, Regime::kSft, Regime::kEmoShift, Regime::kSftShift}) {
    if (regime_name(r) == name) return r;
  }
  throw std::invalid_argument("unknown regime '" + std::string(name) + "' (pretrain | sft | emoshift | sft-shift)");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw std::invalid_argument("train config: learning rate must be positive");
  if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train config: batch size must be >= 1");
  if (!(epsilon > 0)) throw std::invalid_argument("train config: epsilon must be positive");
  if (!(grad_clip > 0)) throw std::invalid_argument("train config: gradient clip must be positive");
  if (!(smoothing >= 0 && smoothing <= 1)) throw std::invalid_argument("train config: smoothing must lie in [0, 1]");
}

std::uint64_t backbone_hash(const TransformerParams<float>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    h = fnv1a64({static_cast<const std::uint8_t*>(p), n}, h);
  };
  for (const auto* p : params.parameters()) {
    mix(p->name.data(), p->name.size());
    for (auto d : p->value.shape()) {
      const std::uint64_t d64 = d;
      mix(&d64, sizeof d64);
    }
    mix(p->value.data(), p->value.size() * sizeof(float));
  }
  return h;
}

LossTargets loss_targets(std::span<const SequenceLayout> batch, const ModelConfig& config) {
  LossTargets out;
  for (const auto& lay : batch) {
    if (lay.speech.empty() || !lay.terminated) {
      throw std::invalid_argument("compute_loss: layout missing speech tokens or end token");
    }
    const std::size_t len = lay.length();
    const std::size_t turn = lay.turn_pos();
    for (std::size_t t = 0; t < len; ++t) {
      // Row t predicts the token at t + 1; only T..y_m (predicting y_1..y_m, E) are supervised.
      if (t >= turn && t + 1 < len) {
        const std::size_t k = t - turn;  // index of the predicted speech token, m => E
        out.targets.push_back(k < lay.speech.size() ? config.speech_id(lay.speech[k]) : config.special_id(Special::kEnd));
        out.mask.push_back(1);
      } else {
        out.targets.push_back(0);
        out.mask.push_back(0);
      }
    }
  }
  return out;
}

template <typename T>
Var<T> compute_loss(Tape<T>& tape, std::span<const SequenceLayout> batch, TransformerParams<T>& params,
                    const SteerRequest<T>* steer, std::mt19937_64* dropout_rng) {
  const LossTargets lt = loss_targets(batch, params.config);
  const Embedded<T> emb = embed_batch(tape, params, batch);
  const ForwardResult<T> fr = forward(params, emb, steer, dropout_rng);
  return ops::cross_entropy(fr.logits, std::span<const int>(lt.targets), std::span<const std::uint8_t>(lt.mask));
}

std::vector<std::size_t> epoch_permutation(std::uint64_t seed, std::size_t epoch, std::size_t n) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  auto rng = make_rng(seed, "shuffle", epoch);
  shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

namespace {

void check_compatibility(const TrainConfig& cfg, const Corpus& corpus, const ModelConfig& mc, const TrainedCheckpoint* init) {
  auto fail = [&](const std::string& m) {
    throw std::invalid_argument("regime " + std::string(regime_name(cfg.regime)) + ": " + m);
  };
  switch (cfg.regime) {
    case Regime::kPretrain:
      if (init != nullptr) fail("trains from scratch and takes no init checkpoint");
      if (corpus.spec.smoothing != cfg.smoothing) {
        fail("expects a corpus smoothed with lambda = " + std::to_string(cfg.smoothing) + ", got " +
             std::to_string(corpus.spec.smoothing));
      }
      break;
    case Regime::kSft:
    case Regime::kEmoShift:
      if (init == nullptr) fail("requires an init checkpoint from the pretrain regime");
      if (init->regime != Regime::kPretrain) {
        fail("init checkpoint must come from pretrain, got " + std::string(regime_name(init->regime)));
      }
      break;
    case Regime::kSftShift:
      if (init == nullptr) fail("requires an init checkpoint from the sft regime");
      if (init->regime != Regime::kSft) fail("init checkpoint must come from sft, got " + std::string(regime_name(init->regime)));
      break;
  }
  if (cfg.regime != Regime::kPretrain && corpus.spec.smoothing != 0.0) {
    fail("fine-tuning expects the unsmoothed corpus (lambda = 0)");
  }
  if (init != nullptr && init->config() != mc) fail("init checkpoint was built for a different model configuration");
  if (mc.content_vocab != corpus.options.content_vocab || mc.prosody_vocab != corpus.spec.n_prosody() ||
      mc.n_emotions != corpus.spec.n_emotions() || mc.n_speakers < corpus.options.speakers) {
    fail("model configuration does not match the corpus vocabulary, emotions or speakers");
  }
}

std::vector<SequenceLayout> layouts_of(const std::vector<Utterance>& utts) {
  std::vector<SequenceLayout> out;
  out.reserve(utts.size());
  for (const auto& u : utts) out.push_back(u.layout());
  return out;
}

// Pre-steer final hidden rows T..y_m of every layout under a frozen backbone, plus their targets.
struct HiddenCache {
  std::vector<Tensor<float>> rows;
  std::vector<std::vector<int>> targets;
};

HiddenCache build_cache(TransformerParams<float>& params, const std::vector<SequenceLayout>& layouts) {
  HiddenCache cache;
  constexpr std::size_t kChunk = 64;
  const std::size_t d = params.config.d_model;
  for (std::size_t b = 0; b < layouts.size(); b += kChunk) {
    const std::size_t e = std::min(layouts.size(), b + kChunk);
    std::span<const SequenceLayout> chunk(layouts.data() + b, e - b);
    Tape<float> tape;
    NoGradGuard<float> ng(tape);
    const auto emb = embed_batch(tape, params, chunk);
    const auto& h = backbone_hidden(params, emb).value();
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const auto& seg = emb.segments[i];
      const std::size_t m = chunk[i].speech.size() + 1;
      cache.rows.emplace_back(Shape{m, d},
                              std::vector<float>(h.data() + seg.turn_row * d, h.data() + (seg.turn_row + m) * d));
      std::vector<int> tgt;
      for (int y : chunk[i].speech) tgt.push_back(params.config.speech_id(y));
      tgt.push_back(params.config.special_id(Special::kEnd));
      cache.targets.push_back(std::move(tgt));
    }
  }
  return cache;
}

Var<float> cached_loss(Tape<float>& tape, TransformerParams<float>& params, SteerBank<float>& bank,
                       const HiddenCache& cache, const std::vector<SequenceLayout>& layouts,
                       std::span<const std::size_t> idx) {
  const std::size_t d = params.config.d_model;
  std::size_t total = 0;
  for (auto i : idx) total += cache.rows[i].rows();
  Tensor<float> h = Tensor<float>::matrix(total, d);
  std::vector<SegmentInfo> segs;
  std::vector<int> targets;
  std::size_t off = 0;
  for (auto i : idx) {
    const auto& r = cache.rows[i];
    std::copy(r.vec().begin(), r.vec().end(), h.data() + off * d);
    segs.push_back({{off, r.rows()}, layouts[i].emotion, off});
    targets.insert(targets.end(), cache.targets[i].begin(), cache.targets[i].end());
    off += r.rows();
  }
  SteerRequest<float> req{&bank, 1.0f, std::nullopt};
  const auto fr = head_forward(params, tape.constant(std::move(h)), std::span<const SegmentInfo>(segs), &req);
  const std::vector<std::uint8_t> mask(targets.size(), 1);
  return ops::cross_entropy(fr.logits, std::span<const int>(targets), std::span<const std::uint8_t>(mask));
}

}  // namespace

TrainedCheckpoint run_regime(const TrainConfig& config, const Corpus& corpus, const ModelConfig& model_config,
                             const TrainedCheckpoint* init, const EpochCallback& on_epoch) {
  config.validate();
  model_config.validate();
  check_compatibility(config, corpus, model_config, init);

  TrainedCheckpoint ck;
  ck.regime = config.regime;
  if (init != nullptr) {
    ck.params = init->params;
    ck.parent_regime = init->regime;
    ck.parent_backbone_hash = init->backbone_hash;
  } else {
    ck.params = TransformerParams<float>::init(model_config, derive_seed(config.seed, "model-init"));
  }

  const bool steer_only = is_steer_regime(config.regime);
  std::vector<Parameter<float>*> trainable;
  if (steer_only) {
    ck.params.set_trainable(false);
    ck.steer = init_steer<float>(model_config, config.epsilon, config.steer_init, config.steer_init_sigma,
                                 derive_seed(config.seed, "steer-init"));
    ck.steer->set_trainable(true);
    trainable = ck.steer->parameters();
  } else {
    ck.params.set_trainable(true);
    trainable = ck.params.parameters();
  }
  for (auto* p : trainable) ck.trainable_params += p->value.size();

  const auto train_layouts = layouts_of(corpus.train);
  const auto dev_layouts = layouts_of(corpus.dev);
  const std::uint64_t frozen_hash_before = backbone_hash(ck.params);

  // A frozen backbone without dropout maps each layout to fixed hidden rows; compute them once.
  const bool use_cache = steer_only && model_config.dropout == 0.0;
  HiddenCache train_cache, dev_cache;
  if (use_cache) {
    train_cache = build_cache(ck.params, train_layouts);
    dev_cache = build_cache(ck.params, dev_layouts);
  }

  SteerRequest<float> steer_req{ck.steer ? &*ck.steer : nullptr, 1.0f, std::nullopt};
  const SteerRequest<float>* steer_ptr = ck.steer ? &steer_req : nullptr;

  auto batch_loss = [&](Tape<float>& tape, const std::vector<SequenceLayout>& layouts, const HiddenCache& cache,
                        std::span<const std::size_t> idx, std::mt19937_64* drop_rng) {
    if (use_cache) return cached_loss(tape, ck.params, *ck.steer, cache, layouts, idx);
    std::vector<SequenceLayout> batch;
    for (auto i : idx) batch.push_back(layouts[i]);
    return compute_loss(tape, std::span<const SequenceLayout>(batch), ck.params, steer_ptr, drop_rng);
  };

  auto dev_loss = [&]() {
    double total = 0;
    std::size_t rows = 0;
    constexpr std::size_t kChunk = 64;
    std::vector<std::size_t> idx;
    for (std::size_t b = 0; b < dev_layouts.size(); b += kChunk) {
      idx.clear();
      std::size_t supervised = 0;
      for (std::size_t i = b; i < std::min(dev_layouts.size(), b + kChunk); ++i) {
        idx.push_back(i);
        supervised += dev_layouts[i].speech.size() + 1;
      }
      Tape<float> tape;
      NoGradGuard<float> ng(tape);
      total += static_cast<double>(batch_loss(tape, dev_layouts, dev_cache, idx, nullptr).value().item()) *
               static_cast<double>(supervised);
      rows += supervised;
    }
    return total / static_cast<double>(rows);
  };

  AdamW<float> opt({config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay}, trainable);
  auto drop_rng = make_rng(config.seed, "dropout");
  std::mt19937_64* drop_ptr = model_config.dropout > 0 ? &drop_rng : nullptr;

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  EpochRecord rec0{0, 0, std::numeric_limits<double>::quiet_NaN(), dev_loss(), elapsed()};
  ck.history.push_back(rec0);
  if (on_epoch) on_epoch(rec0);

  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto perm = epoch_permutation(config.seed, epoch, train_layouts.size());
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < perm.size(); b += config.batch_size) {
      const std::size_t e = std::min(perm.size(), b + config.batch_size);
      std::span<const std::size_t> idx(perm.data() + b, e - b);
      for (auto* p : trainable) p->zero_grad();
      Tape<float> tape;
      auto loss = batch_loss(tape, train_layouts, train_cache, idx, drop_ptr);
      loss_sum += loss.value().item();
      tape.backward(loss);
      clip_grad_norm(trainable, config.grad_clip);
      opt.step();
      ++step;
      ++batches;
    }
    EpochRecord rec{epoch, step, loss_sum / static_cast<double>(batches), dev_loss(), elapsed()};
    ck.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }

  for (auto* p : ck.params.parameters()) p->trainable = true;
  if (ck.steer) ck.steer->set_trainable(true);
  ck.backbone_hash = backbone_hash(ck.params);
  if (steer_only && ck.backbone_hash != frozen_hash_before) {
    throw std::logic_error("frozen backbone changed during a steer-only regime");
  }
  ck.final_train_loss = ck.history.back().train_loss;
  ck.final_dev_loss = ck.history.back().dev_loss;
  return ck;
}

template Var<float> compute_loss<float>(Tape<float>&, std::span<const SequenceLayout>, TransformerParams<float>&,
                                        const SteerRequest<float>*, std::mt19937_64*);
template Var<double> compute_loss<double>(Tape<double>&, std::span<const SequenceLayout>, TransformerParams<double>&,
                                          const SteerRequest<double>*, std::mt19937_64*);

}  // namespace emoshift
