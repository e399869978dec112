#include <doctest.h>

#include <cmath>
#include <random>

#include "emoshift/checkpoint.hpp"
#include "emoshift/rng.hpp"
#include "emoshift/training.hpp"
#include "support/finite_diff.hpp"

using namespace emoshift;
using emoshift::testing::check_gradients;

namespace {

SequenceLayout random_layout(const ModelConfig& c, std::mt19937_64& rng) {
  std::vector<int> text(static_cast<std::size_t>(uniform_int(rng, 1, 8)));
  std::vector<int> speech(static_cast<std::size_t>(uniform_int(rng, 1, 16)));
  for (auto& x : text) x = static_cast<int>(uniform_int(rng, 0, static_cast<std::int64_t>(c.content_vocab) - 1));
  for (auto& y : speech) y = static_cast<int>(uniform_int(rng, 0, static_cast<std::int64_t>(c.speech_vocab()) - 1));
  return SequenceLayout::training(static_cast<int>(uniform_int(rng, 0, static_cast<std::int64_t>(c.n_speakers) - 1)),
                                  static_cast<int>(uniform_int(rng, 0, static_cast<std::int64_t>(c.n_emotions) - 1)),
                                  text, speech);
}

template <typename T>
void randomize(TransformerParams<T>& p, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  for (auto* q : p.parameters()) {
    for (auto& v : q->value.vec()) v = static_cast<T>(scale * standard_normal(rng));
  }
}

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 32;
  c.n_speakers = 2;
  c.max_seq_len = 48;
  return c;
}

CorpusOptions small_corpus() {
  CorpusOptions o;
  o.train_scripts = 8;
  o.dev_scripts = 2;
  o.test_scripts = 2;
  o.speakers = 2;
  o.min_script_len = 3;
  o.max_script_len = 6;
  o.seed = 4;
  return o;
}

TrainConfig small_train(Regime r) {
  TrainConfig t;
  t.regime = r;
  t.seed = 21;
  t.batch_size = 8;
  if (r == Regime::kPretrain) {
    t.learning_rate = 3e-3;
    t.epochs = 3;
  }
  return t;
}

struct Fixture {
  ModelConfig mc = small_config();
  Corpus pre = gen_corpus(EmotionSpec::make_default().with_smoothing(0.5), small_corpus());
  Corpus clean = gen_corpus(EmotionSpec::make_default(), small_corpus());
  TrainedCheckpoint backbone = run_regime(small_train(Regime::kPretrain), pre, mc, nullptr);
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

}  // namespace

TEST_SUITE("loss") {
  TEST_CASE("uniform head gives ln V exactly; default init is within 0.1 of it") {
    ModelConfig c;
    auto p = TransformerParams<double>::init(c, 1);
    std::mt19937_64 rng(2);
    const std::vector<SequenceLayout> batch{random_layout(c, rng), random_layout(c, rng)};
    {
      Tape<double> tape;
      CHECK(std::abs(compute_loss(tape, std::span<const SequenceLayout>(batch), p).value().item() - std::log(36.0)) < 0.1);
    }
    for (auto& v : p.head_weight.value.vec()) v = 0;
    Tape<double> tape;
    CHECK(compute_loss(tape, std::span<const SequenceLayout>(batch), p).value().item() ==
          doctest::Approx(std::log(36.0)).epsilon(1e-12));
  }

  TEST_CASE("a batch of one equals the same layout twice") {
    ModelConfig c;
    auto p = TransformerParams<float>::init(c, 3);
    randomize(p, 4, 0.2);
    std::mt19937_64 rng(5);
    const auto lay = random_layout(c, rng);
    const std::vector<SequenceLayout> one{lay}, two{lay, lay};
    Tape<float> tape;
    CHECK(compute_loss(tape, std::span<const SequenceLayout>(one), p).value().item() ==
          compute_loss(tape, std::span<const SequenceLayout>(two), p).value().item());
  }

  TEST_CASE("loss equals a position-by-position recomputation from the logits") {
    ModelConfig c;
    auto p = TransformerParams<double>::init(c, 6);
    randomize(p, 7, 0.2);
    std::mt19937_64 rng(8);
    const std::vector<SequenceLayout> batch{random_layout(c, rng), random_layout(c, rng), random_layout(c, rng)};
    Tape<double> tape;
    const double loss = compute_loss(tape, std::span<const SequenceLayout>(batch), p).value().item();
    double total = 0;
    std::size_t count = 0;
    for (const auto& lay : batch) {
      Tape<double> t2;
      const auto logits = forward(p, embed_layout(t2, p, lay)).logits.value();
      for (std::size_t k = 0; k <= lay.speech.size(); ++k) {
        const std::size_t row = lay.turn_pos() + k;
        const int target = k < lay.speech.size() ? c.speech_id(lay.speech[k]) : 3;
        double z = 0;
        for (std::size_t j = 0; j < logits.cols(); ++j) z += std::exp(logits(row, j));
        total += std::log(z) - logits(row, static_cast<std::size_t>(target));
        ++count;
      }
    }
    CHECK(loss == doctest::Approx(total / static_cast<double>(count)).epsilon(1e-12));
  }

  TEST_CASE("layouts without speech or end token are rejected") {
    ModelConfig c;
    auto p = TransformerParams<float>::init(c, 9);
    Tape<float> tape;
    const std::vector<SequenceLayout> cond{SequenceLayout::conditioning(0, 0, {1, 2})};
    CHECK_THROWS_AS(compute_loss(tape, std::span<const SequenceLayout>(cond), p), std::invalid_argument);
    auto open = SequenceLayout::training(0, 0, {1}, {2});
    open.terminated = false;
    const std::vector<SequenceLayout> unterminated{open};
    CHECK_THROWS_AS(compute_loss(tape, std::span<const SequenceLayout>(unterminated), p), std::invalid_argument);
  }

  TEST_CASE("logit gradients are exactly zero outside the supervised rows on 50 layouts") {
    ModelConfig c;
    auto p = TransformerParams<float>::init(c, 10);
    randomize(p, 11, 0.2);
    std::mt19937_64 rng(12);
    for (int i = 0; i < 50; ++i) {
      const std::vector<SequenceLayout> batch{random_layout(c, rng)};
      const auto& lay = batch.front();
      const auto lt = loss_targets(std::span<const SequenceLayout>(batch), c);
      Tape<float> tape;
      const auto logits = forward(p, embed_layout(tape, p, lay)).logits;
      const auto loss = ops::cross_entropy(logits, std::span<const int>(lt.targets), std::span<const std::uint8_t>(lt.mask));
      tape.backward(loss, true);
      const auto g = tape.grad(logits);
      bool masked_zero = true, supervised_nonzero = true;
      for (std::size_t t = 0; t < lay.length(); ++t) {
        const bool supervised = t >= lay.turn_pos() && t + 1 < lay.length();
        CHECK(static_cast<bool>(lt.mask[t]) == supervised);
        double norm = 0;
        for (std::size_t j = 0; j < g.cols(); ++j) norm += std::abs(g(t, j));
        if (supervised) {
          supervised_nonzero = supervised_nonzero && norm > 0;
        } else {
          masked_zero = masked_zero && norm == 0.0;
        }
      }
      CHECK(masked_zero);
      CHECK(supervised_nonzero);
    }
  }
}

TEST_SUITE("gradient checks") {
  TEST_CASE("full model loss in double precision") {
    ModelConfig c;
    c.d_model = 8;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_ff = 16;
    c.content_vocab = 5;
    c.prosody_vocab = 5;
    c.n_speakers = 2;
    c.max_seq_len = 40;
    auto p = TransformerParams<double>::init(c, 13);
    randomize(p, 14, 0.3);
    std::mt19937_64 rng(15);
    const std::vector<SequenceLayout> batch{random_layout(c, rng), random_layout(c, rng)};
    auto loss = [&](Tape<double>& tape) { return compute_loss(tape, std::span<const SequenceLayout>(batch), p); };
    const auto rep = check_gradients(p.parameters(), loss, 60, 16);
    CHECK(rep.checked == 60);
    CHECK(rep.max_rel_error <= 1e-5);
  }

  TEST_CASE("steering projections through the full loss") {
    ModelConfig c;
    c.d_model = 8;
    c.n_layers = 1;
    c.n_heads = 2;
    c.d_ff = 16;
    c.content_vocab = 5;
    c.prosody_vocab = 5;
    c.n_speakers = 2;
    c.max_seq_len = 40;
    auto p = TransformerParams<double>::init(c, 17);
    randomize(p, 18, 0.3);
    p.set_trainable(false);
    auto bank = init_steer<double>(c, 0.05, SteerInit::kGaussian, 0.5, 19);
    std::mt19937_64 rng(20);
    std::vector<SequenceLayout> batch;
    for (int e = 0; e < 5; ++e) {
      auto lay = random_layout(c, rng);
      lay.emotion = e;
      batch.push_back(lay);
    }
    SteerRequest<double> req{&bank, 2.0, std::nullopt};
    auto loss = [&](Tape<double>& tape) { return compute_loss(tape, std::span<const SequenceLayout>(batch), p, &req); };
    const auto rep = check_gradients(bank.parameters(), loss, 40, 21);
    CHECK(rep.checked == 40);
    CHECK(rep.max_rel_error <= 1e-5);
    for (auto* q : p.parameters()) {
      bool zero = true;
      for (double v : q->grad.vec()) zero = zero && v == 0.0;
      CHECK(zero);
    }
  }
}

TEST_SUITE("regimes") {
  TEST_CASE("regime names parse both ways") {
    for (auto r : {Regime::kPretrain, Regime::kSft, Regime::kEmoShift, Regime::kSftShift}) {
      CHECK(parse_regime(regime_name(r)) == r);
    }
    CHECK(regime_name(Regime::kSftShift) == "sft-shift");
    CHECK_THROWS_AS(parse_regime("lora"), std::invalid_argument);
  }

  TEST_CASE("config validation") {
    TrainConfig t;
    CHECK_NOTHROW(t.validate());
    t.learning_rate = 0;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t = TrainConfig{};
    t.epochs = 0;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
  }

  TEST_CASE("regime and init mismatches fail before training") {
    const auto& f = fixture();
    CHECK_THROWS_AS(run_regime(small_train(Regime::kEmoShift), f.clean, f.mc, nullptr), std::invalid_argument);
    CHECK_THROWS_AS(run_regime(small_train(Regime::kSft), f.clean, f.mc, nullptr), std::invalid_argument);
    CHECK_THROWS_AS(run_regime(small_train(Regime::kSftShift), f.clean, f.mc, &f.backbone), std::invalid_argument);
    CHECK_THROWS_AS(run_regime(small_train(Regime::kPretrain), f.pre, f.mc, &f.backbone), std::invalid_argument);
    CHECK_THROWS_AS(run_regime(small_train(Regime::kPretrain), f.clean, f.mc, nullptr), std::invalid_argument);
    CHECK_THROWS_AS(run_regime(small_train(Regime::kEmoShift), f.pre, f.mc, &f.backbone), std::invalid_argument);
    ModelConfig other = f.mc;
    other.d_ff = 64;
    CHECK_THROWS_AS(run_regime(small_train(Regime::kEmoShift), f.clean, other, &f.backbone), std::invalid_argument);
  }

  TEST_CASE("pretraining lowers dev loss and records every epoch") {
    const auto& b = fixture().backbone;
    REQUIRE(b.history.size() == 4);
    CHECK(std::isnan(b.history[0].train_loss));
    CHECK(b.history.back().dev_loss < b.history.front().dev_loss);
    CHECK(b.history.back().step == 30);
    CHECK_FALSE(b.steer.has_value());
    CHECK(b.trainable_params == b.params.parameter_count());
    CHECK(b.backbone_hash == backbone_hash(b.params));
  }

  TEST_CASE("emoshift trains only the bank and leaves the backbone bit-identical") {
    const auto& f = fixture();
    const auto before = f.backbone.params;
    const auto es = run_regime(small_train(Regime::kEmoShift), f.clean, f.mc, &f.backbone);
    const auto pa = before.parameters();
    const auto pb = es.params.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
    CHECK(es.backbone_hash == f.backbone.backbone_hash);
    CHECK(es.parent_backbone_hash == f.backbone.backbone_hash);
    CHECK(es.parent_regime == Regime::kPretrain);
    REQUIRE(es.steer.has_value());
    CHECK(es.trainable_params == f.mc.n_emotions * f.mc.d_model * f.mc.d_model);
    bool moved = false;
    for (const auto& w : es.steer->projections) {
      for (float v : w.value.vec()) moved = moved || v != 0.0f;
    }
    CHECK(moved);
    CHECK(es.history.back().dev_loss < es.history.front().dev_loss);
  }

  TEST_CASE("cached training loss matches the full forward pass") {
    const auto& f = fixture();
    auto es = run_regime(small_train(Regime::kEmoShift), f.clean, f.mc, &f.backbone);
    // Recompute the final dev loss with the uncached path.
    double total = 0;
    std::size_t rows = 0;
    SteerRequest<float> req{&*es.steer, 1.0f, std::nullopt};
    for (const auto& u : f.clean.dev) {
      const std::vector<SequenceLayout> one{u.layout()};
      Tape<float> tape;
      total += static_cast<double>(compute_loss(tape, std::span<const SequenceLayout>(one), es.params, &req).value().item()) *
               static_cast<double>(u.speech.size() + 1);
      rows += u.speech.size() + 1;
    }
    CHECK(total / static_cast<double>(rows) == doctest::Approx(es.final_dev_loss).epsilon(1e-5));
  }

  TEST_CASE("sft trains every parameter and sft-shift builds on it") {
    const auto& f = fixture();
    const auto sft = run_regime(small_train(Regime::kSft), f.clean, f.mc, &f.backbone);
    CHECK(sft.trainable_params == f.backbone.params.parameter_count());
    CHECK(sft.backbone_hash != f.backbone.backbone_hash);
    CHECK(sft.history.back().dev_loss < sft.history.front().dev_loss);
    const auto shift = run_regime(small_train(Regime::kSftShift), f.clean, f.mc, &sft);
    CHECK(shift.backbone_hash == sft.backbone_hash);
    CHECK(shift.parent_regime == Regime::kSft);
    CHECK(shift.trainable_params == 5 * 16 * 16);
    CHECK(shift.history.back().dev_loss < shift.history.front().dev_loss);
    CHECK(static_cast<double>(shift.trainable_params) / static_cast<double>(sft.trainable_params) < 0.5);
  }

  TEST_CASE("identical config and seed give byte-identical checkpoints") {
    const auto& f = fixture();
    const auto a = run_regime(small_train(Regime::kEmoShift), f.clean, f.mc, &f.backbone);
    const auto b = run_regime(small_train(Regime::kEmoShift), f.clean, f.mc, &f.backbone);
    CHECK(encode_checkpoint(a, "") == encode_checkpoint(b, ""));
    auto other = small_train(Regime::kEmoShift);
    other.seed = 22;
    CHECK_FALSE(encode_checkpoint(run_regime(other, f.clean, f.mc, &f.backbone), "") == encode_checkpoint(a, ""));
  }

  TEST_CASE("epoch permutation is a pure function of seed and epoch") {
    const auto a = epoch_permutation(1, 3, 100);
    CHECK(epoch_permutation(1, 3, 100) == a);
    CHECK_FALSE(epoch_permutation(1, 4, 100) == a);
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 100; ++i) CHECK(sorted[i] == i);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("save, load, save is byte-identical") {
    const auto& f = fixture();
    const auto es = run_regime(small_train(Regime::kEmoShift), f.clean, f.mc, &f.backbone);
    const std::string cfg = "{\n  \"seed\": 3\n}\n";
    const auto bytes = encode_checkpoint(es, cfg);
    CHECK(bytes.substr(0, 4) == "EMSH");
    const auto loaded = decode_checkpoint(bytes);
    CHECK(encode_checkpoint(loaded.checkpoint, loaded.run_config_json) == bytes);
    CHECK(loaded.checkpoint.regime == Regime::kEmoShift);
    CHECK(loaded.checkpoint.steer->epsilon == 0.001);
    CHECK(loaded.checkpoint.trainable_params == es.trainable_params);
    CHECK(loaded.checkpoint.history.size() == es.history.size());
    CHECK(std::isnan(loaded.checkpoint.history[0].train_loss));
  }

  TEST_CASE("backbone checkpoints carry no steering records") {
    const auto bytes = encode_checkpoint(fixture().backbone, "");
    CHECK(bytes.find("steer.") == std::string::npos);
    CHECK_FALSE(decode_checkpoint(bytes).checkpoint.steer.has_value());
  }

  TEST_CASE("corrupt files are rejected") {
    const auto bytes = encode_checkpoint(fixture().backbone, "");
    CHECK_THROWS_AS(decode_checkpoint("XXXX" + bytes.substr(4)), CheckpointError);
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() / 2)), CheckpointError);
    CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), CheckpointError);
    auto flipped = bytes;
    flipped[bytes.size() / 2] = static_cast<char>(flipped[bytes.size() / 2] ^ 0x40);
    CHECK_THROWS_AS(decode_checkpoint(flipped), CheckpointError);
  }
}
