#include "emoshift/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "emoshift/kernels.hpp"
#include "emoshift/rng.hpp"

namespace emoshift {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0) fail("widths, layers and heads must be positive");
  if (d_model % n_heads != 0) fail("d_model " + std::to_string(d_model) + " is not divisible by n_heads " + std::to_string(n_heads));
  if (content_vocab < 2 || prosody_vocab < 2) fail("vocabulary sizes must be >= 2");
  if (n_special != kNumSpecial) fail("exactly 4 special tokens are supported");
  if (n_emotions < 2) fail("at least 2 emotions are required");
  if (n_speakers < 1) fail("at least 1 speaker is required");
  if (max_seq_len < 8) fail("max_seq_len is too small");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must lie in [0, 1)");
}

// ---------------------------------------------------------------------------------------------
// SequenceLayout

SequenceLayout SequenceLayout::training(int speaker, int emotion, std::vector<int> text, std::vector<int> speech) {
  return SequenceLayout{speaker, emotion, std::move(text), std::move(speech), true};
}

SequenceLayout SequenceLayout::conditioning(int speaker, int emotion, std::vector<int> text) {
  return SequenceLayout{speaker, emotion, std::move(text), {}, false};
}

std::vector<SequenceLayout::Slot> SequenceLayout::slots() const {
  std::vector<Slot> out;
  out.reserve(length());
  out.push_back({SlotKind::kSpecial, static_cast<int>(Special::kStart)});
  out.push_back({SlotKind::kSpeaker, speaker});
  out.push_back({SlotKind::kPrompt, emotion});
  out.push_back({SlotKind::kSpecial, static_cast<int>(Special::kEndPrompt)});
  for (int x : text) out.push_back({SlotKind::kText, x});
  out.push_back({SlotKind::kSpecial, static_cast<int>(Special::kTurn)});
  for (int y : speech) out.push_back({SlotKind::kSpeech, y});
  if (terminated) out.push_back({SlotKind::kSpecial, static_cast<int>(Special::kEnd)});
  return out;
}

SequenceLayout SequenceLayout::from_slots(std::span<const Slot> slots) {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("sequence layout: " + msg); };
  auto is_special = [](const Slot& s, Special sp) {
    return s.kind == SlotKind::kSpecial && s.value == static_cast<int>(sp);
  };
  if (slots.size() < 5) fail("too short");
  if (!is_special(slots[0], Special::kStart)) fail("must begin with the start token");
  if (slots[1].kind != SlotKind::kSpeaker) fail("speaker embedding must follow the start token");
  if (slots[2].kind != SlotKind::kPrompt) fail("emotion prompt must follow the speaker");
  if (!is_special(slots[3], Special::kEndPrompt)) fail("end-of-prompt token missing");
  SequenceLayout out;
  out.speaker = slots[1].value;
  out.emotion = slots[2].value;
  out.terminated = false;
  std::size_t i = 4;
  for (; i < slots.size() && slots[i].kind == SlotKind::kText; ++i) out.text.push_back(slots[i].value);
  if (i == slots.size() || !is_special(slots[i], Special::kTurn)) fail("turn-of-speech token missing after text");
  for (++i; i < slots.size() && slots[i].kind == SlotKind::kSpeech; ++i) out.speech.push_back(slots[i].value);
  if (i < slots.size()) {
    if (!is_special(slots[i], Special::kEnd)) fail("unexpected slot in the speech region");
    if (i + 1 != slots.size()) fail("end token must be terminal");
    out.terminated = true;
  }
  return out;
}

void SequenceLayout::validate(const ModelConfig& config) const {
  auto fail = [](const std::string& msg) { throw std::out_of_range("sequence layout: " + msg); };
  if (speaker < 0 || static_cast<std::size_t>(speaker) >= config.n_speakers) fail("speaker id " + std::to_string(speaker));
  if (emotion < 0 || static_cast<std::size_t>(emotion) >= config.n_emotions) fail("emotion id " + std::to_string(emotion));
  for (int x : text) {
    if (x < 0 || static_cast<std::size_t>(x) >= config.content_vocab) fail("text token " + std::to_string(x));
  }
  for (int y : speech) {
    if (y < 0 || static_cast<std::size_t>(y) >= config.speech_vocab()) fail("speech token " + std::to_string(y));
  }
  if (length() > config.max_seq_len) {
    fail("length " + std::to_string(length()) + " exceeds max_seq_len " + std::to_string(config.max_seq_len));
  }
}

// ---------------------------------------------------------------------------------------------
// Parameters

namespace {

template <typename T>
Parameter<T> normal_param(const std::string& name, std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Tensor<T> t = Tensor<T>::matrix(rows, cols);
  auto rng = make_rng(seed, "init:" + name);
  for (auto& v : t.vec()) v = static_cast<T>(0.02 * standard_normal(rng));
  return Parameter<T>(name, std::move(t));
}

template <typename T>
Parameter<T> const_param(const std::string& name, std::size_t cols, T value) {
  return Parameter<T>(name, Tensor<T>::matrix(1, cols, value));
}

}  // namespace

template <typename T>
TransformerParams<T> TransformerParams<T>::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t d = config.d_model;
  TransformerParams p;
  p.config = config;
  p.token_embedding = normal_param<T>("token_embedding", config.input_vocab(), d, seed);
  p.position_embedding = normal_param<T>("position_embedding", config.max_seq_len, d, seed);
  p.speaker_embedding = normal_param<T>("speaker_embedding", config.n_speakers, d, seed);
  p.prompt_embedding = normal_param<T>("prompt_embedding", config.n_emotions, d, seed);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    LayerParams<T> lp;
    lp.ln1_gain = const_param<T>(pre + "ln1.gain", d, T(1));
    lp.ln1_bias = const_param<T>(pre + "ln1.bias", d, T(0));
    lp.qkv_weight = normal_param<T>(pre + "attn.qkv.weight", d, 3 * d, seed);
    lp.qkv_bias = const_param<T>(pre + "attn.qkv.bias", 3 * d, T(0));
    lp.out_weight = normal_param<T>(pre + "attn.out.weight", d, d, seed);
    lp.out_bias = const_param<T>(pre + "attn.out.bias", d, T(0));
    lp.ln2_gain = const_param<T>(pre + "ln2.gain", d, T(1));
    lp.ln2_bias = const_param<T>(pre + "ln2.bias", d, T(0));
    lp.ff1_weight = normal_param<T>(pre + "ff1.weight", d, config.d_ff, seed);
    lp.ff1_bias = const_param<T>(pre + "ff1.bias", config.d_ff, T(0));
    lp.ff2_weight = normal_param<T>(pre + "ff2.weight", config.d_ff, d, seed);
    lp.ff2_bias = const_param<T>(pre + "ff2.bias", d, T(0));
    p.layers.push_back(std::move(lp));
  }
  p.final_gain = const_param<T>("final_norm.gain", d, T(1));
  p.final_bias = const_param<T>("final_norm.bias", d, T(0));
  p.head_weight = normal_param<T>("head.weight", d, config.output_vocab(), seed);
  p.head_bias = const_param<T>("head.bias", config.output_vocab(), T(0));
  return p;
}

template <typename T>
std::vector<Parameter<T>*> TransformerParams<T>::parameters() {
  std::vector<Parameter<T>*> out{&token_embedding, &position_embedding, &speaker_embedding, &prompt_embedding};
  for (auto& l : layers) {
    for (auto* p : {&l.ln1_gain, &l.ln1_bias, &l.qkv_weight, &l.qkv_bias, &l.out_weight, &l.out_bias, &l.ln2_gain,
                    &l.ln2_bias, &l.ff1_weight, &l.ff1_bias, &l.ff2_weight, &l.ff2_bias}) {
      out.push_back(p);
    }
  }
  for (auto* p : {&final_gain, &final_bias, &head_weight, &head_bias}) out.push_back(p);
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> TransformerParams<T>::parameters() const {
  auto mut = const_cast<TransformerParams*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

template <typename T>
std::size_t TransformerParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

template <typename T>
void TransformerParams<T>::set_trainable(bool on) {
  for (auto* p : parameters()) p->trainable = on;
}

// ---------------------------------------------------------------------------------------------
// Forward

namespace {

enum class Table : std::uint8_t { kToken, kSpeaker, kPrompt };

struct RowSource {
  Table table;
  int id;
  int position;
};

std::pair<Table, int> slot_source(const ModelConfig& c, const SequenceLayout::Slot& s) {
  using K = SequenceLayout::SlotKind;
  switch (s.kind) {
    case K::kSpecial:
      return {Table::kToken, s.value};
    case K::kSpeaker:
      return {Table::kSpeaker, s.value};
    case K::kPrompt:
      return {Table::kPrompt, s.value};
    case K::kText:
      return {Table::kToken, c.text_id(s.value)};
    case K::kSpeech:
      return {Table::kToken, c.speech_id(s.value)};
  }
  throw std::logic_error("unknown slot kind");
}

template <typename T>
const Tensor<T>& table_value(const TransformerParams<T>& p, Table t) {
  switch (t) {
    case Table::kToken:
      return p.token_embedding.value;
    case Table::kSpeaker:
      return p.speaker_embedding.value;
    case Table::kPrompt:
      return p.prompt_embedding.value;
  }
  throw std::logic_error("unknown table");
}

template <typename T>
void check_row_source(const TransformerParams<T>& p, Table t, int id, std::size_t position) {
  const auto& tab = table_value(p, t);
  if (id < 0 || static_cast<std::size_t>(id) >= tab.rows()) {
    throw std::out_of_range("embedding id " + std::to_string(id) + " outside table of " + std::to_string(tab.rows()) +
                            " rows");
  }
  if (position >= p.config.max_seq_len) {
    throw std::out_of_range("position " + std::to_string(position) + " exceeds max_seq_len " +
                            std::to_string(p.config.max_seq_len));
  }
}

}  // namespace

template <typename T>
Embedded<T> embed_batch(Tape<T>& tape, TransformerParams<T>& params, std::span<const SequenceLayout> layouts) {
  if (layouts.empty()) throw std::invalid_argument("embed_batch: no layouts");
  const ModelConfig& c = params.config;
  const std::size_t d = c.d_model;
  std::vector<RowSource> src;
  Embedded<T> out;
  for (const auto& lay : layouts) {
    lay.validate(c);
    const auto slots = lay.slots();
    SegmentInfo seg;
    seg.rows = {src.size(), slots.size()};
    seg.emotion = lay.emotion;
    seg.turn_row = src.size() + lay.turn_pos();
    for (std::size_t t = 0; t < slots.size(); ++t) {
      auto [table, id] = slot_source(c, slots[t]);
      check_row_source(params, table, id, t);
      src.push_back({table, id, static_cast<int>(t)});
    }
    out.segments.push_back(seg);
  }

  Tensor<T> value = Tensor<T>::matrix(src.size(), d);
  const auto& pos = params.position_embedding.value;
  for (std::size_t r = 0; r < src.size(); ++r) {
    const T* tab = table_value(params, src[r].table).data() + static_cast<std::size_t>(src[r].id) * d;
    const T* pe = pos.data() + static_cast<std::size_t>(src[r].position) * d;
    T* o = value.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) o[j] = tab[j] + pe[j];
  }

  const Var<T> tok = tape.param(params.token_embedding);
  const Var<T> spk = tape.param(params.speaker_embedding);
  const Var<T> prm = tape.param(params.prompt_embedding);
  const Var<T> pvar = tape.param(params.position_embedding);
  out.x = tape.record(std::move(value), {tok, spk, prm, pvar},
                      [tok, spk, prm, pvar, src = std::move(src), d](const Tensor<T>& g, Tape<T>& tp) {
                        Tensor<T>* sinks[3] = {tp.grad_sink(tok), tp.grad_sink(spk), tp.grad_sink(prm)};
                        Tensor<T>* gp = tp.grad_sink(pvar);
                        for (std::size_t r = 0; r < src.size(); ++r) {
                          const T* gr = g.data() + r * d;
                          if (auto* gt = sinks[static_cast<int>(src[r].table)]) {
                            T* dst = gt->data() + static_cast<std::size_t>(src[r].id) * d;
                            for (std::size_t j = 0; j < d; ++j) dst[j] += gr[j];
                          }
                          if (gp != nullptr) {
                            T* dst = gp->data() + static_cast<std::size_t>(src[r].position) * d;
                            for (std::size_t j = 0; j < d; ++j) dst[j] += gr[j];
                          }
                        }
                      });
  return out;
}

template <typename T>
Embedded<T> embed_layout(Tape<T>& tape, TransformerParams<T>& params, const SequenceLayout& layout) {
  return embed_batch(tape, params, std::span<const SequenceLayout>(&layout, 1));
}

template <typename T>
Var<T> backbone_hidden(TransformerParams<T>& params, const Embedded<T>& emb, std::mt19937_64* dropout_rng) {
  Tape<T>& tape = *emb.x.tape;
  const ModelConfig& c = params.config;
  std::vector<ops::Segment> segs;
  for (const auto& s : emb.segments) segs.push_back(s.rows);
  const double drop = dropout_rng != nullptr ? c.dropout : 0.0;

  Var<T> x = emb.x;
  for (auto& l : params.layers) {
    Var<T> a = ops::layer_norm(x, tape.param(l.ln1_gain), tape.param(l.ln1_bias));
    Var<T> qkv = ops::add_row(ops::matmul(a, tape.param(l.qkv_weight)), tape.param(l.qkv_bias));
    Var<T> att = ops::causal_attention(qkv, std::span<const ops::Segment>(segs), c.n_heads);
    Var<T> o = ops::add_row(ops::matmul(att, tape.param(l.out_weight)), tape.param(l.out_bias));
    if (drop > 0) o = ops::dropout(o, drop, *dropout_rng);
    x = ops::add(x, o);
    Var<T> a2 = ops::layer_norm(x, tape.param(l.ln2_gain), tape.param(l.ln2_bias));
    Var<T> f = ops::gelu(ops::add_row(ops::matmul(a2, tape.param(l.ff1_weight)), tape.param(l.ff1_bias)));
    f = ops::add_row(ops::matmul(f, tape.param(l.ff2_weight)), tape.param(l.ff2_bias));
    if (drop > 0) f = ops::dropout(f, drop, *dropout_rng);
    x = ops::add(x, f);
  }
  return ops::layer_norm(x, tape.param(params.final_gain), tape.param(params.final_bias));
}

template <typename T>
ForwardResult<T> head_forward(TransformerParams<T>& params, Var<T> hidden, std::span<const SegmentInfo> segments,
                              const SteerRequest<T>* steer) {
  Tape<T>& tape = *hidden.tape;
  if (steer != nullptr && steer->bank != nullptr) {
    std::vector<SteerRows> rows;
    for (const auto& s : segments) {
      const int e = steer->emotion.value_or(s.emotion);
      rows.push_back({s.turn_row, s.rows.offset + s.rows.length, e});
    }
    hidden = steer_rows(hidden, std::span<const SteerRows>(rows), steer->gain, *steer->bank);
  }
  Var<T> logits = ops::add_row(ops::matmul(hidden, tape.param(params.head_weight)), tape.param(params.head_bias));
  return {logits, hidden};
}

template <typename T>
ForwardResult<T> forward(TransformerParams<T>& params, const Embedded<T>& emb, const SteerRequest<T>* steer,
                         std::mt19937_64* dropout_rng) {
  Var<T> h = backbone_hidden(params, emb, dropout_rng);
  return head_forward(params, h, std::span<const SegmentInfo>(emb.segments), steer);
}

// ---------------------------------------------------------------------------------------------
// Incremental decoding

template <typename T>
IncrementalDecoder<T>::IncrementalDecoder(const TransformerParams<T>& params, const SteerBank<T>* bank,
                                          int steer_emotion, T gain)
    : params_(params), bank_(bank), emotion_(steer_emotion), coef_(T(0)) {
  const ModelConfig& c = params.config;
  if (bank_ != nullptr) {
    if (steer_emotion < 0 || static_cast<std::size_t>(steer_emotion) >= bank_->n_emotions()) {
      throw std::out_of_range("steer emotion id " + std::to_string(steer_emotion) + " outside bank of " +
                              std::to_string(bank_->n_emotions()));
    }
    if (gain < T(0)) throw std::invalid_argument("steering gain must be >= 0");
    coef_ = steer_coefficient(*bank_, gain);
  }
  const std::size_t d = c.d_model;
  keys_.resize(c.n_layers);
  values_.resize(c.n_layers);
  x_.resize(d);
  a_.resize(d);
  qkv_.resize(3 * d);
  att_.resize(d);
  proj_.resize(d);
  ff_.resize(c.d_ff);
  probs_.resize(c.max_seq_len);
  hidden_.resize(d);
  steered_.resize(d);
  scratch_.resize(d);
  logits_.resize(c.output_vocab());
}

template <typename T>
std::span<const T> IncrementalDecoder<T>::push(const SequenceLayout::Slot& slot) {
  const ModelConfig& c = params_.config;
  const std::size_t d = c.d_model;
  const std::size_t dh = d / c.n_heads;
  auto [table, id] = slot_source(c, slot);
  check_row_source(params_, table, id, pos_);
  if (slot.kind == SequenceLayout::SlotKind::kSpecial && slot.value == static_cast<int>(Special::kTurn)) {
    steering_ = bank_ != nullptr;
  }

  const T* tab = table_value(params_, table).data() + static_cast<std::size_t>(id) * d;
  const T* pe = params_.position_embedding.value.data() + pos_ * d;
  for (std::size_t j = 0; j < d; ++j) x_[j] = tab[j] + pe[j];

  const T sc = T(1) / std::sqrt(static_cast<T>(dh));
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& lp = params_.layers[l];
    kernels::layer_norm_row(x_.data(), lp.ln1_gain.value.data(), lp.ln1_bias.value.data(), d, T(1e-5), a_.data(),
                            static_cast<T*>(nullptr), static_cast<T*>(nullptr));
    kernels::gemm_nn(a_.data(), lp.qkv_weight.value.data(), qkv_.data(), 1, d, 3 * d, false);
    for (std::size_t j = 0; j < 3 * d; ++j) qkv_[j] += lp.qkv_bias.value[j];
    auto& K = keys_[l];
    auto& V = values_[l];
    K.insert(K.end(), qkv_.begin() + static_cast<std::ptrdiff_t>(d), qkv_.begin() + static_cast<std::ptrdiff_t>(2 * d));
    V.insert(V.end(), qkv_.begin() + static_cast<std::ptrdiff_t>(2 * d), qkv_.end());
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      kernels::attention_row(qkv_.data() + h * dh, K.data() + h * dh, V.data() + h * dh, d, pos_ + 1, dh, sc,
                             probs_.data(), att_.data() + h * dh);
    }
    kernels::gemm_nn(att_.data(), lp.out_weight.value.data(), proj_.data(), 1, d, d, false);
    for (std::size_t j = 0; j < d; ++j) proj_[j] += lp.out_bias.value[j];
    for (std::size_t j = 0; j < d; ++j) x_[j] += proj_[j];
    kernels::layer_norm_row(x_.data(), lp.ln2_gain.value.data(), lp.ln2_bias.value.data(), d, T(1e-5), a_.data(),
                            static_cast<T*>(nullptr), static_cast<T*>(nullptr));
    kernels::gemm_nn(a_.data(), lp.ff1_weight.value.data(), ff_.data(), 1, d, c.d_ff, false);
    for (std::size_t j = 0; j < c.d_ff; ++j) ff_[j] = kernels::gelu(ff_[j] + lp.ff1_bias.value[j]);
    kernels::gemm_nn(ff_.data(), lp.ff2_weight.value.data(), proj_.data(), 1, c.d_ff, d, false);
    for (std::size_t j = 0; j < d; ++j) proj_[j] += lp.ff2_bias.value[j];
    for (std::size_t j = 0; j < d; ++j) x_[j] += proj_[j];
  }
  kernels::layer_norm_row(x_.data(), params_.final_gain.value.data(), params_.final_bias.value.data(), d, T(1e-5),
                          hidden_.data(), static_cast<T*>(nullptr), static_cast<T*>(nullptr));
  const T* h = hidden_.data();
  if (steering_) {
    steer_row(hidden_.data(), bank_->projections[static_cast<std::size_t>(emotion_)].value, coef_, scratch_.data(),
              steered_.data());
    h = steered_.data();
  }
  const std::size_t v = c.output_vocab();
  kernels::gemm_nn(h, params_.head_weight.value.data(), logits_.data(), 1, d, v, false);
  for (std::size_t j = 0; j < v; ++j) logits_[j] += params_.head_bias.value[j];
  ++pos_;
  return logits_;
}

template <typename T>
GenerationResult generate(const SequenceLayout& cond, const TransformerParams<T>& params,
                          const GenerateOptions<T>& options) {
  const ModelConfig& c = params.config;
  if (!cond.speech.empty() || cond.terminated) {
    throw std::invalid_argument("generate: conditioning layout must end at the turn-of-speech token");
  }
  cond.validate(c);
  IncrementalDecoder<T> dec(params, options.bank, cond.emotion, options.gain);
  std::span<const T> logits;
  for (const auto& slot : cond.slots()) logits = dec.push(slot);

  const std::size_t room = c.max_seq_len - cond.length();
  const std::size_t max_len = options.max_len == 0 ? room : std::min(options.max_len, room);
  auto rng = std::mt19937_64(options.seed);
  const std::size_t v = c.output_vocab();
  std::vector<double> weights(v);
  const int end_id = c.special_id(Special::kEnd);

  GenerationResult out;
  if (max_len == 0) return out;
  while (true) {
    int choice = -1;
    if (options.temperature <= 0.0) {
      T best = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < v; ++j) {
        const int id = static_cast<int>(j);
        if (id < kNumSpecial && id != end_id) continue;
        if (choice < 0 || logits[j] > best) {
          best = logits[j];
          choice = id;
        }
      }
    } else {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < v; ++j) {
        const int id = static_cast<int>(j);
        if (id < kNumSpecial && id != end_id) continue;
        mx = std::max(mx, static_cast<double>(logits[j]) / options.temperature);
      }
      for (std::size_t j = 0; j < v; ++j) {
        const int id = static_cast<int>(j);
        weights[j] = (id < kNumSpecial && id != end_id)
                         ? 0.0
                         : std::exp(static_cast<double>(logits[j]) / options.temperature - mx);
      }
      choice = static_cast<int>(sample_categorical(std::span<const double>(weights), rng));
    }
    if (choice == end_id) {
      out.terminated = true;
      break;
    }
    out.speech.push_back(c.speech_token_of(choice));
    if (out.speech.size() >= max_len) break;
    logits = dec.push({SequenceLayout::SlotKind::kSpeech, out.speech.back()});
  }
  return out;
}

#define EMOSHIFT_INSTANTIATE_MODEL(T)                                                                                 \
  template struct TransformerParams<T>;                                                                               \
  template Embedded<T> embed_batch<T>(Tape<T>&, TransformerParams<T>&, std::span<const SequenceLayout>);              \
  template Embedded<T> embed_layout<T>(Tape<T>&, TransformerParams<T>&, const SequenceLayout&);                       \
  template Var<T> backbone_hidden<T>(TransformerParams<T>&, const Embedded<T>&, std::mt19937_64*);                    \
  template ForwardResult<T> head_forward<T>(TransformerParams<T>&, Var<T>, std::span<const SegmentInfo>,              \
                                            const SteerRequest<T>*);                                                  \
  template ForwardResult<T> forward<T>(TransformerParams<T>&, const Embedded<T>&, const SteerRequest<T>*,             \
                                       std::mt19937_64*);                                                             \
  template class IncrementalDecoder<T>;                                                                               \
  template GenerationResult generate<T>(const SequenceLayout&, const TransformerParams<T>&, const GenerateOptions<T>&);

EMOSHIFT_INSTANTIATE_MODEL(float)
EMOSHIFT_INSTANTIATE_MODEL(double)

}  // namespace emoshift
