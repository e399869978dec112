#include "emoshift/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace emoshift {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'E', 'M', 'S', 'H'};
constexpr std::uint8_t kDtypeF32 = 1;

template <typename U>
void put(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Cursor {
 public:
  explicit Cursor(const std::string& s) : s_(s) {}

  template <typename U>
  U take() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(s_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string r = s_.substr(pos_, n);
    pos_ += n;
    return r;
  }

  std::size_t pos() const { return pos_; }
  bool at_end() const { return pos_ == s_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > s_.size() - pos_) throw CheckpointError("checkpoint: truncated file");
  }
  const std::string& s_;
  std::size_t pos_ = 0;
};

struct Record {
  std::string name;
  const Tensor<float>* value;
};

json loss_json(double v) { return std::isnan(v) ? json(nullptr) : json(v); }
double loss_of(const json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

json model_json(const ModelConfig& m) {
  return {{"d_model", m.d_model},         {"n_layers", m.n_layers},         {"n_heads", m.n_heads},
          {"d_ff", m.d_ff},               {"content_vocab", m.content_vocab}, {"prosody_vocab", m.prosody_vocab},
          {"n_special", m.n_special},     {"n_emotions", m.n_emotions},     {"n_speakers", m.n_speakers},
          {"max_seq_len", m.max_seq_len}, {"dropout", m.dropout}};
}

ModelConfig model_of(const json& j) {
  ModelConfig m;
  m.d_model = j.at("d_model");
  m.n_layers = j.at("n_layers");
  m.n_heads = j.at("n_heads");
  m.d_ff = j.at("d_ff");
  m.content_vocab = j.at("content_vocab");
  m.prosody_vocab = j.at("prosody_vocab");
  m.n_special = j.at("n_special");
  m.n_emotions = j.at("n_emotions");
  m.n_speakers = j.at("n_speakers");
  m.max_seq_len = j.at("max_seq_len");
  m.dropout = j.at("dropout");
  return m;
}

}  // namespace

std::string encode_checkpoint(const TrainedCheckpoint& ckpt, const std::string& run_config_json) {
  static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

  std::vector<Record> records;
  for (const auto* p : ckpt.params.parameters()) records.push_back({p->name, &p->value});
  Tensor<float> epsilon = Tensor<float>::matrix(1, 1);
  if (ckpt.steer) {
    for (const auto& p : ckpt.steer->projections) records.push_back({p.name, &p.value});
    epsilon[0] = static_cast<float>(ckpt.steer->epsilon);
    records.push_back({"steer.epsilon", &epsilon});
  }

  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
  std::uint64_t offset = 0;
  for (const auto& r : records) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out += r.name;
    out.push_back(static_cast<char>(kDtypeF32));
    put<std::uint32_t>(out, 2);
    put<std::uint64_t>(out, r.value->rows());
    put<std::uint64_t>(out, r.value->cols());
    put<std::uint64_t>(out, offset);
    offset += r.value->size() * sizeof(float);
  }
  for (const auto& r : records) {
    for (float f : r.value->vec()) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  }

  json history = json::array();
  for (const auto& h : ckpt.history) {
    history.push_back({{"epoch", h.epoch}, {"step", h.step}, {"train_loss", loss_json(h.train_loss)},
                       {"dev_loss", loss_json(h.dev_loss)}});
  }
  json run_config;
  try {
    run_config = run_config_json.empty() ? json::object() : json::parse(run_config_json);
  } catch (const json::parse_error& e) {
    throw CheckpointError(std::string("checkpoint: run config is not valid JSON: ") + e.what());
  }
  json meta{{"model", model_json(ckpt.params.config)},
            {"regime", std::string(regime_name(ckpt.regime))},
            {"parent_regime", ckpt.parent_regime ? json(std::string(regime_name(*ckpt.parent_regime))) : json(nullptr)},
            {"parent_backbone_hash", ckpt.parent_backbone_hash},
            {"backbone_hash", ckpt.backbone_hash},
            {"steer_epsilon", ckpt.steer ? json(ckpt.steer->epsilon) : json(nullptr)},
            {"final_train_loss", loss_json(ckpt.final_train_loss)},
            {"final_dev_loss", loss_json(ckpt.final_dev_loss)},
            {"trainable_params", ckpt.trainable_params},
            {"history", history},
            {"run_config", run_config}};
  const std::string meta_text = meta.dump();
  put<std::uint64_t>(out, meta_text.size());
  out += meta_text;
  return out;
}

LoadedCheckpoint decode_checkpoint(const std::string& bytes) {
  Cursor c(bytes);
  if (c.bytes(4) != std::string(kMagic, 4)) throw CheckpointError("checkpoint: bad magic bytes");
  const auto version = c.take<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported format version " + std::to_string(version));
  }
  struct Header {
    std::string name;
    std::size_t rows, cols;
    std::uint64_t offset;
  };
  const auto count = c.take<std::uint32_t>();
  std::vector<Header> headers;
  for (std::uint32_t i = 0; i < count; ++i) {
    Header h;
    h.name = c.bytes(c.take<std::uint32_t>());
    if (static_cast<std::uint8_t>(c.bytes(1)[0]) != kDtypeF32) throw CheckpointError("checkpoint: unknown dtype in " + h.name);
    if (c.take<std::uint32_t>() != 2) throw CheckpointError("checkpoint: unexpected rank in " + h.name);
    h.rows = c.take<std::uint64_t>();
    h.cols = c.take<std::uint64_t>();
    h.offset = c.take<std::uint64_t>();
    headers.push_back(std::move(h));
  }
  const std::size_t payload_start = c.pos();
  std::map<std::string, Tensor<float>> tensors;
  std::uint64_t expected = 0;
  for (const auto& h : headers) {
    if (h.offset != expected) throw CheckpointError("checkpoint: payload offset mismatch for " + h.name);
    if (h.rows == 0 || h.cols == 0) throw CheckpointError("checkpoint: empty tensor " + h.name);
    Tensor<float> t({h.rows, h.cols});
    for (auto& f : t.vec()) f = std::bit_cast<float>(c.take<std::uint32_t>());
    expected += t.size() * sizeof(float);
    if (!tensors.emplace(h.name, std::move(t)).second) throw CheckpointError("checkpoint: duplicate record " + h.name);
  }
  if (c.pos() - payload_start != expected) throw CheckpointError("checkpoint: payload size mismatch");
  const auto meta_len = c.take<std::uint64_t>();
  const std::string meta_text = c.bytes(meta_len);
  if (!c.at_end()) throw CheckpointError("checkpoint: trailing bytes after metadata");

  LoadedCheckpoint out;
  try {
    const json meta = json::parse(meta_text);
    TrainedCheckpoint& k = out.checkpoint;
    const ModelConfig mc = model_of(meta.at("model"));
    mc.validate();
    k.params = TransformerParams<float>::init(mc, 0);
    auto take = [&](Parameter<float>& p) {
      auto it = tensors.find(p.name);
      if (it == tensors.end()) throw CheckpointError("checkpoint: missing tensor " + p.name);
      if (it->second.shape() != p.value.shape()) throw CheckpointError("checkpoint: shape mismatch for " + p.name);
      p.value = std::move(it->second);
      tensors.erase(it);
    };
    for (auto* p : k.params.parameters()) take(*p);
    if (!meta.at("steer_epsilon").is_null()) {
      k.steer = init_steer<float>(mc, meta.at("steer_epsilon").get<double>(), SteerInit::kZeros);
      for (auto& p : k.steer->projections) take(p);
      auto eps = tensors.find("steer.epsilon");
      if (eps == tensors.end() || eps->second.size() != 1 ||
          eps->second[0] != static_cast<float>(k.steer->epsilon)) {
        throw CheckpointError("checkpoint: missing or inconsistent steer.epsilon");
      }
      tensors.erase(eps);
    }
    if (!tensors.empty()) throw CheckpointError("checkpoint: unexpected tensor " + tensors.begin()->first);
    k.regime = parse_regime(meta.at("regime").get<std::string>());
    if (!meta.at("parent_regime").is_null()) k.parent_regime = parse_regime(meta.at("parent_regime").get<std::string>());
    k.parent_backbone_hash = meta.at("parent_backbone_hash");
    k.backbone_hash = meta.at("backbone_hash");
    k.final_train_loss = loss_of(meta.at("final_train_loss"));
    k.final_dev_loss = loss_of(meta.at("final_dev_loss"));
    k.trainable_params = meta.at("trainable_params");
    for (const auto& h : meta.at("history")) {
      EpochRecord r;
      r.epoch = h.at("epoch");
      r.step = h.at("step");
      r.train_loss = loss_of(h.at("train_loss"));
      r.dev_loss = loss_of(h.at("dev_loss"));
      k.history.push_back(r);
    }
    if (backbone_hash(k.params) != k.backbone_hash) throw CheckpointError("checkpoint: backbone hash mismatch");
    const json& rc = meta.at("run_config");
    out.run_config_json = rc.empty() ? std::string() : rc.dump(2) + "\n";
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint: bad metadata: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: bad metadata: ") + e.what());
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const TrainedCheckpoint& ckpt,
                     const std::string& run_config_json) {
  const std::string bytes = encode_checkpoint(ckpt, run_config_json);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("checkpoint: write failed for '" + path.string() + "'");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot read '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace emoshift
