#include "emoshift/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "emoshift/rng.hpp"

namespace emoshift {

using nlohmann::json;

EvalReport evaluate(const TrainedCheckpoint& ckpt, const std::vector<Utterance>& test, const EmotionSpec& spec,
                    const EvalOptions& options, std::string model_tag) {
  const ModelConfig& mc = ckpt.config();
  if (options.alpha && !ckpt.steer) {
    throw std::invalid_argument("a steering gain was given but checkpoint '" + model_tag + "' has no steering bank");
  }
  if (options.alpha && *options.alpha < 0) throw std::invalid_argument("steering gain must be >= 0");
  if (test.empty()) throw std::invalid_argument("evaluate: empty test split");

  EvalReport rep;
  rep.model = std::move(model_tag);
  rep.labels = spec.labels;
  rep.seed = options.seed;
  rep.trainable_params = ckpt.trainable_params;
  if (ckpt.steer) rep.alpha = options.alpha.value_or(1.0);
  rep.extrapolated = rep.alpha && *rep.alpha < 1.0;

  const std::size_t e_count = spec.n_emotions();
  std::vector<std::size_t> correct(e_count, 0);
  rep.per_emotion_count.assign(e_count, 0);
  double cer_sum = 0;
  std::size_t unterminated = 0;

  GenerateOptions<float> gen;
  gen.bank = ckpt.steer ? &*ckpt.steer : nullptr;
  gen.gain = static_cast<float>(rep.alpha.value_or(1.0));
  gen.max_len = options.max_len;
  gen.temperature = options.temperature;

  for (const auto& u : test) {
    if (u.emotion < 0 || static_cast<std::size_t>(u.emotion) >= e_count) {
      throw std::out_of_range("evaluate: utterance emotion outside the emotion spec");
    }
    std::vector<int> tokens;
    if (options.passthrough) {
      tokens = u.speech;
    } else {
      gen.seed = derive_seed(options.seed, "eval-generate", u.id);
      auto res = generate(u.conditioning(), ckpt.params, gen);
      if (!res.terminated) ++unterminated;
      tokens = std::move(res.speech);
    }
    const auto cls = bayes_classify(tokens, spec, mc.content_vocab);
    ++rep.per_emotion_count[static_cast<std::size_t>(u.emotion)];
    if (cls.emotion == u.emotion) ++correct[static_cast<std::size_t>(u.emotion)];
    cer_sum += content_error_rate(tokens, u.script, mc.content_vocab);
  }

  double acc_sum = 0;
  std::size_t present = 0;
  rep.per_emotion_accuracy.assign(e_count, 0.0);
  for (std::size_t e = 0; e < e_count; ++e) {
    if (rep.per_emotion_count[e] == 0) continue;
    rep.per_emotion_accuracy[e] = 100.0 * static_cast<double>(correct[e]) / static_cast<double>(rep.per_emotion_count[e]);
    acc_sum += rep.per_emotion_accuracy[e];
    ++present;
  }
  rep.overall_accuracy = acc_sum / static_cast<double>(present);
  rep.content_error_rate = cer_sum / static_cast<double>(test.size());
  rep.unterminated_fraction = static_cast<double>(unterminated) / static_cast<double>(test.size());
  return rep;
}

SweepResult alpha_sweep(const TrainedCheckpoint& ckpt, const std::vector<Utterance>& test, const EmotionSpec& spec,
                        const std::vector<double>& alphas, const EvalOptions& base, std::string model_tag) {
  if (alphas.empty()) throw std::invalid_argument("alpha_sweep: empty alpha list");
  if (!ckpt.steer) throw std::invalid_argument("alpha_sweep: checkpoint '" + model_tag + "' has no steering bank");
  for (std::size_t i = 1; i < alphas.size(); ++i) {
    if (!(alphas[i] > alphas[i - 1])) throw std::invalid_argument("alpha_sweep: alphas must be strictly increasing");
  }
  SweepResult out;
  out.model = model_tag;
  out.seed = base.seed;
  for (double a : alphas) {
    EvalOptions opt = base;
    opt.alpha = a;
    auto rep = evaluate(ckpt, test, spec, opt, model_tag);
    out.points.push_back({a, rep.overall_accuracy, rep.content_error_rate, rep.unterminated_fraction});
    out.reports.push_back(std::move(rep));
  }
  return out;
}

std::vector<double> parse_alpha_list(const std::string& text) {
  auto num = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || s.empty()) throw std::invalid_argument("bad alpha value '" + s + "' in '" + text + "'");
    return v;
  };
  std::vector<double> out;
  if (text.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    if (parts.size() != 3) throw std::invalid_argument("alpha range must be start:stop:step, got '" + text + "'");
    const double start = num(parts[0]), stop = num(parts[1]), step = num(parts[2]);
    if (!(step > 0) || stop < start) throw std::invalid_argument("invalid alpha range '" + text + "'");
    const auto n = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9));
    for (std::size_t i = 0; i <= n; ++i) out.push_back(start + static_cast<double>(i) * step);
  } else {
    std::stringstream ss(text);
    for (std::string p; std::getline(ss, p, ',');) out.push_back(num(p));
  }
  if (out.empty()) throw std::invalid_argument("empty alpha list");
  return out;
}

namespace {

json report_json(const EvalReport& r) {
  json j{{"model", r.model},
         {"alpha", r.alpha ? json(*r.alpha) : json(nullptr)},
         {"extrapolated", r.extrapolated},
         {"labels", r.labels},
         {"per_emotion_accuracy", r.per_emotion_accuracy},
         {"per_emotion_count", r.per_emotion_count},
         {"overall_accuracy", r.overall_accuracy},
         {"content_error_rate", r.content_error_rate},
         {"unterminated_fraction", r.unterminated_fraction},
         {"trainable_params", r.trainable_params},
         {"seed", r.seed}};
  return j;
}

EvalReport report_of(const json& j) {
  EvalReport r;
  r.model = j.at("model").get<std::string>();
  if (!j.at("alpha").is_null()) r.alpha = j.at("alpha").get<double>();
  r.extrapolated = j.at("extrapolated").get<bool>();
  r.labels = j.at("labels").get<std::vector<std::string>>();
  r.per_emotion_accuracy = j.at("per_emotion_accuracy").get<std::vector<double>>();
  r.per_emotion_count = j.at("per_emotion_count").get<std::vector<std::size_t>>();
  r.overall_accuracy = j.at("overall_accuracy").get<double>();
  r.content_error_rate = j.at("content_error_rate").get<double>();
  r.unterminated_fraction = j.at("unterminated_fraction").get<double>();
  r.trainable_params = j.at("trainable_params").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  return r;
}

std::string fixed(double v, int prec) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

std::string param_str(std::size_t n) {
  if (n >= 1000000) return fixed(static_cast<double>(n) / 1e6, 2) + "M";
  if (n >= 1000) return fixed(static_cast<double>(n) / 1e3, 1) + "K";
  return std::to_string(n);
}

}  // namespace

std::string report_to_json(const EvalReport& report) { return report_json(report).dump(2) + "\n"; }

EvalReport report_from_json(const std::string& text) { return report_of(json::parse(text)); }

ComparisonTable compare_table(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("compare_table: no reports");
  std::vector<std::string> header{"Model", "alpha", "#Param", "CER"};
  for (const auto& l : reports.front().labels) header.push_back(l);
  header.push_back("Overall");
  header.push_back("Unterm.");

  std::vector<std::vector<std::string>> rows{header};
  json arr = json::array();
  for (const auto& r : reports) {
    std::vector<std::string> row{r.model, r.alpha ? fixed(*r.alpha, 2) : "-", param_str(r.trainable_params),
                                 fixed(r.content_error_rate, 4)};
    for (std::size_t e = 0; e < header.size() - 6; ++e) {
      row.push_back(e < r.per_emotion_accuracy.size() ? fixed(r.per_emotion_accuracy[e], 2) : "-");
    }
    row.push_back(fixed(r.overall_accuracy, 2));
    row.push_back(fixed(r.unterminated_fraction, 4));
    rows.push_back(std::move(row));
    arr.push_back(report_json(r));
  }

  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream os;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      if (c == 0) {
        os << std::left << std::setw(static_cast<int>(width[c])) << rows[r][c];
      } else {
        os << "  " << std::right << std::setw(static_cast<int>(width[c])) << rows[r][c];
      }
    }
    os << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      os << std::string(total - 2, '-') << '\n';
    }
  }
  return {os.str(), json{{"reports", arr}}.dump(2) + "\n"};
}

std::vector<EvalReport> parse_reports(const std::string& json_text) {
  const json j = json::parse(json_text);
  std::vector<EvalReport> out;
  for (const auto& r : j.at("reports")) out.push_back(report_of(r));
  return out;
}

std::string sweep_to_csv(const SweepResult& sweep) {
  std::ostringstream os;
  os << "alpha,overall_accuracy\n";
  for (const auto& p : sweep.points) os << fixed(p.alpha, 4) << ',' << fixed(p.overall_accuracy, 4) << '\n';
  return os.str();
}

std::string sweep_to_json(const SweepResult& sweep) {
  json pts = json::array();
  for (const auto& p : sweep.points) {
    pts.push_back({{"alpha", p.alpha},
                   {"overall_accuracy", p.overall_accuracy},
                   {"content_error_rate", p.content_error_rate},
                   {"unterminated_fraction", p.unterminated_fraction}});
  }
  json reps = json::array();
  for (const auto& r : sweep.reports) reps.push_back(report_json(r));
  return json{{"model", sweep.model}, {"seed", sweep.seed}, {"points", pts}, {"reports", reps}}.dump(2) + "\n";
}

}  // namespace emoshift
