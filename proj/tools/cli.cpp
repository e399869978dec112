#include "cli.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <CLI11.hpp>
#include <json.hpp>

#include "emoshift/checkpoint.hpp"
#include "emoshift/rng.hpp"

namespace emoshift::cli {

using nlohmann::json;
namespace fs = std::filesystem;

Corpora make_corpora(const RunConfig& config) {
  const EmotionSpec spec = config.emotion_spec();
  const CorpusOptions opts = config.corpus_options();
  return {gen_corpus(spec, opts), gen_corpus(spec.with_smoothing(config.emotions.pretrain_smoothing), opts)};
}

double bayes_ceiling_percent(const RunConfig& config) {
  return 100.0 * monte_carlo_bayes_accuracy(config.emotion_spec(), config.corpus_options(), 100000,
                                            derive_seed(config.seed, "bayes-ceiling"));
}

void check_report(const EvalReport& report, double ceiling) {
  double mean = 0;
  for (double a : report.per_emotion_accuracy) mean += a;
  mean /= static_cast<double>(report.per_emotion_accuracy.size());
  if (std::abs(mean - report.overall_accuracy) > 1e-9) {
    throw InvariantViolation("overall accuracy " + std::to_string(report.overall_accuracy) +
                             " is not the mean of the per-emotion accuracies");
  }
  if (report.overall_accuracy > ceiling + 2.0) {
    throw InvariantViolation("overall accuracy " + std::to_string(report.overall_accuracy) +
                             " exceeds the Bayes ceiling " + std::to_string(ceiling) + " by more than 2 points");
  }
}

std::string epoch_log_line(const EpochRecord& r) {
  auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  return json{{"epoch", r.epoch},
              {"step", r.step},
              {"train_loss", num(r.train_loss)},
              {"dev_loss", num(r.dev_loss)},
              {"wall_clock_s", r.seconds}}
      .dump();
}

namespace {

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot read '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig config_or_default(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

// The checkpoint's embedded config, unless one is given explicitly.
RunConfig config_for(const LoadedCheckpoint& ck, const std::string& path) {
  if (!path.empty()) return load_run_config(path);
  if (!ck.run_config_json.empty()) return parse_run_config(ck.run_config_json);
  return RunConfig{};
}

LoadedCheckpoint open_checkpoint(const std::string& path) {
  if (!fs::exists(path)) throw std::invalid_argument("checkpoint '" + path + "' does not exist");
  return load_checkpoint(path);
}

std::string default_tag(const TrainedCheckpoint& ck) {
  return ck.regime == Regime::kPretrain ? "backbone" : std::string(regime_name(ck.regime));
}

std::vector<int> parse_ints(const std::string& text) {
  std::vector<int> out;
  std::string tok;
  std::stringstream ss(text);
  while (ss >> tok) {
    std::stringstream parts(tok);
    for (std::string p; std::getline(parts, p, ',');) {
      if (p.empty()) continue;
      std::size_t used = 0;
      int v = 0;
      try {
        v = std::stoi(p, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != p.size()) throw std::invalid_argument("bad token id '" + p + "' in --script");
      out.push_back(v);
    }
  }
  if (out.empty()) throw std::invalid_argument("--script is empty");
  return out;
}

struct Clock {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

TrainedCheckpoint train_regime(const RunConfig& cfg, Regime regime, const Corpora& corpora,
                               const TrainedCheckpoint* init, const fs::path& log_path, std::ostream& out) {
  std::ostringstream log;
  auto on_epoch = [&](const EpochRecord& r) {
    log << epoch_log_line(r) << '\n';
    out << "  [" << regime_name(regime) << "] epoch " << r.epoch << "  step " << r.step << "  dev "
        << std::fixed << std::setprecision(4) << r.dev_loss << "  (" << std::setprecision(1) << r.seconds << " s)\n"
        << std::defaultfloat << std::flush;
  };
  const Corpus& data = regime == Regime::kPretrain ? corpora.pretrain : corpora.clean;
  auto ck = run_regime(cfg.train_config(regime), data, cfg.model, init, on_epoch);
  if (!(ck.history.back().dev_loss < ck.history.front().dev_loss)) {
    write_file(log_path, log.str());
    throw InvariantViolation(std::string(regime_name(regime)) + ": dev loss did not decrease");
  }
  write_file(log_path, log.str());
  return ck;
}

// ---------------------------------------------------------------------------------------------
// Commands

struct DataArgs {
  std::string config, out;
};

int cmd_data(const DataArgs& a, std::ostream& out) {
  const RunConfig cfg = config_or_default(a.config);
  const fs::path dir = a.out.empty() ? fs::path(cfg.output_dir) : fs::path(a.out);
  const Corpora c = make_corpora(cfg);
  write_corpus(c.clean, dir / "corpus");
  write_corpus(c.pretrain, dir / "corpus_pretrain");
  write_file(dir / "config.json", run_config_to_json(cfg));
  out << "wrote " << c.clean.train.size() << "/" << c.clean.dev.size() << "/" << c.clean.test.size()
      << " train/dev/test utterances to " << (dir / "corpus").string() << " and " << (dir / "corpus_pretrain").string()
      << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string regime, config, init, out, log, data;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const Regime regime = parse_regime(a.regime);
  const RunConfig cfg = config_or_default(a.config);
  std::optional<LoadedCheckpoint> init;
  if (!a.init.empty()) init = open_checkpoint(a.init);
  if (is_steer_regime(regime) || regime == Regime::kSft) {
    if (!init) throw std::invalid_argument("--regime " + a.regime + " requires --init");
  }
  Corpora corpora;
  if (a.data.empty()) {
    corpora = make_corpora(cfg);
  } else {
    corpora = {read_corpus(fs::path(a.data) / "corpus"), read_corpus(fs::path(a.data) / "corpus_pretrain")};
  }
  const fs::path log = a.log.empty() ? fs::path(a.out + ".log.jsonl") : fs::path(a.log);
  const auto ck = train_regime(cfg, regime, corpora, init ? &init->checkpoint : nullptr, log, out);
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  save_checkpoint(a.out, ck, run_config_to_json(cfg));
  out << "saved " << a.out << " (" << ck.trainable_params << " trainable parameters)\n";
  return kExitOk;
}

struct GenerateArgs {
  std::string ckpt, emotion, script;
  int speaker = 0;
  std::optional<double> alpha;
  std::uint64_t seed = 0;
  double temperature = 1.0;
  std::size_t max_len = 0;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  const auto ck = open_checkpoint(a.ckpt);
  const RunConfig cfg = config_for(ck, "");
  const EmotionSpec spec = cfg.emotion_spec();
  const int emotion = spec.emotion_index(a.emotion);
  if (a.alpha && !ck.checkpoint.steer) throw std::invalid_argument("--alpha given but the checkpoint has no steering bank");
  const auto cond = SequenceLayout::conditioning(a.speaker, emotion, parse_ints(a.script));
  cond.validate(ck.checkpoint.config());

  GenerateOptions<float> opt;
  opt.bank = ck.checkpoint.steer ? &*ck.checkpoint.steer : nullptr;
  opt.gain = static_cast<float>(a.alpha.value_or(cfg.eval.alpha));
  opt.seed = a.seed;
  opt.temperature = a.temperature;
  opt.max_len = a.max_len;
  const auto res = generate(cond, ck.checkpoint.params, opt);
  const auto cls = bayes_classify(res.speech, spec, cfg.model.content_vocab);

  out << "speech:";
  for (int y : res.speech) out << ' ' << y;
  out << "\nterminated: " << (res.terminated ? "true" : "false") << "\nposterior:";
  for (std::size_t e = 0; e < spec.n_emotions(); ++e) {
    out << ' ' << spec.labels[e] << '=' << std::fixed << std::setprecision(6) << cls.posterior[e];
  }
  out << std::defaultfloat << "\npredicted: " << spec.labels[static_cast<std::size_t>(cls.emotion)]
      << (cls.degenerate ? " (no prosody evidence)" : "") << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string ckpt, config, name, out, text;
  std::optional<double> alpha;
  std::optional<std::uint64_t> seed;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto ck = open_checkpoint(a.ckpt);
  const RunConfig cfg = config_for(ck, a.config);
  const Corpora corpora = make_corpora(cfg);
  EvalOptions opt;
  opt.seed = a.seed.value_or(cfg.eval_seed());
  opt.temperature = cfg.eval.temperature;
  opt.max_len = cfg.eval.max_len;
  opt.alpha = a.alpha;
  if (!opt.alpha && ck.checkpoint.steer) opt.alpha = cfg.eval.alpha;
  const auto rep = evaluate(ck.checkpoint, corpora.clean.test, corpora.clean.spec, opt,
                            a.name.empty() ? default_tag(ck.checkpoint) : a.name);
  const auto table = compare_table({rep});
  if (!a.out.empty()) write_file(a.out, report_to_json(rep));
  if (!a.text.empty()) write_file(a.text, table.text);
  out << table.text;
  check_report(rep, bayes_ceiling_percent(cfg));
  return kExitOk;
}

struct SweepArgs {
  std::string ckpt, config, alphas, name, csv, json_out;
  std::optional<std::uint64_t> seed;
};

int cmd_sweep(const SweepArgs& a, std::ostream& out) {
  const auto ck = open_checkpoint(a.ckpt);
  const RunConfig cfg = config_for(ck, a.config);
  const Corpora corpora = make_corpora(cfg);
  EvalOptions opt;
  opt.seed = a.seed.value_or(cfg.eval_seed());
  opt.temperature = cfg.eval.temperature;
  opt.max_len = cfg.eval.max_len;
  const auto alphas = parse_alpha_list(a.alphas.empty() ? cfg.eval.sweep_alphas : a.alphas);
  const auto sw = alpha_sweep(ck.checkpoint, corpora.clean.test, corpora.clean.spec, alphas, opt,
                              a.name.empty() ? default_tag(ck.checkpoint) : a.name);
  if (!a.csv.empty()) write_file(a.csv, sweep_to_csv(sw));
  if (!a.json_out.empty()) write_file(a.json_out, sweep_to_json(sw));
  out << sweep_to_csv(sw);
  const double ceiling = bayes_ceiling_percent(cfg);
  for (const auto& r : sw.reports) check_report(r, ceiling);
  return kExitOk;
}

struct TableArgs {
  std::vector<std::string> reports;
  std::string out, json_out;
};

int cmd_table(const TableArgs& a, std::ostream& out) {
  std::vector<EvalReport> reps;
  for (const auto& p : a.reports) {
    try {
      reps.push_back(report_from_json(read_file(p)));
    } catch (const json::exception& e) {
      throw std::invalid_argument("'" + p + "' is not a report: " + e.what());
    }
  }
  const auto t = compare_table(reps);
  if (!a.out.empty()) write_file(a.out, t.text);
  if (!a.json_out.empty()) write_file(a.json_out, t.json);
  out << t.text;
  return kExitOk;
}

struct ReproduceArgs {
  std::string config, out;
};

// Data, all four regimes, the four-row comparison and the alpha sweep, in one process.
int cmd_reproduce(const ReproduceArgs& a, std::ostream& out) {
  const RunConfig cfg = config_or_default(a.config);
  const fs::path dir = a.out.empty() ? fs::path(cfg.output_dir) : fs::path(a.out);
  const std::string cfg_json = run_config_to_json(cfg);
  Clock total;
  std::vector<std::pair<std::string, double>> stages;
  auto stage = [&](const std::string& name, auto&& fn) {
    Clock c;
    out << "== " << name << '\n' << std::flush;
    fn();
    stages.emplace_back(name, c.seconds());
  };

  Corpora corpora;
  stage("data", [&] {
    corpora = make_corpora(cfg);
    write_corpus(corpora.clean, dir / "corpus");
    write_corpus(corpora.pretrain, dir / "corpus_pretrain");
    write_file(dir / "config.json", cfg_json);
  });

  const fs::path ck_dir = dir / "checkpoints";
  TrainedCheckpoint pre, sft, shift, sft_shift;
  auto train = [&](Regime r, const TrainedCheckpoint* init, TrainedCheckpoint& dst) {
    stage(std::string("train ") + std::string(regime_name(r)), [&] {
      const std::string name(regime_name(r));
      dst = train_regime(cfg, r, corpora, init, ck_dir / (name + ".log.jsonl"), out);
      save_checkpoint(ck_dir / (name + ".ckpt"), dst, cfg_json);
    });
  };
  train(Regime::kPretrain, nullptr, pre);
  train(Regime::kSft, &pre, sft);
  train(Regime::kEmoShift, &pre, shift);
  train(Regime::kSftShift, &sft, sft_shift);

  EvalOptions opt;
  opt.seed = cfg.eval_seed();
  opt.temperature = cfg.eval.temperature;
  opt.max_len = cfg.eval.max_len;
  const double ceiling = bayes_ceiling_percent(cfg);
  std::vector<EvalReport> reports;
  stage("evaluate", [&] {
    const std::vector<std::pair<std::string, const TrainedCheckpoint*>> rows{
        {"backbone", &pre}, {"sft", &sft}, {"sft-shift", &sft_shift}, {"emoshift", &shift}};
    for (const auto& [tag, ck] : rows) {
      EvalOptions o = opt;
      if (ck->steer) o.alpha = cfg.eval.alpha;
      reports.push_back(evaluate(*ck, corpora.clean.test, corpora.clean.spec, o, tag));
      write_file(dir / "reports" / (tag + ".json"), report_to_json(reports.back()));
    }
    const auto t = compare_table(reports);
    write_file(dir / "table.txt", t.text);
    write_file(dir / "table.json", t.json);
    out << t.text;
  });

  stage("sweep", [&] {
    const auto sw = alpha_sweep(shift, corpora.clean.test, corpora.clean.spec, parse_alpha_list(cfg.eval.sweep_alphas),
                                opt, "emoshift");
    write_file(dir / "sweep.csv", sweep_to_csv(sw));
    write_file(dir / "sweep.json", sweep_to_json(sw));
    out << sweep_to_csv(sw);
    for (const auto& r : sw.reports) check_report(r, ceiling);
  });
  for (const auto& r : reports) check_report(r, ceiling);

  std::ostringstream timing;
  for (const auto& [name, s] : stages) timing << std::left << std::setw(20) << name << std::fixed << std::setprecision(1) << s << " s\n";
  timing << std::left << std::setw(20) << "total" << std::fixed << std::setprecision(1) << total.seconds() << " s\n";
  out << timing.str();
  out << "Bayes ceiling " << std::fixed << std::setprecision(2) << ceiling << "%\n" << std::defaultfloat;
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
#if defined(__GLIBC__)
  // Tape buffers are freed and reallocated every step; keeping them off mmap avoids a page-fault
  // storm on each batch.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
  CLI::App app{"Emotion steering on a desk-scale synthetic speech-token corpus"};
  app.name("emoshift");
  app.require_subcommand(1);

  DataArgs data;
  auto* c_data = app.add_subcommand("data", "Generate the fine-tuning and pretraining corpora");
  c_data->add_option("--config", data.config, "Run config (JSON); defaults when omitted");
  c_data->add_option("--out", data.out, "Output directory (default: config output_dir)");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train one regime and write a checkpoint");
  c_train->add_option("--regime", train.regime, "pretrain | sft | emoshift | sft-shift")->required();
  c_train->add_option("--config", train.config, "Run config (JSON)");
  c_train->add_option("--init", train.init, "Checkpoint to start from");
  c_train->add_option("--out", train.out, "Checkpoint path")->required();
  c_train->add_option("--log", train.log, "Training log (default: <out>.log.jsonl)");
  c_train->add_option("--data", train.data, "Directory written by `data` (default: regenerate from config)");

  GenerateArgs gen;
  auto* c_gen = app.add_subcommand("generate", "Sample speech tokens for one script");
  c_gen->add_option("--ckpt", gen.ckpt, "Checkpoint")->required();
  c_gen->add_option("--emotion", gen.emotion, "Emotion label or index")->required();
  c_gen->add_option("--speaker", gen.speaker, "Speaker id");
  c_gen->add_option("--script", gen.script, "Content token ids, comma or space separated")->required();
  c_gen->add_option("--alpha", gen.alpha, "Steering gain (steering checkpoints only)");
  c_gen->add_option("--seed", gen.seed, "Sampling seed");
  c_gen->add_option("--temperature", gen.temperature, "Sampling temperature; <= 0 decodes greedily");
  c_gen->add_option("--max-len", gen.max_len, "Maximum speech tokens (0 = fill the context)");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  c_eval->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  c_eval->add_option("--config", ev.config, "Run config (default: the one stored in the checkpoint)");
  c_eval->add_option("--alpha", ev.alpha, "Steering gain");
  c_eval->add_option("--seed", ev.seed, "Evaluation seed");
  c_eval->add_option("--name", ev.name, "Row label");
  c_eval->add_option("--out", ev.out, "Report JSON");
  c_eval->add_option("--text", ev.text, "Report as a text table");

  SweepArgs sw;
  auto* c_sweep = app.add_subcommand("sweep", "Evaluate a steering checkpoint over a range of gains");
  c_sweep->add_option("--ckpt", sw.ckpt, "Checkpoint")->required();
  c_sweep->add_option("--config", sw.config, "Run config (default: the one stored in the checkpoint)");
  c_sweep->add_option("--alphas", sw.alphas, "start:stop:step or a comma list (default from config)");
  c_sweep->add_option("--seed", sw.seed, "Evaluation seed");
  c_sweep->add_option("--name", sw.name, "Model label");
  c_sweep->add_option("--csv", sw.csv, "alpha,overall_accuracy CSV");
  c_sweep->add_option("--json", sw.json_out, "Full sweep JSON");

  TableArgs tab;
  auto* c_table = app.add_subcommand("table", "Combine report files into a comparison table");
  c_table->add_option("--reports", tab.reports, "Report JSON files, in row order")->required();
  c_table->add_option("--out", tab.out, "Text table path");
  c_table->add_option("--json", tab.json_out, "Machine-readable table path");

  ReproduceArgs rep;
  auto* c_rep = app.add_subcommand("reproduce", "Run data, all regimes, the table and the sweep");
  c_rep->add_option("--config", rep.config, "Run config (JSON)");
  c_rep->add_option("--out", rep.out, "Output directory (default: config output_dir)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (c_data->parsed()) return cmd_data(data, out);
    if (c_train->parsed()) return cmd_train(train, out);
    if (c_gen->parsed()) return cmd_generate(gen, out);
    if (c_eval->parsed()) return cmd_eval(ev, out);
    if (c_sweep->parsed()) return cmd_sweep(sw, out);
    if (c_table->parsed()) return cmd_table(tab, out);
    if (c_rep->parsed()) return cmd_reproduce(rep, out);
  } catch (const InvariantViolation& e) {
    err << "invariant violated: " << e.what() << '\n';
    return kExitInvariant;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::out_of_range& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvariant;
  }
  return kExitUsage;
}

}  // namespace emoshift::cli
