#include "cli.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "altpe/analysis.hpp"
#include "altpe/csv.hpp"
#include "altpe/data.hpp"
#include "altpe/errors.hpp"
#include "altpe/model.hpp"
#include "altpe/positional_encoding.hpp"
#include "altpe/training.hpp"

namespace altpe::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

// Validators defer to the library parsers so flag errors read the same as
// config-file errors.
CLI::Validator encoding_validator() {
  return {[](std::string& s) -> std::string {
            try {
              parse_kind(s);
              return {};
            } catch (const ConfigError& e) {
              return e.what();
            }
          },
          "{sin,tri,sqw,saw}"};
}

CLI::Validator encoding_list_validator() {
  return {[](std::string& s) -> std::string {
            const auto names = split_commas(s);
            if (names.empty()) return "expected a comma-separated list of encodings";
            try {
              for (const auto& n : names) parse_kind(n);
              return {};
            } catch (const ConfigError& e) {
              return e.what();
            }
          },
          "LIST"};
}

CLI::Validator long_list_validator() {
  return {[](std::string& s) -> std::string {
            for (const auto& item : split_commas(s)) {
              try {
                std::size_t used = 0;
                const long v = std::stol(item, &used);
                if (used != item.size() || v < 0) return "'" + item + "' is not a non-negative integer";
              } catch (const std::exception&) {
                return "'" + item + "' is not a non-negative integer";
              }
            }
            return {};
          },
          "LIST"};
}

/// Buffers a CSV in memory and writes it in one go, or to `fallback` when no path is set.
void emit(const std::string& path, std::ostream& fallback,
          const std::function<void(std::ostream&)>& write) {
  std::ostringstream buf;
  write(buf);
  if (path.empty()) {
    fallback << buf.str();
    return;
  }
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path);
  f << buf.str();
  if (!f) throw DataError("failed writing " + path);
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

void prepare_out_dir(const std::string& dir) {
  const fs::path p(dir);
  if (fs::exists(p) && !fs::is_directory(p)) {
    throw ConfigError("--out: '" + dir + "' exists and is not a directory");
  }
  fs::create_directories(p);
}

// ---- dump-pe ---------------------------------------------------------------------------

struct DumpOptions {
  std::string encoding = "sin";
  int d_model = 64;
  int len = 256;
  double base = 10000.0;
  std::string out;
};

void add_dump(CLI::App& app, DumpOptions& o) {
  auto* sub = app.add_subcommand("dump-pe", "Write a positional-encoding table as CSV");
  sub->add_option("--encoding", o.encoding, "Periodic function")
      ->capture_default_str()
      ->check(encoding_validator());
  sub->add_option("--d-model", o.d_model, "Embedding width (even)")->capture_default_str();
  sub->add_option("--len", o.len, "Number of positions")->capture_default_str();
  sub->add_option("--base", o.base, "Frequency base")->capture_default_str();
  sub->add_option("--out", o.out, "Output CSV (standard output when omitted)");
}

int do_dump(const DumpOptions& o, std::ostream& out) {
  PEConfig config{o.d_model, o.len, o.base, parse_kind(o.encoding)};
  config.validate();
  const PETable table = build_table(config);
  emit(o.out, out, [&](std::ostream& s) { write_pe_csv(s, table); });
  return kExitOk;
}

// ---- shared training options --------------------------------------------------------------

struct RunOptions {
  std::string task = "copy";
  std::string corpus;
  std::string preset = "desk";
  std::string config;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  std::optional<std::size_t> batch_size;
  bool rope = false;
  std::size_t n_train = 2000;
  std::size_t n_val = 200;
  double val_fraction = 0.1;
  std::uint64_t data_seed = 11;
  std::string out;
};

void add_run_options(CLI::App* sub, RunOptions& o) {
  sub->add_option("--task", o.task, "Training data")
      ->capture_default_str()
      ->check(CLI::IsMember({"copy", "reverse", "corpus"}));
  sub->add_option("--corpus", o.corpus, "Tab-separated source/target file (--task corpus)")
      ->check(CLI::ExistingFile);
  sub->add_option("--preset", o.preset, "Model and optimiser preset")
      ->capture_default_str()
      ->check(CLI::IsMember({"desk", "paper-base"}));
  sub->add_option("--config", o.config, "JSON file with \"model\" and/or \"train\" objects")
      ->check(CLI::ExistingFile);
  sub->add_option("--epochs", o.epochs, "Epochs (default: preset, desk 60, paper-base 1000)");
  sub->add_option("--seed", o.seed, "Initialisation and shuffling seed (default: 1)");
  sub->add_option("--lr", o.lr, "Initial learning rate (default: preset, desk 1e-3, paper-base 1e-5)");
  sub->add_option("--batch-size", o.batch_size,
                  "Batch size (default: preset, desk 64, paper-base 512)");
  sub->add_flag("--rope", o.rope, "Rotary block transform in self-attention instead of the additive table");
  sub->add_option("--n-train", o.n_train, "Synthetic training pairs")->capture_default_str();
  sub->add_option("--n-val", o.n_val, "Synthetic validation pairs")->capture_default_str();
  sub->add_option("--val-fraction", o.val_fraction, "Held-out share of a corpus")
      ->capture_default_str();
  sub->add_option("--data-seed", o.data_seed, "Seed for synthetic data and the corpus split")
      ->capture_default_str();
  sub->add_option("--out", o.out, "Output directory")->required();
}

struct Resolved {
  ModelConfig model;
  TrainConfig train;
};

json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("--config: cannot read '" + path + "'");
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("--config: " + std::string(e.what()));
  }
}

// Precedence: flag > config file > preset.
Resolved resolve(const RunOptions& o) {
  Resolved r{ModelConfig::preset(o.preset), TrainConfig::preset(o.preset)};
  if (!o.config.empty()) {
    const json j = read_json(o.config);
    if (!j.is_object()) throw ConfigError("--config: top level must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (key == "model") apply_json(r.model, value);
      else if (key == "train") apply_json(r.train, value);
      else throw ConfigError("--config: unknown section '" + key + "'");
    }
  }
  if (o.epochs) r.train.epochs = *o.epochs;
  if (o.seed) r.train.seed = *o.seed;
  if (o.lr) r.train.lr_init = *o.lr;
  if (o.batch_size) r.train.batch_size = *o.batch_size;
  if (o.rope) r.model.rope_enabled = true;
  return r;
}

SynthSpec synth_spec(const RunOptions& o, std::size_t n_val) {
  SynthSpec spec;
  spec.kind = parse_synth_kind(o.task);
  spec.n_train = o.n_train;
  spec.n_val = n_val;
  spec.seed = o.data_seed;
  return spec;
}

Dataset load_dataset(const RunOptions& o, bool hold_out) {
  if (o.task == "corpus") {
    if (o.corpus.empty()) throw ConfigError("--corpus is required with --task corpus");
    return corpus_dataset(load_tsv(o.corpus), hold_out ? o.val_fraction : 0.0, o.data_seed);
  }
  if (o.n_train == 0) throw ConfigError("--n-train must be positive");
  if (hold_out && o.n_val == 0) throw ConfigError("--n-val must be positive");
  return synth_dataset(synth_spec(o, hold_out ? o.n_val : 0));
}

json data_json(const RunOptions& o) {
  json d{{"task", o.task}, {"data_seed", o.data_seed}};
  if (o.task == "corpus") {
    d["corpus"] = o.corpus;
    d["val_fraction"] = o.val_fraction;
  } else {
    d["n_train"] = o.n_train;
    d["n_val"] = o.n_val;
  }
  return d;
}

void print_epoch(std::ostream& out, const std::string& label, const EpochMetrics& m) {
  out << label << "epoch " << m.epoch << " train_loss=" << m.train_loss
      << " val_loss=" << m.val_loss << " val_bleu=" << m.val_bleu
      << " val_acc=" << m.val_accuracy << " lr=" << m.lr << std::endl;
}

// ---- train -----------------------------------------------------------------------------

struct TrainOptions {
  std::string encoding = "sin";
  RunOptions run;
};

void add_train(CLI::App& app, TrainOptions& o) {
  auto* sub = app.add_subcommand("train", "Train one model and write its run CSV and checkpoint");
  sub->add_option("--encoding", o.encoding, "Periodic function")
      ->capture_default_str()
      ->check(encoding_validator());
  add_run_options(sub, o.run);
}

int do_train(const TrainOptions& o, std::ostream& out) {
  Resolved r = resolve(o.run);
  r.model.encoding = parse_kind(o.encoding);
  const Dataset data = load_dataset(o.run, true);
  if (data.validation.empty()) throw ConfigError("--val-fraction leaves no validation pairs");
  r.model.src_vocab_size = static_cast<int>(data.src_vocab.size());
  r.model.tgt_vocab_size = static_cast<int>(data.tgt_vocab.size());
  r.model.validate();
  r.train.validate();

  prepare_out_dir(o.run.out);
  const fs::path dir(o.run.out);
  write_json_file(dir / "config.json", {{"command", "train"},
                                        {"preset", o.run.preset},
                                        {"encoding", o.encoding},
                                        {"data", data_json(o.run)},
                                        {"model", to_json(r.model)},
                                        {"train", to_json(r.train)}});

  Transformer model(r.model, r.train.seed);
  RunReport report = train_model(model, r.train, data.examples, data.train, data.validation,
                                 [&](const EpochMetrics& m) { print_epoch(out, "", m); });
  report.encoding = o.encoding;
  report.fold = 0;
  emit((dir / "run.csv").string(), out, [&](std::ostream& s) { write_run_csv(s, report); });
  save_checkpoint(dir / "model.ckpt", model, data.src_vocab, data.tgt_vocab);
  out << "final val_bleu=" << report.final_bleu() << " best val_bleu=" << report.best_bleu()
      << '\n';
  return kExitOk;
}

// ---- cv -------------------------------------------------------------------------------------

struct CvOptions {
  std::string encodings = "sin,tri,sqw,saw";
  std::size_t folds = 10;
  std::uint64_t fold_seed = 1;
  unsigned jobs = 1;
  RunOptions run;
};

void add_cv(CLI::App& app, CvOptions& o) {
  auto* sub = app.add_subcommand("cv", "k-fold cross-validation over several encodings");
  sub->add_option("--encodings", o.encodings, "Comma-separated periodic functions")
      ->capture_default_str()
      ->check(encoding_list_validator());
  sub->add_option("--folds", o.folds, "Number of folds")->capture_default_str();
  sub->add_option("--fold-seed", o.fold_seed, "Seed of the fold partition")->capture_default_str();
  sub->add_option("--jobs", o.jobs, "Worker threads (1 keeps runs bit-reproducible)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  add_run_options(sub, o.run);
}

int do_cv(const CvOptions& o, std::ostream& out) {
  const Resolved r = resolve(o.run);
  CvConfig cv;
  cv.n_folds = o.folds;
  cv.fold_seed = o.fold_seed;
  cv.jobs = o.jobs;
  cv.encodings.clear();
  for (const auto& name : split_commas(o.encodings)) cv.encodings.push_back(parse_kind(name));
  cv.model = r.model;
  cv.train = r.train;

  // Folds partition every pair, so nothing is held out here.
  const Dataset data = load_dataset(o.run, false);
  if (cv.n_folds < 2 || data.examples.size() < cv.n_folds) {
    throw ConfigError("--folds must be at least 2 and at most the number of pairs (" +
                      std::to_string(data.examples.size()) + ")");
  }
  cv.model.src_vocab_size = static_cast<int>(data.src_vocab.size());
  cv.model.tgt_vocab_size = static_cast<int>(data.tgt_vocab.size());
  cv.model.validate();
  cv.train.validate();

  prepare_out_dir(o.run.out);
  const fs::path dir(o.run.out);
  write_json_file(dir / "config.json", {{"command", "cv"},
                                        {"preset", o.run.preset},
                                        {"encodings", split_commas(o.encodings)},
                                        {"folds", o.folds},
                                        {"fold_seed", o.fold_seed},
                                        {"jobs", o.jobs},
                                        {"data", data_json(o.run)},
                                        {"model", to_json(cv.model)},
                                        {"train", to_json(cv.train)}});

  const CvReport report = run_cv(data.examples, cv, [&](const RunReport& run) {
    out << run.encoding << " fold " << run.fold;
    if (run.failed) {
      out << " FAILED: " << run.error << '\n';
    } else {
      out << " final_val_loss=" << run.final_val_loss() << " final_bleu=" << run.final_bleu()
          << " best_bleu=" << run.best_bleu() << '\n';
    }
    out.flush();
  });
  write_cv_outputs(dir, report);

  bool any_failed = false;
  for (const auto& s : report.summary) {
    out << to_string(s.encoding) << ": final_bleu " << s.final_bleu.mean << " +- "
        << s.final_bleu.std << ", best_bleu " << s.best_bleu.mean << " +- " << s.best_bleu.std
        << ", final_val_loss " << s.final_val_loss.mean << " +- " << s.final_val_loss.std
        << (s.partial() ? " (partial)" : "") << '\n';
    any_failed = any_failed || s.partial();
  }
  return any_failed ? kExitNumeric : kExitOk;
}

// ---- eval / translate ------------------------------------------------------------------------

struct EvalOptions {
  std::string checkpoint;
  std::string corpus;
  std::size_t batch_size = 64;
  std::string out;
};

void add_eval(CLI::App& app, EvalOptions& o) {
  auto* sub = app.add_subcommand("eval", "Loss, token accuracy and BLEU of a checkpoint on a corpus");
  sub->add_option("--checkpoint", o.checkpoint, "Checkpoint written by train")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("--corpus", o.corpus, "Tab-separated source/target file")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("--batch-size", o.batch_size, "Evaluation batch size")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sub->add_option("--out", o.out, "Report CSV");
}

int do_eval(const EvalOptions& o, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const ParallelCorpus corpus = load_tsv(o.corpus);
  if (corpus.size() == 0) throw DataError("--corpus: no sentence pairs in '" + o.corpus + "'");
  const auto examples = encode_corpus(corpus, ckpt.src_vocab, ckpt.tgt_vocab);
  std::vector<std::size_t> all(examples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const EvalResult res = evaluate(ckpt.model, examples, all, o.batch_size);

  out << "pairs=" << examples.size() << " loss=" << res.loss << " accuracy=" << res.accuracy
      << " bleu=" << res.bleu.bleu4 << '\n';
  if (!o.out.empty()) {
    emit(o.out, out, [&](std::ostream& s) {
      s << "pairs,loss,accuracy,bleu4,p1,p2,p3,p4,brevity_penalty\n";
      s << examples.size() << ',' << format_double(res.loss) << ','
        << format_double(res.accuracy) << ',' << format_double(res.bleu.bleu4);
      for (double p : res.bleu.precisions) s << ',' << format_double(p);
      s << ',' << format_double(res.bleu.brevity_penalty) << '\n';
    });
  }
  return kExitOk;
}

struct TranslateOptions {
  std::string checkpoint;
  std::string text;
  std::optional<std::size_t> max_steps;
};

void add_translate(CLI::App& app, TranslateOptions& o) {
  auto* sub = app.add_subcommand("translate", "Greedy-decode one sentence");
  sub->add_option("--checkpoint", o.checkpoint, "Checkpoint written by train")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("--text", o.text, "Source sentence")->required();
  sub->add_option("--max-steps", o.max_steps, "Token budget (default: 2 x source length + 10)");
}

int do_translate(const TranslateOptions& o, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const IdSeq src = ckpt.src_vocab.encode(tokenize(o.text, Lang::Source));
  const IdSeq hyp =
      ckpt.model.greedy_decode(src, o.max_steps.value_or(decode_budget(src.size())));
  const TokenList words = ckpt.tgt_vocab.decode(hyp);
  for (std::size_t i = 0; i < words.size(); ++i) out << (i ? " " : "") << words[i];
  out << '\n';
  return kExitOk;
}

// ---- analyze ------------------------------------------------------------------------------

struct AnalyzeOptions {
  std::string encoding = "sin";
  std::string out;
  double base = 10000.0;
  // histogram
  int d_model = 64;
  int len = 256;
  int bins = 20;
  // shift
  int d_k = 16;
  long max_position = 256;
  std::string shifts = "0,1,2,4,8,16,32,64";
  int trials = 100;
  std::uint64_t seed = 1;
  // slope
  std::size_t points = 4096;
  double from = -4.0 * kPi;
  double to = 4.0 * kPi;
  double h = 1e-7;
  double exclusion = 1e-6;
};

void add_common_probe(CLI::App* sub, AnalyzeOptions& o) {
  sub->add_option("--encoding", o.encoding, "Periodic function")
      ->capture_default_str()
      ->check(encoding_validator());
  sub->add_option("--out", o.out, "Output CSV (standard output when omitted)");
}

void add_analyze(CLI::App& app, AnalyzeOptions& o) {
  auto* sub = app.add_subcommand("analyze", "Model-free probes of an encoding");
  sub->require_subcommand(1);

  auto* hist = sub->add_subcommand("histogram", "Value histogram of a PE table");
  add_common_probe(hist, o);
  hist->add_option("--d-model", o.d_model, "Embedding width")->capture_default_str();
  hist->add_option("--len", o.len, "Number of positions")->capture_default_str();
  hist->add_option("--bins", o.bins, "Equal-width bins (>= 10)")->capture_default_str();
  hist->add_option("--base", o.base, "Frequency base")->capture_default_str();

  auto* shift = sub->add_subcommand("shift", "Rotary logit deviation under a common shift");
  add_common_probe(shift, o);
  shift->add_option("--d-k", o.d_k, "Query/key width (even)")->capture_default_str();
  shift->add_option("--max-position", o.max_position, "Largest sampled position")
      ->capture_default_str();
  shift->add_option("--shifts", o.shifts, "Comma-separated shifts")
      ->capture_default_str()
      ->check(long_list_validator());
  shift->add_option("--trials", o.trials, "Random (q, k, m, n) draws")->capture_default_str();
  shift->add_option("--seed", o.seed, "Sampling seed")->capture_default_str();
  shift->add_option("--base", o.base, "Frequency base")->capture_default_str();

  auto* slope = sub->add_subcommand("slope", "Finite-difference slopes of the kernel");
  add_common_probe(slope, o);
  slope->add_option("--points", o.points, "Grid size")->capture_default_str();
  slope->add_option("--from", o.from, "Grid start")->capture_default_str();
  slope->add_option("--to", o.to, "Grid end")->capture_default_str();
  slope->add_option("--step", o.h, "Central-difference step")->capture_default_str();
  slope->add_option("--exclusion", o.exclusion, "Skip radius around jumps and kinks")
      ->capture_default_str();
}

int do_analyze(const CLI::App& sub, const AnalyzeOptions& o, std::ostream& out) {
  const PeriodicKind kind = parse_kind(o.encoding);
  // With --out the CSV goes to the file and a summary line to standard output.
  std::ostringstream discard;
  std::ostream& summary = o.out.empty() ? static_cast<std::ostream&>(discard) : out;

  if (sub.got_subcommand("histogram")) {
    const Histogram h = output_histogram(kind, o.d_model, o.len, o.bins, o.base);
    emit(o.out, out, [&](std::ostream& s) { write_histogram_csv(s, h); });
    summary << "occupied_bins=" << h.occupied_bins() << " uniformity_ratio=" << h.uniformity_ratio
            << '\n';
  } else if (sub.got_subcommand("shift")) {
    std::vector<long> shifts;
    for (const auto& item : split_commas(o.shifts)) shifts.push_back(std::stol(item));
    if (o.trials < 1) throw ConfigError("--trials must be positive");
    if (o.max_position < 0) throw ConfigError("--max-position must be non-negative");
    const ShiftProfile p =
        shift_invariance_profile(kind, o.d_k, o.max_position, shifts, o.trials, o.seed, o.base);
    emit(o.out, out, [&](std::ostream& s) { write_shift_csv(s, p); });
    double worst = 0.0;
    for (const auto& s : p.per_shift) worst = std::max(worst, s.max_deviation);
    summary << "max_deviation=" << worst << " block_gain=[" << p.min_block_gain << ", "
            << p.max_block_gain << "]\n";
  } else {
    if (o.points < 2 || !(o.to > o.from)) throw ConfigError("--points/--from/--to: empty grid");
    std::vector<double> grid(o.points);
    for (std::size_t i = 0; i < o.points; ++i) {
      grid[i] = o.from + (o.to - o.from) * static_cast<double>(i) / static_cast<double>(o.points - 1);
    }
    const SlopeProfile p = slope_profile(kind, grid, o.h, o.exclusion);
    emit(o.out, out, [&](std::ostream& s) { write_slope_csv(s, p); });
    summary << "slopes=[" << p.min_slope << ", " << p.max_slope << "] skipped=" << p.skipped
            << '\n';
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Periodic positional encodings for transformer translation models", "altpe"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "altpe 0.1.0");

  DumpOptions dump;
  TrainOptions train;
  CvOptions cv;
  EvalOptions eval;
  TranslateOptions translate;
  AnalyzeOptions analyze;
  add_dump(app, dump);
  add_train(app, train);
  add_cv(app, cv);
  add_eval(app, eval);
  add_translate(app, translate);
  add_analyze(app, analyze);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (app.got_subcommand("dump-pe")) return do_dump(dump, out);
    if (app.got_subcommand("train")) return do_train(train, out);
    if (app.got_subcommand("cv")) return do_cv(cv, out);
    if (app.got_subcommand("eval")) return do_eval(eval, out);
    if (app.got_subcommand("translate")) return do_translate(translate, out);
    return do_analyze(*app.get_subcommand("analyze"), analyze, out);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const LengthError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace altpe::cli
