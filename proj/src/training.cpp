#include "altpe/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <ostream>
#include <thread>

#include "altpe/csv.hpp"
#include "altpe/errors.hpp"

namespace altpe {

// ---- configuration ---------------------------------------------------------------

TrainConfig TrainConfig::preset(std::string_view name) {
  TrainConfig c;
  if (name == "paper" || name == "paper-base") {
    c.lr_init = 1e-5;
    c.epochs = 1000;
    c.batch_size = 512;
  } else if (name == "desk") {
    c.lr_init = 1e-3;
    c.epochs = 60;
    c.batch_size = 64;
  } else {
    throw ConfigError("unknown training preset '" + std::string(name) + "'");
  }
  return c;
}

void TrainConfig::validate() const {
  if (!(lr_init > 0.0)) throw ConfigError("lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  if (!(clip_norm > 0.0)) throw ConfigError("clip norm must be positive");
  if (!(plateau.factor > 0.0 && plateau.factor < 1.0)) {
    throw ConfigError("plateau factor must be in (0, 1)");
  }
  if (plateau.patience < 1) throw ConfigError("plateau patience must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr_init", c.lr_init},
          {"weight_decay", c.weight_decay},
          {"clip_norm", c.clip_norm},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"plateau",
           {{"factor", c.plateau.factor},
            {"patience", c.plateau.patience},
            {"min_lr", c.plateau.min_lr},
            {"min_delta", c.plateau.min_delta}}},
          {"seed", c.seed}};
}

void apply_json(TrainConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "lr_init") c.lr_init = value.get<double>();
      else if (key == "weight_decay") c.weight_decay = value.get<double>();
      else if (key == "clip_norm") c.clip_norm = value.get<double>();
      else if (key == "beta1") c.beta1 = value.get<double>();
      else if (key == "beta2") c.beta2 = value.get<double>();
      else if (key == "adam_eps") c.adam_eps = value.get<double>();
      else if (key == "epochs") c.epochs = value.get<int>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "plateau") {
        for (const auto& [pk, pv] : value.items()) {
          if (pk == "factor") c.plateau.factor = pv.get<double>();
          else if (pk == "patience") c.plateau.patience = pv.get<int>();
          else if (pk == "min_lr") c.plateau.min_lr = pv.get<double>();
          else if (pk == "min_delta") c.plateau.min_delta = pv.get<double>();
          else throw ConfigError("unknown plateau key '" + pk + "'");
        }
      } else {
        throw ConfigError("unknown train config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

// ---- optimiser ---------------------------------------------------------------------

void adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& moments,
               long step, double lr, const TrainConfig& config) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient sizes differ");
  if (step < 1) throw ContractError("adam_step: step counter starts at 1");
  for (double g : grads) {
    if (!std::isfinite(g)) throw NumericError("non-finite gradient; optimizer step aborted");
  }
  if (moments.first.size() != params.size()) {
    moments.first.assign(params.size(), 0.0);
    moments.second.assign(params.size(), 0.0);
  }
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] + config.weight_decay * params[i];
    moments.first[i] = b1 * moments.first[i] + (1.0 - b1) * g;
    moments.second[i] = b2 * moments.second[i] + (1.0 - b2) * g * g;
    const double m_hat = moments.first[i] / c1;
    const double v_hat = moments.second[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + config.adam_eps);
  }
}

double clip_gradients(std::span<const std::span<double>> grads, double max_norm) {
  double sq = 0.0;
  for (auto g : grads) {
    for (double v : g) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto g : grads) {
      for (double& v : g) v *= s;
    }
  }
  return norm;
}

PlateauScheduler::PlateauScheduler(double lr, PlateauConfig config)
    : lr_(lr), config_(config), best_(std::numeric_limits<double>::infinity()) {}

double PlateauScheduler::step(double val_loss) {
  if (val_loss < best_ - config_.min_delta) {
    best_ = val_loss;
    bad_epochs_ = 0;
  } else if (++bad_epochs_ >= config_.patience) {
    lr_ = std::max(lr_ * config_.factor, config_.min_lr);
    bad_epochs_ = 0;
  }
  return lr_;
}

Optimizer::Optimizer(const Transformer& model, const TrainConfig& config) : config_(config) {
  for (const auto& p : model.parameters()) params_.push_back(p.tensor);
  moments_.resize(params_.size());
}

double Optimizer::step(double lr) {
  ++step_;
  std::vector<std::span<double>> grads;
  grads.reserve(params_.size());
  for (auto& p : params_) grads.push_back(p.mutable_grad());
  for (auto g : grads) {
    for (double v : g) {
      if (!std::isfinite(v)) throw NumericError("non-finite gradient; optimizer step aborted");
    }
  }
  const double norm = clip_gradients(grads, config_.clip_norm);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    adam_step(params_[i].mutable_data(), grads[i], moments_[i], step_, lr, config_);
    params_[i].zero_grad();
  }
  return norm;
}

// ---- reports -------------------------------------------------------------------------

namespace {

const EpochMetrics& last_epoch(const RunReport& r) {
  if (r.epochs.empty()) throw ContractError("run report has no epochs");
  return r.epochs.back();
}

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 finaliser
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

double RunReport::final_train_loss() const { return last_epoch(*this).train_loss; }
double RunReport::final_val_loss() const { return last_epoch(*this).val_loss; }
double RunReport::final_bleu() const { return last_epoch(*this).val_bleu; }

double RunReport::best_bleu() const {
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& e : epochs) best = std::max(best, e.val_bleu);
  return best;
}

void write_run_csv(std::ostream& out, const RunReport& report) {
  out << "epoch,train_loss,val_loss,val_bleu,lr\n";
  for (const auto& e : report.epochs) {
    out << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.val_loss)
        << ',' << format_double(e.val_bleu) << ',' << format_double(e.lr) << '\n';
  }
}

// ---- training ------------------------------------------------------------------------

std::size_t decode_budget(std::size_t source_len) { return 2 * source_len + 10; }

EvalResult evaluate(const Transformer& model, std::span<const Example> examples,
                    std::span<const std::size_t> indices, std::size_t batch_size) {
  if (indices.empty()) throw DataError("evaluation set is empty");
  ad::NoGradGuard no_grad;
  const auto vocab = static_cast<std::size_t>(model.config().tgt_vocab_size);
  EvalResult result;
  double nll = 0.0;
  double hits = 0.0;
  std::size_t tokens = 0;
  std::vector<IdSeq> references;
  std::vector<Example> chunk;
  std::vector<IdSeq> sources;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    chunk.clear();
    sources.clear();
    std::size_t longest = 0;
    for (std::size_t i = start; i < std::min(indices.size(), start + batch_size); ++i) {
      chunk.push_back(examples[indices[i]]);
      sources.push_back(chunk.back().src);
      references.push_back(chunk.back().tgt);
      longest = std::max(longest, chunk.back().src.size());
    }
    const Batch batch = make_batch(chunk);
    const ad::Tensor logits = model.forward(batch, Mode::Eval);
    const auto targets = batch.decoder_target();
    const auto n = static_cast<std::size_t>(
        std::count_if(targets.begin(), targets.end(), [](int t) { return t != kPad; }));
    nll += cross_entropy(logits.data(), vocab, targets, kPad) * static_cast<double>(n);
    hits += token_accuracy(logits.data(), vocab, targets, kPad) * static_cast<double>(n);
    tokens += n;
    auto hyps = model.greedy_decode(sources, decode_budget(longest));
    for (auto& h : hyps) result.hypotheses.push_back(std::move(h));
  }
  result.loss = nll / static_cast<double>(tokens);
  result.accuracy = hits / static_cast<double>(tokens);
  result.bleu = bleu4<int>(result.hypotheses, references);
  return result;
}

RunReport train_model(Transformer& model, const TrainConfig& config,
                      std::span<const Example> examples,
                      std::span<const std::size_t> train_indices,
                      std::span<const std::size_t> val_indices, const EpochCallback& on_epoch) {
  config.validate();
  if (train_indices.empty()) throw DataError("training split is empty");
  RunReport report;
  report.encoding = std::string(to_string(model.config().encoding));
  Optimizer optimizer(model, config);
  PlateauScheduler scheduler(config.lr_init, config.plateau);
  std::mt19937_64 dropout_rng(mix_seed(config.seed, 0));

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = scheduler.lr();
    const auto batches = iterate_batches(examples, train_indices, config.batch_size,
                                         mix_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    double nll = 0.0;
    std::size_t tokens = 0;
    for (const auto& batch : batches) {
      ad::Tape::current().clear();
      const ad::Tensor logits = model.forward(batch, Mode::Train, &dropout_rng);
      const auto targets = batch.decoder_target();
      const ad::Tensor loss = ad::cross_entropy_with_ignore(logits, targets, kPad);
      const auto n = static_cast<std::size_t>(
          std::count_if(targets.begin(), targets.end(), [](int t) { return t != kPad; }));
      nll += loss.item() * static_cast<double>(n);
      tokens += n;
      ad::backward(loss);
      optimizer.step(lr);
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = nll / static_cast<double>(tokens);
    m.lr = lr;
    if (!val_indices.empty()) {
      const auto eval = evaluate(model, examples, val_indices, config.batch_size);
      m.val_loss = eval.loss;
      m.val_accuracy = eval.accuracy;
      m.val_bleu = eval.bleu.bleu4;
      scheduler.step(m.val_loss);
    }
    report.epochs.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return report;
}

// ---- cross-validation ----------------------------------------------------------------

MeanStd mean_std(std::span<const double> values) {
  MeanStd r;
  if (values.empty()) return r;
  for (double v : values) r.mean += v;
  r.mean /= static_cast<double>(values.size());
  if (values.size() < 2) return r;
  double ss = 0.0;
  for (double v : values) ss += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return r;
}

EncodingSummary summarize(PeriodicKind encoding, std::span<const RunReport> runs) {
  EncodingSummary s;
  s.encoding = encoding;
  std::vector<double> tl, vl, fb, bb;
  for (const auto& r : runs) {
    if (r.encoding != to_string(encoding)) continue;
    if (r.failed || r.epochs.empty()) {
      ++s.folds_failed;
      continue;
    }
    ++s.folds_ok;
    tl.push_back(r.final_train_loss());
    vl.push_back(r.final_val_loss());
    fb.push_back(r.final_bleu());
    bb.push_back(r.best_bleu());
  }
  s.final_train_loss = mean_std(tl);
  s.final_val_loss = mean_std(vl);
  s.final_bleu = mean_std(fb);
  s.best_bleu = mean_std(bb);
  return s;
}

CvReport run_cv(std::span<const Example> examples, const CvConfig& config,
                const std::function<void(const RunReport&)>& on_run) {
  config.train.validate();
  if (config.encodings.empty()) throw ConfigError("no encodings selected");
  CvReport report;
  report.plan = make_folds(examples.size(), config.n_folds, config.fold_seed);

  const std::size_t n_tasks = config.encodings.size() * config.n_folds;
  report.runs.resize(n_tasks);
  std::atomic<std::size_t> next{0};
  std::mutex callback_mutex;

  auto worker = [&] {
    for (std::size_t task = next++; task < n_tasks; task = next++) {
      const PeriodicKind kind = config.encodings[task / config.n_folds];
      const std::size_t fold = task % config.n_folds;
      RunReport& run = report.runs[task];
      try {
        ModelConfig mc = config.model;
        mc.encoding = kind;
        TrainConfig tc = config.train;
        tc.seed = config.train.seed + fold;
        Transformer model(mc, tc.seed);
        const FoldView view = fold_view(report.plan, fold);
        run = train_model(model, tc, examples, view.train, view.validation);
      } catch (const std::exception& e) {
        run.failed = true;
        run.error = e.what();
        ad::Tape::current().clear();
      }
      run.encoding = std::string(to_string(kind));
      run.fold = static_cast<int>(fold);
      if (on_run) {
        std::lock_guard lock(callback_mutex);
        on_run(run);
      }
    }
  };

  const unsigned jobs = std::max(1u, std::min<unsigned>(config.jobs, static_cast<unsigned>(n_tasks)));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned i = 0; i < jobs; ++i) pool.emplace_back(worker);
  }

  for (auto kind : config.encodings) report.summary.push_back(summarize(kind, report.runs));
  return report;
}

void write_aggregate_csv(std::ostream& out, std::span<const EncodingSummary> summary) {
  out << "encoding,final_train_loss_mean,final_train_loss_std,final_val_loss_mean,"
         "final_val_loss_std,final_bleu_mean,final_bleu_std,best_bleu_mean,best_bleu_std\n";
  for (const auto& s : summary) {
    out << to_string(s.encoding);
    for (const auto* ms : {&s.final_train_loss, &s.final_val_loss, &s.final_bleu, &s.best_bleu}) {
      out << ',' << format_double(ms->mean) << ',' << format_double(ms->std);
    }
    out << '\n';
  }
}

void write_cv_outputs(const std::filesystem::path& dir, const CvReport& report) {
  std::filesystem::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream f(dir / name, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + (dir / name).string());
    return f;
  };
  for (const auto& run : report.runs) {
    if (run.failed) continue;
    auto f = open(run.encoding + "_fold" + std::to_string(run.fold) + ".csv");
    write_run_csv(f, run);
  }
  {
    auto f = open("aggregate.csv");
    write_aggregate_csv(f, report.summary);
  }
  auto f = open("folds.csv");
  write_fold_plan_csv(f, report.plan);
}

}  // namespace altpe
