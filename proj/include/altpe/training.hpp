#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "altpe/data.hpp"
#include "altpe/metrics.hpp"
#include "altpe/model.hpp"

namespace altpe {

struct PlateauConfig {
  double factor = 0.5;
  int patience = 10;
  double min_lr = 0.0;
  double min_delta = 1e-4;
};

struct TrainConfig {
  double lr_init = 1e-5;
  double weight_decay = 5e-4;
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 60;
  std::size_t batch_size = 64;
  PlateauConfig plateau;
  std::uint64_t seed = 1;

  /// "paper": lr 1e-5, 1000 epochs, batch 512.
  /// "desk":  lr 1e-3, 60 epochs, batch 64. Other fields keep their defaults.
  static TrainConfig preset(std::string_view name);

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
void apply_json(TrainConfig& config, const nlohmann::json& j);

// ---- optimiser pieces --------------------------------------------------------------

struct AdamMoments {
  std::vector<double> first;
  std::vector<double> second;
};

/// One Adam update (bias-corrected moments) with classic L2 weight decay:
/// the gradient used is grad + weight_decay * param. `step` counts from 1.
/// Throws NumericError, leaving everything untouched, if a gradient is not finite.
void adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& moments,
               long step, double lr, const TrainConfig& config);

/// Scales every gradient by max_norm / norm when the joint L2 norm exceeds
/// max_norm. Returns the norm before clipping.
double clip_gradients(std::span<const std::span<double>> grads, double max_norm);

/// Reduce-on-plateau schedule driven by validation loss.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, PlateauConfig config);

  /// Records one epoch's validation loss and returns the learning rate for the next epoch.
  double step(double val_loss);
  double lr() const { return lr_; }

 private:
  double lr_;
  PlateauConfig config_;
  double best_;
  int bad_epochs_ = 0;
};

/// Adam over all model parameters with gradient clipping.
class Optimizer {
 public:
  Optimizer(const Transformer& model, const TrainConfig& config);

  /// Clips, updates and zeroes the gradients. Returns the pre-clip gradient norm.
  double step(double lr);

 private:
  std::vector<ad::Tensor> params_;
  std::vector<AdamMoments> moments_;
  TrainConfig config_;
  long step_ = 0;
};

// ---- runs ----------------------------------------------------------------------------

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_bleu = 0.0;
  double val_accuracy = 0.0;
  double lr = 0.0;
};

struct RunReport {
  std::string encoding;
  int fold = -1;
  std::vector<EpochMetrics> epochs;
  bool failed = false;
  std::string error;

  double final_train_loss() const;
  double final_val_loss() const;
  double final_bleu() const;
  /// Running maximum of the per-epoch validation BLEU.
  double best_bleu() const;
};

/// `epoch,train_loss,val_loss,val_bleu,lr`, one row per epoch.
void write_run_csv(std::ostream& out, const RunReport& report);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  BleuReport bleu;
  std::vector<IdSeq> hypotheses;
};

/// Teacher-forced loss/accuracy and greedy-decoding BLEU over examples[indices].
EvalResult evaluate(const Transformer& model, std::span<const Example> examples,
                    std::span<const std::size_t> indices, std::size_t batch_size);

/// Decoding budget for a source of the given length.
std::size_t decode_budget(std::size_t source_len);

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Trains `model` in place for config.epochs epochs and validates after each one.
RunReport train_model(Transformer& model, const TrainConfig& config,
                      std::span<const Example> examples,
                      std::span<const std::size_t> train_indices,
                      std::span<const std::size_t> val_indices,
                      const EpochCallback& on_epoch = {});

// ---- cross-validation ----------------------------------------------------------------------

struct CvConfig {
  std::size_t n_folds = 10;
  std::uint64_t fold_seed = 1;
  std::vector<PeriodicKind> encodings{kAllKinds.begin(), kAllKinds.end()};
  ModelConfig model;
  TrainConfig train;
  unsigned jobs = 1;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Sample mean and standard deviation (n - 1 denominator; 0 for n < 2).
MeanStd mean_std(std::span<const double> values);

struct EncodingSummary {
  PeriodicKind encoding = PeriodicKind::Sinusoidal;
  MeanStd final_train_loss;
  MeanStd final_val_loss;
  MeanStd final_bleu;
  MeanStd best_bleu;
  std::size_t folds_ok = 0;
  std::size_t folds_failed = 0;

  bool partial() const { return folds_failed > 0; }
};

/// Aggregates the successful runs of one encoding.
EncodingSummary summarize(PeriodicKind encoding, std::span<const RunReport> runs);

struct CvReport {
  FoldPlan plan;
  std::vector<RunReport> runs;  // encoding-major, fold-minor
  std::vector<EncodingSummary> summary;
};

/// Trains every (encoding, fold) pair. Fold f's model and RNG are seeded with
/// train.seed + f for every encoding. A run that throws is marked failed and
/// excluded from its encoding's aggregate.
CvReport run_cv(std::span<const Example> examples, const CvConfig& config,
                const std::function<void(const RunReport&)>& on_run = {});

/// encoding,final_train_loss_mean,final_train_loss_std,final_val_loss_mean,...
void write_aggregate_csv(std::ostream& out, std::span<const EncodingSummary> summary);

/// <dir>/<enc>_fold<k>.csv per run plus <dir>/aggregate.csv and <dir>/folds.csv.
void write_cv_outputs(const std::filesystem::path& dir, const CvReport& report);

}  // namespace altpe
