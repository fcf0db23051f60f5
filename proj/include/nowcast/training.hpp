#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nowcast/config.hpp"
#include "nowcast/dataset.hpp"
#include "nowcast/metrics.hpp"
#include "nowcast/nn/unet.hpp"

namespace nowcast {

struct TrainConfig {
  int epochs = 20;
  double lr_initial = 0.0008;
  double lr_after = 0.0001;
  double delta_initial = 1e-5;
  double delta_after = 5e-5;
  int switch_epoch = 4;  // last epoch using the initial rates
  int batch_size = 16;
  double eta = 0.9;
  double clip_threshold = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;

  double lr_for_epoch(int epoch) const { return epoch <= switch_epoch ? lr_initial : lr_after; }
  double delta_for_epoch(int epoch) const {
    return epoch <= switch_epoch ? delta_initial : delta_after;
  }
  void validate() const;
  /// Keys train.epochs, train.lr_initial, train.lr_after, train.delta_initial,
  /// train.delta_after, train.switch_epoch, train.batch_size, train.clip,
  /// train.beta1, train.beta2, train.adam_eps; plus dataset.eta and seed.
  static TrainConfig from_config(const Config& c);
};

/// Mean binary cross-entropy over classes and valid pixels, probabilities
/// clamped to [1e-7, 1 - 1e-7].
double bce_loss(const ProbMap& pred, const ClassMap& target);

/// Same loss on a batch of logits (N, n_classes, H, W) against per-sample
/// targets. Writes d loss / d logits = (P - T) / (n_classes * valid pixels)
/// when dlogits is non-null.
template <typename T>
double bce_with_logits(const nn::Tensor<T>& logits, std::span<const ClassMap* const> targets,
                       nn::Tensor<T>* dlogits);

/// (delta / N_theta) * sum of squared trainable values.
template <typename T>
double l2_regularization(const nn::ParamStore<T>& store, double delta);
/// Adds 2 delta theta / N_theta to every trainable gradient.
template <typename T>
void add_l2_gradient(nn::ParamStore<T>& store, double delta);

/// Rescales all gradients when their global L2 norm exceeds the threshold.
/// Returns the factor applied (1 when untouched).
template <typename T>
double clip_gradients(nn::ParamStore<T>& store, double threshold);

/// Bias-corrected Adam update; `step` is the 1-based step count.
template <typename T>
void adam_step(nn::ParamStore<T>& store, double lr, long step, double beta1, double beta2,
               double eps);

/// Packs the first `channels` input channels of the given samples.
nn::Tensor<float> make_batch(std::span<const SamplePtr> samples, int channels);

/// Eval-mode probabilities for every sample.
std::vector<ProbMap> predict(nn::UNet<float>& model, std::span<const SamplePtr> samples,
                             int batch_size);

/// Counts pooled over samples, and per sample.
ConfusionCounts pooled_counts(std::span<const ProbMap> preds, std::span<const SamplePtr> samples);

struct EpochRecord {
  int epoch = 0;
  double lr = 0;
  double delta = 0;
  double train_loss = 0;
  std::vector<Score> val_f1;  // per class

  /// Unweighted class mean, undefined counted as 0.
  double mean_val_f1() const;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;  // 1-based
  long steps = 0;
};

/// 1-based index of the largest value; the earliest wins ties.
int select_best_epoch(std::span<const double> scores);

/// CSV: epoch,lr,delta,train_loss,val_f1_c1,...
std::string history_csv(const TrainResult& result);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains on split.train (used as given, so oversample beforehand), selects
/// the epoch with the highest mean validation F1 and leaves those weights in
/// the model. Throws NumericalError if the loss becomes non-finite.
TrainResult train(nn::UNet<float>& model, const DatasetSplit& split, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

}  // namespace nowcast
