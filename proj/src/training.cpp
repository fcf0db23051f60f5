#include "nowcast/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "nowcast/error.hpp"

namespace nowcast {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (!(lr_initial > 0) || !(lr_after > 0)) throw ConfigError("learning rates must be > 0");
  if (!(delta_initial >= 0) || !(delta_after >= 0))
    throw ConfigError("regularization weights must be >= 0");
  if (switch_epoch < 0) throw ConfigError("train.switch_epoch must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(eta >= 0 && eta < 1)) throw ConfigError("eta must be in [0, 1)");
  if (!(clip_threshold > 0)) throw ConfigError("train.clip must be > 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    throw ConfigError("Adam betas must be in [0, 1)");
  if (!(adam_eps > 0)) throw ConfigError("train.adam_eps must be > 0");
}

TrainConfig TrainConfig::from_config(const Config& c) {
  TrainConfig t;
  t.epochs = static_cast<int>(c.get_int("train.epochs", t.epochs));
  t.lr_initial = c.get_double("train.lr_initial", t.lr_initial);
  t.lr_after = c.get_double("train.lr_after", t.lr_after);
  t.delta_initial = c.get_double("train.delta_initial", t.delta_initial);
  t.delta_after = c.get_double("train.delta_after", t.delta_after);
  t.switch_epoch = static_cast<int>(c.get_int("train.switch_epoch", t.switch_epoch));
  t.batch_size = static_cast<int>(c.get_int("train.batch_size", t.batch_size));
  t.eta = c.get_double("dataset.eta", t.eta);
  t.clip_threshold = c.get_double("train.clip", t.clip_threshold);
  t.beta1 = c.get_double("train.beta1", t.beta1);
  t.beta2 = c.get_double("train.beta2", t.beta2);
  t.adam_eps = c.get_double("train.adam_eps", t.adam_eps);
  t.seed = c.get_u64("seed", t.seed);
  t.validate();
  return t;
}

namespace {

constexpr double kProbFloor = 1e-7;

double pixel_bce(double p, bool t) {
  p = std::clamp(p, kProbFloor, 1.0 - kProbFloor);
  return t ? -std::log(p) : -std::log(1.0 - p);
}

double stable_sigmoid(double s) {
  if (s >= 0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

}  // namespace

double bce_loss(const ProbMap& pred, const ClassMap& target) {
  if (pred.n_classes != target.n_classes || pred.height != target.height ||
      pred.width != target.width)
    throw ShapeMismatch("prediction and target shapes differ");
  const std::size_t plane = target.plane();
  double sum = 0.0;
  std::size_t valid = 0;
  for (std::size_t i = 0; i < plane; ++i) {
    if (!target.valid[i]) continue;
    ++valid;
    for (int m = 0; m < target.n_classes; ++m) {
      const std::size_t k = m * plane + i;
      sum += pixel_bce(pred.probs[k], target.labels[k] != 0);
    }
  }
  if (valid == 0) throw DomainError("target has no valid pixel");
  return sum / (static_cast<double>(valid) * target.n_classes);
}

template <typename T>
double bce_with_logits(const nn::Tensor<T>& logits, std::span<const ClassMap* const> targets,
                       nn::Tensor<T>* dlogits) {
  const nn::Shape s = logits.shape();
  if (targets.size() != static_cast<std::size_t>(s.n))
    throw ShapeMismatch("one target per batch entry required");
  const std::size_t plane = s.plane();
  std::size_t valid = 0;
  for (const ClassMap* t : targets) {
    if (t->n_classes != s.c || t->height != s.h || t->width != s.w)
      throw ShapeMismatch("target does not match logits " + s.str());
    valid += static_cast<std::size_t>(std::count(t->valid.begin(), t->valid.end(), 1));
  }
  if (valid == 0) throw DomainError("batch has no valid pixel");
  const double denom = static_cast<double>(valid) * s.c;

  if (dlogits) *dlogits = nn::Tensor<T>(s);
  double sum = 0.0;
  for (int n = 0; n < s.n; ++n) {
    const ClassMap& t = *targets[static_cast<std::size_t>(n)];
    for (int m = 0; m < s.c; ++m) {
      const T* z = logits.plane(n, m);
      T* g = dlogits ? dlogits->plane(n, m) : nullptr;
      for (std::size_t i = 0; i < plane; ++i) {
        if (!t.valid[i]) continue;
        const double p = stable_sigmoid(static_cast<double>(z[i]));
        const bool label = t.labels[m * plane + i] != 0;
        sum += pixel_bce(p, label);
        if (g) g[i] = static_cast<T>((p - (label ? 1.0 : 0.0)) / denom);
      }
    }
  }
  return sum / denom;
}

template <typename T>
double l2_regularization(const nn::ParamStore<T>& store, double delta) {
  const std::size_t n = store.trainable_count();
  if (n == 0) return 0.0;
  double sq = 0.0;
  for (const auto& p : store) {
    if (!p.trainable) continue;
    for (T v : p.value) sq += static_cast<double>(v) * v;
  }
  return delta / static_cast<double>(n) * sq;
}

template <typename T>
void add_l2_gradient(nn::ParamStore<T>& store, double delta) {
  const std::size_t n = store.trainable_count();
  if (n == 0) return;
  const double k = 2.0 * delta / static_cast<double>(n);
  for (auto& p : store) {
    if (!p.trainable) continue;
    for (std::size_t i = 0; i < p.size(); ++i) p.grad[i] += static_cast<T>(k * p.value[i]);
  }
}

template <typename T>
double clip_gradients(nn::ParamStore<T>& store, double threshold) {
  if (!(threshold > 0)) throw ContractViolation("clip threshold must be > 0");
  double sq = 0.0;
  for (const auto& p : store)
    for (T g : p.grad) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericalError("gradient norm is not finite");
  if (norm <= threshold) return 1.0;
  const double factor = threshold / norm;
  for (auto& p : store)
    for (T& g : p.grad) g = static_cast<T>(g * factor);
  return factor;
}

template <typename T>
void adam_step(nn::ParamStore<T>& store, double lr, long step, double beta1, double beta2,
               double eps) {
  if (step < 1) throw ContractViolation("Adam step count starts at 1");
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (auto& p : store) {
    if (!p.trainable) continue;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = p.grad[i];
      const double m = beta1 * p.moment1[i] + (1.0 - beta1) * g;
      const double v = beta2 * p.moment2[i] + (1.0 - beta2) * g * g;
      p.moment1[i] = static_cast<T>(m);
      p.moment2[i] = static_cast<T>(v);
      p.value[i] = static_cast<T>(p.value[i] - lr * (m / c1) / (std::sqrt(v / c2) + eps));
    }
  }
}

nn::Tensor<float> make_batch(std::span<const SamplePtr> samples, int channels) {
  if (samples.empty()) throw ContractViolation("empty batch");
  const SequenceSample& first = *samples.front();
  nn::Tensor<float> x(nn::Shape{static_cast<int>(samples.size()), channels, first.height,
                                first.width});
  const std::size_t count = static_cast<std::size_t>(channels) * first.plane();
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const SequenceSample& s = *samples[n];
    if (s.height != first.height || s.width != first.width)
      throw ShapeMismatch("samples in a batch differ in size");
    if (s.channels < channels)
      throw ShapeMismatch("model needs " + std::to_string(channels) + " channels, sample has " +
                          std::to_string(s.channels));
    std::copy(s.input.begin(), s.input.begin() + static_cast<std::ptrdiff_t>(count),
              x.plane(static_cast<int>(n), 0));
  }
  return x;
}

std::vector<ProbMap> predict(nn::UNet<float>& model, std::span<const SamplePtr> samples,
                             int batch_size) {
  if (batch_size < 1) throw ContractViolation("batch size must be >= 1");
  std::vector<ProbMap> out;
  out.reserve(samples.size());
  const int channels = model.config().in_channels;
  for (std::size_t b = 0; b < samples.size(); b += static_cast<std::size_t>(batch_size)) {
    const auto chunk = samples.subspan(b, std::min<std::size_t>(batch_size, samples.size() - b));
    const nn::Tensor<float> p = model.forward(make_batch(chunk, channels), nn::Mode::Eval);
    const nn::Shape s = p.shape();
    for (int n = 0; n < s.n; ++n) {
      ProbMap m(s.c, s.h, s.w);
      std::copy(p.plane(n, 0), p.plane(n, 0) + m.probs.size(), m.probs.begin());
      out.push_back(std::move(m));
    }
  }
  return out;
}

ConfusionCounts pooled_counts(std::span<const ProbMap> preds, std::span<const SamplePtr> samples) {
  if (preds.size() != samples.size()) throw ShapeMismatch("one prediction per sample required");
  if (preds.empty()) return {};
  ConfusionCounts counts(preds.front().n_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) accumulate(preds[i], samples[i]->target, counts);
  return counts;
}

double EpochRecord::mean_val_f1() const {
  if (val_f1.empty()) return 0.0;
  double s = 0.0;
  for (const Score& f : val_f1) s += f.value_or(0.0);
  return s / static_cast<double>(val_f1.size());
}

int select_best_epoch(std::span<const double> scores) {
  if (scores.empty()) throw ContractViolation("no epochs to select from");
  return static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin()) + 1;
}

std::string history_csv(const TrainResult& result) {
  std::string out = "epoch,lr,delta,train_loss";
  const std::size_t nc = result.history.empty() ? 0 : result.history.front().val_f1.size();
  for (std::size_t m = 0; m < nc; ++m) out += ",val_f1_c" + std::to_string(m + 1);
  out += "\n";
  char buf[64];
  for (const auto& r : result.history) {
    out += std::to_string(r.epoch);
    std::snprintf(buf, sizeof buf, ",%.6g,%.6g,%.6f", r.lr, r.delta, r.train_loss);
    out += buf;
    for (const Score& f : r.val_f1) {
      if (f) {
        std::snprintf(buf, sizeof buf, ",%.6f", *f);
        out += buf;
      } else {
        out += ",NA";
      }
    }
    out += "\n";
  }
  return out;
}

TrainResult train(nn::UNet<float>& model, const DatasetSplit& split, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (split.train.empty()) throw ContractViolation("training split is empty");
  if (split.validation.empty()) throw ContractViolation("validation split is empty");

  auto& store = model.params();
  const int channels = model.config().in_channels;
  std::mt19937_64 rng(cfg.seed ^ 0x7261696e5f6c6f6fULL);
  std::vector<std::size_t> order(split.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  std::vector<double> mean_f1;
  std::vector<std::vector<float>> best;
  std::vector<SamplePtr> batch;
  std::vector<const ClassMap*> targets;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = cfg.lr_for_epoch(epoch);
    const double delta = cfg.delta_for_epoch(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      targets.clear();
      for (std::size_t i = b; i < end; ++i) {
        batch.push_back(split.train[order[i]]);
        targets.push_back(&batch.back()->target);
      }
      store.zero_grad();
      const nn::Tensor<float> logits = model.forward_logits(make_batch(batch, channels),
                                                            nn::Mode::Train);
      nn::Tensor<float> dlogits;
      const double loss = bce_with_logits<float>(logits, targets, &dlogits) +
                          l2_regularization(store, delta);
      if (!std::isfinite(loss))
        throw NumericalError("training loss became non-finite at epoch " +
                             std::to_string(epoch));
      loss_sum += loss * static_cast<double>(end - b);
      model.backward(dlogits);
      add_l2_gradient(store, delta);
      clip_gradients(store, cfg.clip_threshold);
      adam_step(store, lr, ++result.steps, cfg.beta1, cfg.beta2, cfg.adam_eps);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.delta = delta;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    const auto preds = predict(model, split.validation, cfg.batch_size);
    const ConfusionCounts counts = pooled_counts(preds, split.validation);
    for (int m = 0; m < counts.n_classes(); ++m) rec.val_f1.push_back(f1_score(counts, m));
    mean_f1.push_back(rec.mean_val_f1());
    if (mean_f1.size() == 1 || mean_f1.back() > *std::max_element(mean_f1.begin(), mean_f1.end() - 1)) {
      best.clear();
      for (const auto& p : store) best.push_back(p.value);
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }

  result.best_epoch = select_best_epoch(mean_f1);
  std::size_t k = 0;
  for (auto& p : store) p.value = best[k++];
  return result;
}

#define NOWCAST_INSTANTIATE(T)                                                                   \
  template double bce_with_logits<T>(const nn::Tensor<T>&, std::span<const ClassMap* const>,    \
                                     nn::Tensor<T>*);                                            \
  template double l2_regularization<T>(const nn::ParamStore<T>&, double);                        \
  template void add_l2_gradient<T>(nn::ParamStore<T>&, double);                                  \
  template double clip_gradients<T>(nn::ParamStore<T>&, double);                                 \
  template void adam_step<T>(nn::ParamStore<T>&, double, long, double, double, double);

NOWCAST_INSTANTIATE(float)
NOWCAST_INSTANTIATE(double)

#undef NOWCAST_INSTANTIATE

}  // namespace nowcast
