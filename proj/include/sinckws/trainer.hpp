// The training loop: per-sample reverse-mode gradients averaged over a
// batch, bias-corrected Adam with a step-decay schedule, weighted
// cross-entropy, once-per-epoch validation with best-checkpoint retention,
// and split evaluation with a confusion matrix.
#pragma once

#include <iomanip>
#include <ostream>

#include "sinckws/checkpoint.hpp"
#include "sinckws/dataset.hpp"
#include "sinckws/model.hpp"

namespace sinckws {

struct TrainConfig {
  int epochs = 60;
  double lr0 = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr_decay = 0.5;
  int lr_step_epochs = 10;
  int batch_size = 64;
  std::uint64_t seed = 0;
  double silence_fraction = 1.0 / 12.0;
  std::string checkpoint_path;         // empty = keep best in memory only
  double stop_at_train_accuracy = -1;  // <= 0 disables early stopping

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
    if (lr0 <= 0) throw std::invalid_argument("train config: lr0 must be positive");
    if (lr_decay <= 0 || lr_decay > 1)
      throw std::invalid_argument("train config: lr decay must be in (0, 1]");
    if (lr_step_epochs < 1)
      throw std::invalid_argument("train config: lr step must be >= 1 epochs");
    if (batch_size < 1) throw std::invalid_argument("train config: batch size must be >= 1");
    if (silence_fraction < 0 || silence_fraction >= 1)
      throw std::invalid_argument("train config: silence fraction must be in [0, 1)");
  }
};

inline double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw std::invalid_argument("lr_at: negative epoch");
  return cfg.lr0 * std::pow(cfg.lr_decay, epoch / cfg.lr_step_epochs);
}

// Moments are kept in 64-bit regardless of the parameter precision.
template <typename T>
struct AdamState {
  std::vector<std::vector<double>> m, v;
  long long step = 0;

  explicit AdamState(const std::vector<std::pair<std::string, TensorPtr<T>>>& params) {
    for (const auto& [name, p] : params) {
      m.emplace_back(p->size(), 0.0);
      v.emplace_back(p->size(), 0.0);
    }
  }
};

// One bias-corrected Adam update from the gradients currently held by the
// parameters. A non-finite gradient anywhere aborts before any mutation.
template <typename T>
void adam_step(const std::vector<std::pair<std::string, TensorPtr<T>>>& params,
               AdamState<T>& state, const TrainConfig& cfg, double lr) {
  if (params.size() != state.m.size())
    throw std::invalid_argument("adam_step: state does not match the parameter list");
  for (const auto& [name, p] : params) {
    if (p->grad.size() != p->values.size())
      throw std::invalid_argument("adam_step: missing gradient for " + name);
    if (!all_finite(p->grad))
      throw numeric_error("non-finite gradient in " + name + "; step aborted");
  }

  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = *params[pi].second;
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      const double g = static_cast<double>(p.grad[i]);
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double update = lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.eps);
      p.values[i] = static_cast<T>(static_cast<double>(p.values[i]) - update);
    }
  }
}

struct HistoryRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double lr = 0.0;
};

inline void write_history_csv(std::ostream& os, const std::vector<HistoryRow>& rows) {
  os << "epoch,train_loss,val_accuracy,lr\n" << std::setprecision(10);
  for (const auto& r : rows)
    os << r.epoch << ',' << r.train_loss << ',' << r.val_accuracy << ',' << r.lr << '\n';
}

struct EvalResult {
  double accuracy = 0.0;
  long long correct = 0;
  long long total = 0;
  std::vector<std::vector<long long>> confusion;  // [true][predicted]
};

inline void write_confusion_csv(std::ostream& os, const EvalResult& result) {
  os << "true_class";
  for (const auto& name : class_names()) os << ",pred_" << name;
  os << '\n';
  for (std::size_t r = 0; r < result.confusion.size(); ++r) {
    os << class_names()[r];
    for (const long long n : result.confusion[r]) os << ',' << n;
    os << '\n';
  }
}

namespace detail {

template <typename T>
int argmax_class(const Tensor<T>& logits) {
  int best = 0;
  for (int c = 1; c < logits.shape[0]; ++c)
    if (logits.values[static_cast<std::size_t>(c)] >
        logits.values[static_cast<std::size_t>(best)])
      best = c;
  return best;
}

// Seed for synthesized eval-split silence: fixed so repeated evaluations see
// the same clips.
inline std::uint64_t eval_seed(Split split) {
  return 0x51C3ull + static_cast<std::uint64_t>(split);
}

}  // namespace detail

template <typename T>
EvalResult evaluate(Model<T>& model, const DatasetManifest& manifest, Split split,
                    int batch_size = 64, double silence_fraction = 1.0 / 12.0) {
  EvalResult result;
  result.confusion.assign(static_cast<std::size_t>(model.config.n_classes),
                          std::vector<long long>(static_cast<std::size_t>(model.config.n_classes), 0));
  BatchStream stream(manifest, split, batch_size, silence_fraction,
                     detail::eval_seed(split));
  Batch batch;
  while (stream.next(batch)) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto audio = make_tensor<T>({1, kClipSamples});
      for (int s = 0; s < kClipSamples; ++s)
        audio->values[static_cast<std::size_t>(s)] =
            static_cast<T>(batch.clips[i][static_cast<std::size_t>(s)]);
      auto logits = model_forward<T>(nullptr, model, audio, Mode::eval, nullptr);
      const int pred = detail::argmax_class(*logits);
      result.confusion[static_cast<std::size_t>(batch.labels[i])]
                      [static_cast<std::size_t>(pred)] += 1;
      result.total += 1;
      if (pred == batch.labels[i]) result.correct += 1;
    }
  }
  result.accuracy = static_cast<double>(result.correct) / static_cast<double>(result.total);
  return result;
}

struct TrainResult {
  std::vector<HistoryRow> history;
  double best_val_accuracy = -1.0;
  int best_epoch = -1;
  bool stopped_early = false;
};

// Runs the full loop. The checkpoint at cfg.checkpoint_path always holds the
// model with the best validation accuracy seen so far; it is written only on
// strict improvement. A non-finite loss or gradient aborts by rethrowing
// after the last good checkpoint is already on disk.
template <typename T>
TrainResult train(Model<T>& model, const DatasetManifest& manifest,
                  const TrainConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  const auto weights = class_weights(manifest);
  auto params = model.named_parameters();
  AdamState<T> adam(params);
  Rng master(cfg.seed);
  TrainResult result;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    Rng dropout_rng(master.next_u64());
    BatchStream stream(manifest, Split::train, cfg.batch_size, cfg.silence_fraction,
                       master.next_u64());

    double loss_sum = 0.0;
    long long seen = 0, train_correct = 0;
    Batch batch;
    while (stream.next(batch)) {
      std::vector<TensorPtr<T>> audios(batch.size());
      std::vector<std::uint64_t> mask_seeds(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        audios[i] = make_tensor<T>({1, kClipSamples});
        for (int s = 0; s < kClipSamples; ++s)
          audios[i]->values[static_cast<std::size_t>(s)] =
              static_cast<T>(batch.clips[i][static_cast<std::size_t>(s)]);
        mask_seeds[i] = dropout_rng.next_u64();
      }

      // First pass fixes the minibatch normalization statistics; the seeded
      // per-sample generators make its dropout masks match the gradient pass.
      std::vector<Rng> stat_rngs;
      stat_rngs.reserve(batch.size());
      for (const auto seed : mask_seeds) stat_rngs.emplace_back(seed);
      commit_batch_stats(model, audios, stat_rngs);

      model.zero_grad();
      for (std::size_t i = 0; i < batch.size(); ++i) {
        Tape<T> tape;
        Rng sample_rng(mask_seeds[i]);
        auto logits =
            model_forward<T>(&tape, model, audios[i], Mode::train, &sample_rng);
        const int label = batch.labels[i];
        auto loss = weighted_softmax_cross_entropy(
            &tape, logits, label, static_cast<T>(weights[static_cast<std::size_t>(label)]));
        loss_sum += static_cast<double>(loss->values[0]);
        if (detail::argmax_class(*logits) == label) train_correct += 1;
        seen += 1;
        tape.backward(loss);
      }
      const T inv = static_cast<T>(1.0 / static_cast<double>(batch.size()));
      for (auto& [name, p] : params)
        for (auto& g : p->grad) g *= inv;
      adam_step(params, adam, cfg, lr);
    }

    const double train_loss = loss_sum / static_cast<double>(seen);
    const double train_accuracy =
        static_cast<double>(train_correct) / static_cast<double>(seen);
    if (!std::isfinite(train_loss))
      throw numeric_error("training loss diverged at epoch " + std::to_string(epoch));

    const auto val = evaluate(model, manifest, Split::val, cfg.batch_size,
                              cfg.silence_fraction);
    model.epoch = epoch;
    if (val.accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = val.accuracy;
      result.best_epoch = epoch;
      model.best_val_accuracy = val.accuracy;
      if (!cfg.checkpoint_path.empty()) save_checkpoint(model, cfg.checkpoint_path);
    }
    result.history.push_back({epoch, train_loss, val.accuracy, lr});
    if (log)
      *log << "epoch " << epoch << " train_loss " << std::setprecision(10) << train_loss
           << " train_accuracy " << train_accuracy << " val_accuracy " << val.accuracy
           << " lr " << lr << '\n';

    if (cfg.stop_at_train_accuracy > 0 && train_accuracy >= cfg.stop_at_train_accuracy) {
      result.stopped_early = true;
      break;
    }
  }
  return result;
}

}  // namespace sinckws
