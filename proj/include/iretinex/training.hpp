#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "iretinex/dataset.hpp"
#include "iretinex/errors.hpp"
#include "iretinex/model.hpp"
#include "iretinex/optim.hpp"

namespace iretinex {

struct TrainConfig {
  double lr_max = 2e-4;
  double lr_min = 1e-6;
  std::size_t total_iters = 2000;
  std::size_t batch = 4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t patch = 64;
  bool augment_rotate = true;
  bool augment_flip = true;
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints

  void validate() const {
    if (!(lr_min < lr_max)) throw ConfigError("train: lr_min must be < lr_max");
    if (!(lr_min >= 0.0)) throw ConfigError("train: lr_min must be >= 0");
    if (total_iters == 0) throw ConfigError("train: total_iters must be >= 1");
    if (batch == 0) throw ConfigError("train: batch must be >= 1");
    if (patch == 0) throw ConfigError("train: patch must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("train: betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be > 0");
  }

  AdamConfig adam() const { return {beta1, beta2, adam_eps}; }
  AugmentConfig augmentation() const { return {augment_rotate, augment_flip}; }
  double lr(std::size_t iter) const { return cosine_lr(iter, total_iters, lr_max, lr_min); }
};

struct TraceEntry {
  std::size_t iter = 0;
  double lr = 0.0;
  double loss = 0.0;  // batch mean of the per-sample loss
};

/// Raised when the loss turns non-finite; carries the failing iteration.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(std::size_t iteration, const std::string& what)
      : NumericError("training diverged at iteration " + std::to_string(iteration) + ": " + what),
        iteration_(iteration) {}
  std::size_t iteration() const { return iteration_; }

 private:
  std::size_t iteration_;
};

template <typename T>
struct TrainCallbacks {
  std::function<void(const TraceEntry&)> on_iteration;
  /// Called with the number of completed iterations every cfg.checkpoint_every
  /// iterations and once at the end.
  std::function<void(std::size_t, const ModelParams<T>&)> on_checkpoint;
};

/// Patch for batch member `member` of iteration `iter`. The RNG stream depends
/// only on (seed, iter, member), so batches can be built in any order.
inline ImagePair sample_patch(const std::vector<ImagePair>& data, const TrainConfig& cfg, std::size_t iter,
                              std::size_t member) {
  Rng rng(mix_seed(cfg.seed, iter, member));
  const auto idx = std::uniform_int_distribution<std::size_t>(0, data.size() - 1)(rng);
  const ImagePair& pair = data[idx];
  ImagePair patch = (pair.clean.height() == cfg.patch && pair.clean.width() == cfg.patch)
                        ? pair
                        : random_crop(pair, cfg.patch, rng);
  return augment(patch, rng, cfg.augmentation());
}

/// Loss of one low/clean pair with gradients recorded on `tape`.
template <typename T>
Tensor<T> sample_loss(const ImagePair& pair, const ModelParams<T>& model, Tape<T>& tape) {
  TapeScope<T> scope(tape);
  auto r = model_forward(pair.low.to_tensor<T>(), model);
  return rmc_loss(r.pyramid, pair.clean.to_tensor<T>(), model.theta);
}

/// Trains `model` in place and returns the per-iteration loss trace.
/// Each batch member gets its own tape; leaf gradients accumulate in member
/// order and are averaged before the Adam update.
template <typename T>
std::vector<TraceEntry> train(ModelParams<T>& model, const std::vector<ImagePair>& data, const TrainConfig& cfg,
                              const TrainCallbacks<T>& callbacks = {}) {
  cfg.validate();
  if (data.empty()) throw ConfigError("train: dataset is empty");
  model.arch.check_extent(cfg.patch, cfg.patch);
  for (const auto& p : data) {
    if (p.low.height() != p.clean.height() || p.low.width() != p.clean.width())
      throw DimensionError("train: pair members differ in size");
    if (p.clean.height() < cfg.patch || p.clean.width() < cfg.patch)
      throw ConfigError("train: image smaller than patch " + std::to_string(cfg.patch));
  }

  ParamSet<T> params = model.parameters();
  AdamState state;
  std::vector<TraceEntry> trace;
  trace.reserve(cfg.total_iters);
  const T inv_batch = T(1) / T(cfg.batch);

  for (std::size_t iter = 0; iter < cfg.total_iters; ++iter) {
    params.zero_grad();
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const ImagePair patch = sample_patch(data, cfg, iter, b);
      Tape<T> tape;
      auto loss = sample_loss(patch, model, tape);
      const double value = double(loss.item());
      if (!std::isfinite(value)) throw TrainingDiverged(iter, "loss is " + std::to_string(value));
      loss_sum += value;
      tape.backward(loss);
    }
    for (auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (T& g : p.tensor.grad()) g *= inv_batch;
    }
    const double lr = cfg.lr(iter);
    try {
      adam_step(params, state, lr, cfg.adam());
    } catch (const NumericError& e) {
      throw TrainingDiverged(iter, e.what());
    }

    TraceEntry entry{iter, lr, loss_sum / double(cfg.batch)};
    trace.push_back(entry);
    if (callbacks.on_iteration) callbacks.on_iteration(entry);
    const std::size_t done = iter + 1;
    if (callbacks.on_checkpoint && cfg.checkpoint_every != 0 && done % cfg.checkpoint_every == 0 &&
        done != cfg.total_iters)
      callbacks.on_checkpoint(done, model);
  }
  if (callbacks.on_checkpoint) callbacks.on_checkpoint(cfg.total_iters, model);
  return trace;
}

}  // namespace iretinex
