#pragma once

// Shared single-controller training loop: shuffled mini-batches, gradient
// accumulation per item, Adam, divergence guard.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "dutavc/error.hpp"
#include "dutavc/nn/layers.hpp"
#include "dutavc/random.hpp"

namespace dutavc {

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 32;
  int epochs = 100;
  long max_steps = 0;  // > 0 overrides epochs
  double clip_grad_norm = 1.0;
  std::uint64_t seed = 0;
  std::string checkpoint_path;  // when set, the final (or last good) model is written here
};

struct TrainLog {
  std::vector<double> step_loss;   // mean loss of each optimizer step
  std::vector<double> epoch_loss;  // mean loss of each (possibly partial) epoch
};

/// `item_loss(index, rng)` builds the scalar loss graph of one corpus item.
/// `save(path)` persists the model. Throws DivergenceError after restoring the
/// last finite parameters when a loss or parameter becomes non-finite.
inline void run_training(nn::ParamStore& params, std::size_t num_items, const TrainConfig& cfg,
                         const std::function<nn::Var(std::size_t, Rng&)>& item_loss,
                         const std::function<void(const std::string&)>& save, TrainLog* log) {
  DUTAVC_CHECK(num_items > 0, "training: empty corpus");
  DUTAVC_CHECK(cfg.batch_size >= 1, "training: batch size must be >= 1");
  DUTAVC_CHECK(cfg.learning_rate >= 0.0, "training: learning rate must be >= 0");
  nn::Adam opt(params.vars(), {.lr = cfg.learning_rate, .clip_grad_norm = cfg.clip_grad_norm});
  Rng rng(cfg.seed);
  std::vector<nn::Tensor> last_good = params.snapshot();
  std::vector<std::size_t> order(num_items);
  std::iota(order.begin(), order.end(), std::size_t{0});

  auto diverge = [&](long step, const std::string& what) {
    params.restore(last_good);
    if (!cfg.checkpoint_path.empty()) save(cfg.checkpoint_path);
    throw DivergenceError("training diverged at step " + std::to_string(step) + ": " + what +
                          (cfg.checkpoint_path.empty() ? "" : "; last good model saved to " + cfg.checkpoint_path));
  };

  long step = 0;
  const long total_steps =
      cfg.max_steps > 0 ? cfg.max_steps
                        : static_cast<long>(cfg.epochs) *
                              static_cast<long>((num_items + cfg.batch_size - 1) / cfg.batch_size);
  while (step < total_steps) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0.0;
    long epoch_steps = 0;
    for (std::size_t b = 0; b < num_items && step < total_steps; b += cfg.batch_size) {
      const std::size_t end = std::min(num_items, b + static_cast<std::size_t>(cfg.batch_size));
      const double inv = 1.0 / static_cast<double>(end - b);
      double batch_loss = 0.0;
      for (std::size_t k = b; k < end; ++k) {
        nn::Var loss = item_loss(order[k], rng);
        if (!std::isfinite(loss.item()))
          diverge(step, "non-finite loss on item " + std::to_string(order[k]));
        nn::backward(nn::scale(loss, inv));
        batch_loss += loss.item() * inv;
      }
      opt.step();
      for (const auto& [name, v] : params.params())
        if (!v.value().vec().allFinite()) diverge(step, "non-finite parameter " + name);
      last_good = params.snapshot();
      ++step;
      epoch_sum += batch_loss;
      ++epoch_steps;
      if (log) log->step_loss.push_back(batch_loss);
    }
    if (log && epoch_steps > 0) log->epoch_loss.push_back(epoch_sum / epoch_steps);
  }
  if (!cfg.checkpoint_path.empty()) save(cfg.checkpoint_path);
}

}  // namespace dutavc
