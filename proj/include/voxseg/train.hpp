#pragma once

#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "voxseg/loss.hpp"
#include "voxseg/network.hpp"
#include "voxseg/optimizer.hpp"
#include "voxseg/rng.hpp"
#include "voxseg/sampler.hpp"

namespace voxseg {

using SampleSource = std::function<SegmentPair(Rng&)>;
using StepSink = std::function<void(const LossReport&, double lr, int64_t epoch)>;
using CheckpointSink = std::function<void(int64_t epoch, const NetworkState&)>;

// Runs t_max epochs of steps_per_epoch optimizer steps; each step averages the
// loss over batch_size samples drawn from the source. The learning rate is
// held constant within an epoch. Checkpoints go out before training and after
// every epoch; with steps_per_epoch == 0 only the initial checkpoint is
// emitted. Deterministic for a fixed seed and source.
inline void train(const NetworkPlan& plan, NetworkState& state, const TrainConfig& cfg, const SampleSource& source,
                  const StepSink& on_step = {}, const CheckpointSink& on_checkpoint = {}) {
  validate_train_config(cfg);
  Rng rng = Rng(cfg.seed).split("train");
  OptimizerState opt = make_optimizer(plan);
  if (on_checkpoint) on_checkpoint(0, state);
  if (cfg.steps_per_epoch == 0) return;

  ForwardTrace trace;
  GradTrace grads;
  std::vector<Tensor5> head_grads;
  const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);

  for (int64_t epoch = 0; epoch < cfg.t_max; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    for (int64_t s = 0; s < cfg.steps_per_epoch; ++s) {
      zero_grad(state);
      LossReport step_report;
      step_report.per_head.resize(static_cast<size_t>(plan.spec.num_heads()));
      for (int64_t b = 0; b < cfg.batch_size; ++b) {
        SegmentPair sample = source(rng);
        forward(plan, state, sample.image, trace);
        LossReport r = combined_loss(plan, trace, sample.label, cfg.dice_epsilon, head_grads);
        for (auto& hg : head_grads)
          for (double& v : hg.data) v *= inv_batch;
        backward(plan, state, trace, head_grads, grads);
        step_report.total += r.total * inv_batch;
        for (size_t h = 0; h < r.per_head.size(); ++h) {
          step_report.per_head[h].soft_dice += r.per_head[h].soft_dice * inv_batch;
          step_report.per_head[h].cross_entropy += r.per_head[h].cross_entropy * inv_batch;
        }
      }
      step_report.step = opt.step;
      try {
        sgd_nesterov_step(plan, state, opt, lr, cfg.momentum, cfg.weight_decay);
      } catch (const NonFiniteGradient& e) {
        throw NonFiniteGradient(std::string(e.what()) + " at step " + std::to_string(step_report.step));
      }
      if (on_step) on_step(step_report, lr, epoch);
    }
    opt.epoch = epoch + 1;
    if (on_checkpoint) on_checkpoint(epoch + 1, state);
  }
}

// One training-log line: step, epoch, lr, total, then per-head loss pairs.
inline std::string format_log_line(const LossReport& r, double lr, int64_t epoch) {
  std::string line = std::to_string(r.step) + "\t" + std::to_string(epoch) + "\t";
  char buf[32];
  auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
  };
  line += fmt(lr) + "\t" + fmt(r.total);
  for (const auto& h : r.per_head) line += "\t" + fmt(h.soft_dice) + "\t" + fmt(h.cross_entropy);
  return line;
}

}  // namespace voxseg
