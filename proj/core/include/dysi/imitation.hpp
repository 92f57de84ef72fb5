// SPDX-License-Identifier: Apache-2.0
//
// Training objectives. One train step runs the two-pass pipeline: the
// teacher-forced decoder provides predictions (for the scheduler) and the
// expert distribution (for the imitation term); the operative decoder
// consumes the mixed input and is the only pass gradients flow through.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dysi/data.hpp"
#include "dysi/errors.hpp"
#include "dysi/model.hpp"
#include "dysi/optimizer.hpp"
#include "dysi/rng.hpp"
#include "dysi/scheduling.hpp"
#include "dysi/tensor.hpp"

namespace dysi {

enum class Objective { kMle, kVanillaSs, kDynamicSs, kDysi };

Objective objective_from_string(const std::string& name);
std::string objective_to_string(Objective o);

struct LossBreakdown {
  double mle = 0.0;
  double imitation = 0.0;
  double total = 0.0;
  double alpha = 0.0;
  std::int64_t token_count = 0;
};

struct TrainingObjective {
  Objective objective = Objective::kDysi;
  double alpha = 0.5;
  double label_smoothing = 0.1;
  SchedulerConfig scheduler;

  void validate() const {
    if (alpha < 0.0) throw ConfigError("training: alpha must be >= 0");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0)
      throw ConfigError("training: label smoothing must be in [0,1)");
    scheduler.validate();
  }
};

struct TrainStepStats {
  LossBreakdown loss;
  double accuracy = -1.0;      // mean teacher-forced accuracy; -1 when no expert pass ran
  double mean_replaced = 0.0;  // mean N over the batch
  double epsilon = 1.0;        // step-decay value under vanilla scheduled sampling
};

// Token-mean KL from the expert's distribution to the learner's, over
// non-pad steps. The expert side is detached here, so gradients reach
// parameters only through the learner's log-probabilities.
template <class T>
TensorT<T> imitation_loss(const StepDistributionsT<T>& expert,
                          const StepDistributionsT<T>& learner,
                          const std::vector<float>& target_mask) {
  if (expert.batch != learner.batch || expert.steps != learner.steps ||
      expert.vocab != learner.vocab)
    throw ShapeError("imitation_loss: expert and learner shapes differ");
  const int rows = expert.batch * expert.steps;
  auto p = stop_gradient(expert.probs);
  return kl_masked_mean(reshape(p, {rows, expert.vocab}),
                        reshape(learner.log_probs, {rows, learner.vocab}), target_mask);
}

template <class T>
LossBreakdown make_breakdown(const TensorT<T>& mle, const TensorT<T>* imitation, double alpha,
                             std::int64_t token_count) {
  LossBreakdown out;
  out.mle = mle.item_f64();
  out.imitation = imitation ? imitation->item_f64() : 0.0;
  out.alpha = alpha;
  out.token_count = token_count;
  out.total = out.mle + alpha * out.imitation;
  return out;
}

// total = mle + alpha * imitation, assembled on the tape.
template <class T>
TensorT<T> total_loss(const TensorT<T>& mle, const TensorT<T>& imitation, T alpha) {
  return add(mle, scale(imitation, alpha));
}

namespace detail {

inline bool objective_needs_expert(const TrainingObjective& obj) {
  switch (obj.objective) {
    case Objective::kMle:
      return false;
    case Objective::kVanillaSs:
      return true;
    case Objective::kDynamicSs:
      return obj.scheduler.beta > 0.0;
    case Objective::kDysi:
      return obj.scheduler.beta > 0.0 || obj.alpha > 0.0;
  }
  return false;
}

inline SchedulerConfig scheduler_for(const TrainingObjective& obj) {
  SchedulerConfig cfg = obj.scheduler;
  switch (obj.objective) {
    case Objective::kMle:
      cfg.kind = SchedulerKind::kTeacherForcing;
      break;
    case Objective::kVanillaSs:
      cfg.kind = SchedulerKind::kVanillaSs;
      break;
    case Objective::kDynamicSs:
    case Objective::kDysi:
      cfg.kind = SchedulerKind::kDynamic;
      break;
  }
  return cfg;
}

}  // namespace detail

// One optimizer update with the configured objective. Per-step RNG streams
// are derived from (run_seed, step), so a run resumed from a checkpoint
// replays identical draws. `step` is 1-based.
template <class T>
TrainStepStats train_step(TransformerT<T>& model, const ParallelBatch& batch,
                          const TrainingObjective& obj, std::int64_t step,
                          OptimizerStateT<T>& optimizer, double lr, std::uint64_t run_seed) {
  obj.validate();
  Rng dropout_rng(run_seed, Rng::mix(rng_stream::kDropout, static_cast<std::uint64_t>(step)));
  Rng scheduler_rng(run_seed, Rng::mix(rng_stream::kScheduler, static_cast<std::uint64_t>(step)));

  TrainStepStats stats;
  const bool needs_expert = detail::objective_needs_expert(obj);
  const bool wants_imitation = obj.objective == Objective::kDysi && obj.alpha > 0.0;

  StepDistributionsT<T> expert;
  const std::vector<std::int32_t>* operative_input = &batch.target_input;
  BatchSchedule schedule;
  if (needs_expert) {
    expert = model.forward_teacher_forced(batch);
    const auto predictions = greedy_predictions(expert);
    schedule = schedule_batch(batch, predictions, detail::scheduler_for(obj), step, scheduler_rng);
    operative_input = &schedule.mixed_input;
    stats.mean_replaced = schedule.mean_replaced;
    stats.epsilon = schedule.epsilon;
    if (!schedule.decisions.empty()) stats.accuracy = schedule.mean_accuracy;
  }

  auto learner = model.forward_operative(batch, *operative_input, &dropout_rng);
  const int rows = learner.batch * learner.steps;
  std::vector<std::int32_t> targets(batch.target_output.begin(), batch.target_output.end());
  auto mle = label_smoothed_nll_mean(reshape(learner.log_probs, {rows, learner.vocab}), targets,
                                     batch.target_mask, obj.label_smoothing);
  std::int64_t token_count = 0;
  for (float m : batch.target_mask) token_count += m != 0.0f ? 1 : 0;

  TensorT<T> loss = mle;
  TensorT<T> il;
  if (wants_imitation) {
    il = imitation_loss(expert, learner, batch.target_mask);
    loss = total_loss(mle, il, static_cast<T>(obj.alpha));
  }
  stats.loss =
      make_breakdown(mle, wants_imitation ? &il : nullptr, wants_imitation ? obj.alpha : 0.0,
                     token_count);
  if (!std::isfinite(stats.loss.total))
    throw NumericError("training step " + std::to_string(step) + ": loss is not finite");

  model.params().zero_grads();
  backward(loss);
  adam_step(model.params(), optimizer, lr);
  return stats;
}

// The full method: accuracy-driven mixing plus the imitation objective.
template <class T>
TrainStepStats dysi_train_step(TransformerT<T>& model, const ParallelBatch& batch,
                               const SchedulerConfig& scheduler, double alpha,
                               double label_smoothing, std::int64_t step,
                               OptimizerStateT<T>& optimizer, double lr, std::uint64_t run_seed) {
  TrainingObjective obj;
  obj.objective = Objective::kDysi;
  obj.alpha = alpha;
  obj.label_smoothing = label_smoothing;
  obj.scheduler = scheduler;
  return train_step(model, batch, obj, step, optimizer, lr, run_seed);
}

inline Objective objective_from_string(const std::string& name) {
  if (name == "mle") return Objective::kMle;
  if (name == "vanilla-ss") return Objective::kVanillaSs;
  if (name == "dynamic-ss") return Objective::kDynamicSs;
  if (name == "dysi") return Objective::kDysi;
  throw ConfigError("unknown objective: " + name);
}

inline std::string objective_to_string(Objective o) {
  switch (o) {
    case Objective::kMle:
      return "mle";
    case Objective::kVanillaSs:
      return "vanilla-ss";
    case Objective::kDynamicSs:
      return "dynamic-ss";
    case Objective::kDysi:
      return "dysi";
  }
  return "mle";
}

}  // namespace dysi
