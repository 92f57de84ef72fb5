// SPDX-License-Identifier: Apache-2.0
//
// Decoder-input mixing policies. The dynamic scheduler draws the number of
// replaced positions from the per-sequence training accuracy; the step-based
// schedulers implement the classic exponential/linear epsilon decays.

#pragma once

#include <cstdint>
#include <vector>

#include "dysi/data.hpp"
#include "dysi/errors.hpp"
#include "dysi/rng.hpp"

namespace dysi {

enum class SchedulerKind { kTeacherForcing, kVanillaSs, kDynamic };
enum class DecayScheme { kExponential, kLinear };

struct SchedulerConfig {
  SchedulerKind kind = SchedulerKind::kDynamic;
  double beta = 0.5;  // replacement-strength knob of the dynamic scheduler

  // Step-based decay parameters (vanilla scheduled sampling only).
  DecayScheme decay = DecayScheme::kExponential;
  double decay_k = 0.985;      // epsilon = k^(step / decay_unit)
  double decay_unit = 100.0;
  double decay_c = 1e-4;       // epsilon = max(eps_min, 1 - c * step)
  double eps_min = 0.3;

  void validate() const {
    if (beta < 0.0 || beta > 1.0) throw ConfigError("scheduler: beta must be in [0,1]");
    if (decay == DecayScheme::kExponential) {
      if (decay_k <= 0.0 || decay_k >= 1.0)
        throw ConfigError("scheduler: exponential decay k must be in (0,1)");
      if (decay_unit <= 0.0) throw ConfigError("scheduler: decay unit must be positive");
    } else {
      if (eps_min < 0.0 || eps_min > 1.0)
        throw ConfigError("scheduler: linear decay floor must be in [0,1]");
      if (decay_c < 0.0) throw ConfigError("scheduler: linear decay rate must be >= 0");
    }
  }
};

// Outcome of the dynamic scheduler for one sequence.
struct SchedulerDecision {
  int replaced = 0;                 // N
  std::vector<int> positions;       // sorted decoder-input indices
  double accuracy = 0.0;            // Acc(y, y~) of this sequence
};

// Fraction of non-pad positions where the prediction matches the reference.
double training_accuracy(const std::vector<std::int32_t>& reference,
                         const std::vector<std::int32_t>& prediction,
                         const std::vector<float>& pad_mask);

// N ~ round(beta * U(0, acc * t_eff)). The caller clamps to the eligible
// count; beta = 0 or acc = 0 always yields 0.
int dynamic_sample_count(double accuracy, int t_eff, double beta, Rng& rng);

// Uniform N-subset of the eligible indices, returned sorted.
std::vector<int> select_positions(const std::vector<int>& eligible, int n, Rng& rng);

// Replace decoder-input slots at `positions` with the teacher-forced
// prediction for that step; slot j takes predictions[j-1] and BOS is never
// touched.
std::vector<std::int32_t> mix_sequence(const std::vector<std::int32_t>& target_input,
                                       const std::vector<std::int32_t>& predictions,
                                       const std::vector<int>& positions);

// Epsilon of the step-based schedules at `step`; monotone non-increasing.
double step_decay_epsilon(const SchedulerConfig& config, std::int64_t step);

// Classic scheduled-sampling mixing: keep ground truth with probability
// epsilon, independently per eligible slot (1..t_eff-1).
std::vector<std::int32_t> bernoulli_mix(const std::vector<std::int32_t>& target_input,
                                        const std::vector<std::int32_t>& predictions,
                                        double epsilon, int t_eff, Rng& rng);

// Per-batch application of the configured policy.
struct BatchSchedule {
  std::vector<SchedulerDecision> decisions;   // dynamic kind only
  std::vector<std::int32_t> mixed_input;      // [B, T]
  double mean_accuracy = 0.0;
  double mean_replaced = 0.0;
  double epsilon = 1.0;  // step-decay value when vanilla, else 1
};

BatchSchedule schedule_batch(const ParallelBatch& batch,
                             const std::vector<std::int32_t>& predictions,
                             const SchedulerConfig& config, std::int64_t step, Rng& rng);

}  // namespace dysi
