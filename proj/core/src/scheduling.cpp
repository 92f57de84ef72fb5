// SPDX-License-Identifier: Apache-2.0
#include "dysi/scheduling.hpp"

#include <algorithm>
#include <cmath>

#include "dysi/vocab.hpp"

namespace dysi {

double training_accuracy(const std::vector<std::int32_t>& reference,
                         const std::vector<std::int32_t>& prediction,
                         const std::vector<float>& pad_mask) {
  if (reference.size() != prediction.size() || reference.size() != pad_mask.size())
    throw ShapeError("training_accuracy: length mismatch");
  std::int64_t correct = 0, total = 0;
  for (std::size_t t = 0; t < reference.size(); ++t) {
    if (pad_mask[t] == 0.0f) continue;
    ++total;
    if (reference[t] == prediction[t]) ++correct;
  }
  if (total == 0) throw InputError("training_accuracy: sequence has no unmasked positions");
  return static_cast<double>(correct) / static_cast<double>(total);
}

int dynamic_sample_count(double accuracy, int t_eff, double beta, Rng& rng) {
  if (beta < 0.0 || beta > 1.0) throw ConfigError("dynamic scheduler: beta must be in [0,1]");
  if (t_eff < 1) throw ContractError("dynamic scheduler: t_eff must be >= 1");
  if (accuracy < 0.0 || accuracy > 1.0)
    throw ContractError("dynamic scheduler: accuracy must be in [0,1]");
  const double u = rng.uniform_double(0.0, accuracy * static_cast<double>(t_eff));
  return static_cast<int>(std::lround(beta * u));
}

std::vector<int> select_positions(const std::vector<int>& eligible, int n, Rng& rng) {
  if (n < 0 || n > static_cast<int>(eligible.size()))
    throw ContractError("select_positions: N exceeds the eligible count");
  std::vector<int> pool = eligible;
  // Partial Fisher-Yates: the first n slots end up a uniform subset.
  for (int i = 0; i < n; ++i) {
    const std::size_t j =
        static_cast<std::size_t>(i) + rng.uniform_int(pool.size() - static_cast<std::size_t>(i));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
  }
  std::vector<int> out(pool.begin(), pool.begin() + n);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::int32_t> mix_sequence(const std::vector<std::int32_t>& target_input,
                                       const std::vector<std::int32_t>& predictions,
                                       const std::vector<int>& positions) {
  if (predictions.size() != target_input.size())
    throw ShapeError("mix_sequence: predictions must align with the decoder input");
  std::vector<std::int32_t> mixed = target_input;
  for (const int pos : positions) {
    if (pos < 1 || pos >= static_cast<int>(target_input.size()))
      throw ContractError("mix_sequence: position out of the eligible range");
    mixed[static_cast<std::size_t>(pos)] = predictions[static_cast<std::size_t>(pos) - 1];
  }
  return mixed;
}

double step_decay_epsilon(const SchedulerConfig& config, std::int64_t step) {
  config.validate();
  if (step < 0) throw ContractError("step_decay_epsilon: step must be >= 0");
  if (config.decay == DecayScheme::kExponential)
    return std::pow(config.decay_k, static_cast<double>(step) / config.decay_unit);
  return std::max(config.eps_min, 1.0 - config.decay_c * static_cast<double>(step));
}

std::vector<std::int32_t> bernoulli_mix(const std::vector<std::int32_t>& target_input,
                                        const std::vector<std::int32_t>& predictions,
                                        double epsilon, int t_eff, Rng& rng) {
  if (epsilon < 0.0 || epsilon > 1.0) throw ConfigError("bernoulli_mix: epsilon must be in [0,1]");
  if (predictions.size() != target_input.size())
    throw ShapeError("bernoulli_mix: predictions must align with the decoder input");
  std::vector<std::int32_t> mixed = target_input;
  for (int pos = 1; pos < t_eff; ++pos) {
    if (!rng.bernoulli(epsilon))
      mixed[static_cast<std::size_t>(pos)] = predictions[static_cast<std::size_t>(pos) - 1];
  }
  return mixed;
}

BatchSchedule schedule_batch(const ParallelBatch& batch,
                             const std::vector<std::int32_t>& predictions,
                             const SchedulerConfig& config, std::int64_t step, Rng& rng) {
  config.validate();
  const int b = batch.batch_size;
  const int t = batch.tgt_len;
  BatchSchedule out;
  out.mixed_input = batch.target_input;
  if (config.kind == SchedulerKind::kTeacherForcing) return out;
  if (static_cast<std::int64_t>(predictions.size()) != static_cast<std::int64_t>(b) * t)
    throw ShapeError("schedule_batch: predictions must cover the whole batch");

  if (config.kind == SchedulerKind::kVanillaSs)
    out.epsilon = step_decay_epsilon(config, step);

  double acc_sum = 0.0, n_sum = 0.0;
  for (int i = 0; i < b; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * t;
    const std::vector<std::int32_t> row_ref(batch.target_output.begin() + base,
                                            batch.target_output.begin() + base + t);
    const std::vector<std::int32_t> row_pred(predictions.begin() + base,
                                             predictions.begin() + base + t);
    const std::vector<float> row_mask(batch.target_mask.begin() + base,
                                      batch.target_mask.begin() + base + t);
    const std::vector<std::int32_t> row_input(batch.target_input.begin() + base,
                                              batch.target_input.begin() + base + t);
    const int t_eff = batch.effective_target_len(i);
    std::vector<std::int32_t> mixed_row;
    if (config.kind == SchedulerKind::kVanillaSs) {
      mixed_row = bernoulli_mix(row_input, row_pred, out.epsilon, t_eff, rng);
      double replaced = 0;
      for (int p = 0; p < t; ++p)
        if (mixed_row[static_cast<std::size_t>(p)] != row_input[static_cast<std::size_t>(p)])
          ++replaced;
      n_sum += replaced;
    } else {
      // Accuracy of each instance drives its own replacement count.
      SchedulerDecision decision;
      decision.accuracy = training_accuracy(row_ref, row_pred, row_mask);
      std::vector<int> eligible;
      for (int p = 1; p < t_eff; ++p) eligible.push_back(p);
      int n = dynamic_sample_count(decision.accuracy, t_eff, config.beta, rng);
      n = std::min(n, static_cast<int>(eligible.size()));
      decision.replaced = n;
      decision.positions = select_positions(eligible, n, rng);
      mixed_row = mix_sequence(row_input, row_pred, decision.positions);
      acc_sum += decision.accuracy;
      n_sum += n;
      out.decisions.push_back(std::move(decision));
    }
    std::copy(mixed_row.begin(), mixed_row.end(), out.mixed_input.begin() + base);
  }
  out.mean_accuracy = config.kind == SchedulerKind::kDynamic && b > 0 ? acc_sum / b : 0.0;
  out.mean_replaced = b > 0 ? n_sum / b : 0.0;
  return out;
}

}  // namespace dysi
