#include "prefopt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <fmt/format.h>

#include "prefopt/errors.hpp"
#include "prefopt/evaluation.hpp"
#include "prefopt/io.hpp"
#include "prefopt/kl_analysis.hpp"

namespace prefopt {

double lr_at(long step, long total_steps, double base_lr, double warmup_fraction) {
  if (total_steps < 1 || step < 0 || step > total_steps) {
    throw InputError(fmt::format("lr_at: step {} outside [0, {}]", step, total_steps));
  }
  const auto warmup =
      static_cast<long>(std::ceil(warmup_fraction * static_cast<double>(total_steps) - 1e-9));
  if (step < warmup) {
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  if (total_steps == warmup) {
    return base_lr;
  }
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamHyper& hyper, double lr) {
  if (params.size() != grads.size()) {
    throw InputError("adam_step: parameter/gradient size mismatch");
  }
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericError(fmt::format("non-finite gradient for parameter {} at step {}", i,
                                     state.step + 1));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * grads[i];
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
  }
}

void TrainConfig::validate(std::size_t dataset_size) const {
  loss.validate();
  if (!(learning_rate > 0.0)) {
    throw ConfigError(fmt::format("learning_rate must be positive, got {}", learning_rate));
  }
  if (batch_size == 0) {
    throw ConfigError("batch_size must be positive");
  }
  if (dataset_size > 0 && batch_size > dataset_size) {
    throw ConfigError(fmt::format("batch_size {} exceeds dataset size {}", batch_size, dataset_size));
  }
  if (epochs < 0) {
    throw ConfigError(fmt::format("epochs must be non-negative, got {}", epochs));
  }
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    throw ConfigError(fmt::format("warmup_fraction must lie in [0, 1), got {}", warmup_fraction));
  }
  if (grad_clip < 0.0) {
    throw ConfigError("grad_clip must be non-negative");
  }
}

std::string MetricsLog::to_csv() const {
  std::string out = kHeader;
  out += '\n';
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{},{},{},{}\n", r.step, r.lr, r.loss, r.kl_chosen,
                       r.kl_rejected, r.margin_mean, r.margin_std, r.ref_logratio_mean,
                       r.train_acc);
  }
  return out;
}

namespace {

MetricsRow batch_metrics(const Policy& policy, const ReferenceModel& reference,
                         std::span<const PreferenceTriple> batch, const LossConfig& cfg) {
  MetricsRow row;
  std::vector<double> margins;
  margins.reserve(batch.size());
  double wins = 0.0;
  for (const auto& t : batch) {
    row.kl_chosen += seq_kl(t.prompt, t.chosen, reference, policy).exact;
    row.kl_rejected += seq_kl(t.prompt, t.rejected, reference, policy).exact;
    row.ref_logratio_mean +=
        reference.log_prob(t.prompt, t.chosen) - reference.log_prob(t.prompt, t.rejected);
    const double margin =
        implicit_reward(cfg.method, policy, &reference, t.prompt, t.chosen, cfg.beta) -
        implicit_reward(cfg.method, policy, &reference, t.prompt, t.rejected, cfg.beta);
    margins.push_back(margin);
    wins += margin > 0.0 ? 1.0 : (margin == 0.0 ? 0.5 : 0.0);
  }
  const double n = static_cast<double>(batch.size());
  row.kl_chosen /= n;
  row.kl_rejected /= n;
  row.ref_logratio_mean /= n;
  const auto stats = margin_statistics(margins);
  row.margin_mean = stats.mean;
  row.margin_std = stats.stddev;
  row.train_acc = wins / n;
  return row;
}

MarginStats dataset_margin_stats(const Policy& policy, const ReferenceModel& reference,
                                 std::span<const PreferenceTriple> data, double beta) {
  std::vector<double> margins;
  margins.reserve(data.size());
  for (const auto& t : data) {
    margins.push_back(margin_m(policy, reference, t, beta));
  }
  return margin_statistics(margins);
}

}  // namespace

TrainResult train(const TrainConfig& config, const Dataset& dataset,
                  const ReferenceModel* reference) {
  config.validate(dataset.size());
  TrainResult result{Policy(Vocabulary(config.vocab_size), config.order), {}};
  if (config.epochs == 0) {
    return result;
  }
  if (dataset.empty()) {
    throw InputError("train: empty dataset");
  }
  if (requires_reference(config.loss.method) && reference == nullptr) {
    throw ConfigError(fmt::format("loss.method={} requires reference_path",
                                  method_name(config.loss.method)));
  }
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    validate_triple(dataset.triples[i], result.policy.vocab(), i);
  }
  const auto uniform = ReferenceModel::uniform(result.policy.vocab());
  const ReferenceModel& metric_reference = reference != nullptr ? *reference : uniform;

  Policy& policy = result.policy;
  const std::size_t n = dataset.size();
  const long steps_per_epoch = static_cast<long>((n + config.batch_size - 1) / config.batch_size);
  const long total_steps = steps_per_epoch * config.epochs;
  Rng rng(config.seed);
  AdamState adam;
  std::vector<std::size_t> order(n);
  std::vector<PreferenceTriple> batch;
  long step = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    MarginStats stats;
    if (config.loss.method == Method::kAlphaDPO && config.loss.zscore_scope == ZScoreScope::kDataset) {
      stats = dataset_margin_stats(policy, *reference, dataset.triples, config.loss.beta);
    }
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      ++step;
      batch.clear();
      for (std::size_t i = start; i < std::min(n, start + config.batch_size); ++i) {
        batch.push_back(dataset.triples[order[i]]);
      }

      ad::Tape tape;
      PolicyGraph graph(tape, policy);
      const BatchLoss loss = batch_loss(graph, batch, reference, config.loss, &stats);
      if (!std::isfinite(loss.value.value())) {
        throw NumericError(fmt::format("non-finite loss at step {}", step));
      }
      auto grads = tape.backward(loss.value).to_dense(policy.parameter_count());
      if (config.grad_clip > 0.0) {
        double norm = 0.0;
        for (double g : grads) {
          norm += g * g;
        }
        norm = std::sqrt(norm);
        if (norm > config.grad_clip) {
          for (double& g : grads) {
            g *= config.grad_clip / norm;
          }
        }
      }

      MetricsRow row = batch_metrics(policy, metric_reference, batch, config.loss);
      row.step = step;
      row.lr = lr_at(step, total_steps, config.learning_rate, config.warmup_fraction);
      row.loss = loss.value.value();
      result.metrics.rows.push_back(row);

      try {
        adam_step(policy.logits(), grads, adam, config.adam, row.lr);
      } catch (const NumericError&) {
        throw NumericError(fmt::format("non-finite gradient at training step {}", step));
      }

      if (config.checkpoint_every > 0 && !config.checkpoint_path.empty() &&
          step % config.checkpoint_every == 0) {
        save_checkpoint(policy, fmt::format("{}.step{}", config.checkpoint_path, step));
      }
    }
  }
  if (!config.metrics_path.empty()) {
    io::write_file_atomic(config.metrics_path, result.metrics.to_csv());
  }
  return result;
}

}  // namespace prefopt
