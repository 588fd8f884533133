#pragma once

#include <span>
#include <string>
#include <vector>

#include "prefopt/objectives.hpp"
#include "prefopt/policy.hpp"
#include "prefopt/preference_data.hpp"

namespace prefopt {

// Linear warmup over ceil(warmup_fraction * total) steps, then cosine decay
// to zero at total_steps.
double lr_at(long step, long total_steps, double base_lr, double warmup_fraction);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

// Bias-corrected Adam. Throws NumericError naming the step on a non-finite gradient.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamHyper& hyper, double lr);

struct TrainConfig {
  LossConfig loss;
  double learning_rate = 5e-3;
  std::size_t batch_size = 64;
  int epochs = 3;
  double warmup_fraction = 0.1;
  std::uint64_t seed = 0;
  AdamHyper adam;
  int checkpoint_every = 0;
  std::string checkpoint_path;
  std::string metrics_path;
  std::string reference_path;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  std::size_t vocab_size = 8;
  int order = 2;

  void validate(std::size_t dataset_size) const;
};

struct MetricsRow {
  long step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double kl_chosen = 0.0;
  double kl_rejected = 0.0;
  double margin_mean = 0.0;
  double margin_std = 0.0;
  double ref_logratio_mean = 0.0;
  double train_acc = 0.0;
};

struct MetricsLog {
  std::vector<MetricsRow> rows;

  static constexpr const char* kHeader =
      "step,lr,loss,kl_chosen,kl_rejected,margin_mean,margin_std,ref_logratio_mean,train_acc";
  std::string to_csv() const;
};

struct TrainResult {
  Policy policy;
  MetricsLog metrics;
};

// Mini-batch training from the uniform policy. `reference` may be null for
// methods that do not need one; KL metrics then use the uniform distribution.
TrainResult train(const TrainConfig& config, const Dataset& dataset,
                  const ReferenceModel* reference);

}  // namespace prefopt
