#pragma once

#include <span>
#include <vector>

#include "prefopt/policy.hpp"
#include "prefopt/preference_data.hpp"

namespace prefopt {

struct SftConfig {
  std::size_t vocab_size = 8;
  int order = 2;
  int steps = 300;
  double learning_rate = 1.0;
  int eval_every = 50;
};

// Full-batch gradient descent on the mean negative log-likelihood of the
// chosen responses, starting from the uniform policy. When `nll_trace` is
// given it receives the mean NLL at step 0 and every `eval_every` steps.
Policy fit_reference(std::span<const PreferenceTriple> data, const SftConfig& config,
                     std::vector<double>* nll_trace = nullptr);

double mean_chosen_nll(const Policy& policy, std::span<const PreferenceTriple> data);

}  // namespace prefopt
