#include "prefopt/sft.hpp"

#include <fmt/format.h>

#include "prefopt/errors.hpp"

namespace prefopt {

double mean_chosen_nll(const Policy& policy, std::span<const PreferenceTriple> data) {
  double total = 0.0;
  for (const auto& t : data) {
    total -= sequence_log_prob(policy, t.prompt, t.chosen);
  }
  return total / static_cast<double>(data.size());
}

Policy fit_reference(std::span<const PreferenceTriple> data, const SftConfig& config,
                     std::vector<double>* nll_trace) {
  if (data.empty()) {
    throw InputError("fit_reference: empty dataset");
  }
  Policy policy(Vocabulary(config.vocab_size), config.order);
  const auto record = [&](int step) {
    if (nll_trace != nullptr && config.eval_every > 0 && step % config.eval_every == 0) {
      nll_trace->push_back(mean_chosen_nll(policy, data));
    }
  };
  record(0);
  const double inv_n = 1.0 / static_cast<double>(data.size());
  for (int step = 1; step <= config.steps; ++step) {
    ad::Tape tape;
    PolicyGraph graph(tape, policy);
    std::vector<ad::Var> terms;
    terms.reserve(data.size());
    for (const auto& t : data) {
      terms.push_back(graph.sequence_log_prob(t.prompt, t.chosen));
    }
    const ad::Var nll = -(ad::sum(terms) * inv_n);
    const auto grads = tape.backward(nll);
    auto logits = policy.logits();
    for (const auto& [id, g] : grads) {
      logits[id] -= config.learning_rate * g;
    }
    record(step);
  }
  return policy;
}

}  // namespace prefopt
