#include "prefopt/kl_analysis.hpp"

#include <algorithm>
#include <limits>

namespace prefopt {

double categorical_kl(std::span<const double> log_p, std::span<const double> log_q) {
  if (log_p.size() != log_q.size()) {
    throw InputError("categorical_kl: size mismatch");
  }
  double kl = 0.0;
  for (std::size_t k = 0; k < log_p.size(); ++k) {
    if (log_p[k] == -std::numeric_limits<double>::infinity()) {
      continue;
    }
    kl += std::exp(log_p[k]) * (log_p[k] - log_q[k]);
  }
  // Rounding can leave a tiny negative residue for near-identical rows.
  return std::max(kl, 0.0);
}

std::vector<double> OneHotPathReference::next_log_probs(std::span<const TokenId> history) const {
  const bool on_path = history.size() >= prompt_.size() &&
                       history.size() - prompt_.size() < path_.size() &&
                       std::equal(prompt_.begin(), prompt_.end(), history.begin()) &&
                       std::equal(history.begin() + static_cast<std::ptrdiff_t>(prompt_.size()),
                                  history.end(), path_.begin());
  if (!on_path) {
    return std::vector<double>(vocab_.size(), -std::log(static_cast<double>(vocab_.size())));
  }
  std::vector<double> out(vocab_.size(), -std::numeric_limits<double>::infinity());
  out[path_[history.size() - prompt_.size()]] = 0.0;
  return out;
}

ad::Var seq_kl_var(PolicyGraph& graph, const ReferenceModel& reference,
                   std::span<const TokenId> prompt, std::span<const TokenId> response) {
  if (response.empty()) {
    throw InputError("seq_kl: empty response");
  }
  const Policy& policy = graph.policy();
  std::vector<ad::Var> terms;
  for (std::size_t t = 0; t < response.size(); ++t) {
    const auto history = history_of(prompt, response, t);
    const auto ref_lp = reference.next_log_probs(history);
    const auto& pol_lp = graph.log_softmax(policy.context_index(history));
    for (std::size_t z = 0; z < ref_lp.size(); ++z) {
      if (ref_lp[z] == -std::numeric_limits<double>::infinity()) {
        continue;
      }
      const double p = std::exp(ref_lp[z]);
      terms.push_back(p * (ref_lp[z] - pol_lp[z]));
    }
  }
  return ad::sum(terms);
}

BatchLoss tdpo_loss(PolicyGraph& graph, std::span<const PreferenceTriple> batch,
                    const ReferenceModel* reference, const LossConfig& cfg) {
  if (reference == nullptr) {
    throw ConfigError("method 'tdpo' requires a reference policy (reference_path)");
  }
  if (batch.empty()) {
    throw InputError("loss over an empty batch");
  }
  const double beta = cfg.beta;
  std::vector<ad::Var> losses(batch.size());
  BatchLoss out;
  out.per_example.resize(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& t = batch[i];
    const ad::Var ratio_w =
        graph.sequence_log_prob(t.prompt, t.chosen) - reference->log_prob(t.prompt, t.chosen);
    const ad::Var ratio_l =
        graph.sequence_log_prob(t.prompt, t.rejected) - reference->log_prob(t.prompt, t.rejected);
    ad::Var delta = beta * (seq_kl_var(graph, *reference, t.prompt, t.rejected) -
                            seq_kl_var(graph, *reference, t.prompt, t.chosen));
    if (!cfg.tdpo_delta_grad) {
      delta = ad::stop_gradient(delta);
    }
    const ad::Var margin = beta * ratio_w - beta * ratio_l;
    const ad::Var logit = margin - delta;
    losses[i] = -ad::log_sigmoid(logit);
    auto& terms = out.per_example[i];
    terms.margin = margin.value();
    terms.normalized_margin = terms.margin;
    terms.logit = logit.value();
    terms.loss = losses[i].value();
  }
  out.value = ad::mean(losses);
  return out;
}

}  // namespace prefopt
