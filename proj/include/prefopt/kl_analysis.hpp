#pragma once

// Sequential KL divergence along a response, its sequence-level
// approximation, and the token-level DPO (TDPO) margin and loss.

#include <cmath>
#include <concepts>
#include <span>
#include <vector>

#include <fmt/format.h>

#include "prefopt/errors.hpp"
#include "prefopt/objectives.hpp"
#include "prefopt/policy.hpp"
#include "prefopt/preference_data.hpp"

namespace prefopt {

// Anything that yields next-token log-probabilities for a history
// (prompt followed by a response prefix). Entries may be -inf.
template <class M>
concept NextTokenModel = requires(const M& m, std::span<const TokenId> history) {
  { m.next_log_probs(history) } -> std::convertible_to<std::vector<double>>;
};

template <NextTokenModel M>
double log_prob_along(const M& model, std::span<const TokenId> prompt,
                      std::span<const TokenId> response) {
  double total = 0.0;
  for (std::size_t t = 0; t < response.size(); ++t) {
    total += model.next_log_probs(history_of(prompt, response, t))[response[t]];
  }
  return total;
}

// KL(p || q) for categorical log-probability vectors; 0 * log 0 = 0.
double categorical_kl(std::span<const double> log_p, std::span<const double> log_q);

struct SeqKLReport {
  double exact = 0.0;   // sum of per-position KL(ref || policy)
  double approx = 0.0;  // log ref(y|x) - log policy(y|x)
  std::vector<double> per_token;
};

template <NextTokenModel Ref, NextTokenModel Pol>
SeqKLReport seq_kl(std::span<const TokenId> prompt, std::span<const TokenId> response,
                   const Ref& reference, const Pol& policy) {
  if (response.empty()) {
    throw InputError("seq_kl: empty response");
  }
  SeqKLReport report;
  report.per_token.reserve(response.size());
  for (std::size_t t = 0; t < response.size(); ++t) {
    const auto history = history_of(prompt, response, t);
    const auto ref_lp = reference.next_log_probs(history);
    const auto pol_lp = policy.next_log_probs(history);
    const double kl = categorical_kl(ref_lp, pol_lp);
    report.per_token.push_back(kl);
    report.exact += kl;
    report.approx += ref_lp[response[t]] - pol_lp[response[t]];
  }
  return report;
}

// Reference concentrated on one response: one-hot on path[t] while the
// history follows prompt + path, uniform elsewhere.
class OneHotPathReference {
 public:
  OneHotPathReference(Vocabulary vocab, Sequence prompt, Sequence path)
      : vocab_(vocab), prompt_(std::move(prompt)), path_(std::move(path)) {}

  std::vector<double> next_log_probs(std::span<const TokenId> history) const;

 private:
  Vocabulary vocab_;
  Sequence prompt_;
  Sequence path_;
};

// M computed against arbitrary next-token models, one reference per response.
template <NextTokenModel RefW, NextTokenModel RefL, NextTokenModel Pol>
double margin_m_split(const PreferenceTriple& t, const RefW& ref_chosen, const RefL& ref_rejected,
                      const Pol& policy, double beta) {
  const double chosen = log_prob_along(policy, t.prompt, t.chosen) -
                        log_prob_along(ref_chosen, t.prompt, t.chosen);
  const double rejected = log_prob_along(policy, t.prompt, t.rejected) -
                          log_prob_along(ref_rejected, t.prompt, t.rejected);
  return beta * (chosen - rejected);
}

// delta = beta * (SeqKL(y_l) - SeqKL(y_w)).
template <NextTokenModel RefW, NextTokenModel RefL, NextTokenModel Pol>
double tdpo_delta_split(const PreferenceTriple& t, const RefW& ref_chosen,
                        const RefL& ref_rejected, const Pol& policy, double beta) {
  return beta * (seq_kl(t.prompt, t.rejected, ref_rejected, policy).exact -
                 seq_kl(t.prompt, t.chosen, ref_chosen, policy).exact);
}

template <NextTokenModel Ref, NextTokenModel Pol>
double tdpo_delta(const PreferenceTriple& t, const Ref& reference, const Pol& policy, double beta) {
  return tdpo_delta_split(t, reference, reference, policy, beta);
}

// delta - M; zero when each response's reference is one-hot along it.
template <NextTokenModel RefW, NextTokenModel RefL, NextTokenModel Pol>
double margin_equivalence_gap_split(const PreferenceTriple& t, const RefW& ref_chosen,
                                    const RefL& ref_rejected, const Pol& policy, double beta) {
  return tdpo_delta_split(t, ref_chosen, ref_rejected, policy, beta) -
         margin_m_split(t, ref_chosen, ref_rejected, policy, beta);
}

template <NextTokenModel Ref, NextTokenModel Pol>
double margin_equivalence_gap(const PreferenceTriple& t, const Ref& reference, const Pol& policy,
                              double beta) {
  return margin_equivalence_gap_split(t, reference, reference, policy, beta);
}

// Exact SeqKL(ref || policy) as a differentiable function of the policy logits.
ad::Var seq_kl_var(PolicyGraph& graph, const ReferenceModel& reference,
                   std::span<const TokenId> prompt, std::span<const TokenId> response);

// -log sigma(beta [ratio(y_w) - ratio(y_l)] - delta), delta frozen unless
// cfg.tdpo_delta_grad. Throws ConfigError without a reference.
BatchLoss tdpo_loss(PolicyGraph& graph, std::span<const PreferenceTriple> batch,
                    const ReferenceModel* reference, const LossConfig& cfg);

}  // namespace prefopt
