#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prefopt/objectives.hpp"
#include "prefopt/policy.hpp"
#include "prefopt/preference_data.hpp"

namespace prefopt {

// Reward implied by each objective, up to a per-prompt constant:
//   DPO, IPO, KTO, R-DPO, TDPO   beta * (log pi(y) - log ref(y))
//   SimPO, alpha-DPO             beta / |y| * log pi(y)
//   CPO                          beta * log pi(y)
//   ORPO                         log pi(y) / |y|
// Throws ConfigError when `reference` is null for the first group.
double implicit_reward(Method method, const Policy& policy, const ReferenceModel* reference,
                       std::span<const TokenId> prompt, std::span<const TokenId> response,
                       double beta);

// Fraction of triples whose chosen response gets the higher implicit reward;
// ties count 0.5.
double preference_accuracy(const Policy& policy, const ReferenceModel* reference,
                           const Dataset& heldout, Method method, double beta);

struct WinRate {
  double fraction = 0.0;
  std::size_t wins = 0;
  std::size_t ties = 0;
  std::size_t total = 0;
};

// Each prompt gets its own stream derived from one draw of `rng`; both
// policies sample from identical copies of that stream.
WinRate win_rate(const Policy& policy, const Policy& reference_policy, const LatentReward& oracle,
                 std::span<const Sequence> prompts, int samples_per_prompt, int max_len, Rng& rng);

struct Histogram {
  std::string series;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;

  double bin_left(std::size_t i) const;
  double bin_right(std::size_t i) const;
  std::size_t total() const;
};

// Equal-width bins over [min, max]; a degenerate range widens by 0.5 each side.
Histogram make_histogram(std::string series, std::span<const double> values, std::size_t bins);

struct Distributions {
  Histogram reward_margin;
  Histogram chosen_loglik;
  Histogram ref_logratio;
};

Distributions compute_distributions(const Policy& policy, const ReferenceModel& reference,
                                    const Dataset& dataset, Method method, double beta,
                                    std::size_t bins);

// CSV "series,bin_left,bin_right,count".
std::string distributions_csv(const Distributions& d);
void export_distributions(const Policy& policy, const ReferenceModel& reference,
                          const Dataset& dataset, Method method, double beta, std::size_t bins,
                          const std::filesystem::path& path);

struct EvalReport {
  Method method = Method::kAlphaDPO;
  std::size_t n = 0;
  double preference_accuracy = 0.0;
  std::optional<WinRate> win_rate;
  double kl_chosen_mean = 0.0;
  double kl_rejected_mean = 0.0;
  Distributions distributions;
};

struct EvalOptions {
  double beta = 10.0;
  std::size_t bins = 20;
  int samples_per_prompt = 1;
  int max_len = 4;
  std::uint64_t seed = 0;
};

// Win rate is filled only when an oracle is supplied; it is measured against
// the reference policy, or the uniform policy when the reference is uniform.
EvalReport evaluate(const Policy& policy, const ReferenceModel& reference, const Dataset& heldout,
                    Method method, const EvalOptions& options, const LatentReward* oracle);

std::string to_report(const EvalReport& report);

}  // namespace prefopt
