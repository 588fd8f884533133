#include "prefopt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "prefopt/errors.hpp"
#include "prefopt/io.hpp"
#include "prefopt/kl_analysis.hpp"

namespace prefopt {

double implicit_reward(Method method, const Policy& policy, const ReferenceModel* reference,
                       std::span<const TokenId> prompt, std::span<const TokenId> response,
                       double beta) {
  const double log_pi = sequence_log_prob(policy, prompt, response);
  const auto len = static_cast<double>(response.size());
  switch (method) {
    case Method::kSimPO:
    case Method::kAlphaDPO:
      return beta / len * log_pi;
    case Method::kCPO:
      return beta * log_pi;
    case Method::kORPO:
      return log_pi / len;
    case Method::kDPO:
    case Method::kIPO:
    case Method::kKTO:
    case Method::kRDPO:
    case Method::kTDPO:
      if (reference == nullptr) {
        throw ConfigError(fmt::format("implicit reward for {} requires a reference",
                                      method_name(method)));
      }
      return beta * (log_pi - reference->log_prob(prompt, response));
  }
  throw StructuralError("implicit_reward: unhandled method");
}

double preference_accuracy(const Policy& policy, const ReferenceModel* reference,
                           const Dataset& heldout, Method method, double beta) {
  if (heldout.empty()) {
    throw InputError("preference_accuracy: empty dataset");
  }
  double score = 0.0;
  for (const auto& t : heldout.triples) {
    const double rw = implicit_reward(method, policy, reference, t.prompt, t.chosen, beta);
    const double rl = implicit_reward(method, policy, reference, t.prompt, t.rejected, beta);
    score += rw > rl ? 1.0 : (rw == rl ? 0.5 : 0.0);
  }
  return score / static_cast<double>(heldout.size());
}

WinRate win_rate(const Policy& policy, const Policy& reference_policy, const LatentReward& oracle,
                 std::span<const Sequence> prompts, int samples_per_prompt, int max_len, Rng& rng) {
  if (prompts.empty()) {
    throw InputError("win_rate: no prompts");
  }
  if (samples_per_prompt < 1) {
    throw ConfigError("win_rate: samples_per_prompt must be positive");
  }
  const std::uint64_t base = rng();
  WinRate out;
  double score = 0.0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                      static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i >> 32)};
    Rng stream(seq);
    Rng policy_rng = stream;
    Rng reference_rng = stream;
    for (int s = 0; s < samples_per_prompt; ++s) {
      const auto mine = sample(policy, prompts[i], max_len, policy_rng);
      const auto theirs = sample(reference_policy, prompts[i], max_len, reference_rng);
      const double a = mine.empty() ? 0.0 : oracle(prompts[i], mine);
      const double b = theirs.empty() ? 0.0 : oracle(prompts[i], theirs);
      ++out.total;
      if (a > b) {
        ++out.wins;
        score += 1.0;
      } else if (a == b) {
        ++out.ties;
        score += 0.5;
      }
    }
  }
  out.fraction = score / static_cast<double>(out.total);
  return out;
}

double Histogram::bin_left(std::size_t i) const {
  return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(counts.size());
}

double Histogram::bin_right(std::size_t i) const {
  return i + 1 == counts.size() ? hi : bin_left(i + 1);
}

std::size_t Histogram::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

Histogram make_histogram(std::string series, std::span<const double> values, std::size_t bins) {
  if (bins < 2) {
    throw ConfigError(fmt::format("bins must be at least 2, got {}", bins));
  }
  Histogram h{std::move(series), 0.0, 0.0, std::vector<std::size_t>(bins, 0)};
  if (values.empty()) {
    h.lo = -0.5;
    h.hi = 0.5;
    return h;
  }
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  h.lo = *mn;
  h.hi = *mx;
  if (!(h.hi > h.lo)) {
    h.lo -= 0.5;
    h.hi += 0.5;
  }
  const double width = h.hi - h.lo;
  for (double v : values) {
    const double pos = (v - h.lo) / width * static_cast<double>(bins);
    const auto idx = std::min(bins - 1, static_cast<std::size_t>(std::max(0.0, std::floor(pos))));
    ++h.counts[idx];
  }
  return h;
}

Distributions compute_distributions(const Policy& policy, const ReferenceModel& reference,
                                    const Dataset& dataset, Method method, double beta,
                                    std::size_t bins) {
  std::vector<double> margins;
  std::vector<double> loglik;
  std::vector<double> ref_ratio;
  for (const auto& t : dataset.triples) {
    margins.push_back(implicit_reward(method, policy, &reference, t.prompt, t.chosen, beta) -
                      implicit_reward(method, policy, &reference, t.prompt, t.rejected, beta));
    loglik.push_back(sequence_log_prob(policy, t.prompt, t.chosen));
    ref_ratio.push_back(reference.log_prob(t.prompt, t.chosen) -
                        reference.log_prob(t.prompt, t.rejected));
  }
  return {make_histogram("reward_margin", margins, bins),
          make_histogram("chosen_loglik", loglik, bins),
          make_histogram("ref_logratio", ref_ratio, bins)};
}

std::string distributions_csv(const Distributions& d) {
  std::string out = "series,bin_left,bin_right,count\n";
  for (const Histogram* h : {&d.reward_margin, &d.chosen_loglik, &d.ref_logratio}) {
    for (std::size_t i = 0; i < h->counts.size(); ++i) {
      out += fmt::format("{},{},{},{}\n", h->series, h->bin_left(i), h->bin_right(i), h->counts[i]);
    }
  }
  return out;
}

void export_distributions(const Policy& policy, const ReferenceModel& reference,
                          const Dataset& dataset, Method method, double beta, std::size_t bins,
                          const std::filesystem::path& path) {
  io::write_file_atomic(
      path, distributions_csv(compute_distributions(policy, reference, dataset, method, beta, bins)));
}

EvalReport evaluate(const Policy& policy, const ReferenceModel& reference, const Dataset& heldout,
                    Method method, const EvalOptions& options, const LatentReward* oracle) {
  EvalReport report;
  report.method = method;
  report.n = heldout.size();
  report.preference_accuracy =
      preference_accuracy(policy, &reference, heldout, method, options.beta);
  for (const auto& t : heldout.triples) {
    report.kl_chosen_mean += seq_kl(t.prompt, t.chosen, reference, policy).exact;
    report.kl_rejected_mean += seq_kl(t.prompt, t.rejected, reference, policy).exact;
  }
  report.kl_chosen_mean /= static_cast<double>(report.n);
  report.kl_rejected_mean /= static_cast<double>(report.n);
  report.distributions =
      compute_distributions(policy, reference, heldout, method, options.beta, options.bins);
  if (oracle != nullptr) {
    std::vector<Sequence> prompts;
    prompts.reserve(heldout.size());
    for (const auto& t : heldout.triples) {
      prompts.push_back(t.prompt);
    }
    const Policy baseline =
        reference.is_uniform() ? Policy(policy.vocab(), policy.order()) : *reference.policy();
    Rng rng(options.seed);
    report.win_rate =
        win_rate(policy, baseline, *oracle, prompts, options.samples_per_prompt, options.max_len, rng);
  }
  return report;
}

std::string to_report(const EvalReport& r) {
  std::string out =
      "# judge: latent reward oracle (stand-in for LLM-judged win rate; raw win rate only)\n";
  out += fmt::format("method={}\n", method_name(r.method));
  out += fmt::format("n={}\n", r.n);
  out += fmt::format("preference_accuracy={}\n", r.preference_accuracy);
  if (r.win_rate) {
    out += fmt::format("win_rate={}\n", r.win_rate->fraction);
    out += fmt::format("win_rate_wins={}\n", r.win_rate->wins);
    out += fmt::format("win_rate_ties={}\n", r.win_rate->ties);
    out += fmt::format("win_rate_total={}\n", r.win_rate->total);
  }
  out += fmt::format("kl_chosen_mean={}\n", r.kl_chosen_mean);
  out += fmt::format("kl_rejected_mean={}\n", r.kl_rejected_mean);
  for (const Histogram* h : {&r.distributions.reward_margin, &r.distributions.chosen_loglik,
                             &r.distributions.ref_logratio}) {
    std::string counts;
    for (std::size_t i = 0; i < h->counts.size(); ++i) {
      counts += fmt::format("{}{}", i == 0 ? "" : " ", h->counts[i]);
    }
    out += fmt::format("{}_range={},{}\n", h->series, h->lo, h->hi);
    out += fmt::format("{}_histogram={}\n", h->series, counts);
  }
  return out;
}

}  // namespace prefopt
