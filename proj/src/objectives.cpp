#include "prefopt/objectives.hpp"

#include <cmath>

#include <fmt/format.h>

#include "prefopt/errors.hpp"
#include "prefopt/kl_analysis.hpp"

namespace prefopt {

namespace {

struct MethodEntry {
  Method method;
  std::string_view name;
  bool needs_reference;
};

constexpr MethodEntry kMethodTable[] = {
    {Method::kDPO, "dpo", true},         {Method::kSimPO, "simpo", false},
    {Method::kAlphaDPO, "alpha_dpo", true}, {Method::kIPO, "ipo", true},
    {Method::kCPO, "cpo", false},        {Method::kKTO, "kto", true},
    {Method::kORPO, "orpo", false},      {Method::kRDPO, "rdpo", true},
    {Method::kTDPO, "tdpo", true},
};

const MethodEntry& entry(Method m) {
  for (const auto& e : kMethodTable) {
    if (e.method == m) {
      return e;
    }
  }
  throw ConfigError("unknown method enumerator");
}

}  // namespace

std::string_view method_name(Method m) { return entry(m).name; }

Method parse_method(std::string_view name) {
  for (const auto& e : kMethodTable) {
    if (e.name == name) {
      return e.method;
    }
  }
  throw ConfigError(fmt::format("unknown loss.method '{}'", name));
}

bool requires_reference(Method m) { return entry(m).needs_reference; }

void LossConfig::validate() const {
  if (!(beta > 0.0)) {
    throw ConfigError(fmt::format("loss.beta must be positive, got {}", beta));
  }
  if (!(zscore_eps > 0.0)) {
    throw ConfigError(fmt::format("loss.zscore_eps must be positive, got {}", zscore_eps));
  }
  if (gamma < 0.0) {
    throw ConfigError(fmt::format("loss.gamma must be non-negative, got {}", gamma));
  }
  if (alpha < 0.0) {
    throw ConfigError(fmt::format("loss.alpha must be non-negative, got {}", alpha));
  }
  if (!(tau > 0.0)) {
    throw ConfigError(fmt::format("loss.tau must be positive, got {}", tau));
  }
}

double ReferenceModel::log_prob(std::span<const TokenId> prompt,
                                std::span<const TokenId> response) const {
  if (policy_ != nullptr) {
    return sequence_log_prob(*policy_, prompt, response);
  }
  if (response.empty()) {
    throw InputError("reference log_prob: empty response");
  }
  return -static_cast<double>(response.size()) * std::log(static_cast<double>(vocab_.size()));
}

std::vector<double> ReferenceModel::next_log_probs(std::span<const TokenId> history) const {
  if (policy_ != nullptr) {
    return policy_->next_log_probs(history);
  }
  return std::vector<double>(vocab_.size(), -std::log(static_cast<double>(vocab_.size())));
}

double margin_m(const Policy& policy, const ReferenceModel& reference,
                const PreferenceTriple& t, double beta) {
  const double chosen =
      sequence_log_prob(policy, t.prompt, t.chosen) - reference.log_prob(t.prompt, t.chosen);
  const double rejected =
      sequence_log_prob(policy, t.prompt, t.rejected) - reference.log_prob(t.prompt, t.rejected);
  return beta * (chosen - rejected);
}

ad::Var margin_m(PolicyGraph& graph, const ReferenceModel& reference, const PreferenceTriple& t,
                 double beta) {
  const ad::Var chosen =
      graph.sequence_log_prob(t.prompt, t.chosen) - reference.log_prob(t.prompt, t.chosen);
  const ad::Var rejected =
      graph.sequence_log_prob(t.prompt, t.rejected) - reference.log_prob(t.prompt, t.rejected);
  return beta * (chosen - rejected);
}

MarginStats margin_statistics(std::span<const double> values) {
  MarginStats stats;
  if (values.empty()) {
    return stats;
  }
  const double n = static_cast<double>(values.size());
  for (double v : values) {
    stats.mean += v;
  }
  stats.mean /= n;
  double var = 0.0;
  for (double v : values) {
    var += (v - stats.mean) * (v - stats.mean);
  }
  stats.stddev = std::sqrt(var / n);
  return stats;
}

std::vector<double> zscore_normalize(std::span<const double> values, double eps) {
  if (values.empty()) {
    throw InputError("zscore_normalize: empty input");
  }
  const MarginStats stats = margin_statistics(values);
  std::vector<double> out(values.size(), 0.0);
  if (stats.stddev < eps) {
    return out;
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = (values[i] - stats.mean) / stats.stddev;
  }
  return out;
}

ad::Var pairwise_reward_diff(PolicyGraph& graph, const PreferenceTriple& t, double beta,
                             bool length_normalized) {
  const ad::Var chosen = graph.sequence_log_prob(t.prompt, t.chosen);
  const ad::Var rejected = graph.sequence_log_prob(t.prompt, t.rejected);
  if (!length_normalized) {
    return beta * chosen - beta * rejected;
  }
  return (beta / static_cast<double>(t.chosen.size())) * chosen -
         (beta / static_cast<double>(t.rejected.size())) * rejected;
}

namespace {

BatchLoss finish(std::vector<ad::Var>& losses, std::vector<ExampleTerms>& terms) {
  for (std::size_t i = 0; i < losses.size(); ++i) {
    terms[i].loss = losses[i].value();
  }
  return BatchLoss{ad::mean(losses), std::move(terms)};
}

void require_batch(std::span<const PreferenceTriple> batch) {
  if (batch.empty()) {
    throw InputError("loss over an empty batch");
  }
}

const ReferenceModel& require_reference(const ReferenceModel* reference, Method method) {
  if (reference == nullptr) {
    throw ConfigError(
        fmt::format("method '{}' requires a reference policy (reference_path)", method_name(method)));
  }
  return *reference;
}

// log pi(y|x) - log ref(y|x) for both responses.
struct LogRatios {
  ad::Var chosen;
  ad::Var rejected;
};

LogRatios log_ratios(PolicyGraph& graph, const ReferenceModel& reference,
                     const PreferenceTriple& t) {
  return {graph.sequence_log_prob(t.prompt, t.chosen) - reference.log_prob(t.prompt, t.chosen),
          graph.sequence_log_prob(t.prompt, t.rejected) -
              reference.log_prob(t.prompt, t.rejected)};
}

// Exact KL(policy || reference) summed over the positions of a response.
double forward_kl_along(const Policy& policy, const ReferenceModel& reference,
                        std::span<const TokenId> prompt, std::span<const TokenId> response) {
  double total = 0.0;
  for (std::size_t t = 0; t < response.size(); ++t) {
    const auto history = history_of(prompt, response, t);
    total += categorical_kl(policy.next_log_probs(history), reference.next_log_probs(history));
  }
  return total;
}

}  // namespace

BatchLoss alpha_dpo_loss(PolicyGraph& graph, std::span<const PreferenceTriple> batch,
                         const ReferenceModel& reference, const LossConfig& cfg,
                         const MarginStats* dataset_stats) {
  require_batch(batch);
  const std::size_t n = batch.size();
  std::vector<ad::Var> u(n);
  std::vector<ad::Var> margins(n);
  for (std::size_t i = 0; i < n; ++i) {
    u[i] = pairwise_reward_diff(graph, batch[i], cfg.beta, cfg.length_normalized);
    margins[i] = margin_m(graph, reference, batch[i], cfg.beta);
  }

  ad::Tape& tape = graph.tape();
  std::vector<ad::Var> normalized(n);
  if (cfg.zscore_scope == ZScoreScope::kDataset) {
    if (dataset_stats == nullptr) {
      throw ConfigError("loss.zscore_scope=dataset needs dataset margin statistics");
    }
    for (std::size_t i = 0; i < n; ++i) {
      normalized[i] = dataset_stats->stddev < cfg.zscore_eps
                          ? tape.constant(0.0)
                          : (margins[i] - dataset_stats->mean) / dataset_stats->stddev;
    }
  } else {
    const ad::Var mu = ad::mean(margins);
    std::vector<ad::Var> sq(n);
    for (std::size_t i = 0; i < n; ++i) {
      sq[i] = ad::square(margins[i] - mu);
    }
    const ad::Var variance = ad::mean(sq);
    if (std::sqrt(variance.value()) < cfg.zscore_eps) {
      for (auto& v : normalized) {
        v = tape.constant(0.0);
      }
    } else {
      const ad::Var sigma = ad::sqrt(variance);
      for (std::size_t i = 0; i < n; ++i) {
        normalized[i] = (margins[i] - mu) / sigma;
      }
    }
  }

  std::vector<ad::Var> losses(n);
  std::vector<ExampleTerms> terms(n);
  for (std::size_t i = 0; i < n; ++i) {
    ad::Var bracket = cfg.gamma + cfg.alpha * normalized[i];
    if (cfg.stop_gradient) {
      bracket = ad::stop_gradient(bracket);
    }
    const ad::Var logit = u[i] - bracket;
    losses[i] = -ad::log_sigmoid(logit);
    terms[i].margin = margins[i].value();
    terms[i].normalized_margin = normalized[i].value();
    terms[i].logit = logit.value();
  }
  return finish(losses, terms);
}

BatchLoss dpo_loss_with_reference(PolicyGraph& graph, std::span<const PreferenceTriple> batch,
                                  const ReferenceModel& reference, double beta) {
  require_batch(batch);
  std::vector<ad::Var> losses(batch.size());
  std::vector<ExampleTerms> terms(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto r = log_ratios(graph, reference, batch[i]);
    const ad::Var logit = beta * r.chosen - beta * r.rejected;
    losses[i] = -ad::log_sigmoid(logit);
    terms[i].margin = logit.value();
    terms[i].normalized_margin = terms[i].margin;
    terms[i].logit = logit.value();
  }
  return finish(losses, terms);
}

BatchLoss baseline_loss(Method method, PolicyGraph& graph, std::span<const PreferenceTriple> batch,
                        const ReferenceModel* reference, const LossConfig& cfg) {
  require_batch(batch);
  const double beta = cfg.beta;
  const std::size_t n = batch.size();
  std::vector<ad::Var> losses(n);
  std::vector<ExampleTerms> terms(n);

  auto record_margin = [&](std::size_t i) {
    if (reference != nullptr) {
      terms[i].margin = margin_m(graph.policy(), *reference, batch[i], beta);
      terms[i].normalized_margin = terms[i].margin;
    }
  };

  switch (method) {
    case Method::kDPO:
      return dpo_loss_with_reference(graph, batch, require_reference(reference, method), beta);

    case Method::kSimPO:
      for (std::size_t i = 0; i < n; ++i) {
        const ad::Var logit =
            pairwise_reward_diff(graph, batch[i], beta, cfg.length_normalized) - cfg.gamma;
        losses[i] = -ad::log_sigmoid(logit);
        terms[i].logit = logit.value();
        record_margin(i);
      }
      break;

    case Method::kIPO: {
      const auto& ref = require_reference(reference, method);
      const double target = 1.0 / (2.0 * cfg.tau);
      for (std::size_t i = 0; i < n; ++i) {
        const auto r = log_ratios(graph, ref, batch[i]);
        const ad::Var h = r.chosen - r.rejected;
        losses[i] = ad::square(h - target);
        terms[i].logit = h.value();
        record_margin(i);
      }
      break;
    }

    case Method::kCPO:
      for (std::size_t i = 0; i < n; ++i) {
        const auto& t = batch[i];
        const ad::Var chosen = graph.sequence_log_prob(t.prompt, t.chosen);
        const ad::Var rejected = graph.sequence_log_prob(t.prompt, t.rejected);
        const ad::Var logit = beta * chosen - beta * rejected;
        losses[i] = -ad::log_sigmoid(logit) - cfg.lambda * chosen;
        terms[i].logit = logit.value();
        record_margin(i);
      }
      break;

    case Method::kKTO: {
      const auto& ref = require_reference(reference, method);
      // Batch estimate of beta * KL(policy || ref), detached from the graph.
      double kl = 0.0;
      for (const auto& t : batch) {
        kl += 0.5 * (forward_kl_along(graph.policy(), ref, t.prompt, t.chosen) +
                     forward_kl_along(graph.policy(), ref, t.prompt, t.rejected));
      }
      const ad::Var z_ref = ad::stop_gradient(
          graph.tape().constant(std::max(0.0, beta * kl / static_cast<double>(n))));
      for (std::size_t i = 0; i < n; ++i) {
        const auto r = log_ratios(graph, ref, batch[i]);
        const ad::Var desirable = ad::sigmoid(beta * r.chosen - z_ref);
        const ad::Var undesirable = ad::sigmoid(z_ref - beta * r.rejected);
        losses[i] = cfg.lambda_w * (1.0 - desirable) + cfg.lambda_l * (1.0 - undesirable);
        terms[i].logit = beta * (r.chosen.value() - r.rejected.value());
        record_margin(i);
      }
      break;
    }

    case Method::kORPO:
      for (std::size_t i = 0; i < n; ++i) {
        const auto& t = batch[i];
        const ad::Var lp_w =
            graph.sequence_log_prob(t.prompt, t.chosen) / static_cast<double>(t.chosen.size());
        const ad::Var lp_l = graph.sequence_log_prob(t.prompt, t.rejected) /
                             static_cast<double>(t.rejected.size());
        // log odds p/(1-p) with log p = lp.
        const ad::Var odds_w = lp_w - ad::log1m_exp(lp_w);
        const ad::Var odds_l = lp_l - ad::log1m_exp(lp_l);
        const ad::Var logit = odds_w - odds_l;
        losses[i] = -lp_w - cfg.lambda * ad::log_sigmoid(logit);
        terms[i].logit = logit.value();
        record_margin(i);
      }
      break;

    case Method::kRDPO: {
      const auto& ref = require_reference(reference, method);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& t = batch[i];
        const auto r = log_ratios(graph, ref, t);
        const double length_penalty = cfg.alpha_len * static_cast<double>(t.chosen.size()) -
                                      cfg.alpha_len * static_cast<double>(t.rejected.size());
        const ad::Var logit = beta * r.chosen - beta * r.rejected - length_penalty;
        losses[i] = -ad::log_sigmoid(logit);
        terms[i].logit = logit.value();
        record_margin(i);
      }
      break;
    }

    case Method::kAlphaDPO:
    case Method::kTDPO:
      throw ConfigError(fmt::format("baseline_loss does not handle '{}'", method_name(method)));
  }
  return finish(losses, terms);
}

BatchLoss batch_loss(PolicyGraph& graph, std::span<const PreferenceTriple> batch,
                     const ReferenceModel* reference, const LossConfig& cfg,
                     const MarginStats* dataset_stats) {
  switch (cfg.method) {
    case Method::kAlphaDPO:
      return alpha_dpo_loss(graph, batch, require_reference(reference, cfg.method), cfg,
                            dataset_stats);
    case Method::kTDPO:
      return tdpo_loss(graph, batch, reference, cfg);
    default:
      return baseline_loss(cfg.method, graph, batch, reference, cfg);
  }
}

}  // namespace prefopt
