#include "prefopt/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "prefopt/errors.hpp"
#include "prefopt/kl_analysis.hpp"

namespace prefopt {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

EnumeratedSpace enumerate_space(Vocabulary vocab, int max_len) {
  if (max_len < 1) {
    throw ConfigError(fmt::format("enumeration needs max_len >= 1, got {}", max_len));
  }
  std::size_t total = 0;
  std::size_t layer = 1;
  for (int k = 1; k <= max_len; ++k) {
    layer *= vocab.size();
    total += layer;
    if (total > kMaxEnumeratedSequences) {
      throw ConfigError(fmt::format("space |V|={} L={} exceeds the enumeration bound of {} sequences",
                                    vocab.size(), max_len, kMaxEnumeratedSequences));
    }
  }
  EnumeratedSpace space{vocab, max_len, {}, {}};
  space.sequences.reserve(total);
  for (int k = 1; k <= max_len; ++k) {
    Sequence s(static_cast<std::size_t>(k), 0);
    while (true) {
      bool supported = true;
      for (int i = 0; i + 1 < k; ++i) {
        supported = supported && s[static_cast<std::size_t>(i)] != vocab.eos();
      }
      supported = supported && (k == max_len || s.back() == vocab.eos());
      space.sequences.push_back(s);
      space.in_support.push_back(supported);
      // Odometer increment, last position fastest.
      int pos = k - 1;
      while (pos >= 0 && ++s[static_cast<std::size_t>(pos)] == vocab.size()) {
        s[static_cast<std::size_t>(pos)] = 0;
        --pos;
      }
      if (pos < 0) {
        break;
      }
    }
  }
  return space;
}

std::vector<double> sequence_log_probs(const EnumeratedSpace& space, const Policy& policy,
                                       std::span<const TokenId> prompt) {
  std::vector<double> out(space.size(), kNegInf);
  for (std::size_t i = 0; i < space.size(); ++i) {
    if (space.in_support[i]) {
      out[i] = sequence_log_prob(policy, prompt, space.sequences[i]);
    }
  }
  return out;
}

std::vector<double> tilted_old_policy(const EnumeratedSpace& space, const Policy& policy,
                                      const Policy& reference, std::span<const TokenId> prompt,
                                      double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw InputError(fmt::format("tilted_old_policy: alpha must lie in [0, 1], got {}", alpha));
  }
  const auto lp = sequence_log_probs(space, policy, prompt);
  const auto lr = sequence_log_probs(space, reference, prompt);
  std::vector<double> out(space.size(), kNegInf);
  std::vector<double> supported;
  for (std::size_t i = 0; i < space.size(); ++i) {
    if (space.in_support[i]) {
      out[i] = (1.0 - alpha) * lr[i] + alpha * lp[i];
      supported.push_back(out[i]);
    }
  }
  // The per-prompt normalizer C(x).
  const double log_norm = ad::log_sum_exp(supported);
  for (std::size_t i = 0; i < space.size(); ++i) {
    if (space.in_support[i]) {
      out[i] -= log_norm;
    }
  }
  return out;
}

ImportanceWeights importance_weights(double log_old_w, double log_ref_w, double log_old_l,
                                     double log_ref_l) {
  const double ratio_w = log_old_w - log_ref_w;
  const double ratio_l = log_old_l - log_ref_l;
  return {std::exp(ratio_w + ratio_l), std::exp(ratio_w - ratio_l)};
}

// ---------------------------------------------------------------------------

double implied_gamma(const PreferenceTriple& t, double beta, std::size_t vocab_size) {
  return beta * (static_cast<double>(t.rejected.size()) - static_cast<double>(t.chosen.size())) *
         std::log(static_cast<double>(vocab_size));
}

Theorem1Report verify_theorem1(const Policy& policy, std::span<const PreferenceTriple> data,
                               double beta) {
  Theorem1Report report;
  const auto uniform = ReferenceModel::uniform(policy.vocab());
  for (const auto& t : data) {
    const std::span<const PreferenceTriple> one(&t, 1);
    ad::Tape tape;
    PolicyGraph graph(tape, policy);
    const double dpo_u = dpo_loss_with_reference(graph, one, uniform, beta).per_example[0].loss;

    LossConfig simpo;
    simpo.method = Method::kSimPO;
    simpo.beta = beta;
    simpo.length_normalized = false;
    simpo.gamma = implied_gamma(t, beta, policy.vocab().size());
    const double shifted = baseline_loss(Method::kSimPO, graph, one, nullptr, simpo)
                               .per_example[0].loss;
    report.mixed_length_max_gap = std::max(report.mixed_length_max_gap, std::abs(dpo_u - shifted));
    ++report.mixed_length_pairs;

    if (t.chosen.size() != t.rejected.size()) {
      continue;
    }
    ++report.equal_length_pairs;
    simpo.gamma = 0.0;
    const double plain =
        baseline_loss(Method::kSimPO, graph, one, nullptr, simpo).per_example[0].loss;
    report.equal_length_max_gap = std::max(report.equal_length_max_gap, std::abs(dpo_u - plain));

    // Length-normalized DPO against U versus SimPO with gamma = 0.
    const double nw = static_cast<double>(t.chosen.size());
    const double nl = static_cast<double>(t.rejected.size());
    const ad::Var lw = graph.sequence_log_prob(t.prompt, t.chosen);
    const ad::Var ll = graph.sequence_log_prob(t.prompt, t.rejected);
    const ad::Var dpo_ln_logit = (beta / nw) * (lw - uniform.log_prob(t.prompt, t.chosen)) -
                                 (beta / nl) * (ll - uniform.log_prob(t.prompt, t.rejected));
    const double dpo_ln = -ad::log_sigmoid(dpo_ln_logit.value());
    simpo.length_normalized = true;
    const double simpo_ln =
        baseline_loss(Method::kSimPO, graph, one, nullptr, simpo).per_example[0].loss;
    report.ln_equal_length_max_gap =
        std::max(report.ln_equal_length_max_gap, std::abs(dpo_ln - simpo_ln));
  }
  report.pass = report.equal_length_max_gap < report.tolerance &&
                report.mixed_length_max_gap < report.tolerance &&
                report.ln_equal_length_max_gap < report.tolerance;
  return report;
}

// ---------------------------------------------------------------------------

std::vector<PairTerm> lemma2_pairs(const EnumeratedSpace& space, const Policy& policy,
                                   const Policy& reference, std::span<const TokenId> prompt,
                                   const Lemma2Config& config) {
  const auto lp = sequence_log_probs(space, policy, prompt);
  const auto lr = sequence_log_probs(space, reference, prompt);
  std::vector<double> reward(space.size(), 0.0);
  for (std::size_t i = 0; i < space.size(); ++i) {
    if (space.in_support[i]) {
      const double scale =
          config.length_normalized ? 1.0 / static_cast<double>(space.sequences[i].size()) : 1.0;
      reward[i] = config.beta * scale * lp[i];
    }
  }
  std::vector<PairTerm> pairs;
  double total = 0.0;
  for (std::size_t w = 0; w < space.size(); ++w) {
    if (!space.in_support[w]) {
      continue;
    }
    for (std::size_t l = 0; l < space.size(); ++l) {
      if (l == w || !space.in_support[l]) {
        continue;
      }
      const double weight = std::exp(lr[w] + lr[l]);
      total += weight;
      pairs.push_back(PairTerm{w, l, weight, reward[w] - reward[l] - config.gamma,
                               (lp[w] - lr[w]) - (lp[l] - lr[l])});
    }
  }
  for (auto& p : pairs) {
    p.weight /= total;
  }
  return pairs;
}

Lemma2Losses lemma2_losses(const EnumeratedSpace& space, const Policy& policy,
                           const Policy& reference, std::span<const TokenId> prompt,
                           std::span<const PairTerm> pairs, double alpha) {
  const auto old = tilted_old_policy(space, policy, reference, prompt, alpha);
  const auto lr = sequence_log_probs(space, reference, prompt);
  Lemma2Losses out;
  for (const auto& p : pairs) {
    const auto weights = importance_weights(old[p.chosen], lr[p.chosen], old[p.rejected],
                                            lr[p.rejected]);
    const double log_sig = ad::log_sigmoid(p.a);
    out.l1 -= p.weight * weights.w_corr * log_sig;
    out.l2 -= p.weight * ad::log_sigmoid(p.a - alpha * p.b);
    out.linear += alpha * p.weight * p.b * (log_sig - ad::sigmoid(p.a) + 1.0);
  }
  return out;
}

ConvergenceReport verify_lemma2(const Policy& policy, const Policy& reference,
                                std::span<const TokenId> prompt, int max_len,
                                const Lemma2Config& config) {
  if (policy.vocab().size() > 4 || max_len > 3) {
    throw ConfigError(fmt::format(
        "lemma2 enumeration is limited to |V| <= 4 and L <= 3 (got |V|={}, L={})",
        policy.vocab().size(), max_len));
  }
  if (!(policy.vocab() == reference.vocab())) {
    throw ConfigError("lemma2: policy and reference vocabularies differ");
  }
  if (config.alphas.empty()) {
    throw ConfigError("lemma2: empty alpha list");
  }
  for (std::size_t k = 0; k < config.alphas.size(); ++k) {
    const double a = config.alphas[k];
    if (!(a > 0.0 && a <= 0.25) || (k > 0 && !(a < config.alphas[k - 1]))) {
      throw ConfigError("lemma2: alphas must be strictly decreasing within (0, 0.25]");
    }
  }
  const auto space = enumerate_space(policy.vocab(), max_len);
  const auto pairs = lemma2_pairs(space, policy, reference, prompt, config);

  ConvergenceReport report;
  report.alphas = config.alphas;
  for (double a : config.alphas) {
    const auto losses = lemma2_losses(space, policy, reference, prompt, pairs, a);
    report.l1.push_back(losses.l1);
    report.l2.push_back(losses.l2);
    report.linear_terms.push_back(losses.linear);
    report.residuals.push_back(losses.l2 - losses.l1 - losses.linear);
  }

  report.order_pass = true;
  double order_sum = 0.0;
  int order_count = 0;
  for (std::size_t k = 0; k + 1 < report.residuals.size(); ++k) {
    const double r0 = std::abs(report.residuals[k]);
    const double r1 = std::abs(report.residuals[k + 1]);
    report.ratios.push_back(r0 > 0.0 ? r1 / r0 : 0.0);
    if (r0 > config.residual_floor) {
      if (r1 > config.ratio_bound * r0) {
        report.order_pass = false;
      }
      if (r1 > 0.0) {
        order_sum += std::log2(r0 / r1) / std::log2(report.alphas[k] / report.alphas[k + 1]);
        ++order_count;
      }
    }
  }
  report.order_estimate = order_count > 0 ? order_sum / order_count : 0.0;

  report.limit_alpha = config.limit_alpha;
  const auto limit = lemma2_losses(space, policy, reference, prompt, pairs, config.limit_alpha);
  report.limit_gap = std::abs(limit.l2 - limit.l1);
  report.limit_pass = report.limit_gap < config.limit_tolerance;
  report.pass = report.order_pass && report.limit_pass;
  return report;
}

// ---------------------------------------------------------------------------

double pearson_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    return 0.0;
  }
  const double n = static_cast<double>(x.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) {
    return 0.0;
  }
  return sxy / std::sqrt(sxx * syy);
}

Lemma3Report verify_lemma3(const Policy& policy, const Policy& reference,
                           std::span<const PreferenceTriple> triples, double beta) {
  Lemma3Report report;
  report.triples = triples.size();
  std::vector<double> deltas;
  std::vector<double> margins;
  double abs_sum = 0.0;
  for (const auto& t : triples) {
    const OneHotPathReference ref_w(policy.vocab(), t.prompt, t.chosen);
    const OneHotPathReference ref_l(policy.vocab(), t.prompt, t.rejected);
    report.onehot_max_gap = std::max(
        report.onehot_max_gap, std::abs(margin_equivalence_gap_split(t, ref_w, ref_l, policy, beta)));
    for (const auto& [ref, y] : {std::pair{&ref_w, &t.chosen}, std::pair{&ref_l, &t.rejected}}) {
      const auto kl = seq_kl(t.prompt, *y, *ref, policy);
      const double nll = -sequence_log_prob(policy, t.prompt, *y);
      report.onehot_max_collapse_error =
          std::max({report.onehot_max_collapse_error, std::abs(kl.exact - kl.approx),
                    std::abs(kl.exact - nll)});
    }
    report.same_policy_max_gap =
        std::max(report.same_policy_max_gap, std::abs(margin_equivalence_gap(t, policy, policy, beta)));

    const double delta = tdpo_delta(t, reference, policy, beta);
    const double m = margin_m_split(t, reference, reference, policy, beta);
    deltas.push_back(delta);
    margins.push_back(m);
    abs_sum += std::abs(delta - m);
    report.general_max_abs_gap = std::max(report.general_max_abs_gap, std::abs(delta - m));
  }
  if (!triples.empty()) {
    report.general_mean_abs_gap = abs_sum / static_cast<double>(triples.size());
  }
  report.general_correlation = pearson_correlation(deltas, margins);
  report.pass = report.onehot_max_gap < report.tolerance &&
                report.onehot_max_collapse_error < report.tolerance &&
                report.same_policy_max_gap < report.tolerance;
  return report;
}

// ---------------------------------------------------------------------------

std::string to_report(const Theorem1Report& r) {
  std::string out;
  out += "# DPO with a uniform reference versus SimPO without length normalization\n";
  out += fmt::format("equal_length_pairs={}\n", r.equal_length_pairs);
  out += fmt::format("mixed_length_pairs={}\n", r.mixed_length_pairs);
  out += fmt::format("equal_length_max_gap={:.6e}\n", r.equal_length_max_gap);
  out += fmt::format("mixed_length_max_gap={:.6e}\n", r.mixed_length_max_gap);
  out += fmt::format("ln_equal_length_max_gap={:.6e}\n", r.ln_equal_length_max_gap);
  out += fmt::format("tolerance={:.1e}\n", r.tolerance);
  out += fmt::format("pass={}\n", r.pass);
  return out;
}

std::string to_report(const ConvergenceReport& r, const Lemma2Config& config) {
  std::string out;
  out += "# pair distribution: independent draws (y_w, y_l) ~ ref x ref over ordered pairs, "
         "identical pairs excluded, renormalized\n";
  out += "# margin: raw alpha * B (no z-score); old policy ∝ ref^(1-alpha) * policy^alpha\n";
  out += fmt::format("beta={}\n", config.beta);
  out += fmt::format("gamma={}\n", config.gamma);
  out += fmt::format("length_normalized={}\n", config.length_normalized);
  out += fmt::format("order_estimate={:.6f}\n", r.order_estimate);
  out += fmt::format("max_ratio={:.6f}\n",
                     r.ratios.empty() ? 0.0 : *std::max_element(r.ratios.begin(), r.ratios.end()));
  out += fmt::format("ratio_bound={}\n", config.ratio_bound);
  out += fmt::format("limit_alpha={:.1e}\n", r.limit_alpha);
  out += fmt::format("limit_gap={:.6e}\n", r.limit_gap);
  out += fmt::format("limit_tolerance={:.1e}\n", config.limit_tolerance);
  out += fmt::format("order_pass={}\n", r.order_pass);
  out += fmt::format("limit_pass={}\n", r.limit_pass);
  out += fmt::format("pass={}\n", r.pass);
  return out;
}

std::string lemma2_csv(const ConvergenceReport& r) {
  std::string out = "alpha,L1,L2,linear_term,residual\n";
  for (std::size_t k = 0; k < r.alphas.size(); ++k) {
    out += fmt::format("{},{},{},{},{}\n", r.alphas[k], r.l1[k], r.l2[k], r.linear_terms[k],
                       r.residuals[k]);
  }
  return out;
}

std::string to_report(const Lemma3Report& r) {
  std::string out;
  out += "# one-hot leg: each response scored against a reference one-hot along that response\n";
  out += fmt::format("triples={}\n", r.triples);
  out += fmt::format("onehot_max_gap={:.6e}\n", r.onehot_max_gap);
  out += fmt::format("onehot_max_collapse_error={:.6e}\n", r.onehot_max_collapse_error);
  out += fmt::format("same_policy_max_gap={:.6e}\n", r.same_policy_max_gap);
  out += fmt::format("general_mean_abs_gap={:.6e}\n", r.general_mean_abs_gap);
  out += fmt::format("general_max_abs_gap={:.6e}\n", r.general_max_abs_gap);
  out += fmt::format("general_correlation={:.6f}\n", r.general_correlation);
  out += fmt::format("tolerance={:.1e}\n", r.tolerance);
  out += fmt::format("pass={}\n", r.pass);
  return out;
}

std::vector<GradientCheckRow> verify_gradients(const GradientCheckConfig& config,
                                               const LossConfig& loss) {
  const Vocabulary vocab(config.vocab_size);
  std::vector<GradientCheckRow> rows;
  for (Method method : kAllMethods) {
    GradientCheckRow row;
    row.method = method;
    row.pass = true;
    LossConfig cfg = loss;
    cfg.method = method;
    // Seeded per method so each row is reproducible on its own.
    Rng rng(config.seed * 1000003ULL + static_cast<std::uint64_t>(method));
    for (int b = 0; b < config.batches; ++b) {
      const Policy base = random_policy(vocab, config.order, config.logit_scale, rng);
      const Policy ref_policy = random_policy(vocab, config.order, config.logit_scale, rng);
      const auto reference = ReferenceModel::of(ref_policy);
      std::vector<PreferenceTriple> batch;
      for (std::size_t i = 0; i < config.batch_size; ++i) {
        batch.push_back(random_triple(vocab, rng, 1, 2, 1, 3));
      }
      auto loss_fn = [&](ad::Tape& tape, std::span<const ad::Var> params) {
        Policy current(vocab, config.order);
        for (std::size_t i = 0; i < params.size(); ++i) {
          current.logits()[i] = params[i].value();
        }
        PolicyGraph graph(tape, current);
        return batch_loss(graph, batch, &reference, cfg).value;
      };
      const auto report = ad::finite_diff_check(loss_fn, base.logits(), config.step,
                                                config.tolerance, ad::StopGradientMode::kFrozen);
      ++row.batches;
      row.coordinates += report.coordinates.size();
      row.max_rel_error = std::max(row.max_rel_error, report.max_rel_error);
      if (!report.pass && row.pass) {
        row.pass = false;
        row.message = fmt::format("batch {}: {}", b, report.message);
      }
    }
    rows.push_back(row);
  }
  return rows;
}

std::string to_report(std::span<const GradientCheckRow> rows) {
  std::string out = "# finite-difference gradient check, stop-gradient values frozen\n";
  bool all = true;
  for (const auto& r : rows) {
    out += fmt::format("{}.max_rel_error={:.6e}\n", method_name(r.method), r.max_rel_error);
    out += fmt::format("{}.coordinates={}\n", method_name(r.method), r.coordinates);
    out += fmt::format("{}.pass={}\n", method_name(r.method), r.pass);
    if (!r.message.empty()) {
      out += fmt::format("{}.message={}\n", method_name(r.method), r.message);
    }
    all = all && r.pass;
  }
  out += fmt::format("pass={}\n", all);
  return out;
}

}  // namespace prefopt
