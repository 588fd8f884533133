#pragma once

// Numerical checks of the DPO/SimPO correspondence, the alpha-DPO bound on
// the online SimPO loss, and the TDPO margin equivalence, by exhaustive
// enumeration over tiny sequence spaces.

#include <span>
#include <string>
#include <vector>

#include "prefopt/objectives.hpp"
#include "prefopt/policy.hpp"
#include "prefopt/preference_data.hpp"

namespace prefopt {

// All sequences of length 1..max_len. A sequence is in the support of the
// generation process when end-of-sequence appears only as its last token and
// it is either EOS-terminated or exactly max_len long.
struct EnumeratedSpace {
  Vocabulary vocab;
  int max_len;
  std::vector<Sequence> sequences;
  std::vector<bool> in_support;

  std::size_t size() const { return sequences.size(); }
};

inline constexpr std::size_t kMaxEnumeratedSequences = 200000;

// Throws ConfigError when the space exceeds kMaxEnumeratedSequences.
EnumeratedSpace enumerate_space(Vocabulary vocab, int max_len);

// log pi(y|x) for supported sequences, -inf elsewhere.
std::vector<double> sequence_log_probs(const EnumeratedSpace& space, const Policy& policy,
                                       std::span<const TokenId> prompt);

// Normalized distribution proportional to ref^(1-alpha) * policy^alpha over
// the support, returned as log-probabilities (-inf off support).
std::vector<double> tilted_old_policy(const EnumeratedSpace& space, const Policy& policy,
                                      const Policy& reference, std::span<const TokenId> prompt,
                                      double alpha);

struct ImportanceWeights {
  double w = 1.0;       // [old(y_w)/ref(y_w)] * [old(y_l)/ref(y_l)]
  double w_corr = 1.0;  // [old(y_w)/ref(y_w)] * [ref(y_l)/old(y_l)]
};

ImportanceWeights importance_weights(double log_old_w, double log_ref_w, double log_old_l,
                                     double log_ref_l);

// ---------------------------------------------------------------------------

struct Theorem1Report {
  std::size_t equal_length_pairs = 0;
  std::size_t mixed_length_pairs = 0;
  double equal_length_max_gap = 0.0;     // |DPO(U) - SimPO_noLN(gamma=0)|
  double mixed_length_max_gap = 0.0;     // |DPO(U) - SimPO_noLN(gamma_i)|
  double ln_equal_length_max_gap = 0.0;  // |DPO_LN(U) - SimPO(gamma=0)|
  double tolerance = 1e-12;
  bool pass = false;
};

// gamma_i = beta (|y_l| - |y_w|) ln |V| for the mixed-length leg.
Theorem1Report verify_theorem1(const Policy& policy, std::span<const PreferenceTriple> data,
                               double beta);

double implied_gamma(const PreferenceTriple& triple, double beta, std::size_t vocab_size);

// ---------------------------------------------------------------------------

struct Lemma2Config {
  double beta = 1.0;
  double gamma = 0.5;
  bool length_normalized = true;  // false uses summed log-probabilities in A
  std::vector<double> alphas = {0.2, 0.1, 0.05, 0.025, 0.0125, 0.00625};
  double limit_alpha = 1e-4;
  double limit_tolerance = 1e-6;
  double ratio_bound = 0.35;
  double residual_floor = 1e-13;
};

// One ordered pair (y_w, y_l) of distinct supported sequences.
struct PairTerm {
  std::size_t chosen;
  std::size_t rejected;
  double weight;  // ref(y_w) ref(y_l), renormalized over distinct pairs
  double a;       // reward difference minus gamma
  double b;       // log-ratio difference, no beta
};

struct ConvergenceReport {
  std::vector<double> alphas;
  std::vector<double> l1;
  std::vector<double> l2;
  std::vector<double> linear_terms;
  std::vector<double> residuals;
  std::vector<double> ratios;  // |R(alpha_{k+1})| / |R(alpha_k)|
  double order_estimate = 0.0;
  double limit_alpha = 0.0;
  double limit_gap = 0.0;  // |L2 - L1| at limit_alpha
  bool order_pass = false;
  bool limit_pass = false;
  bool pass = false;
};

// Pair table of A/B values over the enumerated space.
std::vector<PairTerm> lemma2_pairs(const EnumeratedSpace& space, const Policy& policy,
                                   const Policy& reference, std::span<const TokenId> prompt,
                                   const Lemma2Config& config);

struct Lemma2Losses {
  double l1 = 0.0;      // w_corr-weighted online SimPO loss
  double l2 = 0.0;      // alpha-DPO loss with raw margin alpha * B
  double linear = 0.0;  // alpha * E[B (log sigma(A) - sigma(A) + 1)]
};

Lemma2Losses lemma2_losses(const EnumeratedSpace& space, const Policy& policy,
                           const Policy& reference, std::span<const TokenId> prompt,
                           std::span<const PairTerm> pairs, double alpha);

// Requires |V| <= 4 and max_len <= 3; alphas strictly decreasing in (0, 0.25].
ConvergenceReport verify_lemma2(const Policy& policy, const Policy& reference,
                                std::span<const TokenId> prompt, int max_len,
                                const Lemma2Config& config);

// ---------------------------------------------------------------------------

struct Lemma3Report {
  std::size_t triples = 0;
  double onehot_max_gap = 0.0;            // |delta - M| with one-hot references
  double onehot_max_collapse_error = 0.0; // |exact - approx|, |exact + log pi(y)|
  double same_policy_max_gap = 0.0;       // reference == policy
  double general_mean_abs_gap = 0.0;
  double general_max_abs_gap = 0.0;
  double general_correlation = 0.0;  // Pearson(delta, M)
  double tolerance = 1e-12;
  bool pass = false;
};

Lemma3Report verify_lemma3(const Policy& policy, const Policy& reference,
                           std::span<const PreferenceTriple> triples, double beta);

double pearson_correlation(std::span<const double> x, std::span<const double> y);

// ---------------------------------------------------------------------------

struct GradientCheckRow {
  Method method = Method::kDPO;
  std::size_t batches = 0;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  bool pass = false;
  std::string message;  // first failure, if any
};

struct GradientCheckConfig {
  std::size_t vocab_size = 5;
  int order = 2;
  int batches = 4;
  std::size_t batch_size = 8;
  double logit_scale = 1.0;
  double step = 1e-4;
  double tolerance = 1e-5;
  std::uint64_t seed = 0;
};

// Finite-difference check of every objective's gradient on random policies,
// references and batches. Stop-gradient values are frozen at the base point.
std::vector<GradientCheckRow> verify_gradients(const GradientCheckConfig& config,
                                               const LossConfig& loss = {});

// Plain-text key=value rendering used by the CLI reports.
std::string to_report(const Theorem1Report& r);
std::string to_report(const ConvergenceReport& r, const Lemma2Config& config);
std::string lemma2_csv(const ConvergenceReport& r);
std::string to_report(const Lemma3Report& r);
std::string to_report(std::span<const GradientCheckRow> rows);

}  // namespace prefopt
