#pragma once

// Pairwise preference objectives over tabular policies.
//
// Every loss is built on an autodiff tape so the trainer can differentiate it
// with respect to the policy logits. Reference policies enter as constants.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prefopt/autodiff.hpp"
#include "prefopt/policy.hpp"
#include "prefopt/preference_data.hpp"

namespace prefopt {

enum class Method { kDPO, kSimPO, kAlphaDPO, kIPO, kCPO, kKTO, kORPO, kRDPO, kTDPO };

inline constexpr Method kAllMethods[] = {Method::kDPO,  Method::kSimPO, Method::kAlphaDPO,
                                         Method::kIPO,  Method::kCPO,   Method::kKTO,
                                         Method::kORPO, Method::kRDPO,  Method::kTDPO};

std::string_view method_name(Method m);
Method parse_method(std::string_view name);
bool requires_reference(Method m);

enum class ZScoreScope { kBatch, kDataset };

struct LossConfig {
  Method method = Method::kAlphaDPO;
  double beta = 10.0;
  double gamma = 0.4;
  double alpha = 0.05;
  bool length_normalized = true;
  double tau = 0.1;        // IPO
  double lambda = 1.0;     // CPO, ORPO
  double lambda_w = 1.0;   // KTO
  double lambda_l = 1.0;   // KTO
  double alpha_len = 0.05; // R-DPO
  double zscore_eps = 1e-8;
  ZScoreScope zscore_scope = ZScoreScope::kBatch;
  bool stop_gradient = true;     // alpha-DPO margin bracket
  bool tdpo_delta_grad = false;  // let gradients flow through TDPO's delta

  void validate() const;
};

// Either a tabular policy or the uniform distribution over the vocabulary.
// The uniform case evaluates log U(y|x) = -|y| ln |V| directly.
class ReferenceModel {
 public:
  static ReferenceModel uniform(Vocabulary vocab) { return ReferenceModel(vocab, nullptr); }
  static ReferenceModel of(const Policy& policy) { return ReferenceModel(policy.vocab(), &policy); }

  bool is_uniform() const { return policy_ == nullptr; }
  const Vocabulary& vocab() const { return vocab_; }
  const Policy* policy() const { return policy_; }

  double log_prob(std::span<const TokenId> prompt, std::span<const TokenId> response) const;
  std::vector<double> next_log_probs(std::span<const TokenId> history) const;

 private:
  ReferenceModel(Vocabulary vocab, const Policy* policy) : vocab_(vocab), policy_(policy) {}
  Vocabulary vocab_;
  const Policy* policy_;
};

struct ExampleTerms {
  double margin = 0.0;             // M (0 when the method has no reference)
  double normalized_margin = 0.0;  // M* for alpha-DPO, M otherwise
  double logit = 0.0;              // argument of the sigmoid / squared term
  double loss = 0.0;
};

struct BatchLoss {
  ad::Var value;  // mean of per-example losses
  std::vector<ExampleTerms> per_example;
};

struct MarginStats {
  double mean = 0.0;
  double stddev = 0.0;
};

// M = beta * [(log pi(y_w) - log ref(y_w)) - (log pi(y_l) - log ref(y_l))].
double margin_m(const Policy& policy, const ReferenceModel& reference,
                const PreferenceTriple& triple, double beta);
ad::Var margin_m(PolicyGraph& graph, const ReferenceModel& reference,
                 const PreferenceTriple& triple, double beta);

// (v - mean) / population-std; all zeros when the std is below eps.
std::vector<double> zscore_normalize(std::span<const double> values, double eps);
MarginStats margin_statistics(std::span<const double> values);

// u = beta/|y_w| log pi(y_w) - beta/|y_l| log pi(y_l); without length
// normalization the 1/|y| factors are dropped.
ad::Var pairwise_reward_diff(PolicyGraph& graph, const PreferenceTriple& triple, double beta,
                             bool length_normalized);

// -log sigma(u - sg[gamma + alpha M*]). With dataset scope, `dataset_stats`
// supplies the margin mean/std; otherwise M* is standardized within the batch.
BatchLoss alpha_dpo_loss(PolicyGraph& graph, std::span<const PreferenceTriple> batch,
                         const ReferenceModel& reference, const LossConfig& cfg,
                         const MarginStats* dataset_stats = nullptr);

// DPO, SimPO, IPO, CPO, KTO, ORPO, R-DPO. Throws ConfigError when a
// reference-requiring method receives no reference.
BatchLoss baseline_loss(Method method, PolicyGraph& graph, std::span<const PreferenceTriple> batch,
                        const ReferenceModel* reference, const LossConfig& cfg);

// DPO against an explicit reference; with a uniform reference this is the
// SimPO-without-length-normalization loss shifted by the implicit gamma.
BatchLoss dpo_loss_with_reference(PolicyGraph& graph, std::span<const PreferenceTriple> batch,
                                  const ReferenceModel& reference, double beta);

// Dispatch on cfg.method (all nine objectives).
BatchLoss batch_loss(PolicyGraph& graph, std::span<const PreferenceTriple> batch,
                     const ReferenceModel* reference, const LossConfig& cfg,
                     const MarginStats* dataset_stats = nullptr);

}  // namespace prefopt
