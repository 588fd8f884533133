#pragma once

// Order-n tabular softmax policy over a finite vocabulary.
//
// The next-token distribution depends only on the last n tokens of the
// history (prompt followed by the response prefix). Histories shorter than n
// are left-padded with the end-of-sequence token, which doubles as the
// begin-of-sequence marker.

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

#include "prefopt/autodiff.hpp"

namespace prefopt {

using TokenId = std::uint32_t;
using Sequence = std::vector<TokenId>;
using Rng = std::mt19937_64;

class Vocabulary {
 public:
  explicit Vocabulary(std::size_t size);

  std::size_t size() const { return size_; }
  TokenId eos() const { return static_cast<TokenId>(size_ - 1); }
  bool contains(TokenId t) const { return t < size_; }

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  std::size_t size_;
};

class Policy {
 public:
  // All logits zero: the uniform policy.
  Policy(Vocabulary vocab, int order);

  const Vocabulary& vocab() const { return vocab_; }
  int order() const { return order_; }
  std::size_t context_count() const { return context_count_; }
  std::size_t parameter_count() const { return logits_.size(); }

  std::span<double> logits() { return logits_; }
  std::span<const double> logits() const { return logits_; }
  std::span<const double> context_logits(std::size_t context) const;

  // Lexicographic index of the last `order` tokens of the history.
  std::size_t context_index(std::span<const TokenId> history) const;
  ad::ParamId parameter_id(std::size_t context, TokenId token) const {
    return static_cast<ad::ParamId>(context * vocab_.size() + token);
  }

  // Log-softmax over the vocabulary for the given history.
  std::vector<double> next_log_probs(std::span<const TokenId> history) const;

  void check_tokens(std::span<const TokenId> tokens) const;

  friend bool operator==(const Policy&, const Policy&) = default;

 private:
  Vocabulary vocab_;
  int order_;
  std::size_t context_count_;
  std::vector<double> logits_;
};

// Concatenation of prompt and response prefix of length `prefix_len`.
Sequence history_of(std::span<const TokenId> prompt, std::span<const TokenId> response,
                    std::size_t prefix_len);

std::vector<double> token_distribution(const Policy& policy, std::span<const TokenId> context);

// Sum over response positions of log pi(y_t | x, y_<t). Empty response throws.
double sequence_log_prob(const Policy& policy, std::span<const TokenId> prompt,
                         std::span<const TokenId> response);

// Differentiable view of a policy on a tape. Logits become parameters
// (id = Policy::parameter_id) on first use; per-context log-softmax nodes are
// cached so a batch shares them.
class PolicyGraph {
 public:
  PolicyGraph(ad::Tape& tape, const Policy& policy) : tape_(tape), policy_(policy) {}

  ad::Tape& tape() const { return tape_; }
  const Policy& policy() const { return policy_; }

  const std::vector<ad::Var>& log_softmax(std::size_t context);
  ad::Var sequence_log_prob(std::span<const TokenId> prompt, std::span<const TokenId> response);

 private:
  ad::Tape& tape_;
  const Policy& policy_;
  std::unordered_map<std::size_t, std::vector<ad::Var>> cache_;
};

ad::Var sequence_log_prob(PolicyGraph& graph, std::span<const TokenId> prompt,
                          std::span<const TokenId> response);

// Logits drawn i.i.d. from N(0, scale^2).
Policy random_policy(Vocabulary vocab, int order, double scale, Rng& rng);

// Ancestral sampling; stops after emitting end-of-sequence or at max_len.
Sequence sample(const Policy& policy, std::span<const TokenId> prompt, int max_len, Rng& rng);

// Checkpoint: "prefopt-policy v1 vocab=<V> order=<n>\n" + little-endian f64 logits.
void save_checkpoint(const Policy& policy, const std::filesystem::path& path);
Policy load_checkpoint(const std::filesystem::path& path);

}  // namespace prefopt
