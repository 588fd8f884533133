#include "prefopt/policy.hpp"

#include <cmath>
#include <string>

#include <fmt/format.h>

#include "prefopt/errors.hpp"
#include "prefopt/io.hpp"

namespace prefopt {

Vocabulary::Vocabulary(std::size_t size) : size_(size) {
  if (size < 2) {
    throw InputError(fmt::format("vocabulary size must be at least 2, got {}", size));
  }
}

namespace {

std::size_t checked_power(std::size_t base, int exponent) {
  std::size_t result = 1;
  for (int i = 0; i < exponent; ++i) {
    if (result > (std::size_t{1} << 40) / base) {
      throw InputError("policy table too large");
    }
    result *= base;
  }
  return result;
}

}  // namespace

Policy::Policy(Vocabulary vocab, int order)
    : vocab_(vocab), order_(order), context_count_(0) {
  if (order < 0) {
    throw InputError(fmt::format("context order must be non-negative, got {}", order));
  }
  context_count_ = checked_power(vocab_.size(), order_);
  logits_.assign(context_count_ * vocab_.size(), 0.0);
}

std::span<const double> Policy::context_logits(std::size_t context) const {
  return std::span<const double>(logits_).subspan(context * vocab_.size(), vocab_.size());
}

std::size_t Policy::context_index(std::span<const TokenId> history) const {
  std::size_t index = 0;
  const std::size_t n = static_cast<std::size_t>(order_);
  for (std::size_t k = 0; k < n; ++k) {
    // Position k of the window corresponds to history[size - n + k].
    TokenId token = vocab_.eos();
    if (history.size() + k >= n) {
      token = history[history.size() + k - n];
    }
    if (!vocab_.contains(token)) {
      throw InputError(fmt::format("token id {} outside vocabulary of size {}", token,
                                   vocab_.size()));
    }
    index = index * vocab_.size() + token;
  }
  return index;
}

std::vector<double> Policy::next_log_probs(std::span<const TokenId> history) const {
  const auto row = context_logits(context_index(history));
  const double lse = ad::log_sum_exp(row);
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) {
    out[i] = row[i] - lse;
  }
  return out;
}

void Policy::check_tokens(std::span<const TokenId> tokens) const {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!vocab_.contains(tokens[i])) {
      throw InputError(fmt::format("token id {} at position {} outside vocabulary of size {}",
                                   tokens[i], i, vocab_.size()));
    }
  }
}

Sequence history_of(std::span<const TokenId> prompt, std::span<const TokenId> response,
                    std::size_t prefix_len) {
  Sequence h(prompt.begin(), prompt.end());
  h.insert(h.end(), response.begin(), response.begin() + static_cast<std::ptrdiff_t>(prefix_len));
  return h;
}

std::vector<double> token_distribution(const Policy& policy, std::span<const TokenId> context) {
  policy.check_tokens(context);
  return policy.next_log_probs(context);
}

double sequence_log_prob(const Policy& policy, std::span<const TokenId> prompt,
                         std::span<const TokenId> response) {
  if (response.empty()) {
    throw InputError("sequence_log_prob: empty response");
  }
  policy.check_tokens(prompt);
  policy.check_tokens(response);
  double total = 0.0;
  for (std::size_t t = 0; t < response.size(); ++t) {
    const auto history = history_of(prompt, response, t);
    const auto row = policy.context_logits(policy.context_index(history));
    total += row[response[t]] - ad::log_sum_exp(row);
  }
  return total;
}

const std::vector<ad::Var>& PolicyGraph::log_softmax(std::size_t context) {
  if (auto it = cache_.find(context); it != cache_.end()) {
    return it->second;
  }
  const std::size_t v = policy_.vocab().size();
  const auto row = policy_.context_logits(context);
  std::vector<ad::Var> logits;
  logits.reserve(v);
  for (std::size_t k = 0; k < v; ++k) {
    logits.push_back(tape_.parameter(policy_.parameter_id(context, static_cast<TokenId>(k)), row[k]));
  }
  const ad::Var lse = ad::log_sum_exp(logits);
  std::vector<ad::Var> out;
  out.reserve(v);
  for (std::size_t k = 0; k < v; ++k) {
    out.push_back(logits[k] - lse);
  }
  return cache_.emplace(context, std::move(out)).first->second;
}

ad::Var PolicyGraph::sequence_log_prob(std::span<const TokenId> prompt,
                                       std::span<const TokenId> response) {
  if (response.empty()) {
    throw InputError("sequence_log_prob: empty response");
  }
  policy_.check_tokens(prompt);
  policy_.check_tokens(response);
  std::vector<ad::Var> terms;
  terms.reserve(response.size());
  for (std::size_t t = 0; t < response.size(); ++t) {
    const auto history = history_of(prompt, response, t);
    terms.push_back(log_softmax(policy_.context_index(history))[response[t]]);
  }
  return ad::sum(terms);
}

ad::Var sequence_log_prob(PolicyGraph& graph, std::span<const TokenId> prompt,
                          std::span<const TokenId> response) {
  return graph.sequence_log_prob(prompt, response);
}

Policy random_policy(Vocabulary vocab, int order, double scale, Rng& rng) {
  Policy policy(vocab, order);
  std::normal_distribution<double> normal(0.0, scale);
  for (double& l : policy.logits()) {
    l = normal(rng);
  }
  return policy;
}

Sequence sample(const Policy& policy, std::span<const TokenId> prompt, int max_len, Rng& rng) {
  if (max_len < 1) {
    throw InputError(fmt::format("sample: max_len must be >= 1, got {}", max_len));
  }
  policy.check_tokens(prompt);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Sequence history(prompt.begin(), prompt.end());
  Sequence out;
  for (int t = 0; t < max_len; ++t) {
    const auto log_probs = policy.next_log_probs(history);
    const double u = unit(rng);
    double cumulative = 0.0;
    // Rounding can leave u above the final cumulative sum; the last supported
    // token is the fallback.
    TokenId chosen = 0;
    for (std::size_t k = 0; k < log_probs.size(); ++k) {
      const double p = std::exp(log_probs[k]);
      if (p <= 0.0) {
        continue;
      }
      chosen = static_cast<TokenId>(k);
      cumulative += p;
      if (u < cumulative) {
        break;
      }
    }
    out.push_back(chosen);
    history.push_back(chosen);
    if (chosen == policy.vocab().eos()) {
      break;
    }
  }
  return out;
}

namespace {

constexpr std::string_view kPolicyMagic = "prefopt-policy v1";

}  // namespace

void save_checkpoint(const Policy& policy, const std::filesystem::path& path) {
  std::string out =
      fmt::format("{} vocab={} order={}\n", kPolicyMagic, policy.vocab().size(), policy.order());
  io::append_f64_le(out, policy.logits());
  io::write_file_atomic(path, out);
}

Policy load_checkpoint(const std::filesystem::path& path) {
  const std::string data = io::read_file(path);
  const auto newline = data.find('\n');
  if (newline == std::string::npos) {
    throw InputError(fmt::format("'{}': missing checkpoint header", path.string()));
  }
  const std::string header = data.substr(0, newline);
  std::size_t vocab = 0;
  int order = -1;
  {
    const std::string prefix = std::string(kPolicyMagic) + " vocab=";
    if (header.rfind(prefix, 0) != 0) {
      throw InputError(fmt::format("'{}': bad checkpoint header '{}'", path.string(), header));
    }
    const auto order_pos = header.find(" order=");
    if (order_pos == std::string::npos) {
      throw InputError(fmt::format("'{}': checkpoint header lacks order", path.string()));
    }
    try {
      vocab = std::stoul(header.substr(prefix.size(), order_pos - prefix.size()));
      order = std::stoi(header.substr(order_pos + 7));
    } catch (const std::exception&) {
      throw InputError(fmt::format("'{}': unparsable checkpoint header '{}'", path.string(), header));
    }
  }
  Policy policy(Vocabulary(vocab), order);
  const auto values = io::parse_f64_le(std::string_view(data).substr(newline + 1));
  if (values.size() != policy.parameter_count()) {
    throw InputError(fmt::format("'{}': expected {} logits, found {}", path.string(),
                                 policy.parameter_count(), values.size()));
  }
  std::copy(values.begin(), values.end(), policy.logits().begin());
  return policy;
}

}  // namespace prefopt
