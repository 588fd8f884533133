#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prefopt/policy.hpp"

namespace prefopt {

struct PreferenceTriple {
  Sequence prompt;
  Sequence chosen;
  Sequence rejected;

  friend bool operator==(const PreferenceTriple&, const PreferenceTriple&) = default;
};

// Throws InputError naming `index` when a sequence is empty, a token is out
// of vocabulary, or chosen == rejected.
void validate_triple(const PreferenceTriple& triple, const Vocabulary& vocab, std::size_t index);

struct Dataset {
  std::vector<PreferenceTriple> triples;
  std::string provenance;

  std::size_t size() const { return triples.size(); }
  bool empty() const { return triples.empty(); }
};

// r*(x, y) = scale * sum_t w[y_t, min(t, P-1)], weights i.i.d. standard normal.
class LatentReward {
 public:
  static constexpr std::size_t kDefaultPositions = 8;

  LatentReward(Vocabulary vocab, std::size_t positions, double scale, std::vector<double> weights);
  static LatentReward random(Vocabulary vocab, double scale, std::uint64_t seed,
                             std::size_t positions = kDefaultPositions);

  double operator()(std::span<const TokenId> prompt, std::span<const TokenId> response) const;

  const Vocabulary& vocab() const { return vocab_; }
  std::size_t positions() const { return positions_; }
  double scale() const { return scale_; }
  std::span<const double> weights() const { return weights_; }
  double weight(TokenId token, std::size_t position) const {
    return weights_[token * positions_ + position];
  }

  friend bool operator==(const LatentReward&, const LatentReward&) = default;

 private:
  Vocabulary vocab_;
  std::size_t positions_;
  double scale_;
  std::vector<double> weights_;  // row-major [token][position]
};

// Sidecar: "prefopt-reward v1 vocab=<V> positions=<P>\n" + f64 LE scale + weights.
void save_reward(const LatentReward& reward, const std::filesystem::path& path);
LatentReward load_reward(const std::filesystem::path& path);

// Bradley-Terry probability that the first response wins: sigma(r_w - r_l).
double bt_probability(double r_w, double r_l);

struct GenConfig {
  std::size_t count = 2000;
  std::size_t vocab_size = 8;
  int prompt_min_len = 1;
  int prompt_max_len = 2;
  int response_min_len = 1;
  int response_max_len = 4;
  double reward_scale = 2.0;
  std::uint64_t reward_seed = 1234;
  int generator_order = 2;
  int max_attempts = 100;
};

LatentReward make_reward(const GenConfig& config);

// Responses come from `generator`; labels are Bradley-Terry draws on `reward`.
Dataset generate_synthetic(const GenConfig& config, const Policy& generator,
                           const LatentReward& reward, Rng& rng);
// Uniform generator policy and a latent reward drawn from config.reward_seed.
Dataset generate_synthetic(const GenConfig& config, Rng& rng);

// Uniformly random tokens (end-of-sequence excluded) with lengths drawn
// uniformly from the given ranges; chosen and rejected always differ.
PreferenceTriple random_triple(const Vocabulary& vocab, Rng& rng, int prompt_min, int prompt_max,
                               int response_min, int response_max);

// One triple per line: {"prompt":[...],"chosen":[...],"rejected":[...]}.
Dataset load_jsonl(const std::filesystem::path& path, const Vocabulary& vocab);
void save_jsonl(const Dataset& dataset, const std::filesystem::path& path);
std::string to_jsonl(const Dataset& dataset);

// Seeded shuffle; the first ceil(N * (1 - f)) shuffled triples form the train part.
std::pair<Dataset, Dataset> split(const Dataset& dataset, double holdout_fraction, Rng& rng);

}  // namespace prefopt
