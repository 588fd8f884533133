#include "prefopt/preference_data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "prefopt/errors.hpp"
#include "prefopt/io.hpp"

namespace prefopt {

void validate_triple(const PreferenceTriple& triple, const Vocabulary& vocab, std::size_t index) {
  auto check = [&](const Sequence& s, const char* field) {
    if (s.empty()) {
      throw InputError(fmt::format("triple {}: empty {}", index, field));
    }
    for (TokenId t : s) {
      if (!vocab.contains(t)) {
        throw InputError(fmt::format("triple {}: {} token {} outside vocabulary of size {}", index,
                                     field, t, vocab.size()));
      }
    }
  };
  check(triple.prompt, "prompt");
  check(triple.chosen, "chosen");
  check(triple.rejected, "rejected");
  if (triple.chosen == triple.rejected) {
    throw InputError(fmt::format("triple {}: chosen and rejected are identical", index));
  }
}

LatentReward::LatentReward(Vocabulary vocab, std::size_t positions, double scale,
                           std::vector<double> weights)
    : vocab_(vocab), positions_(positions), scale_(scale), weights_(std::move(weights)) {
  if (positions_ == 0) {
    throw InputError("latent reward needs at least one position");
  }
  if (weights_.size() != vocab_.size() * positions_) {
    throw InputError(fmt::format("latent reward expects {} weights, got {}",
                                 vocab_.size() * positions_, weights_.size()));
  }
}

LatentReward LatentReward::random(Vocabulary vocab, double scale, std::uint64_t seed,
                                  std::size_t positions) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> weights(vocab.size() * positions);
  for (std::size_t tok = 0; tok < vocab.size(); ++tok) {
    for (std::size_t pos = 0; pos < positions; ++pos) {
      weights[tok * positions + pos] = normal(rng);
    }
  }
  return LatentReward(vocab, positions, scale, std::move(weights));
}

LatentReward make_reward(const GenConfig& config) {
  return LatentReward::random(Vocabulary(config.vocab_size), config.reward_scale,
                              config.reward_seed);
}

double LatentReward::operator()(std::span<const TokenId> /*prompt*/,
                                std::span<const TokenId> response) const {
  double total = 0.0;
  for (std::size_t t = 0; t < response.size(); ++t) {
    if (!vocab_.contains(response[t])) {
      throw InputError(fmt::format("latent reward: token {} outside vocabulary", response[t]));
    }
    total += weight(response[t], std::min(t, positions_ - 1));
  }
  return scale_ * total;
}

namespace {
constexpr std::string_view kRewardMagic = "prefopt-reward v1";
}

void save_reward(const LatentReward& reward, const std::filesystem::path& path) {
  std::string out = fmt::format("{} vocab={} positions={}\n", kRewardMagic, reward.vocab().size(),
                                reward.positions());
  const double scale = reward.scale();
  io::append_f64_le(out, std::span<const double>(&scale, 1));
  io::append_f64_le(out, reward.weights());
  io::write_file_atomic(path, out);
}

LatentReward load_reward(const std::filesystem::path& path) {
  const std::string data = io::read_file(path);
  const auto newline = data.find('\n');
  const std::string prefix = std::string(kRewardMagic) + " vocab=";
  if (newline == std::string::npos || data.rfind(prefix, 0) != 0) {
    throw InputError(fmt::format("'{}': bad reward header", path.string()));
  }
  const std::string header = data.substr(0, newline);
  const auto pos = header.find(" positions=");
  if (pos == std::string::npos) {
    throw InputError(fmt::format("'{}': reward header lacks positions", path.string()));
  }
  std::size_t vocab = 0;
  std::size_t positions = 0;
  try {
    vocab = std::stoul(header.substr(prefix.size(), pos - prefix.size()));
    positions = std::stoul(header.substr(pos + 11));
  } catch (const std::exception&) {
    throw InputError(fmt::format("'{}': unparsable reward header '{}'", path.string(), header));
  }
  auto values = io::parse_f64_le(std::string_view(data).substr(newline + 1));
  if (values.empty()) {
    throw InputError(fmt::format("'{}': reward payload missing", path.string()));
  }
  const double scale = values.front();
  values.erase(values.begin());
  return LatentReward(Vocabulary(vocab), positions, scale, std::move(values));
}

double bt_probability(double r_w, double r_l) { return ad::sigmoid(r_w - r_l); }

namespace {

Sequence sample_prompt(const GenConfig& config, const Vocabulary& vocab, Rng& rng) {
  std::uniform_int_distribution<int> length(config.prompt_min_len, config.prompt_max_len);
  // Prompts never contain the end-of-sequence token.
  std::uniform_int_distribution<TokenId> token(0, static_cast<TokenId>(vocab.size() - 2));
  Sequence prompt(static_cast<std::size_t>(length(rng)));
  for (TokenId& t : prompt) {
    t = token(rng);
  }
  return prompt;
}

}  // namespace

Dataset generate_synthetic(const GenConfig& config, const Policy& generator,
                           const LatentReward& reward, Rng& rng) {
  if (config.prompt_min_len < 1 || config.prompt_max_len < config.prompt_min_len ||
      config.response_min_len < 1 || config.response_max_len < config.response_min_len) {
    throw ConfigError("generate_synthetic: invalid length ranges");
  }
  if (!(generator.vocab() == reward.vocab())) {
    throw ConfigError("generate_synthetic: generator and reward vocabularies differ");
  }
  const Vocabulary& vocab = generator.vocab();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Dataset out;
  out.triples.reserve(config.count);
  for (std::size_t i = 0; i < config.count; ++i) {
    Sequence prompt = sample_prompt(config, vocab, rng);
    Sequence first;
    Sequence second;
    bool ok = false;
    for (int attempt = 0; attempt < config.max_attempts && !ok; ++attempt) {
      first = sample(generator, prompt, config.response_max_len, rng);
      second = sample(generator, prompt, config.response_max_len, rng);
      ok = first != second && static_cast<int>(first.size()) >= config.response_min_len &&
           static_cast<int>(second.size()) >= config.response_min_len;
    }
    if (!ok) {
      throw InputError(fmt::format(
          "generate_synthetic: no distinct response pair for prompt {} after {} attempts", i,
          config.max_attempts));
    }
    const double p_first = bt_probability(reward(prompt, first), reward(prompt, second));
    PreferenceTriple triple{std::move(prompt), std::move(first), std::move(second)};
    if (!(unit(rng) < p_first)) {
      std::swap(triple.chosen, triple.rejected);
    }
    out.triples.push_back(std::move(triple));
  }
  return out;
}

Dataset generate_synthetic(const GenConfig& config, Rng& rng) {
  const Vocabulary vocab(config.vocab_size);
  const Policy generator(vocab, config.generator_order);
  const auto reward = make_reward(config);
  Dataset out = generate_synthetic(config, generator, reward, rng);
  out.provenance = fmt::format("synthetic count={} vocab={} reward_seed={} scale={}", config.count,
                               config.vocab_size, config.reward_seed, config.reward_scale);
  return out;
}

namespace {

Sequence parse_tokens(const nlohmann::json& j, const char* field, std::size_t line) {
  if (!j.contains(field) || !j[field].is_array()) {
    throw InputError(fmt::format("line {}: field '{}' missing or not an array", line, field));
  }
  Sequence out;
  for (const auto& v : j[field]) {
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw InputError(fmt::format("line {}: field '{}' holds a non-token value", line, field));
    }
    out.push_back(static_cast<TokenId>(v.get<long long>()));
  }
  return out;
}

}  // namespace

PreferenceTriple random_triple(const Vocabulary& vocab, Rng& rng, int prompt_min, int prompt_max,
                               int response_min, int response_max) {
  if (vocab.size() < 2 || prompt_min < 1 || prompt_max < prompt_min || response_min < 1 ||
      response_max < response_min) {
    throw InputError("random_triple: invalid length ranges");
  }
  if (vocab.size() < 3 && response_max == 1) {
    throw InputError("random_triple: cannot draw two distinct responses");
  }
  std::uniform_int_distribution<TokenId> token(0, vocab.eos() - 1);
  auto draw = [&](int lo, int hi) {
    Sequence s(static_cast<std::size_t>(std::uniform_int_distribution<int>(lo, hi)(rng)));
    for (auto& t : s) {
      t = token(rng);
    }
    return s;
  };
  PreferenceTriple t{draw(prompt_min, prompt_max), draw(response_min, response_max), {}};
  do {
    t.rejected = draw(response_min, response_max);
  } while (t.rejected == t.chosen);
  return t;
}

Dataset load_jsonl(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::istringstream in(io::read_file(path));
  Dataset out;
  out.provenance = path.string();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError(fmt::format("{}:{}: malformed JSON: {}", path.string(), line_no, e.what()));
    }
    if (!j.is_object()) {
      throw InputError(fmt::format("{}:{}: expected a JSON object", path.string(), line_no));
    }
    PreferenceTriple triple{parse_tokens(j, "prompt", line_no), parse_tokens(j, "chosen", line_no),
                            parse_tokens(j, "rejected", line_no)};
    validate_triple(triple, vocab, out.triples.size());
    out.triples.push_back(std::move(triple));
  }
  return out;
}

std::string to_jsonl(const Dataset& dataset) {
  std::string out;
  for (const auto& t : dataset.triples) {
    nlohmann::ordered_json j;
    j["prompt"] = t.prompt;
    j["chosen"] = t.chosen;
    j["rejected"] = t.rejected;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void save_jsonl(const Dataset& dataset, const std::filesystem::path& path) {
  io::write_file_atomic(path, to_jsonl(dataset));
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, double holdout_fraction, Rng& rng) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw InputError(fmt::format("split: holdout fraction must lie in (0, 1), got {}",
                                 holdout_fraction));
  }
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const double raw = static_cast<double>(dataset.size()) * (1.0 - holdout_fraction);
  const auto train_size =
      std::min(dataset.size(), static_cast<std::size_t>(std::ceil(raw - 1e-9)));
  Dataset train;
  Dataset heldout;
  train.provenance = dataset.provenance + " [train]";
  heldout.provenance = dataset.provenance + " [heldout]";
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < train_size ? train : heldout).triples.push_back(dataset.triples[order[i]]);
  }
  return {std::move(train), std::move(heldout)};
}

}  // namespace prefopt
