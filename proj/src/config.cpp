#include "prefopt/config.hpp"

#include <charconv>
#include <functional>
#include <map>

#include <fmt/format.h>

#include "prefopt/errors.hpp"
#include "prefopt/io.hpp"

namespace prefopt {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) {
    return {};
  }
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <class T>
T parse_number(std::string_view key, std::string_view value, std::string_view origin) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(fmt::format("{}: invalid value '{}' for {}", origin, value, key));
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value, std::string_view origin) {
  if (value == "true" || value == "1") {
    return true;
  }
  if (value == "false" || value == "0") {
    return false;
  }
  throw ConfigError(fmt::format("{}: invalid boolean '{}' for {}", origin, value, key));
}

using Setter = std::function<void(ExperimentConfig&, std::string_view, std::string_view,
                                  std::string_view)>;

template <class T, class Get>
Setter number(Get get) {
  return [get](ExperimentConfig& c, std::string_view k, std::string_view v, std::string_view o) {
    get(c) = parse_number<T>(k, v, o);
  };
}

template <class Get>
Setter boolean(Get get) {
  return [get](ExperimentConfig& c, std::string_view k, std::string_view v, std::string_view o) {
    get(c) = parse_bool(k, v, o);
  };
}

template <class Get>
Setter text(Get get) {
  return [get](ExperimentConfig& c, std::string_view, std::string_view v, std::string_view) {
    get(c) = std::string(v);
  };
}

// clang-format off
#define FIELD(expr) [](ExperimentConfig& c) -> auto& { return c.expr; }
const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"loss.method", [](ExperimentConfig& c, std::string_view k, std::string_view v, std::string_view o) {
         try {
           c.train.loss.method = parse_method(v);
         } catch (const std::exception& e) {
           throw ConfigError(fmt::format("{}: {}: {}", o, k, e.what()));
         }
       }},
      {"loss.zscore_scope", [](ExperimentConfig& c, std::string_view k, std::string_view v, std::string_view o) {
         if (v == "batch") {
           c.train.loss.zscore_scope = ZScoreScope::kBatch;
         } else if (v == "dataset") {
           c.train.loss.zscore_scope = ZScoreScope::kDataset;
         } else {
           throw ConfigError(fmt::format("{}: {} must be batch or dataset, got '{}'", o, k, v));
         }
       }},
      {"loss.beta", number<double>(FIELD(train.loss.beta))},
      {"loss.gamma", number<double>(FIELD(train.loss.gamma))},
      {"loss.alpha", number<double>(FIELD(train.loss.alpha))},
      {"loss.length_normalized", boolean(FIELD(train.loss.length_normalized))},
      {"loss.tau", number<double>(FIELD(train.loss.tau))},
      {"loss.lambda", number<double>(FIELD(train.loss.lambda))},
      {"loss.lambda_w", number<double>(FIELD(train.loss.lambda_w))},
      {"loss.lambda_l", number<double>(FIELD(train.loss.lambda_l))},
      {"loss.alpha_len", number<double>(FIELD(train.loss.alpha_len))},
      {"loss.zscore_eps", number<double>(FIELD(train.loss.zscore_eps))},
      {"loss.stop_gradient", boolean(FIELD(train.loss.stop_gradient))},
      {"loss.tdpo_delta_grad", boolean(FIELD(train.loss.tdpo_delta_grad))},
      {"learning_rate", number<double>(FIELD(train.learning_rate))},
      {"batch_size", number<std::size_t>(FIELD(train.batch_size))},
      {"epochs", number<int>(FIELD(train.epochs))},
      {"warmup_fraction", number<double>(FIELD(train.warmup_fraction))},
      {"seed", number<std::uint64_t>(FIELD(train.seed))},
      {"adam.beta1", number<double>(FIELD(train.adam.beta1))},
      {"adam.beta2", number<double>(FIELD(train.adam.beta2))},
      {"adam.eps", number<double>(FIELD(train.adam.eps))},
      {"checkpoint_every", number<int>(FIELD(train.checkpoint_every))},
      {"checkpoint_path", text(FIELD(train.checkpoint_path))},
      {"metrics_path", text(FIELD(train.metrics_path))},
      {"reference_path", text(FIELD(train.reference_path))},
      {"grad_clip", number<double>(FIELD(train.grad_clip))},
      {"vocab_size", number<std::size_t>(FIELD(train.vocab_size))},
      {"order", number<int>(FIELD(train.order))},
      {"holdout_fraction", number<double>(FIELD(holdout_fraction))},
      {"data.count", number<std::size_t>(FIELD(data.count))},
      {"data.prompt_min_len", number<int>(FIELD(data.prompt_min_len))},
      {"data.prompt_max_len", number<int>(FIELD(data.prompt_max_len))},
      {"data.response_min_len", number<int>(FIELD(data.response_min_len))},
      {"data.response_max_len", number<int>(FIELD(data.response_max_len))},
      {"data.reward_scale", number<double>(FIELD(data.reward_scale))},
      {"data.reward_seed", number<std::uint64_t>(FIELD(data.reward_seed))},
      {"data.generator_order", number<int>(FIELD(data.generator_order))},
      {"data.max_attempts", number<int>(FIELD(data.max_attempts))},
      {"sft.steps", number<int>(FIELD(sft.steps))},
      {"sft.learning_rate", number<double>(FIELD(sft.learning_rate))},
      {"sft.eval_every", number<int>(FIELD(sft.eval_every))},
      {"eval.bins", number<std::size_t>(FIELD(eval.bins))},
      {"eval.samples_per_prompt", number<int>(FIELD(eval.samples_per_prompt))},
      {"eval.max_len", number<int>(FIELD(eval.max_len))},
      {"eval.seed", number<std::uint64_t>(FIELD(eval.seed))},
      {"verify.seed", number<std::uint64_t>(FIELD(verify.seed))},
      {"verify.policies", number<int>(FIELD(verify.policies))},
      {"verify.pairs", number<int>(FIELD(verify.pairs))},
      {"verify.vocab_size", number<std::size_t>(FIELD(verify.vocab_size))},
      {"verify.order", number<int>(FIELD(verify.order))},
      {"verify.beta", number<double>(FIELD(verify.beta))},
      {"verify.logit_scale", number<double>(FIELD(verify.logit_scale))},
      {"verify.lemma2_vocab", number<int>(FIELD(verify.lemma2_vocab))},
      {"verify.lemma2_max_len", number<int>(FIELD(verify.lemma2_max_len))},
      {"verify.lemma2_seeds", number<int>(FIELD(verify.lemma2_seeds))},
      {"verify.lemma3_triples", number<int>(FIELD(verify.lemma3_triples))},
      {"verify.gradient_batches", number<int>(FIELD(verify.gradient_batches))},
      {"lemma2.beta", number<double>(FIELD(verify.lemma2.beta))},
      {"lemma2.gamma", number<double>(FIELD(verify.lemma2.gamma))},
      {"lemma2.length_normalized", boolean(FIELD(verify.lemma2.length_normalized))},
      {"lemma2.limit_alpha", number<double>(FIELD(verify.lemma2.limit_alpha))},
      {"lemma2.limit_tolerance", number<double>(FIELD(verify.lemma2.limit_tolerance))},
      {"lemma2.ratio_bound", number<double>(FIELD(verify.lemma2.ratio_bound))},
  };
  return table;
}
#undef FIELD
// clang-format on

}  // namespace

void apply_setting(ExperimentConfig& config, std::string_view key, std::string_view value,
                   std::string_view origin) {
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) {
    throw ConfigError(fmt::format("{}: unknown config key '{}'", origin, key));
  }
  it->second(config, key, value, origin);
  // The reference fit and the trained policy share one parameterization.
  config.sft.vocab_size = config.train.vocab_size;
  config.sft.order = config.train.order;
  config.data.vocab_size = config.train.vocab_size;
  config.eval.beta = config.train.loss.beta;
}

void apply_assignment(ExperimentConfig& config, std::string_view assignment,
                      std::string_view origin) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError(fmt::format("{}: expected key=value, got '{}'", origin, assignment));
  }
  apply_setting(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)), origin);
}

void parse_config(ExperimentConfig& config, std::string_view text, std::string_view source) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    apply_assignment(config, line, fmt::format("{}:{}", source, line_no));
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  ExperimentConfig config;
  parse_config(config, io::read_file(path), path.string());
  return config;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : setters()) {
    keys.push_back(k);
  }
  return keys;
}

}  // namespace prefopt
