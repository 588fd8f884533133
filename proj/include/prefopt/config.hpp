#pragma once

// Flat key=value experiment configuration shared by every CLI command.
// Keys mirror struct field names, dotted for nesting ("loss.beta=10").

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "prefopt/evaluation.hpp"
#include "prefopt/preference_data.hpp"
#include "prefopt/sft.hpp"
#include "prefopt/theory.hpp"
#include "prefopt/trainer.hpp"

namespace prefopt {

struct VerifyConfig {
  std::uint64_t seed = 0;
  int policies = 20;         // random policies per theorem1 run
  int pairs = 50;            // triples per policy
  std::size_t vocab_size = 16;
  int order = 1;
  double beta = 2.0;
  int lemma2_vocab = 3;
  int lemma2_max_len = 3;
  int lemma2_seeds = 10;
  double logit_scale = 1.0;  // std of random logits
  Lemma2Config lemma2;
  int lemma3_triples = 100;
  int gradient_batches = 4;
};

struct ExperimentConfig {
  TrainConfig train;
  GenConfig data;
  double holdout_fraction = 0.1;
  SftConfig sft;
  EvalOptions eval;
  VerifyConfig verify;
};

// Applies one setting; `origin` names the file/line or flag for error messages.
// Unknown keys and unparsable values throw ConfigError.
void apply_setting(ExperimentConfig& config, std::string_view key, std::string_view value,
                   std::string_view origin);
// "key=value" form, as passed to --set.
void apply_assignment(ExperimentConfig& config, std::string_view assignment,
                      std::string_view origin);

// '#' starts a comment; blank lines are skipped.
void parse_config(ExperimentConfig& config, std::string_view text, std::string_view source);
ExperimentConfig load_config(const std::filesystem::path& path);

std::vector<std::string> config_keys();

}  // namespace prefopt
