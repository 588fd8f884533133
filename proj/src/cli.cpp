#include "prefopt/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "prefopt/config.hpp"
#include "prefopt/errors.hpp"
#include "prefopt/evaluation.hpp"
#include "prefopt/io.hpp"
#include "prefopt/theory.hpp"
#include "prefopt/trainer.hpp"

namespace prefopt {
namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "Flat key=value config file");
  cmd->add_option("--seed", flags.seed, "Seed; overrides the 'seed' config key");
  cmd->add_option("--set", flags.sets, "Config override key=value (repeatable; wins over --config)");
}

ExperimentConfig resolve_config(const CommonFlags& flags) {
  ExperimentConfig config;
  if (!flags.config_path.empty()) {
    config = load_config(flags.config_path);
  }
  for (const auto& s : flags.sets) {
    apply_assignment(config, s, "--set");
  }
  if (flags.seed) {
    apply_setting(config, "seed", std::to_string(*flags.seed), "--seed");
  }
  return config;
}

// "uniform" or a checkpoint path.
struct LoadedReference {
  std::optional<Policy> policy;
  ReferenceModel model;
};

LoadedReference load_reference(const std::string& spec, const Vocabulary& vocab) {
  if (spec == "uniform") {
    return {std::nullopt, ReferenceModel::uniform(vocab)};
  }
  LoadedReference out{load_checkpoint(spec), ReferenceModel::uniform(vocab)};
  if (!(out.policy->vocab() == vocab)) {
    throw ConfigError(fmt::format("reference {} has vocabulary {}, expected {}", spec,
                                  out.policy->vocab().size(), vocab.size()));
  }
  out.model = ReferenceModel::of(*out.policy);
  return out;
}

int cmd_datagen(const CommonFlags& flags, const std::string& out, const std::string& holdout) {
  const ExperimentConfig config = resolve_config(flags);
  Rng rng(config.train.seed);
  Dataset data = generate_synthetic(config.data, rng);
  save_reward(make_reward(config.data), out + ".reward");
  if (holdout.empty()) {
    save_jsonl(data, out);
  } else {
    auto [train_part, held] = split(data, config.holdout_fraction, rng);
    save_jsonl(train_part, out);
    save_jsonl(held, holdout);
  }
  return kExitOk;
}

int cmd_train(const CommonFlags& flags, const std::string& data_path, const std::string& out,
              const std::string& metrics) {
  ExperimentConfig config = resolve_config(flags);
  const Vocabulary vocab(config.train.vocab_size);
  const Dataset data = load_jsonl(data_path, vocab);
  if (!metrics.empty()) {
    config.train.metrics_path = metrics;
  }
  if (config.train.checkpoint_path.empty()) {
    config.train.checkpoint_path = out;
  }

  const std::string& ref_spec = config.train.reference_path;
  std::optional<Policy> ref_policy;
  std::optional<ReferenceModel> reference;
  if (ref_spec == "sft") {
    ref_policy = fit_reference(data.triples, config.sft);
    save_checkpoint(*ref_policy, out + ".ref");
    reference = ReferenceModel::of(*ref_policy);
  } else if (!ref_spec.empty()) {
    auto loaded = load_reference(ref_spec, vocab);
    ref_policy = std::move(loaded.policy);
    reference = ref_policy ? ReferenceModel::of(*ref_policy) : loaded.model;
  } else if (requires_reference(config.train.loss.method)) {
    throw ConfigError(fmt::format(
        "loss.method={} needs a reference: set reference_path to a checkpoint, 'uniform' or 'sft'",
        method_name(config.train.loss.method)));
  }

  const auto result = train(config.train, data, reference ? &*reference : nullptr);
  save_checkpoint(result.policy, out);
  return kExitOk;
}

int cmd_eval(const CommonFlags& flags, const std::string& ckpt, const std::string& ref,
             const std::string& data_path, const std::string& report_path,
             const std::string& oracle_path) {
  ExperimentConfig config = resolve_config(flags);
  const Policy policy = load_checkpoint(ckpt);
  const Dataset data = load_jsonl(data_path, policy.vocab());
  const auto reference = load_reference(ref, policy.vocab());
  const auto& model = reference.policy ? ReferenceModel::of(*reference.policy) : reference.model;
  std::optional<LatentReward> oracle;
  if (!oracle_path.empty()) {
    oracle = load_reward(oracle_path);
  }
  config.eval.seed = config.train.seed;
  const auto report = evaluate(policy, model, data, config.train.loss.method, config.eval,
                               oracle ? &*oracle : nullptr);
  io::write_file_atomic(report_path, to_report(report));
  return kExitOk;
}

int cmd_export(const CommonFlags& flags, const std::string& ckpt, const std::string& ref,
               const std::string& data_path, const std::string& out) {
  const ExperimentConfig config = resolve_config(flags);
  const Policy policy = load_checkpoint(ckpt);
  const Dataset data = load_jsonl(data_path, policy.vocab());
  const auto reference = load_reference(ref, policy.vocab());
  const auto& model = reference.policy ? ReferenceModel::of(*reference.policy) : reference.model;
  export_distributions(policy, model, data, config.train.loss.method, config.train.loss.beta,
                       config.eval.bins, out);
  return kExitOk;
}

PreferenceTriple equal_length_triple(const Vocabulary& vocab, Rng& rng) {
  const int len = std::uniform_int_distribution<int>(1, 3)(rng);
  return random_triple(vocab, rng, 1, 2, len, len);
}

int verify_theorem1_suite(const VerifyConfig& v, const std::string& out) {
  const Vocabulary vocab(v.vocab_size);
  Rng rng(v.seed);
  Theorem1Report total;
  std::string body;
  for (int p = 0; p < v.policies; ++p) {
    const Policy policy = random_policy(vocab, v.order, v.logit_scale, rng);
    std::vector<PreferenceTriple> data;
    for (int i = 0; i < v.pairs; ++i) {
      data.push_back(equal_length_triple(vocab, rng));
    }
    for (int i = 0; i < v.pairs; ++i) {
      data.push_back(random_triple(vocab, rng, 1, 2, 1, 4));
    }
    const auto r = verify_theorem1(policy, data, v.beta);
    total.equal_length_pairs += r.equal_length_pairs;
    total.mixed_length_pairs += r.mixed_length_pairs;
    total.equal_length_max_gap = std::max(total.equal_length_max_gap, r.equal_length_max_gap);
    total.mixed_length_max_gap = std::max(total.mixed_length_max_gap, r.mixed_length_max_gap);
    total.ln_equal_length_max_gap =
        std::max(total.ln_equal_length_max_gap, r.ln_equal_length_max_gap);
  }
  total.pass = total.equal_length_max_gap < total.tolerance &&
               total.mixed_length_max_gap < total.tolerance &&
               total.ln_equal_length_max_gap < total.tolerance;
  io::write_file_atomic(out, fmt::format("policies={}\nvocab_size={}\nbeta={}\n{}", v.policies,
                                         v.vocab_size, v.beta, to_report(total)));
  return total.pass ? kExitOk : kExitVerification;
}

int verify_lemma2_suite(const VerifyConfig& v, const std::string& out) {
  const Vocabulary vocab(static_cast<std::size_t>(v.lemma2_vocab));
  std::string report;
  std::string csv = "seed,alpha,L1,L2,linear_term,residual\n";
  bool pass = true;
  for (int s = 0; s < v.lemma2_seeds; ++s) {
    Rng rng(v.seed + static_cast<std::uint64_t>(s));
    const Policy policy = random_policy(vocab, 1, v.logit_scale, rng);
    const Policy reference = random_policy(vocab, 1, v.logit_scale, rng);
    const Sequence prompt{0};
    const auto r = verify_lemma2(policy, reference, prompt, v.lemma2_max_len, v.lemma2);
    report += fmt::format("# seed={}\n{}", s, to_report(r, v.lemma2));
    const std::string rows = lemma2_csv(r);
    std::size_t pos = rows.find('\n') + 1;
    while (pos < rows.size()) {
      const auto nl = rows.find('\n', pos);
      csv += fmt::format("{},{}\n", s, rows.substr(pos, nl - pos));
      pos = nl + 1;
    }
    pass = pass && r.pass;
  }
  report += fmt::format("seeds={}\nall_pass={}\n", v.lemma2_seeds, pass);
  io::write_file_atomic(out, report);
  io::write_file_atomic(out + ".csv", csv);
  return pass ? kExitOk : kExitVerification;
}

int verify_lemma3_suite(const VerifyConfig& v, const std::string& out) {
  const Vocabulary vocab(3);
  Rng rng(v.seed);
  const Policy policy = random_policy(vocab, 1, v.logit_scale, rng);
  const Policy reference = random_policy(vocab, 1, v.logit_scale, rng);
  std::vector<PreferenceTriple> triples;
  for (int i = 0; i < v.lemma3_triples; ++i) {
    triples.push_back(random_triple(vocab, rng, 1, 2, 1, 3));
  }
  const auto r = verify_lemma3(policy, reference, triples, v.beta);
  io::write_file_atomic(out, to_report(r));
  return r.pass ? kExitOk : kExitVerification;
}

int verify_gradients_suite(const ExperimentConfig& config, const std::string& out) {
  GradientCheckConfig g;
  g.seed = config.verify.seed;
  g.batches = config.verify.gradient_batches;
  const auto rows = verify_gradients(g, config.train.loss);
  io::write_file_atomic(out, to_report(rows));
  return std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.pass; })
             ? kExitOk
             : kExitVerification;
}

int cmd_verify(const CommonFlags& flags, const std::string& check, const std::string& out) {
  ExperimentConfig config = resolve_config(flags);
  if (flags.seed) {
    config.verify.seed = *flags.seed;
  }
  if (check == "theorem1") {
    return verify_theorem1_suite(config.verify, out);
  }
  if (check == "lemma2") {
    return verify_lemma2_suite(config.verify, out);
  }
  if (check == "lemma3") {
    return verify_lemma3_suite(config.verify, out);
  }
  return verify_gradients_suite(config, out);
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Preference-optimization lab on tabular autoregressive policies", "prefopt"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string out;
  std::string holdout;
  std::string data;
  std::string metrics;
  std::string ckpt;
  std::string ref;
  std::string report;
  std::string oracle;
  std::string check;

  auto* datagen = app.add_subcommand("datagen", "Generate a synthetic Bradley-Terry preference set");
  add_common(datagen, flags);
  datagen->add_option("--out", out, "Output JSONL (latent reward written to <out>.reward)")->required();
  datagen->add_option("--holdout", holdout, "Write a held-out split here; --out gets the rest");

  auto* train_cmd = app.add_subcommand("train", "Train a policy on a preference set");
  add_common(train_cmd, flags);
  train_cmd->add_option("--data", data, "Training JSONL")->required();
  train_cmd->add_option("--out", out, "Output checkpoint")->required();
  train_cmd->add_option("--metrics", metrics, "Per-step metrics CSV");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on held-out triples");
  add_common(eval_cmd, flags);
  eval_cmd->add_option("--ckpt", ckpt, "Policy checkpoint")->required();
  eval_cmd->add_option("--ref", ref, "Reference checkpoint or 'uniform'")->required();
  eval_cmd->add_option("--data", data, "Held-out JSONL")->required();
  eval_cmd->add_option("--report", report, "Output key=value report")->required();
  eval_cmd->add_option("--oracle", oracle, "Latent reward file; enables win rate");

  auto* verify_cmd = app.add_subcommand("verify", "Run a numerical verification suite");
  add_common(verify_cmd, flags);
  verify_cmd->add_option("--check", check, "Which suite")
      ->required()
      ->check(CLI::IsMember({"theorem1", "lemma2", "lemma3", "gradients"}));
  verify_cmd->add_option("--out", out, "Output report")->required();

  auto* export_cmd = app.add_subcommand("export", "Write reward/likelihood histograms as CSV");
  add_common(export_cmd, flags);
  export_cmd->add_option("--ckpt", ckpt, "Policy checkpoint")->required();
  export_cmd->add_option("--ref", ref, "Reference checkpoint or 'uniform'")->required();
  export_cmd->add_option("--data", data, "JSONL triples")->required();
  export_cmd->add_option("--out", out, "Output CSV")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (datagen->parsed()) {
      return cmd_datagen(flags, out, holdout);
    }
    if (train_cmd->parsed()) {
      return cmd_train(flags, data, out, metrics);
    }
    if (eval_cmd->parsed()) {
      return cmd_eval(flags, ckpt, ref, data, report, oracle);
    }
    if (verify_cmd->parsed()) {
      return cmd_verify(flags, check, out);
    }
    return cmd_export(flags, ckpt, ref, data, out);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitVerification;
  }
}

}  // namespace prefopt
