// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
// Exit status is nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "prefopt/cli.hpp"
#include "prefopt/config.hpp"
#include "prefopt/evaluation.hpp"
#include "prefopt/io.hpp"
#include "prefopt/kl_analysis.hpp"
#include "prefopt/sft.hpp"
#include "prefopt/theory.hpp"
#include "prefopt/trainer.hpp"
#include "support.hpp"

using namespace prefopt;
using prefopt::testing::random_batch;
using prefopt::testing::TempDir;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double time_limit;  // seconds; 0 means no limit
  std::function<Outcome()> body;
};

std::vector<PreferenceTriple> equal_length_batch(const Vocabulary& vocab, Rng& rng, int n) {
  std::vector<PreferenceTriple> out;
  for (int i = 0; i < n; ++i) {
    const int len = std::uniform_int_distribution<int>(1, 3)(rng);
    out.push_back(random_triple(vocab, rng, 1, 2, len, len));
  }
  return out;
}

Outcome theorem1() {
  const Vocabulary vocab(16);
  Rng rng(0);
  double eq_gap = 0.0;
  double mixed_gap = 0.0;
  std::size_t mixed = 0;
  for (int p = 0; p < 20; ++p) {
    const auto policy = random_policy(vocab, 1, 1.0, rng);
    auto data = equal_length_batch(vocab, rng, 50);
    const auto extra = random_batch(vocab, rng, 50);
    data.insert(data.end(), extra.begin(), extra.end());
    const auto r = verify_theorem1(policy, data, 2.0);
    eq_gap = std::max({eq_gap, r.equal_length_max_gap, r.ln_equal_length_max_gap});
    mixed_gap = std::max(mixed_gap, r.mixed_length_max_gap);
    mixed += r.mixed_length_pairs;
  }
  return {eq_gap < 1e-12 && mixed_gap < 1e-12 && mixed > 0,
          fmt::format("equal-length gap {:.2e}, mixed-length gap {:.2e} over {} pairs", eq_gap,
                      mixed_gap, mixed)};
}

Outcome alpha_zero() {
  Rng rng(1);
  const Vocabulary vocab(8);
  double worst = 0.0;
  for (int b = 0; b < 100; ++b) {
    const auto p = random_policy(vocab, 2, 1.0, rng);
    const auto q = random_policy(vocab, 2, 1.0, rng);
    const auto ref = ReferenceModel::of(q);
    const auto batch = random_batch(vocab, rng, 16);
    LossConfig cfg;
    cfg.alpha = 0.0;
    ad::Tape tape;
    PolicyGraph graph(tape, p);
    const auto a = alpha_dpo_loss(graph, batch, ref, cfg);
    cfg.method = Method::kSimPO;
    const auto s = baseline_loss(Method::kSimPO, graph, batch, nullptr, cfg);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      worst = std::max(worst, std::abs(a.per_example[i].loss - s.per_example[i].loss));
    }
    worst = std::max(worst, std::abs(a.value.value() - s.value.value()));
  }
  return {worst < 1e-12, fmt::format("max elementwise difference {:.2e}", worst)};
}

Outcome stop_gradient() {
  Rng rng(2);
  const Vocabulary vocab(6);
  double worst = 0.0;
  for (int b = 0; b < 50; ++b) {
    const auto p = random_policy(vocab, 2, 1.0, rng);
    const auto q = random_policy(vocab, 2, 1.0, rng);
    const auto ref = ReferenceModel::of(q);
    const auto batch = random_batch(vocab, rng, 8);
    const LossConfig cfg;

    ad::Tape tape;
    PolicyGraph graph(tape, p);
    const auto loss = alpha_dpo_loss(graph, batch, ref, cfg);
    const auto grads = tape.backward(loss.value).to_dense(p.parameter_count());

    ad::Tape literal_tape;
    PolicyGraph literal_graph(literal_tape, p);
    std::vector<ad::Var> terms;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double bracket = cfg.gamma + cfg.alpha * loss.per_example[i].normalized_margin;
      const auto u = pairwise_reward_diff(literal_graph, batch[i], cfg.beta, cfg.length_normalized);
      terms.push_back(-ad::log_sigmoid(u - bracket));
    }
    const auto literal =
        literal_tape.backward(ad::mean(terms)).to_dense(p.parameter_count());
    for (std::size_t k = 0; k < grads.size(); ++k) {
      worst = std::max(worst, std::abs(grads[k] - literal[k]));
    }
  }
  return {worst < 1e-12, fmt::format("max abs gradient difference {:.2e}", worst)};
}

Outcome gradients() {
  GradientCheckConfig g;
  g.batch_size = 8;
  g.step = 1e-4;
  g.tolerance = 1e-5;
  const auto rows = verify_gradients(g);
  bool pass = rows.size() == std::size(kAllMethods);
  double worst = 0.0;
  std::string failed;
  for (const auto& r : rows) {
    pass = pass && r.pass;
    worst = std::max(worst, r.max_rel_error);
    if (!r.pass) {
      failed += fmt::format(" {}", method_name(r.method));
    }
  }
  return {pass, fmt::format("{} objectives, max relative error {:.2e}{}", rows.size(), worst,
                            failed.empty() ? "" : "; failed:" + failed)};
}

Outcome zscore_contract() {
  Rng rng(3);
  const Vocabulary vocab(6);
  double worst_mean = 0.0;
  double worst_std = 0.0;
  bool degenerate_ok = true;
  for (int b = 0; b < 100; ++b) {
    const auto p = random_policy(vocab, 2, 1.0, rng);
    const auto q = random_policy(vocab, 2, 1.0, rng);
    const auto ref = ReferenceModel::of(q);
    const auto batch = random_batch(vocab, rng, 2 + b % 30);
    ad::Tape tape;
    PolicyGraph graph(tape, p);
    const auto loss = alpha_dpo_loss(graph, batch, ref, LossConfig{});
    double mean = 0.0;
    for (const auto& e : loss.per_example) {
      mean += e.normalized_margin;
    }
    mean /= static_cast<double>(batch.size());
    double var = 0.0;
    for (const auto& e : loss.per_example) {
      var += (e.normalized_margin - mean) * (e.normalized_margin - mean);
    }
    worst_mean = std::max(worst_mean, std::abs(mean));
    worst_std = std::max(worst_std, std::abs(std::sqrt(var / batch.size()) - 1.0));

    const auto same = ReferenceModel::of(p);
    ad::Tape flat_tape;
    PolicyGraph flat_graph(flat_tape, p);
    for (const auto& e : alpha_dpo_loss(flat_graph, batch, same, LossConfig{}).per_example) {
      degenerate_ok = degenerate_ok && e.normalized_margin == 0.0;
    }
  }
  const bool pass = worst_mean < 1e-9 && worst_std < 1e-9 && degenerate_ok;
  return {pass, fmt::format("max |mean| {:.2e}, max |std - 1| {:.2e}, degenerate batches zero: {}",
                            worst_mean, worst_std, degenerate_ok)};
}

Outcome lemma2() {
  const VerifyConfig v;
  const Vocabulary vocab(static_cast<std::size_t>(v.lemma2_vocab));
  int order_ok = 0;
  int limit_ok = 0;
  double worst_ratio = 0.0;
  double worst_limit = 0.0;
  for (int s = 0; s < v.lemma2_seeds; ++s) {
    Rng rng(v.seed + static_cast<std::uint64_t>(s));
    const auto policy = random_policy(vocab, 1, v.logit_scale, rng);
    const auto reference = random_policy(vocab, 1, v.logit_scale, rng);
    const auto r = verify_lemma2(policy, reference, Sequence{0}, v.lemma2_max_len, v.lemma2);
    order_ok += r.order_pass ? 1 : 0;
    limit_ok += r.limit_pass ? 1 : 0;
    for (double ratio : r.ratios) {
      worst_ratio = std::max(worst_ratio, ratio);
    }
    worst_limit = std::max(worst_limit, r.limit_gap);
  }
  const bool pass = order_ok == v.lemma2_seeds && limit_ok == v.lemma2_seeds;
  return {pass, fmt::format("order check {}/{} seeds (worst ratio {:.3f}); |L2 - L1| < 1e-6 at "
                            "alpha=1e-4 on {}/{} seeds (worst gap {:.2e})",
                            order_ok, v.lemma2_seeds, worst_ratio, limit_ok, v.lemma2_seeds,
                            worst_limit)};
}

Outcome lemma3() {
  Rng rng(4);
  const Vocabulary vocab(5);
  const auto policy = random_policy(vocab, 2, 1.0, rng);
  const auto reference = random_policy(vocab, 2, 1.0, rng);
  const auto triples = random_batch(vocab, rng, 100);
  const auto r = verify_lemma3(policy, reference, triples, 2.0);
  return {r.onehot_max_gap < 1e-12 && r.onehot_max_collapse_error < 1e-12,
          fmt::format("one-hot |delta - M| {:.2e}, collapse error {:.2e}; general mean |gap| "
                      "{:.3f}, corr {:.3f} (reported)",
                      r.onehot_max_gap, r.onehot_max_collapse_error, r.general_mean_abs_gap,
                      r.general_correlation)};
}

Outcome seq_kl_sanity() {
  Rng rng(5);
  double most_negative = 0.0;
  double worst_self = 0.0;
  for (int c = 0; c < 200; ++c) {
    const Vocabulary vocab(3 + c % 6);
    const auto p = random_policy(vocab, 1 + c % 2, 2.0, rng);
    const auto q = random_policy(vocab, 1 + c % 2, 2.0, rng);
    const auto t = random_triple(vocab, rng, 1, 2, 1, 5);
    most_negative = std::min(most_negative, seq_kl(t.prompt, t.chosen, q, p).exact);
    worst_self = std::max(worst_self, std::abs(seq_kl(t.prompt, t.chosen, p, p).exact));
  }
  return {most_negative > -1e-12 && worst_self < 1e-12,
          fmt::format("min SeqKL {:.2e}, max |SeqKL(p, p)| {:.2e}", most_negative, worst_self)};
}

// Pilot experiment shared by criteria 9 and 11.
struct PilotRun {
  double baseline = 0.0;
  double alpha_dpo = 0.0;
  double simpo = 0.0;
  MetricsLog alpha_metrics;
  MetricsLog simpo_metrics;
};

PilotRun& pilot() {
  static PilotRun run = [] {
    const auto config =
        load_config(std::filesystem::path(PREFOPT_SOURCE_DIR) / "configs" / "pilot.cfg");
    Rng rng(config.train.seed);
    const Dataset all = generate_synthetic(config.data, rng);
    const auto [train_part, held] = split(all, config.holdout_fraction, rng);
    const Policy ref_policy = fit_reference(train_part.triples, config.sft);
    const auto ref = ReferenceModel::of(ref_policy);
    const auto& loss = config.train.loss;

    PilotRun out;
    const Policy untrained(Vocabulary(config.train.vocab_size), config.train.order);
    out.baseline = preference_accuracy(untrained, &ref, held, loss.method, loss.beta);

    const auto a = train(config.train, train_part, &ref);
    out.alpha_dpo = preference_accuracy(a.policy, &ref, held, loss.method, loss.beta);
    out.alpha_metrics = a.metrics;

    TrainConfig simpo_cfg = config.train;
    simpo_cfg.loss.method = Method::kSimPO;
    simpo_cfg.loss.gamma = loss.gamma;
    const auto s = train(simpo_cfg, train_part, &ref);
    out.simpo = preference_accuracy(s.policy, &ref, held, Method::kSimPO, loss.beta);
    out.simpo_metrics = s.metrics;
    return out;
  }();
  return run;
}

Outcome end_to_end() {
  const auto& r = pilot();
  const bool lift = r.alpha_dpo >= r.baseline + 0.2;
  const bool versus = r.alpha_dpo >= r.simpo - 0.02;
  return {lift && versus,
          fmt::format("held-out accuracy alpha-DPO {:.4f}, SimPO {:.4f}, untrained {:.4f}; "
                      "lift >= 0.2: {}; >= SimPO - 0.02: {}",
                      r.alpha_dpo, r.simpo, r.baseline, lift, versus)};
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int quiet_run(const std::vector<std::string>& args) {
  std::ostringstream sink;
  auto* old_out = std::cout.rdbuf(sink.rdbuf());
  auto* old_err = std::cerr.rdbuf(sink.rdbuf());
  const int code = run(args);
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  return code;
}

Outcome reproducibility() {
  TempDir dir("acceptance-repro");
  std::vector<std::string> files;
  for (const std::string tag : {"a", "b"}) {
    const auto p = [&](const std::string& name) { return (dir / (tag + "-" + name)).string(); };
    quiet_run({"datagen", "--seed", "11", "--out", p("train.jsonl"), "--holdout",
               p("held.jsonl"), "--set", "data.count=400"});
    quiet_run({"train", "--seed", "11", "--data", p("train.jsonl"), "--out", p("policy.bin"),
               "--metrics", p("metrics.csv"), "--set", "reference_path=sft", "--set",
               "epochs=2", "--set", "checkpoint_every=5"});
    for (const std::string check : {"theorem1", "lemma2", "lemma3", "gradients"}) {
      quiet_run({"verify", "--seed", "11", "--check", check, "--out", p(check + ".txt")});
    }
  }
  std::size_t compared = 0;
  std::string differing;
  for (const auto& entry : std::filesystem::directory_iterator(dir.path())) {
    const auto name = entry.path().filename().string();
    if (name.rfind("a-", 0) != 0) {
      continue;
    }
    const auto twin = dir / ("b-" + name.substr(2));
    ++compared;
    if (!std::filesystem::exists(twin) || slurp(entry.path()) != slurp(twin)) {
      differing += " " + name.substr(2);
    }
  }
  const bool pass = compared >= 12 && differing.empty();
  return {pass, fmt::format("{} output files compared{}", compared,
                            differing.empty() ? ", all identical" : "; differ:" + differing)};
}

Outcome kl_sanity() {
  const auto& r = pilot();
  double most_negative = std::numeric_limits<double>::infinity();
  for (const auto* log : {&r.alpha_metrics, &r.simpo_metrics}) {
    for (const auto& row : log->rows) {
      most_negative = std::min({most_negative, row.kl_chosen, row.kl_rejected});
    }
  }
  std::string csv = "method,step,kl_chosen,kl_rejected\n";
  for (const auto& [name, log] :
       {std::pair{"alpha_dpo", &r.alpha_metrics}, std::pair{"simpo", &r.simpo_metrics}}) {
    for (const auto& row : log->rows) {
      csv += fmt::format("{},{},{},{}\n", name, row.step, row.kl_chosen, row.kl_rejected);
    }
  }
  const std::filesystem::path out = "kl_curves.csv";
  io::write_file_atomic(out, csv);
  const auto& a = r.alpha_metrics.rows.back();
  const auto& s = r.simpo_metrics.rows.back();
  return {most_negative >= 0.0 && !r.alpha_metrics.rows.empty(),
          fmt::format("min logged KL {:.2e}; final kl_rejected alpha-DPO {:.3f} vs SimPO {:.3f} "
                      "(reported); curves in {}",
                      most_negative, a.kl_rejected, s.kl_rejected,
                      std::filesystem::absolute(out).string())};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "DPO with uniform reference matches SimPO without LN", 1.0, theorem1},
      {2, "alpha = 0 reduces alpha-DPO to SimPO", 1.0, alpha_zero},
      {3, "stop-gradient bracket behaves as a constant", 0.0, stop_gradient},
      {4, "finite-difference gradients of all nine objectives", 10.0, gradients},
      {5, "z-score contract", 0.0, zscore_contract},
      {6, "alpha-DPO approximates the online SimPO loss", 30.0, lemma2},
      {7, "TDPO margin equals M under one-hot references", 0.0, lemma3},
      {8, "SeqKL nonnegativity and identity", 0.0, seq_kl_sanity},
      {9, "end-to-end desk experiment", 120.0, end_to_end},
      {10, "byte-identical reruns", 0.0, reproducibility},
      {11, "KL metric sanity and curve export", 0.0, kl_sanity},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.body();
    } catch (const std::exception& e) {
      o = {false, fmt::format("exception: {}", e.what())};
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.time_limit > 0.0 && seconds > c.time_limit) {
      o.pass = false;
      o.detail += fmt::format("; exceeded {:.0f} s limit", c.time_limit);
    }
    failures += o.pass ? 0 : 1;
    std::cout << fmt::format("criterion {:>2} {}: {} ({:.2f} s) {}\n", c.id,
                             o.pass ? "PASS" : "FAIL", c.name, seconds, o.detail)
              << std::flush;
  }
  std::cout << fmt::format("{} of {} criteria passed\n", criteria.size() - failures,
                           criteria.size());
  return failures == 0 ? 0 : 1;
}
