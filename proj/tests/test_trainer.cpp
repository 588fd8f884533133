#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <doctest.h>

#include "prefopt/config.hpp"
#include "prefopt/errors.hpp"
#include "prefopt/sft.hpp"
#include "prefopt/trainer.hpp"
#include "support.hpp"

using namespace prefopt;
using prefopt::testing::TempDir;

namespace {

struct Task {
  Dataset train;
  Dataset heldout;
  Policy reference;
};

Task make_task(const ExperimentConfig& config) {
  Rng rng(config.train.seed);
  const Dataset all = generate_synthetic(config.data, rng);
  auto [train_part, held] = split(all, config.holdout_fraction, rng);
  Policy reference = fit_reference(train_part.triples, config.sft);
  return {std::move(train_part), std::move(held), std::move(reference)};
}

double mean_of(const std::vector<MetricsRow>& rows, std::size_t begin, std::size_t end,
               double MetricsRow::*field) {
  double total = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    total += rows[i].*field;
  }
  return total / static_cast<double>(end - begin);
}

}  // namespace

TEST_CASE("lr_at schedule") {
  CHECK(lr_at(1, 100, 1e-3, 0.1) == doctest::Approx(1e-4).epsilon(1e-14));
  CHECK(lr_at(10, 100, 1e-3, 0.1) == doctest::Approx(1e-3).epsilon(1e-14));
  CHECK(lr_at(55, 100, 1e-3, 0.1) == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK(std::abs(lr_at(100, 100, 1e-3, 0.1)) < 1e-18);
  CHECK(lr_at(5, 100, 1e-3, 0.1) == doctest::Approx(5e-4).epsilon(1e-14));
  CHECK(lr_at(0, 100, 1e-3, 0.1) == 0.0);
  CHECK(lr_at(0, 10, 1e-3, 0.0) == doctest::Approx(1e-3).epsilon(1e-14));
  double previous = 1.0;
  for (long s = 10; s <= 100; ++s) {
    const double lr = lr_at(s, 100, 1e-3, 0.1);
    CHECK(lr <= previous);
    previous = lr;
  }
  CHECK_THROWS_AS(lr_at(-1, 100, 1e-3, 0.1), InputError);
  CHECK_THROWS_AS(lr_at(101, 100, 1e-3, 0.1), InputError);
}

TEST_CASE("adam_step") {
  std::vector<double> params{0.0, 1.0};
  const std::vector<double> grads{1.0, -2.0};
  AdamState state;
  adam_step(params, grads, state, AdamHyper{}, 0.1);
  CHECK(params[0] == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(params[1] == doctest::Approx(1.1).epsilon(1e-6));
  CHECK(state.step == 1);

  std::vector<double> still{0.5, -0.5};
  AdamState fresh;
  adam_step(still, std::vector<double>{0.0, 0.0}, fresh, AdamHyper{}, 0.1);
  CHECK(still == std::vector<double>{0.5, -0.5});

  const std::vector<double> bad{std::nan(""), 0.0};
  CHECK_THROWS_AS(adam_step(params, bad, state, AdamHyper{}, 0.1), NumericError);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.batch_size = 10;
  CHECK_NOTHROW(cfg.validate(10));
  CHECK_THROWS_AS(cfg.validate(9), ConfigError);
  cfg.warmup_fraction = 1.0;
  CHECK_THROWS_AS(cfg.validate(100), ConfigError);
}

TEST_CASE("training edge cases") {
  ExperimentConfig config;
  config.data.count = 100;
  Rng rng(0);
  const Dataset data = generate_synthetic(config.data, rng);
  TrainConfig cfg;
  cfg.loss.method = Method::kSimPO;
  cfg.batch_size = 16;

  cfg.epochs = 0;
  const auto none = train(cfg, data, nullptr);
  CHECK(none.policy == Policy(Vocabulary(8), 2));
  CHECK(none.metrics.rows.empty());

  cfg.epochs = 1;
  cfg.batch_size = 101;
  CHECK_THROWS_AS(train(cfg, data, nullptr), ConfigError);

  cfg.batch_size = 16;
  cfg.loss.method = Method::kDPO;
  CHECK_THROWS_AS(train(cfg, data, nullptr), ConfigError);
}

TEST_CASE("training is deterministic and writes metrics") {
  ExperimentConfig config;
  config.data.count = 200;
  const auto task = make_task(config);
  const auto ref = ReferenceModel::of(task.reference);
  TempDir dir("trainer");
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.epochs = 2;
  cfg.metrics_path = (dir / "metrics.csv").string();
  cfg.checkpoint_every = 5;
  cfg.checkpoint_path = (dir / "policy.bin").string();
  const auto a = train(cfg, task.train, &ref);
  const auto b = train(cfg, task.train, &ref);
  CHECK(a.policy == b.policy);
  CHECK(a.metrics.to_csv() == b.metrics.to_csv());

  const std::size_t steps_per_epoch = (task.train.size() + 31) / 32;
  CHECK(a.metrics.rows.size() == 2 * steps_per_epoch);
  std::ifstream in(cfg.metrics_path);
  std::string header;
  std::getline(in, header);
  CHECK(header == MetricsLog::kHeader);
  CHECK(std::filesystem::exists(dir / "policy.bin.step5"));
  CHECK(load_checkpoint(dir / "policy.bin.step5").vocab().size() == 8);

  for (const auto& row : a.metrics.rows) {
    CHECK(row.kl_chosen >= 0.0);
    CHECK(row.kl_rejected >= 0.0);
    CHECK(row.train_acc >= 0.0);
    CHECK(row.train_acc <= 1.0);
  }
}

TEST_CASE("pilot task training accuracy") {
  auto config = load_config(std::filesystem::path(PREFOPT_SOURCE_DIR) / "configs/pilot.cfg");
  const auto task = make_task(config);
  const auto ref = ReferenceModel::of(task.reference);
  TrainConfig cfg;  // trainer defaults, pilot loss settings
  cfg.loss = config.train.loss;
  cfg.seed = config.train.seed;
  const auto result = train(cfg, task.train, &ref);
  const auto& rows = result.metrics.rows;
  const std::size_t tail = std::max<std::size_t>(1, rows.size() / 10);
  const double acc = mean_of(rows, rows.size() - tail, rows.size(), &MetricsRow::train_acc);
  MESSAGE("last-10% train_acc = " << acc);
  CHECK(acc >= 0.8);
}

// Mean batch loss over the last 10% of steps against the first 10%.
TEST_CASE("smoke: batch-window loss drops for every method") {
  ExperimentConfig config;
  const auto task = make_task(config);
  const auto ref = ReferenceModel::of(task.reference);
  for (Method m : kAllMethods) {
    TrainConfig cfg;
    cfg.loss.method = m;
    const auto result = train(cfg, task.train, &ref);
    const auto& rows = result.metrics.rows;
    const std::size_t tail = std::max<std::size_t>(1, rows.size() / 10);
    const double first = mean_of(rows, 0, tail, &MetricsRow::loss);
    const double last = mean_of(rows, rows.size() - tail, rows.size(), &MetricsRow::loss);
    CHECK_MESSAGE(last < first, method_name(m), ": ", first, " -> ", last);
  }
}

TEST_CASE("full-dataset loss drops for every method") {
  ExperimentConfig config;
  const auto task = make_task(config);
  const auto ref = ReferenceModel::of(task.reference);
  const Policy start(Vocabulary(config.train.vocab_size), config.train.order);
  for (Method m : kAllMethods) {
    TrainConfig cfg;
    cfg.loss.method = m;
    const auto result = train(cfg, task.train, &ref);
    auto full = [&](const Policy& p) {
      ad::Tape tape;
      PolicyGraph graph(tape, p);
      return batch_loss(graph, task.train.triples, &ref, cfg.loss).value.value();
    };
    const double before = full(start);
    const double after = full(result.policy);
    CHECK_MESSAGE(after < before, method_name(m), ": ", before, " -> ", after);
  }
}
