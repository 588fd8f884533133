#include <cmath>

#include <doctest.h>

#include "prefopt/errors.hpp"
#include "prefopt/theory.hpp"
#include "support.hpp"

using namespace prefopt;
using prefopt::testing::random_batch;

namespace {

double total_mass(const std::vector<double>& log_probs) {
  double total = 0.0;
  for (double lp : log_probs) {
    total += std::exp(lp);
  }
  return total;
}

}  // namespace

TEST_CASE("enumerate_space") {
  const auto space = enumerate_space(Vocabulary(3), 3);
  CHECK(space.size() == 3 + 9 + 27);
  CHECK(space.sequences.front() == Sequence{0});
  std::size_t supported = 0;
  for (std::size_t i = 0; i < space.size(); ++i) {
    const auto& y = space.sequences[i];
    bool eos_inside = false;
    for (std::size_t k = 0; k + 1 < y.size(); ++k) {
      eos_inside = eos_inside || y[k] == 2;
    }
    const bool expected = !eos_inside && (y.back() == 2 || y.size() == 3);
    CHECK(space.in_support[i] == expected);
    supported += space.in_support[i] ? 1 : 0;
  }
  CHECK(supported == 1 + 2 + 4 + 8);
  CHECK_THROWS_AS(enumerate_space(Vocabulary(16), 6), ConfigError);
}

TEST_CASE("supported sequences carry all probability mass") {
  Rng rng(1);
  for (int k = 0; k < 10; ++k) {
    const Vocabulary vocab(3 + k % 2);
    const auto p = random_policy(vocab, 1 + k % 2, 1.5, rng);
    const auto space = enumerate_space(vocab, 3);
    const auto lp = sequence_log_probs(space, p, Sequence{0});
    CHECK(total_mass(lp) == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t i = 0; i < space.size(); ++i) {
      if (!space.in_support[i]) {
        CHECK(std::isinf(lp[i]));
      }
    }
  }
}

TEST_CASE("tilted_old_policy endpoints") {
  Rng rng(2);
  const Vocabulary vocab(3);
  const auto p = random_policy(vocab, 1, 1.0, rng);
  const auto q = random_policy(vocab, 1, 1.0, rng);
  const auto space = enumerate_space(vocab, 3);
  const Sequence prompt{0};
  const auto lp = sequence_log_probs(space, p, prompt);
  const auto lq = sequence_log_probs(space, q, prompt);
  const auto t0 = tilted_old_policy(space, p, q, prompt, 0.0);
  const auto t1 = tilted_old_policy(space, p, q, prompt, 1.0);
  const auto same = tilted_old_policy(space, p, p, prompt, 0.37);
  for (std::size_t i = 0; i < space.size(); ++i) {
    if (space.in_support[i]) {
      CHECK(t0[i] == doctest::Approx(lq[i]).epsilon(1e-12));
      CHECK(t1[i] == doctest::Approx(lp[i]).epsilon(1e-12));
      CHECK(same[i] == doctest::Approx(lp[i]).epsilon(1e-12));
    }
  }
  CHECK(total_mass(tilted_old_policy(space, p, q, prompt, 0.5)) ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(tilted_old_policy(space, p, q, prompt, 1.5), InputError);
}

TEST_CASE("importance_weights") {
  const auto unit = importance_weights(-1.0, -1.0, -2.0, -2.0);
  CHECK(unit.w == 1.0);
  CHECK(unit.w_corr == 1.0);
  const auto r = importance_weights(std::log(0.2), std::log(0.1), std::log(0.4), std::log(0.1));
  CHECK(r.w == doctest::Approx(8.0).epsilon(1e-14));
  CHECK(r.w_corr == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("theorem1 across seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const Vocabulary vocab(16);
    const auto p = random_policy(vocab, 1, 1.0, rng);
    const auto data = random_batch(vocab, rng, 50);
    const auto r = verify_theorem1(p, data, 2.0);
    CHECK(r.pass);
    CHECK(r.mixed_length_pairs == 50);
    CHECK(r.equal_length_pairs > 0);
    CHECK(r.equal_length_max_gap < 1e-12);
    CHECK(r.mixed_length_max_gap < 1e-12);
    CHECK(r.ln_equal_length_max_gap < 1e-12);
  }
}

TEST_CASE("lemma2 pair table bookkeeping") {
  Rng rng(3);
  const Vocabulary vocab(3);
  const auto p = random_policy(vocab, 1, 1.0, rng);
  const auto q = random_policy(vocab, 1, 1.0, rng);
  const auto space = enumerate_space(vocab, 2);
  const Sequence prompt{0};
  Lemma2Config cfg;
  cfg.beta = 1.5;
  cfg.gamma = 0.3;
  const auto pairs = lemma2_pairs(space, p, q, prompt, cfg);
  // Supported: 1 + 2 + 4 = 7 sequences, 42 ordered distinct pairs.
  CHECK(pairs.size() == 42);
  double total = 0.0;
  for (const auto& pt : pairs) {
    total += pt.weight;
    const auto& yw = space.sequences[pt.chosen];
    const auto& yl = space.sequences[pt.rejected];
    const double lpw = sequence_log_prob(p, prompt, yw);
    const double lpl = sequence_log_prob(p, prompt, yl);
    const double a = 1.5 * lpw / static_cast<double>(yw.size()) -
                     1.5 * lpl / static_cast<double>(yl.size()) - 0.3;
    const double b = (lpw - sequence_log_prob(q, prompt, yw)) - (lpl - sequence_log_prob(q, prompt, yl));
    CHECK(pt.a == doctest::Approx(a).epsilon(1e-12));
    CHECK(pt.b == doctest::Approx(b).epsilon(1e-12));
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("lemma2 residual vanishes when policy equals reference") {
  Rng rng(4);
  const Vocabulary vocab(3);
  const auto p = random_policy(vocab, 1, 1.0, rng);
  const auto space = enumerate_space(vocab, 3);
  const Sequence prompt{0};
  const auto pairs = lemma2_pairs(space, p, p, prompt, Lemma2Config{});
  for (double alpha : {0.2, 0.01}) {
    const auto l = lemma2_losses(space, p, p, prompt, pairs, alpha);
    CHECK(std::abs(l.l2 - l.l1) < 1e-12);
    CHECK(std::abs(l.linear) < 1e-12);
  }
}

TEST_CASE("lemma2 residual is second order") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Vocabulary vocab(3);
    const auto p = random_policy(vocab, 1, 1.0, rng);
    const auto q = random_policy(vocab, 1, 1.0, rng);
    const auto r = verify_lemma2(p, q, Sequence{0}, 3, Lemma2Config{});
    CHECK(r.order_pass);
    CHECK(r.order_estimate > 1.8);
    CHECK(r.residuals.size() == r.alphas.size());
  }
}

TEST_CASE("lemma2 configuration errors") {
  Rng rng(5);
  const auto p = random_policy(Vocabulary(5), 1, 1.0, rng);
  CHECK_THROWS_AS(verify_lemma2(p, p, Sequence{0}, 3, Lemma2Config{}), ConfigError);
  const auto small = random_policy(Vocabulary(3), 1, 1.0, rng);
  CHECK_THROWS_AS(verify_lemma2(small, small, Sequence{0}, 4, Lemma2Config{}), ConfigError);
  Lemma2Config increasing;
  increasing.alphas = {0.05, 0.1};
  CHECK_THROWS_AS(verify_lemma2(small, small, Sequence{0}, 2, increasing), ConfigError);
  Lemma2Config big;
  big.alphas = {0.5};
  CHECK_THROWS_AS(verify_lemma2(small, small, Sequence{0}, 2, big), ConfigError);
}

TEST_CASE("lemma3") {
  Rng rng(6);
  const Vocabulary vocab(16);
  const auto p = random_policy(vocab, 1, 1.0, rng);
  const auto q = random_policy(vocab, 1, 1.0, rng);
  const auto triples = random_batch(vocab, rng, 100);
  const auto r = verify_lemma3(p, q, triples, 2.0);
  CHECK(r.pass);
  CHECK(r.onehot_max_gap < 1e-12);
  CHECK(r.onehot_max_collapse_error < 1e-12);
  CHECK(r.same_policy_max_gap < 1e-12);
  CHECK(r.general_max_abs_gap > 0.0);
}

TEST_CASE("pearson_correlation") {
  const std::vector<double> x{1, 2, 3, 4};
  const std::vector<double> y{2, 4, 6, 8};
  const std::vector<double> z{4, 3, 2, 1};
  CHECK(pearson_correlation(x, y) == doctest::Approx(1.0));
  CHECK(pearson_correlation(x, z) == doctest::Approx(-1.0));
  const std::vector<double> flat{1, 1, 1, 1};
  CHECK(pearson_correlation(x, flat) == 0.0);
}

TEST_CASE("reports are key=value text") {
  Rng rng(7);
  const Vocabulary vocab(5);
  const auto p = random_policy(vocab, 1, 1.0, rng);
  const auto r = verify_theorem1(p, random_batch(vocab, rng, 5), 1.0);
  const auto text = to_report(r);
  CHECK(text.find("pass=") != std::string::npos);
}
