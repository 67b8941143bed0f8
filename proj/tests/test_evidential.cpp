#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "evident/error.hpp"
#include "evident/evidential.hpp"
#include "evident/rng.hpp"

using namespace evident;
using namespace evident::evidential;

namespace {

constexpr double kEulerGamma = 0.57721566490153286061;

// Independent digamma: derivative of lgamma by Richardson-extrapolated
// central differences.
double digamma_oracle(double x) {
  auto d = [x](double h) { return (std::lgamma(x + h) - std::lgamma(x - h)) / (2.0 * h); };
  const double h = 1e-3 * std::min(1.0, x);
  return (4.0 * d(h / 2.0) - d(h)) / 3.0;
}

// KL[Beta(a, b) || Uniform] = integral of f log f over (0, 1), composite
// Simpson on a fine grid.
double kl_beta_oracle(double a, double b) {
  const double log_norm = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
  auto f_log_f = [&](double p) {
    // Endpoint limits: f log f -> 0 unless the exponent there vanishes.
    if (p <= 0.0) return a == 1.0 ? std::exp(log_norm) * log_norm : 0.0;
    if (p >= 1.0) return b == 1.0 ? std::exp(log_norm) * log_norm : 0.0;
    const double log_f = log_norm + (a - 1.0) * std::log(p) + (b - 1.0) * std::log1p(-p);
    return std::exp(log_f) * log_f;
  };
  const int n = 200000;
  const double h = 1.0 / n;
  double s = f_log_f(0.0) + f_log_f(1.0);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f_log_f(i * h);
  return s * h / 3.0;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

}  // namespace

TEST_CASE("opinion from zero evidence is uniform") {
  const std::vector<double> e{0, 0};
  const auto op = evidence_to_opinion(e);
  CHECK(op.belief[0] == 0.0);
  CHECK(op.belief[1] == 0.0);
  CHECK(op.uncertainty == 1.0);
  CHECK(op.expected_prob[0] == 0.5);
  CHECK(op.expected_prob[1] == 0.5);
}

TEST_CASE("opinion hand values") {
  const std::vector<double> e1{2, 2};
  const auto a = evidence_to_opinion(e1);
  CHECK(a.strength == 6.0);
  CHECK(a.belief[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(a.uncertainty == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const std::vector<double> e2{18, 0};
  const auto b = evidence_to_opinion(e2);
  CHECK(b.strength == 20.0);
  CHECK(b.belief[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(b.belief[1] == 0.0);
  CHECK(b.uncertainty == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(b.expected_prob[0] == doctest::Approx(0.95).epsilon(1e-15));
  CHECK(b.expected_prob[1] == doctest::Approx(0.05).epsilon(1e-15));
}

TEST_CASE("negative evidence is rejected") {
  const std::vector<double> e{1.0, -1e-9};
  CHECK_THROWS_AS(evidence_to_opinion(e), DomainError);
  const std::vector<double> one{1.0};
  CHECK_THROWS_AS(evidence_to_opinion(one), DomainError);
}

TEST_CASE("belief plus uncertainty sums to one and u falls with evidence") {
  Rng rng(7);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t k = 2 + rng.index(4);
    std::vector<double> e(k);
    for (auto& v : e) v = rng.uniform(0.0, 50.0);
    const auto op = evidence_to_opinion(e);
    double total = op.uncertainty, p = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      total += op.belief[j];
      p += op.expected_prob[j];
      CHECK(op.alpha[j] >= 1.0);
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
    CHECK(std::abs(p - 1.0) < 1e-9);
    CHECK(op.uncertainty > 0.0);
    CHECK(op.uncertainty <= 1.0);
    auto bumped = e;
    bumped[rng.index(k)] += rng.uniform(1e-3, 5.0);
    CHECK(evidence_to_opinion(bumped).uncertainty < op.uncertainty);
  }
}

TEST_CASE("digamma reference values") {
  CHECK(std::abs(digamma(1.0) + kEulerGamma) < 1e-12);
  CHECK(std::abs(digamma(2.0) - (1.0 - kEulerGamma)) < 1e-12);
  CHECK(std::abs(digamma(0.5) - (-kEulerGamma - 2.0 * std::numbers::ln2)) < 1e-12);
  CHECK(std::abs((digamma(10.0) - digamma(9.0)) - 1.0 / 9.0) < 1e-12);
  for (double x : {0.5, 1.0, 2.0, 10.0, 100.0}) {
    CHECK(std::abs(digamma(x + 1.0) - digamma(x) - 1.0 / x) < 1e-9);
  }
  for (double x : {1.0, 1.5, 3.7, 11.9, 12.1, 40.0, 1234.5}) {
    CHECK(std::abs(digamma(x) - digamma_oracle(x)) < 1e-8);
  }
  CHECK_THROWS_AS(digamma(0.0), DomainError);
  CHECK_THROWS_AS(digamma(-1.0), DomainError);
}

TEST_CASE("trigamma is the derivative of digamma") {
  CHECK(std::abs(trigamma(1.0) - std::numbers::pi * std::numbers::pi / 6.0) < 1e-12);
  for (double x : {1.0, 2.5, 11.5, 30.0}) {
    const double h = 1e-4;
    const double fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
    CHECK(std::abs(trigamma(x) - fd) < 1e-7);
  }
}

TEST_CASE("evidential focal loss hand values") {
  const ClassWeights beta = ClassWeights::uniform(2);
  const std::vector<double> e{0, 0};
  const auto op = evidence_to_opinion(e);
  const std::vector<double> y1{0, 1}, y0{1, 0};
  CHECK(std::abs(evidential_focal_loss(op, y1, beta) - 0.5) < 1e-12);
  CHECK(std::abs(evidential_focal_loss(op, y0, beta) - 0.5) < 1e-12);

  const std::vector<double> big{1e6, 0};
  CHECK(evidential_focal_loss(evidence_to_opinion(big), y0, beta) < 1e-4);
}

TEST_CASE("evidential focal loss errors") {
  const ClassWeights beta = ClassWeights::uniform(2);
  const std::vector<double> e{1, 2};
  const auto op = evidence_to_opinion(e);
  const std::vector<double> not_hot{0.5, 0.5}, two_hot{1, 1}, wrong_len{0, 1, 0};
  CHECK_THROWS_AS(evidential_focal_loss(op, not_hot, beta), DomainError);
  CHECK_THROWS_AS(evidential_focal_loss(op, two_hot, beta), DomainError);
  CHECK_THROWS_AS(evidential_focal_loss(op, wrong_len, beta), DomainError);
  CHECK_THROWS_AS(evidential_focal_loss(op, std::vector<double>{1, 0}, ClassWeights::uniform(3)), DomainError);
  CHECK_THROWS_AS(ClassWeights({0.25, 0.0}), DomainError);
  CHECK_THROWS_AS(FocusingParameter{1.0}.validate(), DomainError);
  CHECK_NOTHROW(FocusingParameter{}.validate());
}

TEST_CASE("evidential focal loss is non-negative and weighted per class") {
  Rng rng(11);
  const ClassWeights beta({0.25, 0.75});
  for (int t = 0; t < 1000; ++t) {
    const std::vector<double> e{rng.uniform(0, 30), rng.uniform(0, 30)};
    const auto y = one_hot(static_cast<int>(rng.index(2)), 2);
    const auto op = evidence_to_opinion(e);
    const double l = evidential_focal_loss(op, y, beta);
    CHECK(l >= 0.0);
    // Oracle: direct evaluation of the closed form.
    double o = 0.0;
    for (int j = 0; j < 2; ++j) {
      const double g = y[j] - op.alpha[j] / op.strength;
      o += beta[j] * g * g * (digamma(op.strength) - digamma(op.alpha[j]));
    }
    CHECK(std::abs(l - o) < 1e-12);
  }
}

TEST_CASE("focal loss decreases as the correct-class share grows at fixed strength") {
  const ClassWeights beta = ClassWeights::uniform(2);
  const std::vector<double> y{1, 0};
  const double total = 20.0;
  double prev = 1e300;
  for (int i = 0; i <= 50; ++i) {
    const double share = static_cast<double>(i) / 50.0;
    const std::vector<double> e{share * total, (1.0 - share) * total};
    const double l = evidential_focal_loss(evidence_to_opinion(e), y, beta);
    CHECK(l < prev);
    prev = l;
  }
}

TEST_CASE("KL to the uniform Dirichlet") {
  const std::vector<double> ones{1, 1};
  CHECK(kl_to_uniform_dirichlet(ones) == 0.0);
  const std::vector<double> a21{2, 1};
  CHECK(std::abs(kl_to_uniform_dirichlet(a21) - (std::numbers::ln2 - 0.5)) < 1e-9);
  CHECK(std::abs(kl_beta_oracle(2, 1) - (std::numbers::ln2 - 0.5)) < 1e-8);

  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const double a = rng.uniform(1.0, 6.0), b = rng.uniform(1.0, 6.0);
    const std::vector<double> ab{a, b};
    CHECK(std::abs(kl_to_uniform_dirichlet(ab) - kl_beta_oracle(a, b)) < 1e-6);
  }

  double prev = -1.0;
  for (int n = 1; n <= 100; ++n) {
    const std::vector<double> an{static_cast<double>(n), 1.0};
    const double kl = kl_to_uniform_dirichlet(an);
    if (n == 1) {
      CHECK(kl == 0.0);
    } else {
      CHECK(kl > prev);
    }
    prev = kl;
  }
  const std::vector<double> bad{0.5, 1.0};
  CHECK_THROWS_AS(kl_to_uniform_dirichlet(bad), DomainError);
}

TEST_CASE("KL vanishes only at the one-vector") {
  Rng rng(5);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> a{1.0 + rng.uniform(0, 3), 1.0 + rng.uniform(0, 3), 1.0};
    if (rng.index(2)) a[0] = 1.0;
    const bool at_one = a[0] == 1.0 && a[1] == 1.0;
    if (at_one) {
      CHECK(kl_to_uniform_dirichlet(a) == 0.0);
    } else {
      CHECK(kl_to_uniform_dirichlet(a) > 0.0);
    }
  }
}

TEST_CASE("adjusted alpha removes correct-class evidence") {
  const std::vector<double> alpha{5, 3};
  const std::vector<double> y{1, 0};
  const auto adj = adjusted_alpha(alpha, y);
  CHECK(adj[0] == 1.0);
  CHECK(adj[1] == 3.0);
}

TEST_CASE("annealing schedule") {
  CHECK(AnnealingSchedule{0, 10}.weight() == 0.0);
  CHECK(AnnealingSchedule{5, 10}.weight() == 0.5);
  CHECK(AnnealingSchedule{10, 10}.weight() == 1.0);
  CHECK(AnnealingSchedule{20, 10}.weight() == 1.0);
  double prev = 0.0;
  for (int t = 0; t < 30; ++t) {
    const double w = AnnealingSchedule{t, 10}.weight();
    CHECK(w >= prev);
    CHECK(w <= 1.0);
    prev = w;
  }
}

TEST_CASE("total loss combines terms with the annealing weight") {
  const ClassWeights beta = ClassWeights::uniform(2);
  const std::vector<EvidentialSample> batch{{{3.0, 1.0}, {0, 1}}, {{0.0, 4.0}, {0, 1}}};
  const auto t0 = total_evidential_loss(batch, beta, {0, 10});
  CHECK(t0.kl_weight == 0.0);
  CHECK(t0.total == t0.classification);

  const auto t5 = total_evidential_loss(batch, beta, {5, 10});
  CHECK(t5.kl_weight == 0.5);
  CHECK(std::abs(t5.total - (t5.classification + 0.5 * t5.kl)) < 1e-15);

  // Hand evaluation of the adjusted-alpha KL: sample 1 -> alpha~ = (4, 1),
  // sample 2 -> alpha~ = (1, 1).
  const double kl41 = kl_to_uniform_dirichlet(std::vector<double>{4.0, 1.0});
  CHECK(std::abs(t5.kl - kl41) < 1e-12);

  const auto full = total_evidential_loss(batch, beta, {20, 10}, KlTarget::kFullAlpha);
  CHECK(full.kl_weight == 1.0);
  const double expect_kl = kl_to_uniform_dirichlet(std::vector<double>{4.0, 2.0}) +
                           kl_to_uniform_dirichlet(std::vector<double>{1.0, 5.0});
  CHECK(std::abs(full.kl - expect_kl) < 1e-12);

  CHECK_THROWS_AS(total_evidential_loss(std::span<const EvidentialSample>{}, beta, {0, 10}), DomainError);
}

TEST_CASE("analytic gradient matches central differences") {
  const ClassWeights beta({0.25, 0.75});
  Rng rng(2024);
  for (auto target : {KlTarget::kAdjustedAlpha, KlTarget::kFullAlpha}) {
    for (int t = 0; t < 100; ++t) {
      std::vector<double> e{rng.uniform(0.05, 8.0), rng.uniform(0.05, 8.0)};
      const std::vector<int> label{static_cast<int>(rng.index(2))};
      const AnnealingSchedule sched{static_cast<int>(rng.index(15)), 10};
      std::vector<double> grad(2);
      total_evidential_loss(e, 2, label, beta, sched, target, grad);
      for (std::size_t j = 0; j < 2; ++j) {
        const double h = 1e-5;
        auto ep = e, em = e;
        ep[j] += h;
        em[j] -= h;
        const double fd = (total_evidential_loss(ep, 2, label, beta, sched, target).total -
                           total_evidential_loss(em, 2, label, beta, sched, target).total) /
                          (2.0 * h);
        CHECK(rel_err(grad[j], fd) < 1e-4);
      }
    }
  }
}
