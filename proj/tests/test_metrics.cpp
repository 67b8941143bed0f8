#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "evident/error.hpp"
#include "evident/metrics.hpp"
#include "evident/rng.hpp"

using namespace evident;
using namespace evident::metrics;

namespace {

double pair_count_auc(const std::vector<int>& y, const std::vector<double>& s) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return wins / pairs;
}

Eigen::MatrixXd gaussian(Rng& rng, int n, int d, double shift, double sigma = 1.0) {
  Eigen::MatrixXd m(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) m(i, j) = (j == 0 ? shift : 0.0) + sigma * rng.normal();
  }
  return m;
}

filtering::UncertaintyTable table_for(const std::vector<std::vector<double>>& probs, const std::vector<double>& u,
                                      const std::vector<int>& labels) {
  std::vector<filtering::UncertaintyRow> rows;
  std::int64_t id = 0;
  for (std::size_t p = 0; p < probs.size(); ++p) {
    for (double pr : probs[p]) rows.push_back({id++, "P" + std::to_string(100 + p), u[p], pr, labels[p]});
  }
  return filtering::UncertaintyTable(rows);
}

}  // namespace

TEST_CASE("median of twenty") {
  const auto t = table_for({std::vector<double>(20, 0.7)}, {0.5}, {1});
  const auto p = aggregate_patient(t);
  REQUIRE(p.size() == 1);
  CHECK(p[0].median_prob == doctest::Approx(0.7));
  CHECK(p[0].label_pred == 1);

  std::vector<double> split(10, 0.4);
  split.insert(split.end(), 10, 0.6);
  const auto b = aggregate_patient(table_for({split}, {0.5}, {1}));
  CHECK(b[0].median_prob == doctest::Approx(0.5));
  CHECK(b[0].label_pred == 0);

  CHECK_THROWS_AS(aggregate_patient(table_for({std::vector<double>(19, 0.7)}, {0.5}, {1})), DomainError);
}

TEST_CASE("median matches a sort oracle on random patients") {
  Rng rng(1);
  std::vector<std::vector<double>> probs(200);
  std::vector<double> u(200);
  std::vector<int> labels(200);
  for (std::size_t p = 0; p < 200; ++p) {
    for (int k = 0; k < 20; ++k) probs[p].push_back(rng.uniform());
    u[p] = rng.uniform(0.1, 1.0);
    labels[p] = static_cast<int>(rng.index(2));
  }
  const auto agg = aggregate_patient(table_for(probs, u, labels));
  REQUIRE(agg.size() == 200);
  for (std::size_t p = 0; p < 200; ++p) {
    auto s = probs[p];
    std::sort(s.begin(), s.end());
    const double m = (s[9] + s[10]) / 2.0;
    CHECK(agg[p].median_prob == m);
    CHECK(agg[p].label_pred == (m > 0.5 ? 1 : 0));
    CHECK(agg[p].mean_uncertainty == doctest::Approx(u[p]));
  }
}

TEST_CASE("classification metrics on perfect and constant scores") {
  const std::vector<int> y{0, 0, 1, 1, 1, 0};
  const std::vector<double> s{0.1, 0.2, 0.9, 0.8, 0.7, 0.3};
  std::vector<int> pred(y);
  const auto r = classification_metrics(y, pred, s, {200, 1});
  CHECK(*r.accuracy == 1.0);
  CHECK(*r.sensitivity == 1.0);
  CHECK(*r.specificity == 1.0);
  CHECK(*r.auc == 1.0);
  CHECK(r.counts.total() == 6);
  CHECK(r.counts.tp + r.counts.fn == 3);

  const std::vector<double> flat(6, 0.5);
  CHECK(roc_auc(y, flat) == 0.5);
}

TEST_CASE("AUC matches exhaustive pair counting") {
  Rng rng(5);
  std::vector<double> s(8);
  for (auto& v : s) v = rng.uniform();
  for (int mask = 1; mask < 255; ++mask) {
    std::vector<int> y(8);
    for (int i = 0; i < 8; ++i) y[static_cast<std::size_t>(i)] = (mask >> i) & 1;
    CHECK(roc_auc(y, s) == doctest::Approx(pair_count_auc(y, s)).epsilon(1e-14));
  }
  const std::vector<double> tied{0.1, 0.1, 0.5, 0.5, 0.5, 0.9, 0.2, 0.2};
  const std::vector<int> ty{0, 1, 0, 1, 1, 1, 0, 0};
  CHECK(roc_auc(ty, tied) == doctest::Approx(pair_count_auc(ty, tied)).epsilon(1e-14));
}

TEST_CASE("single-class input leaves AUC undefined but reports the rest") {
  const std::vector<int> y{1, 1, 1};
  const std::vector<int> p{1, 0, 1};
  const std::vector<double> s{0.9, 0.4, 0.8};
  CHECK_THROWS_AS(roc_auc(y, s), DomainError);
  const auto r = classification_metrics(y, p, s);
  CHECK(!r.auc);
  CHECK(!r.auc_ci);
  CHECK(!r.specificity);
  CHECK(*r.sensitivity == doctest::Approx(2.0 / 3.0));
  CHECK(!r.note.empty());
  CHECK(r.to_json()["auc"].is_null());

  const auto empty = classification_metrics({}, {}, {});
  CHECK(!empty.accuracy);
}

TEST_CASE("bootstrap interval is reproducible and brackets the estimate") {
  Rng rng(9);
  std::vector<int> y(60);
  std::vector<double> s(60);
  for (std::size_t i = 0; i < 60; ++i) {
    y[i] = static_cast<int>(i % 2);
    s[i] = std::clamp(0.5 + 0.2 * (y[i] ? 1 : -1) + 0.3 * rng.normal(), 0.0, 1.0);
  }
  std::vector<int> pred(60);
  for (std::size_t i = 0; i < 60; ++i) pred[i] = s[i] > 0.5;
  const auto a = classification_metrics(y, pred, s, {3000, 17});
  const auto b = classification_metrics(y, pred, s, {3000, 17});
  REQUIRE(a.auc_ci);
  CHECK(a.auc_ci->lo <= *a.auc);
  CHECK(a.auc_ci->hi >= *a.auc);
  CHECK(a.auc_ci->lo < a.auc_ci->hi);
  CHECK(a.to_json().dump() == b.to_json().dump());
  CHECK(a.n_bootstrap == 3000);
}

TEST_CASE("metrics are permutation invariant") {
  Rng rng(10);
  std::vector<int> y(40), p(40);
  std::vector<double> s(40);
  for (std::size_t i = 0; i < 40; ++i) {
    y[i] = static_cast<int>(rng.index(2));
    s[i] = rng.uniform();
    p[i] = s[i] > 0.5;
  }
  std::vector<std::size_t> order(40);
  for (std::size_t i = 0; i < 40; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<int> y2(40), p2(40);
  std::vector<double> s2(40);
  for (std::size_t i = 0; i < 40; ++i) {
    y2[i] = y[order[i]];
    p2[i] = p[order[i]];
    s2[i] = s[order[i]];
  }
  const auto a = classification_metrics(y, p, s, {0, 1});
  const auto b = classification_metrics(y2, p2, s2, {0, 1});
  CHECK(*a.accuracy == *b.accuracy);
  CHECK(*a.auc == *b.auc);
  CHECK(*a.ece == doctest::Approx(*b.ece).epsilon(1e-14));
}

TEST_CASE("ECE hand cases") {
  const std::vector<int> y{1, 1, 0, 0};
  const std::vector<int> right{1, 1, 0, 0};
  const std::vector<int> half{1, 0, 1, 0};
  const std::vector<double> one(4, 1.0), coin(4, 0.5);
  CHECK(expected_calibration_error(y, right, one) == 0.0);
  CHECK(expected_calibration_error(y, half, one) == 0.5);
  CHECK(expected_calibration_error(y, half, coin) == 0.0);

  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    std::vector<int> yy(30), pp(30);
    std::vector<double> cc(30);
    for (std::size_t i = 0; i < 30; ++i) {
      yy[i] = static_cast<int>(rng.index(2));
      pp[i] = static_cast<int>(rng.index(2));
      cc[i] = rng.uniform();
    }
    const double e = expected_calibration_error(yy, pp, cc);
    CHECK(e >= 0.0);
    CHECK(e <= 1.0);
  }
  CHECK_THROWS_AS(expected_calibration_error(y, right, std::vector<double>{1.2, 1, 1, 1}), DomainError);
}

TEST_CASE("MMD properties") {
  Rng rng(3);
  const auto a = gaussian(rng, 40, 3, 0.0);
  CHECK(mmd_biased(a, a) == 0.0);
  CHECK(mmd_unbiased(a, a) <= 1e-12);

  const auto b = gaussian(rng, 40, 3, 0.0);
  const auto far = gaussian(rng, 40, 3, 10.0);
  CHECK(mmd(a, far) > 10.0 * mmd(a, b));

  Eigen::MatrixXd shuffled = a;
  std::vector<int> order(40);
  for (int i = 0; i < 40; ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order);
  for (int i = 0; i < 40; ++i) shuffled.row(i) = a.row(order[static_cast<std::size_t>(i)]);
  CHECK(mmd(shuffled, far) == doctest::Approx(mmd(a, far)).epsilon(1e-12));

  CHECK_THROWS_AS(mmd(a.topRows(1), b), DomainError);
  CHECK_THROWS_AS(mmd(a, gaussian(rng, 5, 4, 0.0)), DomainError);
}

TEST_CASE("Frechet distance") {
  Rng rng(4);
  const auto a = gaussian(rng, 300, 4, 0.0);
  CHECK(frechet_distance(a, a) < 1e-6);

  // Same sample shifted by d along one axis: covariances identical, FID = d^2.
  Eigen::MatrixXd b = a;
  b.col(0).array() += 3.0;
  CHECK(frechet_distance(a, b) == doctest::Approx(9.0).epsilon(1e-9));

  const auto c = gaussian(rng, 300, 4, 1.0, 2.0);
  CHECK(frechet_distance(a, c) == doctest::Approx(frechet_distance(c, a)).epsilon(1e-9));

  // Fewer samples than dimensions falls back to shrinkage.
  const auto small = gaussian(rng, 3, 10, 0.0);
  CHECK(std::isfinite(frechet_distance(small, small)));
  CHECK(frechet_distance(small, small) < 1e-6);
}

TEST_CASE("FID on embedded slices") {
  Rng rng(6);
  std::vector<Slice2> s;
  for (int i = 0; i < 12; ++i) {
    Slice2 sl{16, 16, std::vector<float>(256)};
    for (auto& x : sl.pixels) x = static_cast<float>(rng.uniform(-1, 1));
    s.push_back(sl);
  }
  const RandomProjectionEmbedding emb(8, 42);
  CHECK(fid(s, s, emb) < 1e-6);
  const std::vector<std::vector<Slice2>> va{{s[0], s[1]}, {s[2], s[3]}, {s[4], s[5]}};
  CHECK(fid_volumes(va, va, emb, FidMode::kPerIndexAverage) < 1e-6);
  CHECK(fid_volumes(va, va, emb, FidMode::kPooled) < 1e-6);
  CHECK(parse_fid_mode("pooled") == FidMode::kPooled);
  CHECK_THROWS_AS(parse_fid_mode("mean"), ConfigError);
}

TEST_CASE("threshold sweep") {
  Rng rng(7);
  std::vector<std::vector<double>> probs;
  std::vector<double> u;
  std::vector<int> labels;
  for (int p = 0; p < 30; ++p) {
    const int y = p % 2;
    const bool noisy = p < 8;  // confidently wrong, and flagged as uncertain
    std::vector<double> pr;
    for (int k = 0; k < 20; ++k) pr.push_back(std::clamp((y ^ noisy ? 0.8 : 0.2) + 0.05 * rng.normal(), 0.0, 1.0));
    probs.push_back(pr);
    u.push_back(noisy ? 0.7 - 0.02 * p : 0.3 + 0.01 * p);
    labels.push_back(y);
  }
  const auto t = table_for(probs, u, labels);
  const auto rows = threshold_sweep(t, kDeploymentLadder, {100, 3});
  REQUIRE(rows.size() == 5);
  double prev_acc = -1.0;
  std::size_t prev_n = 1000;
  for (const auto& r : rows) {
    CHECK(r.n_retained <= prev_n);
    prev_n = r.n_retained;
    REQUIRE(r.report.accuracy);
    CHECK(*r.report.accuracy >= prev_acc);
    prev_acc = *r.report.accuracy;
  }
  const auto csv = sweep_csv(rows);
  CHECK(csv.rfind("tau,n_retained,acc,sen,spec,auc\n1,", 0) == 0);
  CHECK(csv.find("\n0.68,") != std::string::npos);

  const std::vector<double> tiny{0.01};
  const auto none = threshold_sweep(t, tiny, {100, 3});
  CHECK(none[0].n_retained == 0);
  CHECK(!none[0].report.accuracy);
  CHECK(sweep_csv(none).find("undefined") != std::string::npos);

  const std::vector<double> ascending{0.5, 0.6};
  CHECK_THROWS_AS(threshold_sweep(t, ascending), DomainError);
}
