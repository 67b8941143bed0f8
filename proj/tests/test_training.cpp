#include <cmath>

#include "torch_doctest.h"
#include "evident/error.hpp"
#include "evident/training.hpp"

using namespace evident;
using namespace evident::training;
using data::ClassifierVariant;

namespace {

models::ClassifierSpec small(models::Head h) {
  auto s = models::ClassifierSpec::for_variant(ClassifierVariant::kMpMri, h);
  s.widths = {4, 8, 8, 8, 8};
  return s;
}

// Two well-separated intensity clusters.
PatchSet separable(int n, std::uint64_t seed) {
  torch::manual_seed(seed);
  PatchSet s;
  s.y = torch::arange(n, torch::kLong) % 2;
  s.x = torch::randn({n, 2, 64, 64}) * 0.2 + (s.y.to(torch::kFloat) - 0.5).view({n, 1, 1, 1});
  for (int i = 0; i < n; ++i) {
    s.patch_ids.push_back(i);
    s.patient_ids.push_back("p" + std::to_string(i / 4));
  }
  return s;
}

}  // namespace

TEST_CASE("evidential autograd node matches the analytic core") {
  torch::manual_seed(0);
  const auto raw = torch::rand({6, 2}, torch::kDouble) * 5;
  const auto ev = raw.clone().to(torch::kFloat).requires_grad_(true);
  const auto labels = torch::tensor({0, 1, 1, 0, 1, 0}, torch::kLong);
  const evidential::ClassWeights beta({0.25, 0.75});
  const evidential::AnnealingSchedule sched{4, 10};
  for (auto target : {evidential::KlTarget::kAdjustedAlpha, evidential::KlTarget::kFullAlpha}) {
    if (ev.grad().defined()) ev.grad().zero_();
    evidential::EvidentialLossTerms terms;
    const auto loss = evidential_loss(ev, labels, beta, sched, target, &terms);
    loss.backward();

    const auto evd = ev.detach().to(torch::kDouble).contiguous();
    std::vector<double> flat(evd.data_ptr<double>(), evd.data_ptr<double>() + 12);
    std::vector<int> lab{0, 1, 1, 0, 1, 0};
    std::vector<double> grad(12);
    const auto core = evidential::total_evidential_loss(flat, 2, lab, beta, sched, target, grad);
    CHECK(loss.item<double>() == doctest::Approx(core.total / 6.0).epsilon(1e-6));
    CHECK(terms.total == doctest::Approx(core.total).epsilon(1e-9));
    CHECK(terms.kl_weight == doctest::Approx(0.4));
    const auto g = ev.grad().to(torch::kDouble).contiguous();
    for (int i = 0; i < 12; ++i) CHECK(g.data_ptr<double>()[i] == doctest::Approx(grad[i] / 6.0).epsilon(1e-5));
  }
}

TEST_CASE("focal loss hand value") {
  // p_y = 0.8 for class 1 with beta_1 = 0.75, gamma = 2.
  const double logit = std::log(0.8 / 0.2);
  const auto logits = torch::tensor({{0.0, logit}}, torch::kDouble);
  const auto l = focal_loss_per_sample(logits, torch::tensor({1}, torch::kLong), evidential::ClassWeights({0.25, 0.75}));
  CHECK(l.item<double>() == doctest::Approx(-0.75 * 0.04 * std::log(0.8)).epsilon(1e-9));
  const auto l0 = focal_loss_per_sample(logits, torch::tensor({1}, torch::kLong), evidential::ClassWeights({1, 1}), 0.0);
  CHECK(l0.item<double>() == doctest::Approx(-std::log(0.8)).epsilon(1e-9));
}

TEST_CASE("step decay schedule") {
  ClassifierTrainConfig cfg;
  CHECK(decayed_lr(cfg, 0) == doctest::Approx(1e-4));
  CHECK(decayed_lr(cfg, 199) == doctest::Approx(1e-4));
  CHECK(decayed_lr(cfg, 200) == doctest::Approx(1e-5));
  CHECK(decayed_lr(cfg, 299) == doctest::Approx(1e-5));
  cfg.lr_decay_period = 0;
  CHECK(decayed_lr(cfg, 1000) == doctest::Approx(1e-4));
  cfg.class_weights = {1.0, 0.0};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.class_weights = {1.0};
  CHECK_THROWS_AS(train_classifier(small(models::Head::kEvidence), cfg, separable(2, 0)), ConfigError);
}

TEST_CASE("separable patches are learned within 50 epochs") {
  const auto data = separable(40, 1);
  ClassifierTrainConfig cfg;
  cfg.epochs = 50;
  cfg.seed = 3;
  int reached = -1;
  auto res = train_classifier(small(models::Head::kEvidence), cfg, data, [&](const EpochLog& e) {
    if (reached < 0 && e.train_accuracy > 0.95) reached = e.epoch;
  });
  CHECK(reached >= 0);
  CHECK(accuracy(res.model, data) > 0.95);

  // The KL weight ramps linearly and plateaus at epoch 10.
  for (const auto& s : res.steps) CHECK(s.kl_weight == doctest::Approx(std::min(1.0, s.epoch / 10.0)));
  CHECK(res.epochs[0].kl_share == 0.0);
  CHECK(res.epochs[5].kl_share > 0.0);

  const auto table = uncertainty_table(res.model, data);
  CHECK(table.size() == 40);
  for (const auto& r : table.rows()) {
    CHECK(r.uncertainty > 0.0);
    CHECK(r.uncertainty <= 1.0);
  }
}

TEST_CASE("training replays bit-identically") {
  const auto data = separable(20, 2);
  ClassifierTrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 11;
  const auto a = train_classifier(small(models::Head::kEvidence), cfg, data);
  const auto b = train_classifier(small(models::Head::kEvidence), cfg, data);
  REQUIRE(a.steps.size() == b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) CHECK(a.steps[i].loss == b.steps[i].loss);
  CHECK(steps_csv(a.steps) == steps_csv(b.steps));
  cfg.seed = 12;
  const auto c = train_classifier(small(models::Head::kEvidence), cfg, data);
  CHECK(c.steps[0].loss != a.steps[0].loss);
}

TEST_CASE("softmax models have no uncertainty") {
  const auto data = separable(10, 3);
  ClassifierTrainConfig cfg;
  cfg.epochs = 1;
  auto res = train_classifier(small(models::Head::kSoftmax), cfg, data);
  CHECK_THROWS_AS(uncertainty_table(res.model, data), ContractError);
  const auto t = prediction_table(res.model, data);
  for (const auto& r : t.rows()) CHECK(r.uncertainty == 1.0);
  for (const auto& s : res.steps) CHECK(s.kl == 0.0);
}

TEST_CASE("patch set selection") {
  const auto s = separable(8, 4);
  const auto sub = s.with_patches({5, 1});
  CHECK(sub.size() == 2);
  CHECK(sub.patch_ids == std::vector<std::int64_t>{1, 5});
  CHECK(torch::equal(sub.x[1], s.x[5]));
  CHECK(s.with_patients({"p1"}).size() == 4);
}
