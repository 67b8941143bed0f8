#include <cmath>
#include <functional>

#include "torch_doctest.h"
#include "evident/error.hpp"
#include "evident/translation_losses.hpp"

using namespace evident;
using namespace evident::translation;

namespace {

const auto kD = torch::TensorOptions().dtype(torch::kDouble);

torch::Tensor full(std::vector<int64_t> shape, double v) { return torch::full(shape, v, kD); }

double val(const torch::Tensor& t) { return t.item<double>(); }

// Max relative error between autograd and central differences of f at x.
double grad_error(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& x0,
                  double h = 1e-6) {
  auto x = x0.clone().requires_grad_(true);
  f(x).backward();
  const auto g = x.grad().contiguous();
  double worst = 0.0;
  auto flat = x0.clone().contiguous();
  auto* p = flat.data_ptr<double>();
  for (int64_t i = 0; i < flat.numel(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    const double up = val(f(flat));
    p[i] = keep - h;
    const double dn = val(f(flat));
    p[i] = keep;
    const double fd = (up - dn) / (2 * h);
    const double an = g.data_ptr<double>()[i];
    worst = std::max(worst, std::abs(fd - an) / std::max(1e-6, std::max(std::abs(fd), std::abs(an))));
  }
  return worst;
}

}  // namespace

TEST_CASE("target adversarial term") {
  CHECK(val(adv_target_disc(full({2, 1, 4, 4}, 1.0), full({2, 1, 4, 4}, 0.0))) == 0.0);
  CHECK(val(adv_target_disc(full({2, 1, 4, 4}, 0.5), full({2, 1, 4, 4}, 0.5))) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(val(adv_target_gen(full({3, 1, 2, 2}, 1.0))) == 0.0);
  CHECK(val(adv_target_gen(full({3, 1, 2, 2}, 0.0))) == 1.0);
  CHECK_THROWS_AS(adv_target_disc(torch::empty({0}, kD), full({1}, 0.0)), DomainError);
  CHECK_THROWS_AS(adv_target_gen(torch::empty({0}, kD)), DomainError);
}

TEST_CASE("source adversarial term averages its fake branches") {
  CHECK(val(adv_source_disc(full({4}, 1.0), full({4}, 0.0), full({4}, 0.0))) == 0.0);
  const double v = val(adv_source_disc(full({4}, 0.8), full({4}, 0.2), full({4}, 0.4)));
  CHECK(std::abs(v - 0.14) < 1e-9);
  // Identically scored fakes reduce to the single-fake term.
  const auto s = full({5}, 0.3);
  CHECK(std::abs(val(adv_source_gen(s, s)) - val(adv_target_gen(s))) < 1e-12);
  CHECK(std::abs(val(adv_source_disc(full({5}, 1.0), s, s)) - val(adv_target_disc(full({5}, 1.0), s))) < 1e-12);
  CHECK_THROWS_AS(adv_source_disc(full({1}, 1.0), torch::empty({0}, kD), full({1}, 0.0)), DomainError);
}

TEST_CASE("adversarial consistency term") {
  CHECK(val(acl_disc(full({2, 1, 3, 3}, 1.0), full({2, 1, 3, 3}, 0.0))) == 0.0);
  CHECK(std::abs(val(acl_disc(full({2, 1, 3, 3}, 0.5), full({2, 1, 3, 3}, 0.5))) - 0.5) < 1e-9);
  // Generator side: pair labels reversed, so a fully fooled D̂ gives 0.
  CHECK(val(acl_gen(full({2}, 0.0), full({2}, 1.0))) == 0.0);
  CHECK(std::abs(val(acl_gen(full({2}, 0.5), full({2}, 0.5))) - 0.5) < 1e-9);
  CHECK_THROWS_AS(acl_disc(torch::empty({0}, kD), full({1}, 0.0)), DomainError);
}

TEST_CASE("log form reads scores as logits") {
  const double ln2 = std::log(2.0);
  CHECK(std::abs(val(adv_target_disc(full({3}, 0.0), full({3}, 0.0), GanForm::kLog)) - 2 * ln2) < 1e-12);
  CHECK(std::abs(val(adv_target_gen(full({3}, 0.0), GanForm::kLog)) - ln2) < 1e-12);
  CHECK(val(adv_target_disc(full({3}, 40.0), full({3}, -40.0), GanForm::kLog)) < 1e-15);
  CHECK(std::abs(val(acl_disc(full({3}, 0.0), full({3}, 0.0), GanForm::kLog)) - 2 * ln2) < 1e-12);
  CHECK(parse_gan_form("ls") == GanForm::kLeastSquares);
  CHECK(parse_gan_form("log") == GanForm::kLog);
  CHECK_THROWS_AS(parse_gan_form("wgan"), ConfigError);
}

TEST_CASE("identity term") {
  const auto x = torch::rand({2, 1, 8, 8}, kD);
  const auto y = torch::rand({2, 1, 8, 8}, kD);
  CHECK(val(identity_loss(x, x, y, y)) == 0.0);
  CHECK(std::abs(val(identity_loss(x, x + 0.1, y, y)) - 0.1) < 1e-9);
  const auto z = torch::rand({2, 1, 8, 8}, kD);
  CHECK(val(identity_loss(x, z, y, x)) == doctest::Approx(val(identity_loss(y, x, x, z))));
  CHECK_THROWS_AS(identity_loss(x, x.narrow(3, 0, 4), y, y), DomainError);
}

TEST_CASE("mask term hand values") {
  MaskConfig cfg{1.0, 0.1, 0.005, 1e-6};
  // Binary mask with 5% foreground: size terms vanish.
  auto m = torch::zeros({64, 64}, kD);
  m.narrow(0, 0, 4).narrow(1, 0, 51).fill_(1.0);  // 204 px, 4.98%
  CHECK(std::abs(val(mask_loss(m, cfg)) - 4096.0 / (0.5 + 1e-6)) < 1e-9 * 8192);

  MaskConfig half{1.0, 0.5, 0.0, 1e-6};
  const double v = val(mask_loss(full({64, 64}, 0.5), half));
  CHECK(std::abs(v - 4096.0 / 1e-6) / (4096.0 / 1e-6) < 1e-12);

  MaskConfig zero_min{1.0, 0.1, 0.0, 1e-6};
  CHECK(std::abs(val(mask_loss(torch::zeros({64, 64}, kD), zero_min)) - 4096.0 / (0.5 + 1e-6)) < 1e-9);

  // Batch of two identical images averages to the single-image value.
  const auto single = val(mask_loss(m, cfg));
  CHECK(std::abs(val(mask_loss(torch::stack({m, m}).unsqueeze(1), cfg)) - single) < 1e-9);

  CHECK_THROWS_AS(mask_loss(full({4, 4}, 1.5), cfg), DomainError);
  CHECK_THROWS_AS(mask_loss(full({4, 4}, -0.1), cfg), DomainError);
  CHECK_THROWS_AS(mask_loss(full({4, 4}, 0.2), MaskConfig{1.0, 0.1, 0.2, 1e-6}), ConfigError);
}

TEST_CASE("mask size hinge boundaries") {
  // 10 x 10 image: the upper bound is 10 px, the lower bound 5 px.
  const MaskConfig cfg{2.0, 0.1, 0.05, 1e-6};
  const double binar = 100.0 / (0.5 + 1e-6);
  auto with_ones = [](int k) {
    auto m = torch::zeros({100}, kD);
    m.narrow(0, 0, k).fill_(1.0);
    return m.view({10, 10});
  };
  for (int k = 5; k <= 10; ++k) CHECK(std::abs(val(mask_loss(with_ones(k), cfg)) - binar) < 1e-9);
  CHECK(std::abs(val(mask_loss(with_ones(11), cfg)) - binar - 2.0) < 1e-9);
  CHECK(std::abs(val(mask_loss(with_ones(4), cfg)) - binar - 2.0) < 1e-9);
  CHECK(std::abs(val(mask_loss(with_ones(13), cfg)) - binar - 2.0 * 9.0) < 1e-9);
}

TEST_CASE("apply_mask is a convex blend") {
  const auto src = torch::zeros({1, 1, 4, 4}, kD);
  const auto img = torch::ones({1, 1, 4, 4}, kD);
  CHECK(torch::equal(apply_mask(src, {img, torch::ones_like(src)}), img));
  CHECK(torch::equal(apply_mask(src, {img, torch::zeros_like(src)}), src));
  CHECK(torch::allclose(apply_mask(src, {img, full({1, 1, 4, 4}, 0.5)}), full({1, 1, 4, 4}, 0.5)));

  const auto a = torch::rand({3, 1, 8, 8}, kD) * 2 - 1;
  const auto b = torch::rand({3, 1, 8, 8}, kD) * 2 - 1;
  const auto m = torch::rand({3, 1, 8, 8}, kD);
  const auto out = apply_mask(a, {b, m});
  CHECK(torch::all(out <= torch::max(a, b) + 1e-15).item<bool>());
  CHECK(torch::all(out >= torch::min(a, b) - 1e-15).item<bool>());
  CHECK_THROWS_AS(apply_mask(a, {b.narrow(2, 0, 4), m}), DomainError);
}

TEST_CASE("total objective") {
  const TranslationLossWeights w;
  const TranslationTerms zero{full({}, 0), full({}, 0), full({}, 0), full({}, 0)};
  CHECK(val(total_translation_loss(zero, w)) == 0.0);
  const TranslationTerms ones{full({}, 1), full({}, 1), full({}, 1), full({}, 1)};
  CHECK(std::abs(val(total_translation_loss(ones, w)) - 2.2025) < 1e-9);

  // Linear in each weight.
  const TranslationTerms t{full({}, 0.7), full({}, 1.3), full({}, 0.4), full({}, 25.0)};
  const double base = val(total_translation_loss(t, w));
  for (int which = 0; which < 3; ++which) {
    auto w2 = w;
    double term = 0.0;
    if (which == 0) { w2.lambda_acl *= 3; term = 1.3 * w.lambda_acl; }
    if (which == 1) { w2.lambda_idt *= 3; term = 0.4 * w.lambda_idt; }
    if (which == 2) { w2.lambda_mask *= 3; term = 25.0 * w.lambda_mask; }
    CHECK(std::abs(val(total_translation_loss(t, w2)) - base - 2 * term) < 1e-9);
  }
  CHECK_THROWS_AS(total_translation_loss(t, {-1, 1, 1}), ConfigError);
}

TEST_CASE("gradients match central differences on 8x8 slices") {
  torch::manual_seed(3);
  const auto s1 = torch::rand({2, 1, 8, 8}, kD);
  const auto s2 = torch::rand({2, 1, 8, 8}, kD);
  const auto s3 = torch::rand({2, 1, 8, 8}, kD);
  for (auto form : {GanForm::kLeastSquares, GanForm::kLog}) {
    CHECK(grad_error([&](const torch::Tensor& f) { return adv_target_disc(s1, f, form); }, s2) < 1e-3);
    CHECK(grad_error([&](const torch::Tensor& f) { return adv_target_gen(f, form); }, s2) < 1e-3);
    CHECK(grad_error([&](const torch::Tensor& f) { return adv_source_gen(f, s3, form); }, s2) < 1e-3);
    CHECK(grad_error([&](const torch::Tensor& f) { return acl_gen(f, s3, form); }, s1) < 1e-3);
    CHECK(grad_error([&](const torch::Tensor& f) { return acl_disc(s1, f, form); }, s3) < 1e-3);
  }
  const auto img = torch::rand({2, 1, 8, 8}, kD);
  CHECK(grad_error([&](const torch::Tensor& r) { return identity_loss(img, r, s1, s2); }, s3 + 0.01) < 1e-3);

  // Keep mask pixels away from the 0.5 kink of the binarization term.
  auto m = torch::rand({2, 1, 8, 8}, kD) * 0.3;
  m = torch::where(torch::rand({2, 1, 8, 8}, kD) > 0.5, m, 1.0 - m);
  const MaskConfig cfg{1.0, 0.1, 0.05, 1e-6};
  CHECK(grad_error([&](const torch::Tensor& x) { return mask_loss(x, cfg); }, m, 1e-7) < 1e-3);
  CHECK(grad_error([&](const torch::Tensor& x) { return apply_mask(s1, {s2, x}).pow(2).sum(); }, m) < 1e-3);

  // With lambda_mask = 0 the mask carries no gradient into the total.
  const TranslationLossWeights no_mask{0.2, 1.0, 0.0};
  auto mm = m.clone().requires_grad_(true);
  const TranslationTerms t{adv_target_gen(s1), acl_gen(s1, s2), identity_loss(s1, s2, s1, s3), mask_loss(mm, cfg)};
  total_translation_loss(t, no_mask).backward();
  CHECK(mm.grad().abs().max().item<double>() == 0.0);
}

TEST_CASE("LS terms are non-negative") {
  torch::manual_seed(9);
  for (int i = 0; i < 50; ++i) {
    const auto a = torch::randn({3, 1, 4, 4}, kD) * 2;
    const auto b = torch::randn({3, 1, 4, 4}, kD) * 2;
    CHECK(val(adv_target_disc(a, b)) >= 0.0);
    CHECK(val(adv_source_disc(a, b, a)) >= 0.0);
    CHECK(val(acl_disc(a, b)) >= 0.0);
    CHECK(val(acl_gen(a, b)) >= 0.0);
    CHECK(val(mask_loss(torch::rand({3, 1, 4, 4}, kD), MaskConfig::adc())) >= 0.0);
  }
}

TEST_CASE("mask presets") {
  CHECK(MaskConfig::preset(data::Modality::kT2).delta_min == 0.005);
  CHECK(MaskConfig::preset(data::Modality::kT2).delta_max == 0.1);
  CHECK(MaskConfig::preset(data::Modality::kAdc).delta_min == 0.001);
  CHECK(MaskConfig::preset(data::Modality::kAdc).delta_max == 0.005);
  const TranslationLossWeights w;
  CHECK(w.lambda_acl == 0.2);
  CHECK(w.lambda_idt == 1.0);
  CHECK(w.lambda_mask == 0.0025);
}
