#include "evident/translation_losses.hpp"

#include <string>

#include "evident/error.hpp"

namespace evident::translation {

namespace F = torch::nn::functional;

GanForm parse_gan_form(std::string_view s) {
  if (s == "ls") return GanForm::kLeastSquares;
  if (s == "log") return GanForm::kLog;
  throw ConfigError("unknown gan_form '" + std::string(s) + "' (expected ls or log)");
}

std::string_view to_string(GanForm f) { return f == GanForm::kLeastSquares ? "ls" : "log"; }

void MaskConfig::validate() const {
  if (!(delta > 0.0)) throw ConfigError("mask delta must be positive");
  if (!(delta_max > 0.0 && delta_max <= 1.0)) throw ConfigError("delta_max must lie in (0, 1]");
  if (!(delta_min >= 0.0 && delta_min < 1.0)) throw ConfigError("delta_min must lie in [0, 1)");
  if (!(delta_min < delta_max)) throw ConfigError("delta_min must be below delta_max");
  if (!(epsilon > 0.0)) throw ConfigError("mask epsilon must be positive");
}

void TranslationLossWeights::validate() const {
  if (lambda_acl < 0.0 || lambda_idt < 0.0 || lambda_mask < 0.0) {
    throw ConfigError("translation loss weights must be non-negative");
  }
}

namespace {

void require_nonempty(const torch::Tensor& t, const char* what) {
  if (!t.defined() || t.numel() == 0) throw DomainError(std::string("empty score batch: ") + what);
}

// Loss for pushing scores toward label 1 (real) or 0 (fake).
torch::Tensor toward(const torch::Tensor& scores, bool real, GanForm form) {
  if (form == GanForm::kLeastSquares) {
    return real ? (scores - 1.0).pow(2).mean() : scores.pow(2).mean();
  }
  return F::binary_cross_entropy_with_logits(scores, real ? torch::ones_like(scores) : torch::zeros_like(scores));
}

}  // namespace

torch::Tensor adv_target_disc(const torch::Tensor& real, const torch::Tensor& fake, GanForm form) {
  require_nonempty(real, "D_T real");
  require_nonempty(fake, "D_T fake");
  return toward(real, true, form) + toward(fake, false, form);
}

torch::Tensor adv_target_gen(const torch::Tensor& fake, GanForm form) {
  require_nonempty(fake, "D_T fake");
  return toward(fake, true, form);
}

torch::Tensor adv_source_disc(const torch::Tensor& real, const torch::Tensor& hat, const torch::Tensor& tilde,
                              GanForm form) {
  require_nonempty(real, "D_S real");
  require_nonempty(hat, "D_S hat");
  require_nonempty(tilde, "D_S tilde");
  return toward(real, true, form) + 0.5 * (toward(hat, false, form) + toward(tilde, false, form));
}

torch::Tensor adv_source_gen(const torch::Tensor& hat, const torch::Tensor& tilde, GanForm form) {
  require_nonempty(hat, "D_S hat");
  require_nonempty(tilde, "D_S tilde");
  return 0.5 * (toward(hat, true, form) + toward(tilde, true, form));
}

torch::Tensor acl_disc(const torch::Tensor& pair_hat, const torch::Tensor& pair_tilde, GanForm form) {
  require_nonempty(pair_hat, "pair hat");
  require_nonempty(pair_tilde, "pair tilde");
  return toward(pair_hat, true, form) + toward(pair_tilde, false, form);
}

torch::Tensor acl_gen(const torch::Tensor& pair_hat, const torch::Tensor& pair_tilde, GanForm form) {
  require_nonempty(pair_hat, "pair hat");
  require_nonempty(pair_tilde, "pair tilde");
  return toward(pair_hat, false, form) + toward(pair_tilde, true, form);
}

torch::Tensor identity_loss(const torch::Tensor& xs, const torch::Tensor& xs_idt, const torch::Tensor& xt,
                            const torch::Tensor& xt_idt) {
  if (!xs.sizes().equals(xs_idt.sizes()) || !xt.sizes().equals(xt_idt.sizes())) {
    throw DomainError("identity loss shape mismatch");
  }
  if (xs.numel() == 0 || xt.numel() == 0) throw DomainError("identity loss on empty batch");
  return (xs - xs_idt).abs().mean() + (xt - xt_idt).abs().mean();
}

torch::Tensor mask_loss(const torch::Tensor& mask, const MaskConfig& cfg) {
  cfg.validate();
  if (!mask.defined() || mask.dim() < 2 || mask.numel() == 0) throw DomainError("mask must be a non-empty 2-D map");
  {
    torch::NoGradGuard ng;
    const double lo = mask.min().item<double>();
    const double hi = mask.max().item<double>();
    // NaN passes through so the trainer's divergence guard sees it.
    if (lo < 0.0 || hi > 1.0) throw DomainError("mask values must lie in [0, 1]");
  }
  const auto per_image = mask.dim() == 2 ? mask.reshape({1, -1}) : mask.reshape({mask.size(0), -1});
  const double pt = static_cast<double>(per_image.size(1));
  const auto total = per_image.sum(1);
  const auto over = torch::clamp_min(total - cfg.delta_max * pt, 0.0).pow(2);
  const auto under = torch::clamp_min(cfg.delta_min * pt - total, 0.0).pow(2);
  const auto binar = (1.0 / ((per_image - 0.5).abs() + cfg.epsilon)).sum(1);
  return (cfg.delta * (over + under) + binar).mean();
}

torch::Tensor apply_mask(const torch::Tensor& source, const GeneratorOutput& out) {
  if (!source.sizes().equals(out.image.sizes()) || !source.sizes().equals(out.mask.sizes())) {
    throw DomainError("apply_mask shape mismatch");
  }
  return out.mask * out.image + (1.0 - out.mask) * source;
}

torch::Tensor total_translation_loss(const TranslationTerms& t, const TranslationLossWeights& w) {
  w.validate();
  return t.adv + w.lambda_acl * t.acl + w.lambda_idt * t.idt + w.lambda_mask * t.mask;
}

}  // namespace evident::translation
