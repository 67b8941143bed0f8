#pragma once

// ACL-GAN objective terms over generator and discriminator outputs. Scores
// are raw discriminator outputs; under the log form they are read as logits.

#include <string_view>

#include <torch/torch.h>

#include "evident/data.hpp"

namespace evident::translation {

enum class GanForm { kLeastSquares, kLog };

GanForm parse_gan_form(std::string_view s);  // "ls" | "log"
std::string_view to_string(GanForm f);

struct MaskConfig {
  double delta = 1.0;
  double delta_max = 0.1;
  double delta_min = 0.005;
  double epsilon = 1e-6;

  void validate() const;

  static MaskConfig t2() { return {1.0, 0.1, 0.005, 1e-6}; }
  static MaskConfig adc() { return {1.0, 0.005, 0.001, 1e-6}; }
  static MaskConfig preset(data::Modality m) { return m == data::Modality::kT2 ? t2() : adc(); }
};

struct TranslationLossWeights {
  double lambda_acl = 0.2;
  double lambda_idt = 1.0;
  double lambda_mask = 0.0025;

  void validate() const;
};

/// Image in [-1, 1] and mask in [0, 1], both (B, 1, H, W) or (H, W).
struct GeneratorOutput {
  torch::Tensor image;
  torch::Tensor mask;
};

/// Discriminator side of the target-domain term: real x_T vs translated x̄_T.
torch::Tensor adv_target_disc(const torch::Tensor& real, const torch::Tensor& fake,
                              GanForm form = GanForm::kLeastSquares);
/// Generator side: translated x̄_T should score as real.
torch::Tensor adv_target_gen(const torch::Tensor& fake, GanForm form = GanForm::kLeastSquares);

/// Source-domain term; the two fake branches (x̂_S, x̃_S) are averaged.
torch::Tensor adv_source_disc(const torch::Tensor& real, const torch::Tensor& hat, const torch::Tensor& tilde,
                              GanForm form = GanForm::kLeastSquares);
torch::Tensor adv_source_gen(const torch::Tensor& hat, const torch::Tensor& tilde,
                             GanForm form = GanForm::kLeastSquares);

/// Pair discriminator: (x_S, x̂_S) is the positive pair, (x_S, x̃_S) the negative.
torch::Tensor acl_disc(const torch::Tensor& pair_hat, const torch::Tensor& pair_tilde,
                       GanForm form = GanForm::kLeastSquares);
/// Generator side with the pair labels reversed.
torch::Tensor acl_gen(const torch::Tensor& pair_hat, const torch::Tensor& pair_tilde,
                      GanForm form = GanForm::kLeastSquares);

/// mean|x_S - x_S^idt| + mean|x_T - x_T^idt|
torch::Tensor identity_loss(const torch::Tensor& xs, const torch::Tensor& xs_idt, const torch::Tensor& xt,
                            const torch::Tensor& xt_idt);

/// Size hinge plus binarization term, evaluated per image and averaged over
/// the batch. A 2-D mask is a single image.
torch::Tensor mask_loss(const torch::Tensor& mask, const MaskConfig& cfg);

/// mask * image + (1 - mask) * source
torch::Tensor apply_mask(const torch::Tensor& source, const GeneratorOutput& out);

struct TranslationTerms {
  torch::Tensor adv;
  torch::Tensor acl;
  torch::Tensor idt;
  torch::Tensor mask;
};

torch::Tensor total_translation_loss(const TranslationTerms& t, const TranslationLossWeights& w);

}  // namespace evident::translation
