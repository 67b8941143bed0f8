#pragma once

// ACL-GAN training on 2-D slices and the slice-wise 3.0T -> 1.5T conversion.

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "evident/data.hpp"
#include "evident/grid.hpp"
#include "evident/models.hpp"
#include "evident/translation_losses.hpp"
#include "json.hpp"

namespace evident::translation {

struct TranslationTrainConfig {
  models::TranslationNetSpec net;
  std::int64_t steps = 2000;  // `translation_steps`
  std::int64_t batch_size = 3;
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  GanForm form = GanForm::kLeastSquares;
  MaskConfig mask = MaskConfig::t2();
  TranslationLossWeights weights;
  std::int64_t eval_every = 50;
  int patience = 10;  // evaluations without improvement; 0 disables early stopping
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

struct GeneratorTerms {
  torch::Tensor adv, acl, idt, mask, total;
  torch::Tensor xbar_t, xhat_s, xtilde_s;  // composited translations, for the discriminator step
};

/// Forward pass of every generator-side term on one batch. z1..z3 are (B, z_dim).
GeneratorTerms generator_terms(models::TranslationBundle& b, const torch::Tensor& xs, const torch::Tensor& xt,
                               const torch::Tensor& z1, const torch::Tensor& z2, const torch::Tensor& z3,
                               const TranslationTrainConfig& cfg);

torch::Tensor discriminator_loss(models::TranslationBundle& b, const torch::Tensor& xs, const torch::Tensor& xt,
                                 const GeneratorTerms& g, const TranslationTrainConfig& cfg);

struct TranslationStepLog {
  std::int64_t step = 0;
  double gen_total = 0.0;
  double disc_total = 0.0;
  double adv = 0.0;
  double acl = 0.0;
  double idt = 0.0;
  double mask = 0.0;
};

struct ValidationPoint {
  std::int64_t step = 0;
  double loss = 0.0;
};

struct TranslationTrainResult {
  models::TranslationBundle bundle{nullptr};
  std::vector<TranslationStepLog> steps;
  std::vector<ValidationPoint> validation;
  std::int64_t steps_run = 0;
  bool early_stopped = false;
  bool diverged = false;  // bundle holds the last finite snapshot
  double final_val_loss = 0.0;
};

/// Stack slices into a (N, 1, H, W) tensor.
torch::Tensor slices_to_tensor(const std::vector<Slice2>& slices);

/// Batched z ~ N(0, 1) from an explicit seed.
torch::Tensor sample_noise(std::int64_t batch, std::int64_t dim, std::uint64_t seed);

/// Mean generator total loss over the validation slices with seeded noise.
double validation_loss(models::TranslationBundle& b, const torch::Tensor& val_s, const torch::Tensor& val_t,
                       const TranslationTrainConfig& cfg);

TranslationTrainResult train_translation(const std::vector<Slice2>& train_s, const std::vector<Slice2>& train_t,
                                         const std::vector<Slice2>& val_s, const std::vector<Slice2>& val_t,
                                         const TranslationTrainConfig& cfg);

/// G_{S->T}(x, z) composited through its mask.
std::vector<Slice2> translate_slices(models::Generator& g, const std::vector<Slice2>& slices, std::uint64_t seed);

/// Slice-wise translation with a fresh z per slice; dims and spacing are
/// kept and the domain tag flips to the target domain.
data::VolumeRecord convert_volume(models::Generator& g, const data::VolumeRecord& v, std::uint64_t seed);

}  // namespace evident::translation
