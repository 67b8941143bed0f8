#pragma once

// Classifier optimization: losses as autograd nodes, patch tensors, the
// epoch loop with step decay, and prediction into uncertainty tables.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "evident/data.hpp"
#include "evident/evidential.hpp"
#include "evident/filtering.hpp"
#include "evident/models.hpp"

namespace evident::training {

/// Mean evidential loss over the batch; gradients come from the analytic
/// derivative. `terms` (optional) receives the batch-summed decomposition.
torch::Tensor evidential_loss(const torch::Tensor& evidence, const torch::Tensor& labels,
                              const evidential::ClassWeights& beta, const evidential::AnnealingSchedule& schedule,
                              evidential::KlTarget target, evidential::EvidentialLossTerms* terms = nullptr);

/// Per-sample focal loss -beta_y (1 - p_y)^gamma log p_y from logits.
torch::Tensor focal_loss_per_sample(const torch::Tensor& logits, const torch::Tensor& labels,
                                    const evidential::ClassWeights& beta, double gamma = 2.0);

struct PatchSet {
  torch::Tensor x;  // (N, C, 64, 64) float
  torch::Tensor y;  // (N) int64
  std::vector<std::int64_t> patch_ids;
  std::vector<std::string> patient_ids;

  std::size_t size() const { return patch_ids.size(); }
  PatchSet subset(const std::vector<std::size_t>& rows) const;
  PatchSet with_patches(const std::vector<std::int64_t>& ids) const;
  PatchSet with_patients(const std::vector<std::string>& ids) const;
};

/// Patch ids are assigned consecutively from `first_id`.
PatchSet to_patch_set(const std::vector<data::PatchRecord>& patches, std::int64_t first_id = 0);

struct ClassifierTrainConfig {
  int epochs = 300;
  std::int64_t batch_size = 10;
  double learning_rate = 1e-4;
  double weight_decay = 0.01;
  double lr_decay_factor = 0.1;
  int lr_decay_period = 200;  // epochs; 0 disables
  std::vector<double> class_weights{0.25, 0.75};
  evidential::KlTarget kl_target = evidential::KlTarget::kAdjustedAlpha;
  int kl_ramp_epochs = 10;
  double focal_gamma = 2.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct StepLog {
  std::int64_t step = 0;
  int epoch = 0;
  double loss = 0.0;
  double classification = 0.0;  // evidential term or focal loss
  double kl = 0.0;
  double kl_weight = 0.0;
  double learning_rate = 0.0;
};

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
  double kl_share = 0.0;  // lambda_t * KL / total, evidence head only
  double learning_rate = 0.0;
};

struct TrainResult {
  models::Classifier model{nullptr};
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// lr * factor^floor(epoch / period)
double decayed_lr(const ClassifierTrainConfig& cfg, int epoch);

/// Fresh initialization seeded from cfg.seed, then cfg.epochs of Adam.
/// NumericError on a non-finite loss.
TrainResult train_classifier(const models::ClassifierSpec& spec, const ClassifierTrainConfig& cfg,
                             const PatchSet& train, const EpochCallback& on_epoch = {});

/// Rows in patch order: evidence (evidence head) or probabilities (softmax).
torch::Tensor predict(models::Classifier& model, const PatchSet& set, std::int64_t batch_size = 64);

/// Positive-class probability per patch.
std::vector<double> positive_probs(models::Classifier& model, const PatchSet& set);

/// Uncertainty and expected probability per patch. Softmax-head models have
/// no uncertainty and are rejected with ContractError.
filtering::UncertaintyTable uncertainty_table(models::Classifier& model, const PatchSet& set);

/// Patch table for either head; softmax rows carry u = 1.
filtering::UncertaintyTable prediction_table(models::Classifier& model, const PatchSet& set);

double accuracy(models::Classifier& model, const PatchSet& set);

std::string steps_csv(const std::vector<StepLog>& steps);

}  // namespace evident::training
