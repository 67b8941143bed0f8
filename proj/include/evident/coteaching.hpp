#pragma once

// Two peer classifiers, each updated on the small-loss half of the batch as
// ranked by the other.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "evident/training.hpp"

namespace evident::coteaching {

enum class Inference { kNetA, kAverage };

Inference parse_inference(std::string_view s);  // "net_a" | "average"
std::string_view to_string(Inference i);

struct CoTeachingConfig {
  double forget_rate = 0.1;
  double noise_rate = 0.1;  // recorded for schedule parity; the update uses forget_rate only
  int ramp_epochs = 10;
  int epochs = 300;
  std::int64_t batch_size = 10;
  double learning_rate = 1e-5;
  double weight_decay = 0.01;
  std::vector<double> class_weights{1.0, 1.0};
  double focal_gamma = 2.0;
  Inference inference = Inference::kNetA;
  std::uint64_t seed = 0;

  void validate() const;
};

/// R(t) = 1 - forget_rate * min(t / ramp_epochs, 1)
double remember_rate(const CoTeachingConfig& cfg, int epoch);

/// Indices (ascending) of the ceil(R * B) smallest losses; ties keep the lower index.
std::vector<std::size_t> select_small_loss(std::span<const double> peer_losses, double remember);

struct EpochStats {
  int epoch = 0;
  double remember = 1.0;
  std::size_t seen = 0;
  double loss_a = 0.0;
  double loss_b = 0.0;
  // Patch ids left out of each network's update this epoch.
  std::vector<std::int64_t> discarded_by_a;  // ranked out by B, so A skipped them
  std::vector<std::int64_t> discarded_by_b;
};

struct Peers {
  models::Classifier a{nullptr};
  models::Classifier b{nullptr};
};

/// True when every parameter of the two networks is equal.
bool same_parameters(const models::Classifier& a, const models::Classifier& b);

/// One pass over `data` with cross-selection on every batch.
EpochStats coteach_epoch(Peers& nets, torch::optim::Optimizer& opt_a, torch::optim::Optimizer& opt_b,
                         const training::PatchSet& data, const CoTeachingConfig& cfg, int epoch,
                         std::vector<training::StepLog>* steps = nullptr);

struct CoTeachResult {
  Peers nets;
  std::vector<EpochStats> epochs;
  std::vector<training::StepLog> steps;  // net A's loss per step
  std::vector<std::string> warnings;
};

CoTeachResult train_coteaching(const models::ClassifierSpec& spec, const CoTeachingConfig& cfg,
                               const training::PatchSet& data);

/// Inference according to cfg.inference.
std::vector<double> positive_probs(Peers& nets, const training::PatchSet& set, Inference mode);

}  // namespace evident::coteaching
