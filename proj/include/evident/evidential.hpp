#pragma once

// Subjective-logic quantities for a Dirichlet opinion and the evidential
// focal loss built on them. Everything here is a pure function of its inputs.

#include <cstddef>
#include <span>
#include <vector>

namespace evident::evidential {

/// Dirichlet opinion derived from non-negative per-class evidence.
struct DirichletOpinion {
  std::vector<double> alpha;          // e_k + 1
  std::vector<double> belief;         // e_k / S
  std::vector<double> expected_prob;  // alpha_k / S
  double strength = 0.0;              // S = sum alpha_k
  double uncertainty = 1.0;           // K / S

  std::size_t num_classes() const { return alpha.size(); }
};

/// Per-class multiplicative loss weights. Not normalized.
class ClassWeights {
 public:
  explicit ClassWeights(std::vector<double> beta);
  static ClassWeights uniform(std::size_t k) { return ClassWeights(std::vector<double>(k, 1.0)); }

  std::span<const double> values() const { return beta_; }
  std::size_t size() const { return beta_.size(); }
  double operator[](std::size_t j) const { return beta_[j]; }

 private:
  std::vector<double> beta_;
};

/// KL annealing weight lambda_t = min(1, t / ramp_epochs).
struct AnnealingSchedule {
  int epoch = 0;
  int ramp_epochs = 10;

  double weight() const;
};

/// The closed-form loss hard-codes the squared modulator, so only gamma == 2
/// is accepted.
struct FocusingParameter {
  double gamma = 2.0;

  void validate() const;
};

/// Which Dirichlet the KL-to-uniform regularizer is applied to.
enum class KlTarget {
  kAdjustedAlpha,  // alpha~ = y + (1 - y) * alpha: correct-class evidence removed
  kFullAlpha,      // literal reading, KL on alpha itself
};

DirichletOpinion evidence_to_opinion(std::span<const double> evidence);

/// psi(x) for x > 0, recurrence up to x >= 12 then the asymptotic series.
double digamma(double x);
/// psi'(x) for x > 0.
double trigamma(double x);

/// sum_j beta_j (y_j - alpha_j / S)^2 (psi(S) - psi(alpha_j))
double evidential_focal_loss(const DirichletOpinion& opinion, std::span<const double> one_hot,
                             const ClassWeights& beta);

/// Gradient of evidential_focal_loss with respect to the raw evidence.
std::vector<double> evidential_focal_loss_grad(std::span<const double> evidence,
                                               std::span<const double> one_hot,
                                               const ClassWeights& beta);

/// KL[Dir(alpha) || Dir(1)] in closed form.
double kl_to_uniform_dirichlet(std::span<const double> alpha);
std::vector<double> kl_to_uniform_dirichlet_grad(std::span<const double> alpha);

std::vector<double> adjusted_alpha(std::span<const double> alpha, std::span<const double> one_hot);

struct EvidentialSample {
  std::vector<double> evidence;
  std::vector<double> one_hot;
};

struct EvidentialLossTerms {
  double classification = 0.0;  // sum_i L^cls_i
  double kl = 0.0;              // sum_i KL_i (unweighted)
  double kl_weight = 0.0;       // lambda_t
  double total = 0.0;           // classification + kl_weight * kl
};

/// sum_i L^cls_i + lambda_t sum_i KL_i over a batch.
EvidentialLossTerms total_evidential_loss(std::span<const EvidentialSample> batch,
                                          const ClassWeights& beta,
                                          const AnnealingSchedule& schedule,
                                          KlTarget target = KlTarget::kAdjustedAlpha);

/// Flat variant used by the trainer: `evidence` is row-major (batch x k),
/// labels are class indices. When `grad` is non-empty it receives
/// d total / d evidence with the same layout.
EvidentialLossTerms total_evidential_loss(std::span<const double> evidence, std::size_t k,
                                          std::span<const int> labels, const ClassWeights& beta,
                                          const AnnealingSchedule& schedule, KlTarget target,
                                          std::span<double> grad = {});

std::vector<double> one_hot(int label, std::size_t k);

}  // namespace evident::evidential
