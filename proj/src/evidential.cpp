#include "evident/evidential.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "evident/error.hpp"

namespace evident::evidential {
namespace {

void check_evidence(std::span<const double> evidence) {
  if (evidence.size() < 2) throw DomainError("evidence needs at least two classes");
  for (std::size_t k = 0; k < evidence.size(); ++k) {
    if (!(evidence[k] >= 0.0) || !std::isfinite(evidence[k])) {
      throw DomainError("evidence component " + std::to_string(k) + " is negative or not finite");
    }
  }
}

void check_one_hot(std::span<const double> y, std::size_t k) {
  if (y.size() != k) throw DomainError("label vector length does not match number of classes");
  int ones = 0;
  for (double v : y) {
    if (v == 1.0) {
      ++ones;
    } else if (v != 0.0) {
      throw DomainError("label vector is not one-hot");
    }
  }
  if (ones != 1) throw DomainError("label vector is not one-hot");
}

void check_alpha(std::span<const double> alpha) {
  if (alpha.size() < 2) throw DomainError("alpha needs at least two classes");
  for (double a : alpha) {
    if (!(a >= 1.0) || !std::isfinite(a)) throw DomainError("alpha components must be >= 1");
  }
}

double sum(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace

ClassWeights::ClassWeights(std::vector<double> beta) : beta_(std::move(beta)) {
  if (beta_.empty()) throw DomainError("class weights are empty");
  for (double b : beta_) {
    if (!(b > 0.0) || !std::isfinite(b)) throw DomainError("class weights must be positive");
  }
}

double AnnealingSchedule::weight() const {
  if (ramp_epochs <= 0) throw DomainError("ramp_epochs must be positive");
  if (epoch < 0) throw DomainError("epoch must be non-negative");
  return std::min(1.0, static_cast<double>(epoch) / static_cast<double>(ramp_epochs));
}

void FocusingParameter::validate() const {
  if (gamma != 2.0) {
    throw DomainError("evidential focal loss is closed-form only for gamma = 2 (got " +
                      std::to_string(gamma) + ")");
  }
}

DirichletOpinion evidence_to_opinion(std::span<const double> evidence) {
  check_evidence(evidence);
  const std::size_t k = evidence.size();
  DirichletOpinion op;
  op.alpha.resize(k);
  op.belief.resize(k);
  op.expected_prob.resize(k);
  // S = sum_k e_k + K, so u = K / (sum_k e_k + K) holds bit for bit.
  double evidence_sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    op.alpha[i] = evidence[i] + 1.0;
    evidence_sum += evidence[i];
  }
  const double strength = evidence_sum + static_cast<double>(k);
  op.strength = strength;
  for (std::size_t i = 0; i < k; ++i) {
    op.belief[i] = evidence[i] / strength;
    op.expected_prob[i] = op.alpha[i] / strength;
  }
  op.uncertainty = static_cast<double>(k) / strength;
  return op;
}

double digamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) throw DomainError("digamma requires x > 0");
  double acc = 0.0;
  while (x < 12.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Bernoulli-number tail: B2n / (2n x^2n), n = 1..7
  const double series =
      inv2 * (1.0 / 12.0 -
              inv2 * (1.0 / 120.0 -
                      inv2 * (1.0 / 252.0 -
                              inv2 * (1.0 / 240.0 -
                                      inv2 * (1.0 / 132.0 -
                                              inv2 * (691.0 / 32760.0 - inv2 * (1.0 / 12.0)))))));
  return acc + std::log(x) - 0.5 * inv - series;
}

double trigamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) throw DomainError("trigamma requires x > 0");
  double acc = 0.0;
  while (x < 12.0) {
    acc += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double series =
      inv * (1.0 +
             inv * (0.5 +
                    inv * (1.0 / 6.0 -
                           inv2 * (1.0 / 30.0 -
                                   inv2 * (1.0 / 42.0 -
                                           inv2 * (1.0 / 30.0 -
                                                   inv2 * (5.0 / 66.0 -
                                                           inv2 * (691.0 / 2730.0 -
                                                                   inv2 * (7.0 / 6.0)))))))));
  return acc + series;
}

double evidential_focal_loss(const DirichletOpinion& opinion, std::span<const double> one_hot,
                             const ClassWeights& beta) {
  const std::size_t k = opinion.num_classes();
  check_alpha(opinion.alpha);
  check_one_hot(one_hot, k);
  if (beta.size() != k) throw DomainError("class weight count does not match number of classes");
  const double s = opinion.strength;
  const double psi_s = digamma(s);
  double loss = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    const double gap = one_hot[j] - opinion.alpha[j] / s;
    loss += beta[j] * gap * gap * (psi_s - digamma(opinion.alpha[j]));
  }
  return loss;
}

std::vector<double> evidential_focal_loss_grad(std::span<const double> evidence,
                                               std::span<const double> one_hot,
                                               const ClassWeights& beta) {
  const DirichletOpinion op = evidence_to_opinion(evidence);
  const std::size_t k = op.num_classes();
  check_one_hot(one_hot, k);
  if (beta.size() != k) throw DomainError("class weight count does not match number of classes");
  const double s = op.strength;
  const double psi_s = digamma(s);
  const double tri_s = trigamma(s);

  // dL/dalpha_m = sum_j beta_j [ -2 g_j (d p_j / d alpha_m) D_j + g_j^2 (psi'(S) - psi'(alpha_j) [j==m]) ]
  // with g_j = y_j - alpha_j/S, D_j = psi(S) - psi(alpha_j), d p_j/d alpha_m = [j==m]/S - alpha_j/S^2.
  std::vector<double> gap(k), dpsi(k), tri(k);
  for (std::size_t j = 0; j < k; ++j) {
    const double a = op.alpha[j];
    gap[j] = one_hot[j] - op.alpha[j] / s;
    dpsi[j] = psi_s - digamma(a);
    tri[j] = trigamma(a);
  }
  double common = 0.0;  // terms shared by every m
  for (std::size_t j = 0; j < k; ++j) {
    common += beta[j] * (2.0 * gap[j] * (op.alpha[j] / (s * s)) * dpsi[j] + gap[j] * gap[j] * tri_s);
  }
  std::vector<double> grad(k);
  for (std::size_t m = 0; m < k; ++m) {
    grad[m] = common + beta[m] * (-2.0 * gap[m] * dpsi[m] / s - gap[m] * gap[m] * tri[m]);
  }
  return grad;
}

double kl_to_uniform_dirichlet(std::span<const double> alpha) {
  check_alpha(alpha);
  const double k = static_cast<double>(alpha.size());
  const double s = sum(alpha);
  const double psi_s = digamma(s);
  double kl = std::lgamma(s) - std::lgamma(k);
  for (double a : alpha) {
    kl -= std::lgamma(a);
    kl += (a - 1.0) * (digamma(a) - psi_s);
  }
  return std::max(kl, 0.0);
}

std::vector<double> kl_to_uniform_dirichlet_grad(std::span<const double> alpha) {
  check_alpha(alpha);
  const double k = static_cast<double>(alpha.size());
  const double s = sum(alpha);
  const double tri_s = trigamma(s);
  std::vector<double> grad(alpha.size());
  for (std::size_t m = 0; m < alpha.size(); ++m) {
    grad[m] = (alpha[m] - 1.0) * trigamma(alpha[m]) - (s - k) * tri_s;
  }
  return grad;
}

std::vector<double> adjusted_alpha(std::span<const double> alpha, std::span<const double> one_hot) {
  check_one_hot(one_hot, alpha.size());
  std::vector<double> out(alpha.size());
  for (std::size_t j = 0; j < alpha.size(); ++j) {
    out[j] = one_hot[j] + (1.0 - one_hot[j]) * alpha[j];
  }
  return out;
}

std::vector<double> one_hot(int label, std::size_t k) {
  if (label < 0 || static_cast<std::size_t>(label) >= k) {
    throw DomainError("label " + std::to_string(label) + " outside [0, " + std::to_string(k) + ")");
  }
  std::vector<double> y(k, 0.0);
  y[static_cast<std::size_t>(label)] = 1.0;
  return y;
}

EvidentialLossTerms total_evidential_loss(std::span<const EvidentialSample> batch,
                                          const ClassWeights& beta,
                                          const AnnealingSchedule& schedule, KlTarget target) {
  if (batch.empty()) throw DomainError("evidential loss over an empty batch");
  const std::size_t k = batch.front().evidence.size();
  std::vector<double> flat;
  std::vector<int> labels;
  flat.reserve(batch.size() * k);
  for (const auto& sample : batch) {
    if (sample.evidence.size() != k) throw DomainError("inconsistent class count in batch");
    check_one_hot(sample.one_hot, k);
    flat.insert(flat.end(), sample.evidence.begin(), sample.evidence.end());
    labels.push_back(static_cast<int>(
        std::find(sample.one_hot.begin(), sample.one_hot.end(), 1.0) - sample.one_hot.begin()));
  }
  return total_evidential_loss(flat, k, labels, beta, schedule, target);
}

EvidentialLossTerms total_evidential_loss(std::span<const double> evidence, std::size_t k,
                                          std::span<const int> labels, const ClassWeights& beta,
                                          const AnnealingSchedule& schedule, KlTarget target,
                                          std::span<double> grad) {
  if (labels.empty()) throw DomainError("evidential loss over an empty batch");
  if (k < 2 || evidence.size() != labels.size() * k) {
    throw DomainError("evidence buffer does not match batch size x classes");
  }
  if (!grad.empty() && grad.size() != evidence.size()) {
    throw DomainError("gradient buffer does not match evidence buffer");
  }
  EvidentialLossTerms terms;
  terms.kl_weight = schedule.weight();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto e = evidence.subspan(i * k, k);
    const auto y = one_hot(labels[i], k);
    const DirichletOpinion op = evidence_to_opinion(e);
    terms.classification += evidential_focal_loss(op, y, beta);

    std::vector<double> kl_alpha =
        target == KlTarget::kAdjustedAlpha ? adjusted_alpha(op.alpha, y) : op.alpha;
    terms.kl += kl_to_uniform_dirichlet(kl_alpha);

    if (!grad.empty()) {
      const auto g_cls = evidential_focal_loss_grad(e, y, beta);
      const auto g_kl = kl_to_uniform_dirichlet_grad(kl_alpha);
      for (std::size_t j = 0; j < k; ++j) {
        const double chain = target == KlTarget::kAdjustedAlpha ? (1.0 - y[j]) : 1.0;
        grad[i * k + j] = g_cls[j] + terms.kl_weight * chain * g_kl[j];
      }
    }
  }
  terms.total = terms.classification + terms.kl_weight * terms.kl;
  return terms;
}

}  // namespace evident::evidential
