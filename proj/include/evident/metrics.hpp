#pragma once

// Evaluation: patient-level aggregation, confusion-matrix metrics with a
// bootstrap AUC interval, expected calibration error, MMD and Frechet
// distances between embedded image sets, and the deployment threshold sweep.

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evident/filtering.hpp"
#include "evident/grid.hpp"
#include "json.hpp"

namespace evident::metrics {

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Undefined quantities (no positives, single-class AUC, empty input) are
/// empty optionals and serialize as JSON null.
struct MetricsReport {
  std::size_t n = 0;
  ConfusionCounts counts;
  std::optional<double> accuracy;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> auc;
  std::optional<Interval> auc_ci;
  std::optional<double> ece;
  int n_bootstrap = 3000;
  std::string note;  // why a field is undefined, empty otherwise

  nlohmann::json to_json() const;
};

struct BootstrapOptions {
  int n_resamples = 3000;
  std::uint64_t seed = 0;
  double confidence = 0.95;
};

struct PatientPrediction {
  std::string patient_id;
  double median_prob = 0.5;
  int label_pred = 0;  // 1 iff median_prob > 0.5
  double mean_uncertainty = 1.0;
  int label_true = 0;
};

inline constexpr std::size_t kPatchesPerPatient = 20;

/// Median over each patient's `group_size` patch probabilities (mean of the
/// two middle order statistics), thresholded with a strict > 0.5.
std::vector<PatientPrediction> aggregate_patient(const filtering::UncertaintyTable& table,
                                                 std::size_t group_size = kPatchesPerPatient);

double median(std::vector<double> values);

/// Rank-statistic AUC with midranks for ties. Throws DomainError when only
/// one class is present.
double roc_auc(std::span<const int> y_true, std::span<const double> score);

ConfusionCounts confusion(std::span<const int> y_true, std::span<const int> y_pred);

MetricsReport classification_metrics(std::span<const int> y_true, std::span<const int> y_pred,
                                     std::span<const double> y_score, const BootstrapOptions& boot = {},
                                     int ece_bins = 10);

/// Equal-width confidence bins; ECE = sum_b (|b| / N) |acc(b) - conf(b)|.
double expected_calibration_error(std::span<const int> y_true, std::span<const int> y_pred,
                                  std::span<const double> confidence, int n_bins = 10);

/// Binary convenience: prediction = p > 0.5, confidence = max(p, 1 - p).
double expected_calibration_error(std::span<const int> y_true, std::span<const double> prob_positive,
                                  int n_bins = 10);

/// Rows of the matrices are samples.
double mmd_unbiased(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);
double mmd_biased(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);
/// Unbiased squared MMD, Gaussian kernel with median-heuristic bandwidth,
/// clamped at 0.
inline double mmd(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return mmd_unbiased(a, b); }

/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)). Adds shrinkage to
/// the covariances when a side has no more samples than dimensions, and
/// retries with shrinkage if the square root fails.
double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double shrinkage = 1e-6);

using Embedding = std::function<std::vector<double>(const Slice2&)>;

/// Replicates the grayscale slice into three channels and projects onto a
/// fixed Gaussian random basis (lazily sized to the first input).
class RandomProjectionEmbedding {
 public:
  RandomProjectionEmbedding(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {}
  std::vector<double> operator()(const Slice2& s) const;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
  mutable Eigen::MatrixXd basis_;
};

/// Block-averaged pixels.
std::vector<double> pooled_pixels(const Slice2& s, std::size_t block = 4);

/// Fraction of pixels per equal-width bin over [-1, 1]; position-invariant
/// feature vector used for MMD between slice sets.
std::vector<double> intensity_histogram(const Slice2& s, std::size_t bins = 32);

Eigen::MatrixXd embed(std::span<const Slice2> slices, const Embedding& fn);

double fid(std::span<const Slice2> a, std::span<const Slice2> b, const Embedding& fn);

enum class FidMode { kPerIndexAverage, kPooled };
FidMode parse_fid_mode(const std::string& s);

/// FID between two sets of volumes given as slice stacks. Per-index mode
/// groups slice i of every volume and averages the per-index distances.
double fid_volumes(const std::vector<std::vector<Slice2>>& a, const std::vector<std::vector<Slice2>>& b,
                   const Embedding& fn, FidMode mode = FidMode::kPerIndexAverage);

struct SweepRow {
  double tau = 1.0;
  std::size_t n_retained = 0;  // patients with mean uncertainty < tau
  MetricsReport report;
};

/// Threshold ladder reported in the deployment-filtering experiments.
inline const std::vector<double> kDeploymentLadder{1.0, 0.68, 0.63, 0.58, 0.53};

/// For each tau (non-increasing ladder): aggregate patients, abstain on those
/// whose mean uncertainty is >= tau, score the rest.
std::vector<SweepRow> threshold_sweep(const filtering::UncertaintyTable& table, std::span<const double> ladder,
                                      const BootstrapOptions& boot = {}, std::size_t group_size = kPatchesPerPatient);

/// Plot-ready CSV: tau,n_retained,acc,sen,spec,auc ("undefined" where empty).
std::string sweep_csv(std::span<const SweepRow> rows);

}  // namespace evident::metrics
