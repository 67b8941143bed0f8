#pragma once

// Uncertainty tables and the three filtering policies: patch-driven and
// patient-driven removal before retraining, and threshold abstention at
// deployment.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace evident::filtering {

struct UncertaintyRow {
  std::int64_t patch_id = 0;
  std::string patient_id;
  double uncertainty = 1.0;     // u = K / S
  double predicted_prob = 0.5;  // expected probability of the positive class
  int label = 0;

  friend bool operator==(const UncertaintyRow&, const UncertaintyRow&) = default;
};

class UncertaintyTable {
 public:
  UncertaintyTable() = default;
  explicit UncertaintyTable(std::vector<UncertaintyRow> rows);

  const std::vector<UncertaintyRow>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }

  std::vector<std::string> patient_ids() const;  // sorted, unique

  UncertaintyTable with_patches(std::span<const std::int64_t> patch_ids) const;
  UncertaintyTable with_patients(std::span<const std::string> patient_ids) const;

  /// Header `patch_id,patient_id,uncertainty,predicted_prob,label`; doubles
  /// written with round-trip precision.
  std::string to_csv() const;
  static UncertaintyTable from_csv(const std::string& text);

  friend bool operator==(const UncertaintyTable&, const UncertaintyTable&) = default;

 private:
  std::vector<UncertaintyRow> rows_;
};

/// Row-wise uncertainty from a (rows x k) evidence matrix; patch ids,
/// patient ids and labels describe each row.
UncertaintyTable compute_uncertainties(std::span<const double> evidence, std::size_t k,
                                       std::span<const std::int64_t> patch_ids,
                                       std::span<const std::string> patient_ids,
                                       std::span<const int> labels);

/// ceil(x% * n), tolerant to representation error in x * n / 100.
std::size_t removal_count(std::size_t n, double x_percent);

/// Drops the ceil(x% * N) most uncertain patches (ties: lower patch id goes
/// first) and returns the retained patch ids in table order.
std::vector<std::int64_t> filter_patches(const UncertaintyTable& table, double x_percent);

struct PatientUncertainty {
  std::string patient_id;
  double mean_uncertainty = 0.0;
  std::size_t patch_count = 0;
};

std::vector<PatientUncertainty> patient_uncertainties(const UncertaintyTable& table);

/// Drops the ceil(x% * P) patients with the highest mean patch uncertainty
/// (ties: lower patient id goes first) and returns the retained patient ids.
std::vector<std::string> filter_patients(const UncertaintyTable& table, double x_percent);

struct DeploymentSplit {
  std::vector<std::int64_t> retained;   // u < tau
  std::vector<std::int64_t> abstained;  // u >= tau
};

DeploymentSplit deployment_filter(const UncertaintyTable& table, double tau);

/// Logged record of one filtering decision.
struct FilterDecision {
  std::string policy;  // "patch", "patient" or "deployment"
  double parameter = 0.0;
  std::size_t considered = 0;
  std::vector<std::string> removed_ids;

  nlohmann::json to_json() const;
};

FilterDecision describe_patch_filter(const UncertaintyTable& table, double x_percent);
FilterDecision describe_patient_filter(const UncertaintyTable& table, double x_percent);
FilterDecision describe_deployment_filter(const UncertaintyTable& table, double tau);

}  // namespace evident::filtering
