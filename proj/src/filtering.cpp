#include "evident/filtering.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "evident/error.hpp"
#include "evident/evidential.hpp"
#include "evident/io.hpp"

namespace evident::filtering {
namespace {

void check_rate(double x_percent) {
  if (!(x_percent >= 0.0 && x_percent < 100.0)) {
    throw DomainError("filter rate must lie in [0, 100), got " + std::to_string(x_percent));
  }
}

}  // namespace

UncertaintyTable::UncertaintyTable(std::vector<UncertaintyRow> rows) : rows_(std::move(rows)) {
  std::set<std::int64_t> seen;
  for (const auto& r : rows_) {
    if (!seen.insert(r.patch_id).second) {
      throw DomainError("duplicate patch id " + std::to_string(r.patch_id) + " in uncertainty table");
    }
    if (!(r.uncertainty > 0.0 && r.uncertainty <= 1.0)) {
      throw DomainError("uncertainty outside (0, 1] for patch " + std::to_string(r.patch_id));
    }
  }
}

std::vector<std::string> UncertaintyTable::patient_ids() const {
  std::set<std::string> ids;
  for (const auto& r : rows_) ids.insert(r.patient_id);
  return {ids.begin(), ids.end()};
}

UncertaintyTable UncertaintyTable::with_patches(std::span<const std::int64_t> patch_ids) const {
  const std::set<std::int64_t> keep(patch_ids.begin(), patch_ids.end());
  std::vector<UncertaintyRow> out;
  for (const auto& r : rows_) {
    if (keep.contains(r.patch_id)) out.push_back(r);
  }
  return UncertaintyTable(std::move(out));
}

UncertaintyTable UncertaintyTable::with_patients(std::span<const std::string> patient_ids) const {
  const std::set<std::string> keep(patient_ids.begin(), patient_ids.end());
  std::vector<UncertaintyRow> out;
  for (const auto& r : rows_) {
    if (keep.contains(r.patient_id)) out.push_back(r);
  }
  return UncertaintyTable(std::move(out));
}

std::string UncertaintyTable::to_csv() const {
  std::ostringstream ss;
  ss << "patch_id,patient_id,uncertainty,predicted_prob,label\n";
  for (const auto& r : rows_) {
    ss << r.patch_id << ',' << r.patient_id << ',' << io::format_double(r.uncertainty) << ','
       << io::format_double(r.predicted_prob) << ',' << r.label << '\n';
  }
  return ss.str();
}

UncertaintyTable UncertaintyTable::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "patch_id,patient_id,uncertainty,predicted_prob,label") {
    throw IoError("uncertainty table has an unexpected header: " + line);
  }
  std::vector<UncertaintyRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = io::split_csv_line(line);
    if (cells.size() != 5) throw IoError("uncertainty table row has " + std::to_string(cells.size()) + " columns");
    rows.push_back(UncertaintyRow{std::stoll(cells[0]), cells[1], std::stod(cells[2]), std::stod(cells[3]),
                                  std::stoi(cells[4])});
  }
  return UncertaintyTable(std::move(rows));
}

UncertaintyTable compute_uncertainties(std::span<const double> evidence, std::size_t k,
                                       std::span<const std::int64_t> patch_ids,
                                       std::span<const std::string> patient_ids, std::span<const int> labels) {
  const std::size_t n = patch_ids.size();
  if (patient_ids.size() != n || labels.size() != n || evidence.size() != n * k) {
    throw DomainError("evidence matrix and row descriptors disagree in length");
  }
  std::vector<UncertaintyRow> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto op = evidential::evidence_to_opinion(evidence.subspan(i * k, k));
    rows.push_back(UncertaintyRow{patch_ids[i], patient_ids[i], op.uncertainty, op.expected_prob[k - 1], labels[i]});
  }
  return UncertaintyTable(std::move(rows));
}

std::size_t removal_count(std::size_t n, double x_percent) {
  check_rate(x_percent);
  const double exact = x_percent * static_cast<double>(n) / 100.0;
  const auto count = static_cast<std::size_t>(std::ceil(exact - 1e-9));
  return std::min(count, n);
}

namespace {

std::vector<std::size_t> removal_order(const UncertaintyTable& t) {
  std::vector<std::size_t> order(t.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto& rows = t.rows();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (rows[a].uncertainty != rows[b].uncertainty) return rows[a].uncertainty > rows[b].uncertainty;
    return rows[a].patch_id < rows[b].patch_id;
  });
  return order;
}

std::vector<PatientUncertainty> patients_by_removal(const UncertaintyTable& t) {
  auto patients = patient_uncertainties(t);
  std::stable_sort(patients.begin(), patients.end(), [](const auto& a, const auto& b) {
    if (a.mean_uncertainty != b.mean_uncertainty) return a.mean_uncertainty > b.mean_uncertainty;
    return a.patient_id < b.patient_id;
  });
  return patients;
}

}  // namespace

std::vector<std::int64_t> filter_patches(const UncertaintyTable& table, double x_percent) {
  check_rate(x_percent);
  if (table.empty()) throw DomainError("cannot filter an empty uncertainty table");
  const std::size_t n_remove = removal_count(table.size(), x_percent);
  const auto order = removal_order(table);
  std::vector<bool> removed(table.size(), false);
  for (std::size_t i = 0; i < n_remove; ++i) removed[order[i]] = true;
  std::vector<std::int64_t> keep;
  keep.reserve(table.size() - n_remove);
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (!removed[i]) keep.push_back(table.rows()[i].patch_id);
  }
  return keep;
}

std::vector<PatientUncertainty> patient_uncertainties(const UncertaintyTable& table) {
  std::map<std::string, PatientUncertainty> acc;
  for (const auto& r : table.rows()) {
    auto& p = acc[r.patient_id];
    p.patient_id = r.patient_id;
    p.mean_uncertainty += r.uncertainty;
    ++p.patch_count;
  }
  std::vector<PatientUncertainty> out;
  out.reserve(acc.size());
  for (auto& [id, p] : acc) {
    p.mean_uncertainty /= static_cast<double>(p.patch_count);
    out.push_back(p);
  }
  return out;
}

std::vector<std::string> filter_patients(const UncertaintyTable& table, double x_percent) {
  check_rate(x_percent);
  if (table.empty()) throw DomainError("cannot filter an empty uncertainty table");
  const auto ranked = patients_by_removal(table);
  const std::size_t n_remove = removal_count(ranked.size(), x_percent);
  std::vector<std::string> keep;
  for (std::size_t i = n_remove; i < ranked.size(); ++i) keep.push_back(ranked[i].patient_id);
  std::sort(keep.begin(), keep.end());
  return keep;
}

DeploymentSplit deployment_filter(const UncertaintyTable& table, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw DomainError("deployment threshold must lie in (0, 1]");
  DeploymentSplit split;
  for (const auto& r : table.rows()) {
    (r.uncertainty < tau ? split.retained : split.abstained).push_back(r.patch_id);
  }
  return split;
}

nlohmann::json FilterDecision::to_json() const {
  return nlohmann::json{{"policy", policy},
                        {policy == "deployment" ? "tau" : "rate_percent", parameter},
                        {"considered", considered},
                        {"removed_count", removed_ids.size()},
                        {"removed_ids", removed_ids}};
}

FilterDecision describe_patch_filter(const UncertaintyTable& table, double x_percent) {
  const auto keep = filter_patches(table, x_percent);
  const std::set<std::int64_t> kept(keep.begin(), keep.end());
  FilterDecision d{"patch", x_percent, table.size(), {}};
  for (const auto& r : table.rows()) {
    if (!kept.contains(r.patch_id)) d.removed_ids.push_back(std::to_string(r.patch_id));
  }
  return d;
}

FilterDecision describe_patient_filter(const UncertaintyTable& table, double x_percent) {
  const auto keep = filter_patients(table, x_percent);
  const std::set<std::string> kept(keep.begin(), keep.end());
  const auto all = table.patient_ids();
  FilterDecision d{"patient", x_percent, all.size(), {}};
  for (const auto& id : all) {
    if (!kept.contains(id)) d.removed_ids.push_back(id);
  }
  return d;
}

FilterDecision describe_deployment_filter(const UncertaintyTable& table, double tau) {
  const auto split = deployment_filter(table, tau);
  FilterDecision d{"deployment", tau, table.size(), {}};
  for (auto id : split.abstained) d.removed_ids.push_back(std::to_string(id));
  return d;
}

}  // namespace evident::filtering
