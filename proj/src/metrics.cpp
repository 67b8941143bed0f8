#include "evident/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "evident/error.hpp"
#include "evident/io.hpp"
#include "evident/rng.hpp"

namespace evident::metrics {
namespace {

void check_binary(std::span<const int> y, const char* what) {
  for (int v : y) {
    if (v != 0 && v != 1) throw DomainError(std::string(what) + " must be 0 or 1");
  }
}

// Linear interpolation between order statistics (numpy's default rule).
double percentile(std::vector<double> sorted, double q) {
  std::sort(sorted.begin(), sorted.end());
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::string opt_csv(const std::optional<double>& v) { return v ? io::format_double(*v) : "undefined"; }

Eigen::VectorXd column_mean(const Eigen::MatrixXd& x) { return x.colwise().mean().transpose(); }

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  return (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
}

std::optional<Eigen::MatrixXd> psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success) return std::nullopt;
  Eigen::VectorXd ev = es.eigenvalues();
  if (!ev.allFinite()) return std::nullopt;
  ev = ev.cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// Tr((S_a^1/2 S_b S_a^1/2)^1/2), equal to Tr((S_a S_b)^1/2) but computed
// through symmetric matrices only.
std::optional<double> trace_sqrt_product(const Eigen::MatrixXd& sa, const Eigen::MatrixXd& sb) {
  const auto ra = psd_sqrt(sa);
  if (!ra) return std::nullopt;
  Eigen::MatrixXd inner = (*ra) * sb * (*ra);
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success || !es.eigenvalues().allFinite()) return std::nullopt;
  return es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
}

double squared_distance(const Eigen::MatrixXd& a, Eigen::Index i, const Eigen::MatrixXd& b, Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

struct KernelSums {
  double xx = 0.0;  // off-diagonal sum within a
  double yy = 0.0;  // off-diagonal sum within b
  double xy = 0.0;
};

KernelSums gaussian_kernel_sums(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() < 2 || b.rows() < 2) throw DomainError("MMD needs at least two samples per side");
  if (a.cols() != b.cols()) throw DomainError("MMD samples disagree in feature dimension");
  Eigen::MatrixXd pooled(a.rows() + b.rows(), a.cols());
  pooled << a, b;
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(pooled.rows() * (pooled.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < pooled.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < pooled.rows(); ++j) dist.push_back(std::sqrt(squared_distance(pooled, i, pooled, j)));
  }
  double h = median(dist);
  if (!(h > 0.0)) h = 1.0;
  const double inv = 1.0 / (2.0 * h * h);
  KernelSums s;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < a.rows(); ++j) s.xx += 2.0 * std::exp(-squared_distance(a, i, a, j) * inv);
  }
  for (Eigen::Index i = 0; i < b.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < b.rows(); ++j) s.yy += 2.0 * std::exp(-squared_distance(b, i, b, j) * inv);
  }
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) s.xy += std::exp(-squared_distance(a, i, b, j) * inv);
  }
  return s;
}

}  // namespace

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["n"] = n;
  j["counts"] = {{"tp", counts.tp}, {"fp", counts.fp}, {"tn", counts.tn}, {"fn", counts.fn}};
  j["accuracy"] = opt(accuracy);
  j["sensitivity"] = opt(sensitivity);
  j["specificity"] = opt(specificity);
  j["auc"] = opt(auc);
  j["auc_ci"] = auc_ci ? nlohmann::json::array({auc_ci->lo, auc_ci->hi}) : nlohmann::json(nullptr);
  j["ece"] = opt(ece);
  j["n_bootstrap"] = n_bootstrap;
  j["note"] = note;
  return j;
}

double median(std::vector<double> values) {
  if (values.empty()) throw DomainError("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<PatientPrediction> aggregate_patient(const filtering::UncertaintyTable& table, std::size_t group_size) {
  struct Group {
    std::vector<double> probs;
    double u_sum = 0.0;
    int label = 0;
    bool mixed = false;
  };
  std::map<std::string, Group> groups;
  for (const auto& r : table.rows()) {
    auto [it, fresh] = groups.try_emplace(r.patient_id);
    auto& g = it->second;
    if (!fresh && g.label != r.label) g.mixed = true;
    g.label = r.label;
    g.probs.push_back(r.predicted_prob);
    g.u_sum += r.uncertainty;
  }
  std::vector<PatientPrediction> out;
  out.reserve(groups.size());
  for (auto& [id, g] : groups) {
    if (g.probs.size() != group_size) {
      throw DomainError("patient " + id + " has " + std::to_string(g.probs.size()) + " patches, expected " +
                        std::to_string(group_size));
    }
    if (g.mixed) throw DomainError("patient " + id + " has patches with different labels");
    PatientPrediction p;
    p.patient_id = id;
    p.median_prob = median(g.probs);
    p.label_pred = p.median_prob > 0.5 ? 1 : 0;
    p.mean_uncertainty = g.u_sum / static_cast<double>(g.probs.size());
    p.label_true = g.label;
    out.push_back(std::move(p));
  }
  return out;
}

double roc_auc(std::span<const int> y_true, std::span<const double> score) {
  if (y_true.size() != score.size()) throw DomainError("labels and scores disagree in length");
  check_binary(y_true, "labels");
  const std::size_t n = y_true.size();
  const auto n_pos = static_cast<std::size_t>(std::count(y_true.begin(), y_true.end(), 1));
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DomainError("AUC undefined: only one class present");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
  double rank_sum_pos = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && score[order[j + 1]] == score[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (y_true[order[k]] == 1) rank_sum_pos += midrank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

ConfusionCounts confusion(std::span<const int> y_true, std::span<const int> y_pred) {
  if (y_true.size() != y_pred.size()) throw DomainError("labels and predictions disagree in length");
  check_binary(y_true, "labels");
  check_binary(y_pred, "predictions");
  ConfusionCounts c;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] == 1) {
      ++(y_pred[i] == 1 ? c.tp : c.fn);
    } else {
      ++(y_pred[i] == 1 ? c.fp : c.tn);
    }
  }
  return c;
}

double expected_calibration_error(std::span<const int> y_true, std::span<const int> y_pred,
                                  std::span<const double> confidence, int n_bins) {
  if (n_bins < 1) throw DomainError("ECE needs at least one bin");
  if (y_true.size() != y_pred.size() || y_true.size() != confidence.size()) {
    throw DomainError("ECE inputs disagree in length");
  }
  if (y_true.empty()) throw DomainError("ECE of an empty set");
  std::vector<double> conf_sum(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<double> correct(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<std::size_t> count(static_cast<std::size_t>(n_bins), 0);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const double c = confidence[i];
    if (!(c >= 0.0 && c <= 1.0)) throw DomainError("confidence outside [0, 1]");
    const auto b = std::min(static_cast<std::size_t>(std::floor(c * n_bins)), static_cast<std::size_t>(n_bins - 1));
    conf_sum[b] += c;
    correct[b] += y_true[i] == y_pred[i] ? 1.0 : 0.0;
    ++count[b];
  }
  double ece = 0.0;
  const double n = static_cast<double>(y_true.size());
  for (std::size_t b = 0; b < count.size(); ++b) {
    if (count[b] == 0) continue;
    const double m = static_cast<double>(count[b]);
    ece += (m / n) * std::abs(correct[b] / m - conf_sum[b] / m);
  }
  return ece;
}

double expected_calibration_error(std::span<const int> y_true, std::span<const double> prob_positive, int n_bins) {
  std::vector<int> pred(prob_positive.size());
  std::vector<double> conf(prob_positive.size());
  for (std::size_t i = 0; i < prob_positive.size(); ++i) {
    pred[i] = prob_positive[i] > 0.5 ? 1 : 0;
    conf[i] = std::max(prob_positive[i], 1.0 - prob_positive[i]);
  }
  return expected_calibration_error(y_true, pred, conf, n_bins);
}

MetricsReport classification_metrics(std::span<const int> y_true, std::span<const int> y_pred,
                                     std::span<const double> y_score, const BootstrapOptions& boot, int ece_bins) {
  if (y_score.size() != y_true.size()) throw DomainError("labels and scores disagree in length");
  MetricsReport r;
  r.n_bootstrap = boot.n_resamples;
  r.counts = confusion(y_true, y_pred);
  r.n = y_true.size();
  if (r.n == 0) {
    r.note = "no samples";
    return r;
  }
  r.accuracy = static_cast<double>(r.counts.tp + r.counts.tn) / static_cast<double>(r.n);
  if (r.counts.tp + r.counts.fn > 0) r.sensitivity = static_cast<double>(r.counts.tp) / static_cast<double>(r.counts.tp + r.counts.fn);
  if (r.counts.tn + r.counts.fp > 0) r.specificity = static_cast<double>(r.counts.tn) / static_cast<double>(r.counts.tn + r.counts.fp);

  std::vector<double> conf(r.n);
  for (std::size_t i = 0; i < r.n; ++i) conf[i] = std::max(y_score[i], 1.0 - y_score[i]);
  r.ece = expected_calibration_error(y_true, y_pred, conf, ece_bins);

  try {
    r.auc = roc_auc(y_true, y_score);
  } catch (const DomainError& e) {
    r.note = e.what();
    return r;
  }
  std::vector<double> draws;
  draws.reserve(static_cast<std::size_t>(std::max(boot.n_resamples, 0)));
  std::vector<int> yt(r.n);
  std::vector<double> ys(r.n);
  for (int b = 0; b < boot.n_resamples; ++b) {
    Rng rng(derive_seed(boot.seed, static_cast<std::uint64_t>(b)));
    int pos = 0;
    for (std::size_t i = 0; i < r.n; ++i) {
      const auto k = rng.index(r.n);
      yt[i] = y_true[k];
      ys[i] = y_score[k];
      pos += yt[i];
    }
    if (pos == 0 || pos == static_cast<int>(r.n)) continue;
    draws.push_back(roc_auc(yt, ys));
  }
  if (!draws.empty()) {
    const double tail = 0.5 * (1.0 - boot.confidence);
    Interval ci{percentile(draws, tail), percentile(draws, 1.0 - tail)};
    ci.lo = std::min(ci.lo, *r.auc);
    ci.hi = std::max(ci.hi, *r.auc);
    r.auc_ci = ci;
  }
  return r;
}

double mmd_unbiased(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const auto s = gaussian_kernel_sums(a, b);
  const double m = static_cast<double>(a.rows());
  const double n = static_cast<double>(b.rows());
  const double v = s.xx / (m * (m - 1.0)) + s.yy / (n * (n - 1.0)) - 2.0 * s.xy / (m * n);
  return std::max(v, 0.0);
}

double mmd_biased(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const auto s = gaussian_kernel_sums(a, b);
  const double m = static_cast<double>(a.rows());
  const double n = static_cast<double>(b.rows());
  const double v = (s.xx + m) / (m * m) + (s.yy + n) / (n * n) - 2.0 * s.xy / (m * n);
  return std::max(v, 0.0);
}

double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double shrinkage) {
  if (a.rows() < 2 || b.rows() < 2) throw DomainError("Frechet distance needs at least two samples per side");
  if (a.cols() != b.cols()) throw DomainError("Frechet distance samples disagree in feature dimension");
  const Eigen::Index d = a.cols();
  Eigen::MatrixXd sa = covariance(a);
  Eigen::MatrixXd sb = covariance(b);
  const Eigen::MatrixXd ridge = shrinkage * Eigen::MatrixXd::Identity(d, d);
  if (a.rows() <= d || b.rows() <= d) {
    sa += ridge;
    sb += ridge;
  }
  auto tr = trace_sqrt_product(sa, sb);
  if (!tr) {
    sa += ridge;
    sb += ridge;
    tr = trace_sqrt_product(sa, sb);
    if (!tr) throw NumericError("covariance square root failed after shrinkage");
  }
  const double mean_term = (column_mean(a) - column_mean(b)).squaredNorm();
  const double v = mean_term + sa.trace() + sb.trace() - 2.0 * (*tr);
  return std::max(v, 0.0);
}

std::vector<double> RandomProjectionEmbedding::operator()(const Slice2& s) const {
  const auto p = static_cast<Eigen::Index>(s.pixels.size());
  if (basis_.cols() != 3 * p) {
    Rng rng(seed_);
    basis_.resize(static_cast<Eigen::Index>(dim_), 3 * p);
    const double scale = 1.0 / std::sqrt(static_cast<double>(3 * p));
    for (Eigen::Index c = 0; c < basis_.cols(); ++c) {
      for (Eigen::Index r = 0; r < basis_.rows(); ++r) basis_(r, c) = rng.normal() * scale;
    }
  }
  Eigen::VectorXd x(3 * p);
  for (Eigen::Index ch = 0; ch < 3; ++ch) {
    for (Eigen::Index i = 0; i < p; ++i) x(ch * p + i) = s.pixels[static_cast<std::size_t>(i)];
  }
  const Eigen::VectorXd y = basis_ * x;
  return {y.data(), y.data() + y.size()};
}

std::vector<double> pooled_pixels(const Slice2& s, std::size_t block) {
  if (block == 0) throw DomainError("pooling block must be positive");
  const std::size_t br = (s.rows + block - 1) / block;
  const std::size_t bc = (s.cols + block - 1) / block;
  std::vector<double> sum(br * bc, 0.0);
  std::vector<double> count(br * bc, 0.0);
  for (std::size_t r = 0; r < s.rows; ++r) {
    for (std::size_t c = 0; c < s.cols; ++c) {
      const std::size_t k = (r / block) * bc + c / block;
      sum[k] += s.at(r, c);
      count[k] += 1.0;
    }
  }
  for (std::size_t k = 0; k < sum.size(); ++k) sum[k] /= count[k];
  return sum;
}

std::vector<double> intensity_histogram(const Slice2& s, std::size_t bins) {
  if (bins == 0) throw DomainError("histogram needs at least one bin");
  if (s.pixels.empty()) throw DomainError("histogram of an empty slice");
  std::vector<double> h(bins, 0.0);
  const double w = 1.0 / static_cast<double>(s.pixels.size());
  for (float x : s.pixels) {
    const double t = std::clamp((static_cast<double>(x) + 1.0) / 2.0, 0.0, 1.0);
    h[std::min(static_cast<std::size_t>(t * static_cast<double>(bins)), bins - 1)] += w;
  }
  return h;
}

Eigen::MatrixXd embed(std::span<const Slice2> slices, const Embedding& fn) {
  if (slices.empty()) return {};
  const auto first = fn(slices[0]);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(slices.size()), static_cast<Eigen::Index>(first.size()));
  for (std::size_t i = 0; i < slices.size(); ++i) {
    const auto f = i == 0 ? first : fn(slices[i]);
    if (f.size() != first.size()) throw DomainError("embedding returned vectors of varying length");
    for (std::size_t j = 0; j < f.size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = f[j];
  }
  return m;
}

double fid(std::span<const Slice2> a, std::span<const Slice2> b, const Embedding& fn) {
  return frechet_distance(embed(a, fn), embed(b, fn));
}

FidMode parse_fid_mode(const std::string& s) {
  if (s == "per_index_avg") return FidMode::kPerIndexAverage;
  if (s == "pooled") return FidMode::kPooled;
  throw ConfigError("unknown fid_mode '" + s + "' (expected per_index_avg or pooled)");
}

double fid_volumes(const std::vector<std::vector<Slice2>>& a, const std::vector<std::vector<Slice2>>& b,
                   const Embedding& fn, FidMode mode) {
  if (a.empty() || b.empty()) throw DomainError("FID needs volumes on both sides");
  if (mode == FidMode::kPooled) {
    std::vector<Slice2> pa, pb;
    for (const auto& v : a) pa.insert(pa.end(), v.begin(), v.end());
    for (const auto& v : b) pb.insert(pb.end(), v.begin(), v.end());
    return fid(pa, pb, fn);
  }
  const std::size_t depth = a.front().size();
  for (const auto* side : {&a, &b}) {
    for (const auto& v : *side) {
      if (v.size() != depth) throw DomainError("per-index FID needs volumes of equal slice count");
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < depth; ++i) {
    std::vector<Slice2> sa, sb;
    for (const auto& v : a) sa.push_back(v[i]);
    for (const auto& v : b) sb.push_back(v[i]);
    total += fid(sa, sb, fn);
  }
  return total / static_cast<double>(depth);
}

std::vector<SweepRow> threshold_sweep(const filtering::UncertaintyTable& table, std::span<const double> ladder,
                                      const BootstrapOptions& boot, std::size_t group_size) {
  if (ladder.empty()) throw DomainError("threshold ladder is empty");
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    if (!(ladder[i] > 0.0 && ladder[i] <= 1.0)) throw DomainError("threshold outside (0, 1]");
    if (i > 0 && ladder[i] > ladder[i - 1]) throw DomainError("threshold ladder must be sorted descending");
  }
  const auto patients = aggregate_patient(table, group_size);
  std::vector<SweepRow> rows;
  rows.reserve(ladder.size());
  for (double tau : ladder) {
    std::vector<int> yt, yp;
    std::vector<double> ys;
    for (const auto& p : patients) {
      if (!(p.mean_uncertainty < tau)) continue;
      yt.push_back(p.label_true);
      yp.push_back(p.label_pred);
      ys.push_back(p.median_prob);
    }
    SweepRow row;
    row.tau = tau;
    row.n_retained = yt.size();
    row.report = classification_metrics(yt, yp, ys, boot);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::ostringstream ss;
  ss << "tau,n_retained,acc,sen,spec,auc\n";
  for (const auto& r : rows) {
    ss << io::format_double(r.tau) << ',' << r.n_retained << ',' << opt_csv(r.report.accuracy) << ','
       << opt_csv(r.report.sensitivity) << ',' << opt_csv(r.report.specificity) << ',' << opt_csv(r.report.auc)
       << '\n';
  }
  return ss.str();
}

}  // namespace evident::metrics
