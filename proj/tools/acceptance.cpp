// Acceptance checks AC1..AC11. Prints one PASS/FAIL line per criterion and
// exits non-zero if any selected criterion fails.
//
//   evident_acceptance            run all
//   evident_acceptance AC3 AC7    run a subset

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "evident/coteaching.hpp"
#include "evident/data.hpp"
#include "evident/error.hpp"
#include "evident/evidential.hpp"
#include "evident/experiment.hpp"
#include "evident/filtering.hpp"
#include "evident/io.hpp"
#include "evident/metrics.hpp"
#include "evident/rng.hpp"
#include "evident/training.hpp"
#include "evident/translation_losses.hpp"

using namespace evident;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("evident_acceptance_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// ---------------------------------------------------------------------------

Outcome ac1() {
  Rng rng(101);
  double worst_sum = 0.0;
  std::size_t inexact = 0;
  for (int i = 0; i < 10000; ++i) {
    // Mix of small and large evidence magnitudes.
    const double scale = std::pow(10.0, rng.uniform(-3.0, 4.0));
    const std::vector<double> e{rng.uniform() * scale, rng.uniform() * scale};
    const auto op = evidential::evidence_to_opinion(e);
    worst_sum = std::max(worst_sum, std::abs(op.belief[0] + op.belief[1] + op.uncertainty - 1.0));
    if (op.uncertainty != 2.0 / (e[0] + e[1] + 2.0)) ++inexact;
  }
  return {worst_sum <= 1e-9 && inexact == 0,
          "max|sum b + u - 1| = " + fmt("%.2e", worst_sum) + ", inexact u = " + std::to_string(inexact)};
}

Outcome ac2() {
  Rng rng(202);
  const evidential::ClassWeights beta({0.25, 0.75});
  double worst = 0.0;
  for (auto target : {evidential::KlTarget::kAdjustedAlpha, evidential::KlTarget::kFullAlpha}) {
    for (int s = 0; s < 100; ++s) {
      std::vector<double> e{rng.uniform(0.05, 30.0), rng.uniform(0.05, 30.0)};
      const std::vector<int> y{static_cast<int>(rng.index(2))};
      const evidential::AnnealingSchedule sched{static_cast<int>(rng.index(15)), 10};
      std::vector<double> grad(2);
      evidential::total_evidential_loss(e, 2, y, beta, sched, target, grad);
      for (int j = 0; j < 2; ++j) {
        const double h = 1e-5 * std::max(1.0, e[j]);
        auto up = e, dn = e;
        up[j] += h;
        dn[j] -= h;
        const double fd = (evidential::total_evidential_loss(up, 2, y, beta, sched, target).total -
                           evidential::total_evidential_loss(dn, 2, y, beta, sched, target).total) /
                          (2.0 * h);
        const double denom = std::max({std::abs(fd), std::abs(grad[j]), 1e-8});
        worst = std::max(worst, std::abs(fd - grad[j]) / denom);
      }
    }
  }
  return {worst <= 1e-4, "max relative error " + fmt("%.2e", worst) + " over 2 x 100 samples"};
}

Outcome ac3() {
  const auto op = evidential::evidence_to_opinion(std::vector<double>{0.0, 0.0});
  const auto beta = evidential::ClassWeights::uniform(2);
  const double efl0 = evidential::evidential_focal_loss(op, evidential::one_hot(0, 2), beta);
  const double efl1 = evidential::evidential_focal_loss(op, evidential::one_hot(1, 2), beta);
  const double kl = evidential::kl_to_uniform_dirichlet(std::vector<double>{2.0, 1.0});
  const double kl_err = std::abs(kl - (std::numbers::ln2 - 0.5));
  const bool ok = std::abs(efl0 - 0.5) <= 1e-12 && std::abs(efl1 - 0.5) <= 1e-12 && kl_err <= 1e-9;
  return {ok, "EFL(uniform) = " + fmt("%.15f", efl0) + ", |KL - (ln2 - 1/2)| = " + fmt("%.2e", kl_err)};
}

Outcome ac4() {
  using namespace translation;
  const auto d = torch::TensorOptions().dtype(torch::kDouble);
  auto v = [](const torch::Tensor& t) { return t.item<double>(); };
  auto t = [&](std::vector<double> x) { return torch::tensor(x, d); };
  std::vector<std::pair<std::string, double>> errs;
  auto check = [&](const std::string& name, double got, double want) { errs.emplace_back(name, std::abs(got - want)); };

  // Least-squares adversarial terms, hand-evaluated.
  // D: mean((r - 1)^2) + mean(f^2)
  check("adv_target_disc", v(adv_target_disc(t({0.9, 0.4}), t({0.3, -0.2}))), (0.01 + 0.36) / 2 + (0.09 + 0.04) / 2);
  check("adv_target_gen", v(adv_target_gen(t({0.3, -0.2}))), (0.49 + 1.44) / 2);
  // Source term: fake branches averaged.
  check("adv_source_disc", v(adv_source_disc(t({0.8}), t({0.2}), t({0.4}))), 0.04 + (0.04 + 0.16) / 2);
  check("adv_source_gen", v(adv_source_gen(t({0.2}), t({0.4}))), (0.64 + 0.36) / 2);
  // Pair discriminator: hat pair positive, tilde pair negative; generator reversed.
  check("acl_disc", v(acl_disc(t({0.7, 1.0}), t({0.1, 0.5}))), (0.09 + 0.0) / 2 + (0.01 + 0.25) / 2);
  check("acl_gen", v(acl_gen(t({0.7, 1.0}), t({0.1, 0.5}))), (0.49 + 1.0) / 2 + (0.81 + 0.25) / 2);
  // Log form on logits.
  check("adv_target_disc_log", v(adv_target_disc(t({0.0}), t({0.0}), GanForm::kLog)), 2 * std::numbers::ln2);
  check("adv_target_gen_log", v(adv_target_gen(t({std::log(3.0)}), GanForm::kLog)), std::log(4.0 / 3.0));
  // Identity: two L1 means.
  check("identity", v(identity_loss(t({0.0, 1.0}), t({0.5, 0.5}), t({-1.0, 0.0}), t({-1.0, 0.2}))), 0.5 + 0.1);
  // Mask: 0.3, 0.9, 0.0, 1.0 on a 2x2 image, delta_max 0.25 (1 px), delta_min 0 -> over = (2.2 - 1)^2.
  const MaskConfig mc{2.0, 0.25, 0.0, 1e-6};
  const double binar = 1 / (0.2 + 1e-6) + 1 / (0.4 + 1e-6) + 2 / (0.5 + 1e-6);
  check("mask", v(mask_loss(t({0.3, 0.9, 0.0, 1.0}).view({2, 2}), mc)), 2.0 * 1.44 + binar);
  check("apply_mask", v(apply_mask(t({0.0}), {t({1.0}), t({0.25})})), 0.25);
  const TranslationTerms terms{t({1.0}).sum(), t({2.0}).sum(), t({3.0}).sum(), t({4.0}).sum()};
  check("total", v(total_translation_loss(terms, {})), 1.0 + 0.2 * 2.0 + 1.0 * 3.0 + 0.0025 * 4.0);

  // Hinge boundaries on a 10x10 image: 5 px and 10 px are loss-free, one
  // pixel beyond either bound costs delta.
  const MaskConfig hb{2.0, 0.1, 0.05, 1e-6};
  const double b100 = 100.0 / (0.5 + 1e-6);
  auto ones = [&](int k) {
    auto m = torch::zeros({100}, d);
    m.narrow(0, 0, k).fill_(1.0);
    return m.view({10, 10});
  };
  check("hinge_at_min", v(mask_loss(ones(5), hb)), b100);
  check("hinge_at_max", v(mask_loss(ones(10), hb)), b100);
  check("hinge_below", v(mask_loss(ones(4), hb)), b100 + 2.0);
  check("hinge_above", v(mask_loss(ones(11), hb)), b100 + 2.0);

  double worst = 0.0;
  std::string worst_name;
  for (const auto& [n, e] : errs) {
    if (e > worst) {
      worst = e;
      worst_name = n;
    }
  }
  // Inside [delta_min P, delta_max P] the hinge is exactly zero: every binary
  // mask with 5..10 ones scores the same, bit for bit.
  bool exact = true;
  const double at_min = v(mask_loss(ones(5), hb));
  for (int k = 6; k <= 10; ++k) exact &= v(mask_loss(ones(k), hb)) == at_min;
  return {worst <= 1e-9 && exact, std::to_string(errs.size()) + " terms, max error " + fmt("%.2e", worst) +
                                      (worst_name.empty() ? "" : " (" + worst_name + ")") +
                                      (exact ? ", hinge boundaries exact" : ", hinge boundary mismatch")};
}

// ---------------------------------------------------------------------------

json translation_config(std::uint64_t seed) {
  return json{{"schema_version", 1},
              {"seed", seed},
              {"synth", {{"patients", 40}}},
              {"translation",
               {{"modalities", {"t2"}},
                {"translation_steps", 3000},
                {"eval_every", 100},
                {"gen_base", 8},
                {"disc_base", 8},
                {"z_dim", 8},
                {"res_blocks", 1},
                {"quality_embedding_dim", 16}}}};
}

Outcome ac5() {
  const auto root = scratch("ac5");
  experiment::Experiment ex(experiment::ExperimentConfig::from_json(translation_config(3)), root);
  ex.synth_data();
  ex.translate_train();
  const auto q = ex.convert()["quality"];
  const double before = q["mmd_source_target"].get<double>();
  const double after = q["mmd_translated_target"].get<double>();
  const double reduction = q["mmd_reduction"].get<double>();

  // FID of a set against itself.
  std::vector<std::vector<Slice2>> tgt;
  for (const auto& p : io::read_dataset(root / "data/synth")) {
    if (p.t2.meta.domain == data::Domain::kTarget1p5T) tgt.push_back(data::volume_to_slices(p.t2));
  }
  const metrics::RandomProjectionEmbedding proj(16, 5);
  const metrics::Embedding pe = [&](const Slice2& s) { return proj(s); };
  const double fid_self = metrics::fid_volumes(tgt, tgt, pe);

  return {reduction >= 0.5 && fid_self < 1e-6,
          "MMD " + fmt("%.4f", before) + " -> " + fmt("%.4f", after) + " (reduction " + fmt("%.1f%%", 100 * reduction) +
              ", need >= 50%), FID(identical) = " + fmt("%.2e", fid_self)};
}

// ---------------------------------------------------------------------------

filtering::UncertaintyTable random_table(Rng& rng, std::size_t n_rows, std::size_t n_patients) {
  std::vector<filtering::UncertaintyRow> rows;
  std::vector<std::int64_t> ids(n_rows);
  std::iota(ids.begin(), ids.end(), 0);
  rng.shuffle(ids);
  for (std::size_t i = 0; i < n_rows; ++i) {
    filtering::UncertaintyRow r;
    r.patch_id = ids[i] * 3 + 7;
    r.patient_id = "p" + std::to_string(rng.index(n_patients));
    r.uncertainty = static_cast<double>(1 + rng.index(8)) / 8.0;  // coarse values force ties
    r.predicted_prob = rng.uniform();
    r.label = static_cast<int>(rng.index(2));
    rows.push_back(r);
  }
  return filtering::UncertaintyTable(rows);
}

std::vector<std::int64_t> patch_oracle(const filtering::UncertaintyTable& t, double x) {
  const auto& rows = t.rows();
  auto n_remove = static_cast<std::size_t>(std::ceil(x / 100.0 * static_cast<double>(rows.size()) - 1e-9));
  std::vector<std::size_t> idx(rows.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (rows[a].uncertainty != rows[b].uncertainty) return rows[a].uncertainty > rows[b].uncertainty;
    return rows[a].patch_id < rows[b].patch_id;
  });
  std::set<std::size_t> drop(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_remove));
  std::vector<std::int64_t> keep;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!drop.count(i)) keep.push_back(rows[i].patch_id);
  }
  return keep;
}

std::vector<std::string> patient_oracle(const filtering::UncertaintyTable& t, double x) {
  std::map<std::string, std::pair<double, std::size_t>> g;
  for (const auto& r : t.rows()) {
    g[r.patient_id].first += r.uncertainty;
    g[r.patient_id].second += 1;
  }
  std::vector<std::pair<double, std::string>> ranked;
  for (const auto& [id, s] : g) ranked.emplace_back(s.first / static_cast<double>(s.second), id);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  auto n_remove = static_cast<std::size_t>(std::ceil(x / 100.0 * static_cast<double>(ranked.size()) - 1e-9));
  std::vector<std::string> keep;
  for (std::size_t i = n_remove; i < ranked.size(); ++i) keep.push_back(ranked[i].second);
  std::sort(keep.begin(), keep.end());
  return keep;
}

Outcome ac6() {
  Rng rng(606);
  std::size_t patch_bad = 0, patient_bad = 0, sweep_bad = 0;
  const std::vector<double> rates{0.0, 5.0, 10.0, 20.0, 30.0, 50.0, 99.0};
  for (int i = 0; i < 1000; ++i) {
    const auto t = random_table(rng, 1 + rng.index(80), 1 + rng.index(12));
    const double x = i % 2 == 0 ? rates[rng.index(rates.size())] : rng.uniform(0.0, 99.9);
    if (filtering::filter_patches(t, x) != patch_oracle(t, x)) ++patch_bad;
    if (filtering::filter_patients(t, x) != patient_oracle(t, x)) ++patient_bad;
  }
  // Deployment sweep: patients of exactly 20 patches.
  for (int i = 0; i < 200; ++i) {
    std::vector<filtering::UncertaintyRow> rows;
    const auto n_pat = 2 + rng.index(10);
    for (std::size_t p = 0; p < n_pat; ++p) {
      const int label = static_cast<int>(rng.index(2));
      const double base = rng.uniform(0.3, 0.9);
      for (int k = 0; k < 20; ++k) {
        rows.push_back({static_cast<std::int64_t>(p * 20 + k), "p" + std::to_string(p),
                        std::clamp(base + rng.uniform(-0.1, 0.1), 0.01, 1.0), rng.uniform(), label});
      }
    }
    const filtering::UncertaintyTable t(rows);
    const auto sweep = metrics::threshold_sweep(t, metrics::kDeploymentLadder, {50, 1, 0.95});
    for (std::size_t k = 1; k < sweep.size(); ++k) {
      if (sweep[k].n_retained > sweep[k - 1].n_retained) ++sweep_bad;
    }
    for (std::size_t k = 1; k < metrics::kDeploymentLadder.size(); ++k) {
      const auto hi = filtering::deployment_filter(t, metrics::kDeploymentLadder[k - 1]).retained;
      const auto lo = filtering::deployment_filter(t, metrics::kDeploymentLadder[k]).retained;
      if (!std::includes(hi.begin(), hi.end(), lo.begin(), lo.end())) ++sweep_bad;
    }
  }
  return {patch_bad == 0 && patient_bad == 0 && sweep_bad == 0,
          "patch mismatches " + std::to_string(patch_bad) + "/1000, patient mismatches " +
              std::to_string(patient_bad) + "/1000, sweep monotonicity violations " + std::to_string(sweep_bad)};
}

Outcome ac7() {
  Rng rng(707);
  std::vector<filtering::UncertaintyRow> rows;
  std::map<std::string, std::pair<double, int>> oracle;
  std::size_t boundary = 0;
  for (int p = 0; p < 1000; ++p) {
    char id[16];
    std::snprintf(id, sizeof id, "p%04d", p);
    std::vector<double> probs(20);
    // Multiples of 1/16 make exact 0.5 medians common.
    for (auto& v : probs) v = static_cast<double>(rng.index(17)) / 16.0;
    if (p % 10 == 0) {
      std::fill(probs.begin(), probs.begin() + 10, 0.25);
      std::fill(probs.begin() + 10, probs.end(), 0.75);
      rng.shuffle(probs);
    }
    auto sorted = probs;
    std::sort(sorted.begin(), sorted.end());
    const double med = (sorted[9] + sorted[10]) / 2.0;
    if (med == 0.5) ++boundary;
    oracle[id] = {med, med > 0.5 ? 1 : 0};
    const int label = static_cast<int>(rng.index(2));
    for (int k = 0; k < 20; ++k) rows.push_back({p * 20 + k, id, rng.uniform(), probs[k], label});
  }
  const auto agg = metrics::aggregate_patient(filtering::UncertaintyTable(rows));
  std::size_t bad = 0;
  for (const auto& a : agg) {
    const auto& [med, lab] = oracle.at(a.patient_id);
    if (a.median_prob != med || a.label_pred != lab) ++bad;
  }
  return {agg.size() == 1000 && bad == 0 && boundary > 0,
          std::to_string(bad) + " mismatches over " + std::to_string(agg.size()) + " patients, " +
              std::to_string(boundary) + " with median exactly 0.5"};
}

Outcome ac8() {
  std::vector<std::string> notes;
  bool ok = true;
  {
    const std::vector<int> y{1, 0, 1, 0}, yp{1, 0, 1, 0};
    const std::vector<double> c(4, 1.0);
    const double e = metrics::expected_calibration_error(y, yp, c);
    ok &= e == 0.0;
    notes.push_back(fmt("%g", e));
  }
  {
    const std::vector<int> y{1, 0, 1, 0}, yp{1, 1, 1, 1};
    const std::vector<double> c(4, 1.0);
    const double e = metrics::expected_calibration_error(y, yp, c);
    ok &= e == 0.5;
    notes.push_back(fmt("%g", e));
  }
  {
    const std::vector<int> y{1, 0, 1, 0}, yp{1, 1, 0, 0};
    const std::vector<double> c(4, 0.5);
    const double e = metrics::expected_calibration_error(y, yp, c);
    ok &= e == 0.0;
    notes.push_back(fmt("%g", e));
  }
  // Exhaustive AUC over labelings of 8 distinct scores.
  const std::vector<double> s{0.91, 0.12, 0.55, 0.33, 0.78, 0.05, 0.64, 0.47};
  std::size_t checked = 0, bad = 0;
  for (int mask = 0; mask < 256; ++mask) {
    std::vector<int> y(8);
    for (int i = 0; i < 8; ++i) y[i] = (mask >> i) & 1;
    const int pos = std::accumulate(y.begin(), y.end(), 0);
    if (pos == 0 || pos == 8) continue;
    int wins = 0;
    for (int i = 0; i < 8; ++i) {
      for (int j = 0; j < 8; ++j) {
        if (y[i] == 1 && y[j] == 0 && s[i] > s[j]) ++wins;
      }
    }
    const double want = static_cast<double>(wins) / static_cast<double>(pos * (8 - pos));
    if (metrics::roc_auc(y, s) != want) ++bad;
    ++checked;
  }
  ok &= checked == 254 && bad == 0;
  return {ok, "ECE cases (" + notes[0] + ", " + notes[1] + ", " + notes[2] + "), AUC mismatches " +
                  std::to_string(bad) + "/" + std::to_string(checked)};
}

// ---------------------------------------------------------------------------
// Planted-noise study shared by AC9 and AC10.

struct NoisyStudy {
  training::PatchSet train;
  training::PatchSet test;
  std::vector<bool> flipped;  // per training row
};

NoisyStudy noisy_study(std::uint64_t seed) {
  data::SynthOptions o;
  o.domain_shift = 0.0;
  const auto pts = data::synth_two_domain_dataset(34, seed, o);
  std::vector<data::PatchRecord> train, test;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    auto pp = experiment::patient_patches(pts[i], data::ClassifierVariant::kMpMri);
    auto& dst = i < 25 ? train : test;
    dst.insert(dst.end(), pp.begin(), pp.end());
  }
  NoisyStudy s;
  s.flipped = experiment::plant_cluster_noise(train, {}, derive_seed(seed, 7));
  s.train = training::to_patch_set(train, 0);
  s.test = training::to_patch_set(test, 100000);
  return s;
}

models::ClassifierSpec small_spec(models::Head head) {
  auto spec = models::ClassifierSpec::for_variant(data::ClassifierVariant::kMpMri, head);
  spec.widths = {4, 8, 8, 8, 8};
  return spec;
}

training::ClassifierTrainConfig desk_train(std::uint64_t seed) {
  training::ClassifierTrainConfig c;
  c.epochs = 30;
  c.learning_rate = 1e-3;
  c.seed = seed;
  return c;
}

Outcome ac9() {
  const auto study = noisy_study(9);
  const auto spec = small_spec(models::Head::kEvidence);
  const auto cfg = desk_train(19);
  auto base = training::train_classifier(spec, cfg, study.train);

  // (a) uncertainty of flipped vs clean training patches.
  const auto table = training::uncertainty_table(base.model, study.train);
  double u_noisy = 0.0, u_clean = 0.0;
  std::size_t n_noisy = 0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    (study.flipped[i] ? u_noisy : u_clean) += table.rows()[i].uncertainty;
    n_noisy += study.flipped[i];
  }
  u_noisy /= static_cast<double>(n_noisy);
  u_clean /= static_cast<double>(table.size() - n_noisy);
  const bool a = u_noisy > u_clean;

  // (b) 20% patch filtering, retrain from the same seed.
  const auto keep = filtering::filter_patches(table, 20.0);
  auto filtered = training::train_classifier(spec, cfg, study.train.with_patches(keep));
  const double acc_base = training::accuracy(base.model, study.test);
  const double acc_filt = training::accuracy(filtered.model, study.test);
  const bool b = acc_filt >= acc_base;

  // (c) deployment sweep on the test patients of the filtered model. The
  // ladder is placed on the quantiles of patient mean uncertainty so every
  // step abstains on somebody.
  const auto test_table = training::uncertainty_table(filtered.model, study.test);
  std::vector<double> pu;
  for (const auto& p : metrics::aggregate_patient(test_table)) pu.push_back(p.mean_uncertainty);
  std::sort(pu.begin(), pu.end());
  std::vector<double> ladder{1.0};
  for (double q : {0.85, 0.7, 0.55, 0.4}) {
    const double tau = pu[static_cast<std::size_t>(q * static_cast<double>(pu.size() - 1))];
    if (tau < ladder.back()) ladder.push_back(tau);
  }
  const auto sweep = metrics::threshold_sweep(test_table, ladder, {200, 3, 0.95});
  bool c = true;
  std::ostringstream trace;
  for (std::size_t k = 0; k < sweep.size(); ++k) {
    const double acc = sweep[k].report.accuracy.value_or(std::nan(""));
    trace << (k ? " " : "") << fmt("%.3f", sweep[k].tau) << ":" << fmt("%.3f", acc);
    if (k > 0 && sweep[k].report.accuracy && sweep[k - 1].report.accuracy &&
        *sweep[k].report.accuracy < *sweep[k - 1].report.accuracy) {
      c = false;
    }
  }
  return {a && b && c, "(a) u noisy " + fmt("%.3f", u_noisy) + " vs clean " + fmt("%.3f", u_clean) +
                           "; (b) test acc filtered " + fmt("%.3f", acc_filt) + " vs unfiltered " +
                           fmt("%.3f", acc_base) + "; (c) tau:acc " + trace.str()};
}

Outcome ac10() {
  coteaching::CoTeachingConfig cfg;
  double worst = 0.0;
  for (int t = 0; t <= 15; ++t) {
    const double hand = t >= 10 ? 0.9 : 1.0 - 0.01 * t;
    worst = std::max(worst, std::abs(coteaching::remember_rate(cfg, t) - hand));
  }

  const auto study = noisy_study(10);
  cfg.epochs = 20;
  cfg.learning_rate = 1e-3;
  cfg.seed = 31;
  const auto res = coteaching::train_coteaching(small_spec(models::Head::kSoftmax), cfg, study.train);
  std::map<std::int64_t, bool> is_flipped;
  for (std::size_t i = 0; i < study.train.size(); ++i) is_flipped[study.train.patch_ids[i]] = study.flipped[i];
  std::size_t discarded = 0, discarded_flipped = 0;
  for (const auto& e : res.epochs) {
    for (const auto* set : {&e.discarded_by_a, &e.discarded_by_b}) {
      for (auto id : *set) {
        ++discarded;
        discarded_flipped += is_flipped.at(id);
      }
    }
  }
  const double base_rate =
      static_cast<double>(std::count(study.flipped.begin(), study.flipped.end(), true)) / study.flipped.size();
  const double share = discarded ? static_cast<double>(discarded_flipped) / static_cast<double>(discarded) : 0.0;
  const double ratio = share / base_rate;
  return {worst <= 1e-12 && ratio > 2.0, "R(t) max error " + fmt("%.1e", worst) + "; flipped share of discards " +
                                             fmt("%.3f", share) + " vs base rate " + fmt("%.3f", base_rate) +
                                             " (x" + fmt("%.2f", ratio) + ")"};
}

// ---------------------------------------------------------------------------

std::vector<std::string> head_lines(const fs::path& p, std::size_t n) {
  std::istringstream in(io::read_text(p));
  std::vector<std::string> out;
  std::string line;
  while (out.size() < n && std::getline(in, line)) out.push_back(line);
  return out;
}

Outcome ac11() {
  const auto run = [](const fs::path& root) {
    std::string cmd;
    for (const char* sub : {"synth-data", "translate-train", "convert", "classify-train", "evaluate"}) {
      cmd += std::string(EVIDENT_CLI) + " " + sub + " -q -c " + EVIDENT_SMOKE_CONFIG + " -w " + root.string() +
             " --seed 13 > /dev/null && ";
    }
    cmd += "true";
    return std::system(cmd.c_str());
  };
  const auto a = scratch("ac11_a");
  const auto b = scratch("ac11_b");
  if (run(a) != 0 || run(b) != 0) return {false, "CLI run failed"};
  bool ok = true;
  std::string diff;
  for (const char* trace : {"runs/translation/t2/loss_trace.csv", "runs/translation/adc/loss_trace.csv",
                            "runs/classifier/loss_trace.csv"}) {
    const auto la = head_lines(a / trace, 11);  // header + first 10 steps
    if (la.size() < 11 || la != head_lines(b / trace, 11)) {
      ok = false;
      diff += std::string(" ") + trace;
    }
  }
  const auto report = "runs/evaluation/classifier/report.json";
  if (io::read_text(a / report) != io::read_text(b / report)) {
    ok = false;
    diff += std::string(" ") + report;
  }
  return {ok, ok ? "loss traces (first 10 steps) and report.json identical across two CLI runs"
                 : "differs:" + diff};
}

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> all{
      {"AC1", ac1}, {"AC2", ac2}, {"AC3", ac3}, {"AC4", ac4}, {"AC5", ac5},   {"AC6", ac6},
      {"AC7", ac7}, {"AC8", ac8}, {"AC9", ac9}, {"AC10", ac10}, {"AC11", ac11}};
  std::set<std::string> selected(argv + 1, argv + argc);
  int failed = 0;
  for (const auto& [name, fn] : all) {
    if (!selected.empty() && !selected.count(name)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
