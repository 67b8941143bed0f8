#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "evident/data.hpp"
#include "evident/error.hpp"
#include "evident/metrics.hpp"
#include "evident/rng.hpp"

using namespace evident;
using namespace evident::data;

namespace {

VolumeRecord random_volume(std::size_t rows, std::size_t cols, std::size_t depth, std::uint64_t seed) {
  Rng rng(seed);
  VolumeRecord v;
  v.voxels = Grid3(rows, cols, depth);
  for (auto& x : v.voxels.data()) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  v.meta.patient_id = "p" + std::to_string(seed);
  v.meta.spacing = Spacing{0.5, 0.5, 3.0};
  v.meta.biopsy = BiopsyLocation{static_cast<int>(rows / 2), static_cast<int>(cols / 2), static_cast<int>(depth / 2)};
  v.meta.label = static_cast<int>(seed % 2);
  return v;
}

double sum_of(const Grid3& g, std::size_t s) {
  double t = 0.0;
  for (float x : g.slice(s)) t += x;
  return t;
}

}  // namespace

TEST_CASE("resample to the current spacing is the identity") {
  const auto v = random_volume(20, 24, 5, 1);
  const auto r = resample_volume(v, v.meta.spacing);
  CHECK(r.voxels == v.voxels);
  CHECK(r.meta.spacing == v.meta.spacing);
}

TEST_CASE("resampling a constant volume stays constant") {
  VolumeRecord v = random_volume(16, 16, 4, 2);
  std::fill(v.voxels.data().begin(), v.voxels.data().end(), 0.3f);
  for (const Spacing sp : {Spacing{0.7, 0.4, 2.0}, Spacing{1.0, 1.0, 6.0}, Spacing{0.33, 0.5, 3.0}}) {
    const auto r = resample_volume(v, sp);
    for (float x : r.voxels.data()) CHECK(std::abs(x - 0.3f) < 1e-6f);
  }
}

TEST_CASE("2x downsampling a ramp doubles the slope per index") {
  VolumeRecord v = random_volume(8, 32, 1, 3);
  for (std::size_t c = 0; c < 32; ++c) {
    for (std::size_t r = 0; r < 8; ++r) v.voxels.at(r, c, 0) = static_cast<float>(c) / 31.0f;
  }
  const auto d = resample_volume(v, Spacing{1.0, 0.5, 3.0});
  REQUIRE(d.voxels.cols() == 16);
  for (std::size_t c = 0; c < 16; ++c) {
    CHECK(d.voxels.at(3, c, 0) == v.voxels.at(3, 2 * c, 0));
  }
  CHECK(d.voxels.at(0, 0, 0) == v.voxels.at(0, 0, 0));
}

TEST_CASE("resample maps grid size and biopsy by the spacing ratio") {
  VolumeRecord v = random_volume(40, 40, 10, 4);
  v.meta.spacing = Spacing{0.25, 0.25, 1.5};
  v.meta.biopsy = BiopsyLocation{20, 10, 4};
  const auto r = resample_volume(v, Spacing{0.5, 0.5, 3.0});
  CHECK(r.voxels.rows() == 20);
  CHECK(r.voxels.cols() == 20);
  CHECK(r.voxels.depth() == 5);
  CHECK(*r.meta.biopsy == BiopsyLocation{10, 5, 2});
  CHECK_THROWS_AS(resample_volume(v, Spacing{0.0, 0.5, 3.0}), DomainError);
  v.meta.spacing.z = -1.0;
  CHECK_THROWS_AS(resample_volume(v, Spacing{}), DomainError);
}

TEST_CASE("intensity normalization") {
  VolumeRecord v = random_volume(16, 16, 1, 5);
  for (std::size_t i = 0; i < 256; ++i) v.voxels.data()[i] = static_cast<float>(i);
  const auto n = normalize_intensity(v);
  CHECK(n.voxels.data().front() == -1.0f);
  CHECK(n.voxels.data().back() == 1.0f);
  for (float x : n.voxels.data()) {
    CHECK(x >= -1.0f);
    CHECK(x <= 1.0f);
  }
  CHECK(normalize_intensity(n).voxels == n.voxels);

  std::fill(v.voxels.data().begin(), v.voxels.data().end(), 7.0f);
  const auto flat = normalize_intensity(v);
  for (float x : flat.voxels.data()) CHECK(x == -1.0f);
}

TEST_CASE("rotation augmentation") {
  const auto v = random_volume(32, 32, 3, 6);
  const auto rots = augment_rotations(v);
  REQUIRE(rots.size() == 20);
  CHECK(rots[0].voxels == v.voxels);
  for (int i = 0; i < 20; ++i) {
    CHECK(rots[static_cast<std::size_t>(i)].meta.rotation_deg == 5 * i);
    for (float x : rots[static_cast<std::size_t>(i)].voxels.data()) {
      CHECK(x >= -1.0f);
      CHECK(x <= 1.0f);
    }
  }
}

TEST_CASE("rotating a centred disk preserves its mass") {
  VolumeRecord v = random_volume(64, 64, 1, 7);
  const double c = 31.5;
  for (std::size_t r = 0; r < 64; ++r) {
    for (std::size_t col = 0; col < 64; ++col) {
      const double d = std::hypot(r - c, col - c);
      v.voxels.at(r, col, 0) = d < 20.0 ? 1.0f : 0.0f;
    }
  }
  const double before = sum_of(v.voxels, 0);
  for (double deg : {5.0, 17.0, 45.0, 90.0, 95.0}) {
    VolumeRecord rv = rotate_volume(v, deg);
    // Fill of -1 only lands outside the disk's support; restore 0 there.
    for (auto& x : rv.voxels.data()) x = std::max(x, 0.0f);
    CHECK(std::abs(sum_of(rv.voxels, 0) - before) / before < 0.01);
  }
}

TEST_CASE("rotation carries the biopsy location") {
  VolumeRecord v = random_volume(33, 33, 1, 8);
  v.meta.biopsy = BiopsyLocation{16, 26, 0};  // 10 px right of centre
  const auto r = rotate_volume(v, 90.0);
  CHECK(r.meta.biopsy->slice == 0);
  // The image content at the new location is the content from the old one.
  CHECK(std::abs(r.voxels.at(r.meta.biopsy->row, r.meta.biopsy->col, 0) - v.voxels.at(16, 26, 0)) < 1e-5);
}

TEST_CASE("patch at the volume centre equals direct indexing") {
  VolumeRecord v = random_volume(160, 160, 32, 9);
  v.meta.biopsy = BiopsyLocation{80, 80, 16};
  const auto p = extract_patch(v);
  REQUIRE(p.pixels.rows() == 64);
  REQUIRE(p.pixels.depth() == 3);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t r = 0; r < 64; ++r) {
      for (std::size_t c = 0; c < 64; ++c) {
        CHECK(p.pixels.at(r, c, ch) == v.voxels.at(80 - 32 + r, 80 - 32 + c, 15 + ch));
      }
    }
  }
  CHECK(p.patient_id == v.meta.patient_id);
  CHECK(p.label == *v.meta.label);
}

TEST_CASE("patch padding and edge-slice replication") {
  VolumeRecord v = random_volume(40, 40, 4, 10);
  v.meta.biopsy = BiopsyLocation{2, 38, 0};
  const auto p = extract_patch(v);
  CHECK(p.pixels.at(0, 0, 1) == -1.0f);            // row 2 - 32 < 0
  CHECK(p.pixels.at(40, 63, 1) == -1.0f);          // col beyond the image
  CHECK(p.pixels.at(32, 32, 1) == v.voxels.at(2, 38, 0));
  // Channels (0, 0, 1) at the first slice.
  CHECK(p.pixels.at(32, 32, 0) == v.voxels.at(2, 38, 0));
  CHECK(p.pixels.at(32, 32, 2) == v.voxels.at(2, 38, 1));

  v.meta.biopsy.reset();
  CHECK_THROWS_AS(extract_patch(v), DomainError);
}

TEST_CASE("modality stacking and round trip") {
  VolumeRecord t2v = random_volume(64, 64, 5, 11);
  VolumeRecord adcv = random_volume(64, 64, 5, 12);
  adcv.meta.patient_id = t2v.meta.patient_id;
  adcv.meta.label = t2v.meta.label;
  adcv.meta.modality = Modality::kAdc;
  const auto t2 = extract_patch(t2v);
  const auto adc = extract_patch(adcv);

  const auto mp = stack_modalities(t2, adc, ClassifierVariant::kMpMri);
  CHECK(mp.pixels.depth() == 2);
  CHECK(mp.pixels.at(5, 7, 0) == t2.pixels.at(5, 7, 1));
  CHECK(mp.pixels.at(5, 7, 1) == adc.pixels.at(5, 7, 1));

  const auto vol = stack_modalities(t2, adc, ClassifierVariant::kVolMpMri);
  CHECK(vol.pixels.depth() == 6);
  const auto [t2b, adcb] = unstack_modalities(vol, ClassifierVariant::kVolMpMri);
  CHECK(t2b.pixels == t2.pixels);
  CHECK(adcb.pixels == adc.pixels);
  CHECK(stack_modalities(t2, adc, ClassifierVariant::kT2Only).pixels.depth() == 3);

  auto rotated = adc;
  rotated.rotation_deg = 5;
  CHECK_THROWS_AS(stack_modalities(t2, rotated, ClassifierVariant::kMpMri), DomainError);
  auto other = adc;
  other.patient_id = "someone-else";
  CHECK_THROWS_AS(stack_modalities(t2, other, ClassifierVariant::kMpMri), DomainError);
}

TEST_CASE("classification split on 104 local patients") {
  std::vector<PatientEntry> pts;
  for (int i = 0; i < 104; ++i) pts.push_back({"L" + std::to_string(i), Domain::kTarget1p5T});
  for (int i = 0; i < 60; ++i) pts.push_back({"X" + std::to_string(i), Domain::kSource3T});
  const auto m = make_splits(pts, SplitStage::kClassification, 42);
  CHECK(m.test.size() == 34);
  for (const auto& id : m.test) CHECK(id[0] == 'L');
  CHECK(m.train.size() + m.val.size() == 70 + 60);
  CHECK(m.val.size() == 26);

  std::set<std::string> all;
  for (const auto* part : {&m.train, &m.val, &m.test}) {
    for (const auto& id : *part) CHECK(all.insert(id).second);
  }
  CHECK(all.size() == pts.size());

  const auto again = make_splits(pts, SplitStage::kClassification, 42);
  CHECK(again.train == m.train);
  CHECK(again.val == m.val);
  CHECK(again.test == m.test);
  const auto other = make_splits(pts, SplitStage::kClassification, 43);
  CHECK(other.test != m.test);
}

TEST_CASE("translation split keeps a tenth per domain for validation") {
  std::vector<PatientEntry> pts;
  for (int i = 0; i < 30; ++i) pts.push_back({"S" + std::to_string(i), Domain::kSource3T});
  for (int i = 0; i < 20; ++i) pts.push_back({"T" + std::to_string(i), Domain::kTarget1p5T});
  const auto m = make_splits(pts, SplitStage::kTranslation, 1);
  CHECK(m.val.size() == 5);
  CHECK(m.train.size() == 45);
  CHECK(m.test.empty());
}

TEST_CASE("splits reject too few patients") {
  std::vector<PatientEntry> one{{"a", Domain::kTarget1p5T}};
  CHECK_THROWS_AS(make_splits(one, SplitStage::kClassification, 0), DomainError);
  std::vector<PatientEntry> src_only{{"a", Domain::kSource3T}, {"b", Domain::kSource3T}};
  CHECK_THROWS_AS(make_splits(src_only, SplitStage::kTranslation, 0), DomainError);
}

TEST_CASE("slice round trip") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    VolumeRecord v = random_volume(12 + seed, 9, 3 + seed, seed + 100);
    v.meta.spacing = Spacing{0.4 + 0.01 * seed, 0.55, 3.3};
    const auto slices = volume_to_slices(v);
    REQUIRE(slices.size() == v.voxels.depth());
    for (std::size_t s = 0; s < slices.size(); ++s) {
      CHECK(slices[s].at(2, 3) == v.voxels.at(2, 3, s));
    }
    const auto back = slices_to_volume(slices, header_of(v));
    CHECK(back.voxels == v.voxels);
    CHECK(back.meta == v.meta);
    auto short_stack = slices;
    short_stack.pop_back();
    CHECK_THROWS_AS(slices_to_volume(short_stack, header_of(v)), DomainError);
  }
}

TEST_CASE("synthetic two-domain dataset") {
  const auto pts = synth_two_domain_dataset(40, 5);
  REQUIRE(pts.size() == 40);
  int pos = 0;
  for (const auto& p : pts) {
    pos += *p.t2.meta.label;
    CHECK(p.t2.meta.patient_id == p.adc.meta.patient_id);
    CHECK(p.t2.voxels.rows() == 64);
    for (float x : p.t2.voxels.data()) {
      CHECK(x >= -1.0f);
      CHECK(x <= 1.0f);
    }
    REQUIRE(p.t2.meta.biopsy);
    CHECK(p.t2.meta.biopsy->slice >= 0);
    CHECK(p.t2.meta.biopsy->slice < 8);
  }
  CHECK(std::abs(pos - 20) <= 4);
  CHECK_THROWS_AS(synth_two_domain_dataset(9, 0), DomainError);

  const auto again = synth_two_domain_dataset(40, 5);
  CHECK(again[7].t2.voxels == pts[7].t2.voxels);
}

TEST_CASE("synthetic lesion contrast differs by class") {
  SynthOptions opt;
  opt.noise = 0.0;
  opt.domain_shift = 0.0;
  const auto pts = synth_two_domain_dataset(20, 8, opt);
  double contrast[2] = {0, 0};
  int count[2] = {0, 0};
  for (const auto& p : pts) {
    const auto& b = *p.t2.meta.biopsy;
    const auto& g = p.t2.voxels;
    // Gland level on distant slices minus the lesion centre.
    const double centre = g.at(b.row, b.col, b.slice);
    double gland = 0.0;
    int n = 0;
    for (std::size_t s = 0; s < g.depth(); ++s) {
      if (std::abs(static_cast<int>(s) - b.slice) < 3) continue;
      const float x = g.at(b.row, b.col, s);
      if (x > -0.99f && x < 1.0f) {
        gland += x;
        ++n;
      }
    }
    if (n == 0) continue;
    const int y = *p.t2.meta.label;
    contrast[y] += gland / n - centre;
    ++count[y];
  }
  REQUIRE(count[0] > 0);
  REQUIRE(count[1] > 0);
  const double diff = contrast[1] / count[1] - contrast[0] / count[0];
  CHECK(std::abs(diff - opt.lesion_margin) < 0.05 * opt.lesion_margin);
}

TEST_CASE("domain shift is detectable by MMD") {
  const auto pts = synth_two_domain_dataset(40, 21);
  std::vector<Slice2> src, tgt;
  for (const auto& p : pts) {
    auto slices = volume_to_slices(p.t2);
    auto& dst = p.t2.meta.domain == Domain::kSource3T ? src : tgt;
    dst.insert(dst.end(), slices.begin(), slices.end());
  }
  const auto feat = [](const Slice2& s) { return metrics::intensity_histogram(s); };
  const auto A = metrics::embed(src, feat);
  const auto B = metrics::embed(tgt, feat);
  const Eigen::MatrixXd A1 = A.topRows(A.rows() / 2), A2 = A.bottomRows(A.rows() - A.rows() / 2);
  const double between = metrics::mmd(A, B);
  const double within = metrics::mmd(A1, A2);
  CHECK(between > 0.05);
  CHECK(between > 10.0 * within);
}
