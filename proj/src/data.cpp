#include "evident/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>

#include "evident/error.hpp"
#include "evident/rng.hpp"

namespace evident::data {

std::string_view to_string(Modality m) { return m == Modality::kT2 ? "T2" : "ADC"; }

std::string_view to_string(Domain d) {
  return d == Domain::kSource3T ? "source_3T" : "target_1p5T";
}

Modality parse_modality(std::string_view s) {
  if (s == "T2" || s == "t2") return Modality::kT2;
  if (s == "ADC" || s == "adc") return Modality::kAdc;
  throw DomainError("unknown modality '" + std::string(s) + "'");
}

Domain parse_domain(std::string_view s) {
  if (s == "source_3T") return Domain::kSource3T;
  if (s == "target_1p5T") return Domain::kTarget1p5T;
  throw DomainError("unknown domain '" + std::string(s) + "'");
}

std::string_view to_string(ClassifierVariant v) {
  switch (v) {
    case ClassifierVariant::kT2Only: return "t2_only";
    case ClassifierVariant::kMpMri: return "mpmri";
    case ClassifierVariant::kVolMpMri: return "vol_mpmri";
    case ClassifierVariant::kMsMpMri: return "ms_mpmri";
    case ClassifierVariant::kMpMriCoTeaching: return "mpmri_coteaching";
  }
  return "?";
}

ClassifierVariant parse_variant(std::string_view s) {
  if (s == "t2_only") return ClassifierVariant::kT2Only;
  if (s == "mpmri") return ClassifierVariant::kMpMri;
  if (s == "vol_mpmri") return ClassifierVariant::kVolMpMri;
  if (s == "ms_mpmri") return ClassifierVariant::kMsMpMri;
  if (s == "mpmri_coteaching") return ClassifierVariant::kMpMriCoTeaching;
  throw DomainError("unknown classifier variant '" + std::string(s) + "'");
}

std::size_t stacked_depth(ClassifierVariant v) {
  switch (v) {
    case ClassifierVariant::kT2Only: return 3;
    case ClassifierVariant::kMpMri:
    case ClassifierVariant::kMpMriCoTeaching: return 2;
    case ClassifierVariant::kVolMpMri:
    case ClassifierVariant::kMsMpMri: return 6;
  }
  return 0;
}

void VolumeRecord::validate() const {
  const auto& s = meta.spacing;
  if (!(s.x > 0.0) || !(s.y > 0.0) || !(s.z > 0.0)) {
    throw DomainError("voxel spacing must be positive");
  }
  if (voxels.empty()) throw DomainError("volume is empty");
  if (meta.biopsy) {
    const auto& b = *meta.biopsy;
    if (b.slice < 0 || static_cast<std::size_t>(b.slice) >= voxels.depth()) {
      throw DomainError("biopsy slice index outside the volume");
    }
  }
}

bool SplitManifest::contains_test(const std::string& patient_id) const {
  return std::find(test.begin(), test.end(), patient_id) != test.end();
}

// ---------------------------------------------------------------------------
// Resampling

namespace {

constexpr int kSincRadius = 3;

double windowed_sinc(double t) {
  if (t == 0.0) return 1.0;
  if (std::abs(t) >= kSincRadius) return 0.0;
  const double pt = std::numbers::pi * t;
  return std::sin(pt) / pt * std::cos(pt / (2.0 * kSincRadius));
}

struct AxisTaps {
  std::vector<std::vector<std::pair<std::size_t, double>>> taps;  // per output index
};

AxisTaps make_taps(std::size_t n_in, std::size_t n_out, double step) {
  AxisTaps out;
  out.taps.resize(n_out);
  const auto clamp_index = [n_in](long j) {
    return static_cast<std::size_t>(std::clamp<long>(j, 0, static_cast<long>(n_in) - 1));
  };
  for (std::size_t i = 0; i < n_out; ++i) {
    const double p = static_cast<double>(i) * step;
    const double nearest = std::round(p);
    auto& t = out.taps[i];
    if (std::abs(p - nearest) < 1e-9) {
      t.emplace_back(clamp_index(static_cast<long>(nearest)), 1.0);
      continue;
    }
    const long base = static_cast<long>(std::floor(p));
    double total = 0.0;
    for (long j = base - kSincRadius + 1; j <= base + kSincRadius; ++j) {
      const double w = windowed_sinc(p - static_cast<double>(j));
      t.emplace_back(clamp_index(j), w);
      total += w;
    }
    for (auto& [idx, w] : t) w /= total;
  }
  return out;
}

enum class Axis { kRow, kCol, kSlice };

Grid3 resample_axis(const Grid3& in, Axis axis, std::size_t n_out, double step) {
  const std::size_t n_in = axis == Axis::kRow ? in.rows() : axis == Axis::kCol ? in.cols() : in.depth();
  if (n_out == n_in && step == 1.0) return in;
  const AxisTaps taps = make_taps(n_in, n_out, step);
  const std::size_t rows = axis == Axis::kRow ? n_out : in.rows();
  const std::size_t cols = axis == Axis::kCol ? n_out : in.cols();
  const std::size_t depth = axis == Axis::kSlice ? n_out : in.depth();
  Grid3 out(rows, cols, depth);
  for (std::size_t s = 0; s < depth; ++s) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = axis == Axis::kRow ? r : axis == Axis::kCol ? c : s;
        const auto& t = taps.taps[i];
        if (t.size() == 1) {
          const std::size_t j = t.front().first;
          out.at(r, c, s) = axis == Axis::kRow ? in.at(j, c, s)
                            : axis == Axis::kCol ? in.at(r, j, s)
                                                 : in.at(r, c, j);
          continue;
        }
        double acc = 0.0;
        for (const auto& [j, w] : t) {
          const float v = axis == Axis::kRow ? in.at(j, c, s)
                          : axis == Axis::kCol ? in.at(r, j, s)
                                               : in.at(r, c, j);
          acc += w * v;
        }
        out.at(r, c, s) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

std::size_t scaled_count(std::size_t n, double old_spacing, double new_spacing) {
  const long v = std::lround(static_cast<double>(n) * old_spacing / new_spacing);
  return static_cast<std::size_t>(std::max<long>(v, 1));
}

}  // namespace

VolumeRecord resample_volume(const VolumeRecord& v, const Spacing& target) {
  v.validate();
  if (!(target.x > 0.0) || !(target.y > 0.0) || !(target.z > 0.0)) {
    throw DomainError("target spacing must be positive");
  }
  const Spacing& src = v.meta.spacing;
  const std::size_t rows = scaled_count(v.voxels.rows(), src.y, target.y);
  const std::size_t cols = scaled_count(v.voxels.cols(), src.x, target.x);
  const std::size_t depth = scaled_count(v.voxels.depth(), src.z, target.z);

  VolumeRecord out;
  out.meta = v.meta;
  out.meta.spacing = target;
  Grid3 g = resample_axis(v.voxels, Axis::kRow, rows, target.y / src.y);
  g = resample_axis(g, Axis::kCol, cols, target.x / src.x);
  out.voxels = resample_axis(g, Axis::kSlice, depth, target.z / src.z);
  if (v.meta.biopsy) {
    const auto& b = *v.meta.biopsy;
    const auto map = [](int idx, double from, double to, std::size_t n) {
      const long m = std::lround(static_cast<double>(idx) * from / to);
      return static_cast<int>(std::clamp<long>(m, 0, static_cast<long>(n) - 1));
    };
    out.meta.biopsy = BiopsyLocation{map(b.row, src.y, target.y, rows), map(b.col, src.x, target.x, cols),
                                     map(b.slice, src.z, target.z, depth)};
  }
  return out;
}

VolumeRecord resize_in_plane(const VolumeRecord& v, std::size_t rows, std::size_t cols) {
  v.validate();
  if (rows == 0 || cols == 0) throw DomainError("target size must be positive");
  Spacing target = v.meta.spacing;
  target.y = v.meta.spacing.y * static_cast<double>(v.voxels.rows()) / static_cast<double>(rows);
  target.x = v.meta.spacing.x * static_cast<double>(v.voxels.cols()) / static_cast<double>(cols);
  VolumeRecord out = resample_volume(v, target);
  if (out.voxels.rows() != rows || out.voxels.cols() != cols) {
    throw DomainError("in-plane resize produced an unexpected grid");
  }
  return out;
}

VolumeRecord normalize_intensity(const VolumeRecord& v) {
  VolumeRecord out = v;
  auto& d = out.voxels.data();
  if (d.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(d.begin(), d.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (lo == hi) {
    std::fill(d.begin(), d.end(), -1.0f);
    return out;
  }
  if (lo == -1.0 && hi == 1.0) return out;
  const double range = hi - lo;
  for (auto& x : d) {
    x = static_cast<float>(-1.0 + 2.0 * ((static_cast<double>(x) - lo) / range));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rotation

VolumeRecord rotate_volume(const VolumeRecord& v, double degrees) {
  VolumeRecord out = v;
  out.meta.rotation_deg = static_cast<int>(std::lround(degrees));
  if (degrees == 0.0) return out;

  const std::size_t rows = v.voxels.rows();
  const std::size_t cols = v.voxels.cols();
  const double cr = (static_cast<double>(rows) - 1.0) / 2.0;
  const double cc = (static_cast<double>(cols) - 1.0) / 2.0;
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(theta);
  const double sn = std::sin(theta);
  constexpr double kEdge = 1e-6;

  for (std::size_t s = 0; s < v.voxels.depth(); ++s) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double x = static_cast<double>(c) - cc;
        const double y = static_cast<double>(r) - cr;
        const double xs = cs * x + sn * y + cc;
        const double ys = -sn * x + cs * y + cr;
        if (xs < -kEdge || ys < -kEdge || xs > static_cast<double>(cols - 1) + kEdge ||
            ys > static_cast<double>(rows - 1) + kEdge) {
          out.voxels.at(r, c, s) = kFillValue;
          continue;
        }
        const double xc = std::clamp(xs, 0.0, static_cast<double>(cols - 1));
        const double yc = std::clamp(ys, 0.0, static_cast<double>(rows - 1));
        const auto c0 = static_cast<std::size_t>(std::floor(xc));
        const auto r0 = static_cast<std::size_t>(std::floor(yc));
        const std::size_t c1 = std::min(c0 + 1, cols - 1);
        const std::size_t r1 = std::min(r0 + 1, rows - 1);
        const double fx = xc - static_cast<double>(c0);
        const double fy = yc - static_cast<double>(r0);
        const double top = (1.0 - fx) * v.voxels.at(r0, c0, s) + fx * v.voxels.at(r0, c1, s);
        const double bottom = (1.0 - fx) * v.voxels.at(r1, c0, s) + fx * v.voxels.at(r1, c1, s);
        out.voxels.at(r, c, s) = static_cast<float>((1.0 - fy) * top + fy * bottom);
      }
    }
  }

  if (v.meta.biopsy) {
    auto b = *v.meta.biopsy;
    const double x = static_cast<double>(b.col) - cc;
    const double y = static_cast<double>(b.row) - cr;
    const long col = std::lround(cs * x - sn * y + cc);
    const long row = std::lround(sn * x + cs * y + cr);
    b.col = static_cast<int>(std::clamp<long>(col, 0, static_cast<long>(cols) - 1));
    b.row = static_cast<int>(std::clamp<long>(row, 0, static_cast<long>(rows) - 1));
    out.meta.biopsy = b;
  }
  return out;
}

std::vector<VolumeRecord> augment_rotations(const VolumeRecord& v) {
  v.validate();
  std::vector<VolumeRecord> out;
  out.reserve(kRotationCount);
  for (int i = 0; i < kRotationCount; ++i) {
    out.push_back(rotate_volume(v, static_cast<double>(i * kRotationStepDeg)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Patches

PatchRecord extract_patch(const VolumeRecord& v, std::size_t size) {
  v.validate();
  if (!v.meta.biopsy) throw DomainError("volume of patient " + v.meta.patient_id + " has no biopsy location");
  if (!v.meta.label) throw DomainError("volume of patient " + v.meta.patient_id + " has no label");
  const auto& b = *v.meta.biopsy;
  const long depth = static_cast<long>(v.voxels.depth());
  const long rows = static_cast<long>(v.voxels.rows());
  const long cols = static_cast<long>(v.voxels.cols());
  const long half = static_cast<long>(size / 2);

  PatchRecord p;
  p.pixels = Grid3(size, size, 3, kFillValue);
  p.patient_id = v.meta.patient_id;
  p.modalities = {v.meta.modality};
  p.rotation_deg = v.meta.rotation_deg;
  p.label = *v.meta.label;

  for (long ch = 0; ch < 3; ++ch) {
    const long s = std::clamp<long>(b.slice - 1 + ch, 0, depth - 1);
    for (long pr = 0; pr < static_cast<long>(size); ++pr) {
      const long r = b.row - half + pr;
      if (r < 0 || r >= rows) continue;
      for (long pc = 0; pc < static_cast<long>(size); ++pc) {
        const long c = b.col - half + pc;
        if (c < 0 || c >= cols) continue;
        p.pixels.at(static_cast<std::size_t>(pr), static_cast<std::size_t>(pc), static_cast<std::size_t>(ch)) =
            v.voxels.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c), static_cast<std::size_t>(s));
      }
    }
  }
  return p;
}

namespace {

void copy_channel(const Grid3& from, std::size_t from_ch, Grid3& to, std::size_t to_ch) {
  const auto src = from.slice(from_ch);
  auto dst = to.slice(to_ch);
  std::copy(src.begin(), src.end(), dst.begin());
}

}  // namespace

PatchRecord stack_modalities(const PatchRecord& t2, const PatchRecord& adc, ClassifierVariant variant) {
  if (t2.patient_id != adc.patient_id) {
    throw DomainError("cannot stack patches of different patients (" + t2.patient_id + ", " + adc.patient_id + ")");
  }
  if (t2.rotation_deg != adc.rotation_deg) {
    throw DomainError("cannot stack patches with different rotations for patient " + t2.patient_id);
  }
  if (t2.label != adc.label) throw DomainError("T2 and ADC labels disagree for patient " + t2.patient_id);
  if (t2.modalities != std::vector<Modality>{Modality::kT2} ||
      adc.modalities != std::vector<Modality>{Modality::kAdc}) {
    throw DomainError("stack_modalities expects one T2 and one ADC patch");
  }
  if (!t2.pixels.same_shape(adc.pixels) || t2.pixels.depth() != 3) {
    throw DomainError("T2 and ADC patches must both be rows x cols x 3");
  }

  PatchRecord out;
  out.patient_id = t2.patient_id;
  out.rotation_deg = t2.rotation_deg;
  out.label = t2.label;
  const std::size_t n = t2.pixels.rows();
  const std::size_t m = t2.pixels.cols();
  switch (variant) {
    case ClassifierVariant::kT2Only:
      out.pixels = t2.pixels;
      out.modalities = {Modality::kT2};
      break;
    case ClassifierVariant::kMpMri:
    case ClassifierVariant::kMpMriCoTeaching:
      out.pixels = Grid3(n, m, 2);
      copy_channel(t2.pixels, 1, out.pixels, 0);
      copy_channel(adc.pixels, 1, out.pixels, 1);
      out.modalities = {Modality::kT2, Modality::kAdc};
      break;
    case ClassifierVariant::kVolMpMri:
    case ClassifierVariant::kMsMpMri:
      out.pixels = Grid3(n, m, 6);
      for (std::size_t c = 0; c < 3; ++c) {
        copy_channel(t2.pixels, c, out.pixels, c);
        copy_channel(adc.pixels, c, out.pixels, 3 + c);
      }
      out.modalities = {Modality::kT2, Modality::kAdc};
      break;
  }
  return out;
}

std::pair<PatchRecord, PatchRecord> unstack_modalities(const PatchRecord& stacked, ClassifierVariant variant) {
  const std::size_t depth = stacked_depth(variant);
  if (variant == ClassifierVariant::kT2Only) throw DomainError("t2_only patches hold a single modality");
  if (stacked.pixels.depth() != depth) throw DomainError("stacked patch depth does not match variant");
  const std::size_t per = depth / 2;
  PatchRecord t2{Grid3(stacked.pixels.rows(), stacked.pixels.cols(), per), stacked.patient_id,
                 {Modality::kT2}, stacked.rotation_deg, stacked.label};
  PatchRecord adc{Grid3(stacked.pixels.rows(), stacked.pixels.cols(), per), stacked.patient_id,
                  {Modality::kAdc}, stacked.rotation_deg, stacked.label};
  for (std::size_t c = 0; c < per; ++c) {
    copy_channel(stacked.pixels, c, t2.pixels, c);
    copy_channel(stacked.pixels, per + c, adc.pixels, c);
  }
  return {std::move(t2), std::move(adc)};
}

// ---------------------------------------------------------------------------
// Splits

namespace {

std::size_t fraction_count(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::lround(static_cast<double>(n) * fraction));
}

}  // namespace

SplitManifest make_splits(std::vector<PatientEntry> patients, SplitStage stage, std::uint64_t seed,
                          const SplitRatios& ratios) {
  std::sort(patients.begin(), patients.end(),
            [](const PatientEntry& a, const PatientEntry& b) { return a.patient_id < b.patient_id; });
  std::vector<std::string> source;
  std::vector<std::string> target;
  for (std::size_t i = 0; i < patients.size(); ++i) {
    if (patients[i].patient_id.empty()) throw DomainError("record without patient id");
    if (i > 0 && patients[i].patient_id == patients[i - 1].patient_id) {
      if (patients[i].domain != patients[i - 1].domain) {
        throw DomainError("patient " + patients[i].patient_id + " appears in both domains");
      }
      continue;
    }
    (patients[i].domain == Domain::kSource3T ? source : target).push_back(patients[i].patient_id);
  }

  SplitManifest m;
  m.stage = stage;
  m.seed = seed;
  Rng rng(seed);

  if (stage == SplitStage::kClassification) {
    if (target.empty()) throw DomainError("classification split needs target-domain patients for the test set");
    rng.shuffle(target);
    const std::size_t n_test = fraction_count(target.size(), ratios.test_fraction_of_target);
    if (n_test == 0) throw DomainError("too few target-domain patients to form a test set");
    m.test.assign(target.begin(), target.begin() + static_cast<long>(n_test));
    std::vector<std::string> pool(target.begin() + static_cast<long>(n_test), target.end());
    pool.insert(pool.end(), source.begin(), source.end());
    std::sort(pool.begin(), pool.end());
    rng.shuffle(pool);
    const std::size_t n_val = fraction_count(pool.size(), ratios.classification_val_fraction);
    if (n_val == 0 || n_val >= pool.size()) {
      throw DomainError("too few patients to honor the train/validation ratio");
    }
    m.val.assign(pool.begin(), pool.begin() + static_cast<long>(n_val));
    m.train.assign(pool.begin() + static_cast<long>(n_val), pool.end());
  } else {
    for (auto* group : {&source, &target}) {
      if (group->size() < 2) throw DomainError("translation split needs at least two patients per domain");
      rng.shuffle(*group);
      const std::size_t n_val = std::max<std::size_t>(1, fraction_count(group->size(), ratios.translation_val_fraction));
      m.val.insert(m.val.end(), group->begin(), group->begin() + static_cast<long>(n_val));
      m.train.insert(m.train.end(), group->begin() + static_cast<long>(n_val), group->end());
    }
  }
  std::sort(m.train.begin(), m.train.end());
  std::sort(m.val.begin(), m.val.end());
  std::sort(m.test.begin(), m.test.end());
  return m;
}

SplitManifest make_splits(const std::vector<VolumeRecord>& records, SplitStage stage, std::uint64_t seed,
                          const SplitRatios& ratios) {
  std::vector<PatientEntry> patients;
  patients.reserve(records.size());
  for (const auto& r : records) patients.push_back({r.meta.patient_id, r.meta.domain});
  return make_splits(std::move(patients), stage, seed, ratios);
}

// ---------------------------------------------------------------------------
// Slices

std::vector<Slice2> volume_to_slices(const VolumeRecord& v) {
  std::vector<Slice2> out;
  out.reserve(v.voxels.depth());
  for (std::size_t s = 0; s < v.voxels.depth(); ++s) {
    const auto px = v.voxels.slice(s);
    out.push_back(Slice2{v.voxels.rows(), v.voxels.cols(), std::vector<float>(px.begin(), px.end())});
  }
  return out;
}

SliceStackHeader header_of(const VolumeRecord& v) {
  return SliceStackHeader{v.meta, v.voxels.rows(), v.voxels.cols(), v.voxels.depth()};
}

VolumeRecord slices_to_volume(const std::vector<Slice2>& slices, const SliceStackHeader& header) {
  if (slices.size() != header.depth) {
    throw DomainError("slice count " + std::to_string(slices.size()) + " does not match header depth " +
                      std::to_string(header.depth));
  }
  VolumeRecord v;
  v.meta = header.meta;
  v.voxels = Grid3(header.rows, header.cols, header.depth);
  for (std::size_t s = 0; s < slices.size(); ++s) {
    const auto& sl = slices[s];
    if (sl.rows != header.rows || sl.cols != header.cols || sl.pixels.size() != header.rows * header.cols) {
      throw DomainError("slice " + std::to_string(s) + " has inconsistent shape");
    }
    std::copy(sl.pixels.begin(), sl.pixels.end(), v.voxels.slice(s).begin());
  }
  return v;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

std::vector<float> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * i * i / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = static_cast<float>(w);
    total += w;
  }
  for (auto& w : k) w = static_cast<float>(w / total);
  return k;
}

Grid3 blur_in_plane(const Grid3& in, double sigma) {
  if (sigma <= 0.0) return in;
  const auto k = gaussian_kernel(sigma);
  const long radius = static_cast<long>(k.size() / 2);
  const long rows = static_cast<long>(in.rows());
  const long cols = static_cast<long>(in.cols());
  Grid3 tmp(in.rows(), in.cols(), in.depth());
  Grid3 out(in.rows(), in.cols(), in.depth());
  for (std::size_t s = 0; s < in.depth(); ++s) {
    for (long r = 0; r < rows; ++r) {
      for (long c = 0; c < cols; ++c) {
        double acc = 0.0;
        for (long i = -radius; i <= radius; ++i) {
          const long cc = std::clamp(c + i, 0L, cols - 1);
          acc += k[static_cast<std::size_t>(i + radius)] * in.at(r, cc, s);
        }
        tmp.at(r, c, s) = static_cast<float>(acc);
      }
    }
    for (long r = 0; r < rows; ++r) {
      for (long c = 0; c < cols; ++c) {
        double acc = 0.0;
        for (long i = -radius; i <= radius; ++i) {
          const long rr = std::clamp(r + i, 0L, rows - 1);
          acc += k[static_cast<std::size_t>(i + radius)] * tmp.at(rr, c, s);
        }
        out.at(r, c, s) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

struct Anatomy {
  double center_row;
  double center_col;
  double axis_row;
  double axis_col;
  double texture_phase;
  double texture_freq;
  BiopsyLocation biopsy;
};

constexpr double kRimStart = 0.8;

Grid3 render(const Anatomy& a, const SynthOptions& opt, double gland_level, double lesion_depth,
             Rng& noise_rng) {
  Grid3 g(opt.rows, opt.cols, opt.depth, -1.0f);
  const double cs = (static_cast<double>(opt.depth) - 1.0) / 2.0;
  const double half_span = 0.5 * static_cast<double>(opt.depth) + 1.0;
  const double scale = static_cast<double>(opt.rows) / 64.0;
  const double lesion_sigma = 2.5 * scale;
  for (std::size_t s = 0; s < opt.depth; ++s) {
    const double dz = (static_cast<double>(s) - cs) / half_span;
    const double taper = std::sqrt(std::max(0.0, 1.0 - dz * dz));
    if (taper <= 0.0) continue;
    const double slice_lesion = std::exp(-0.5 * std::pow((static_cast<double>(s) - a.biopsy.slice) / 0.9, 2));
    for (std::size_t r = 0; r < opt.rows; ++r) {
      for (std::size_t c = 0; c < opt.cols; ++c) {
        const double yr = (static_cast<double>(r) - a.center_row) / (a.axis_row * taper);
        const double xc = (static_cast<double>(c) - a.center_col) / (a.axis_col * taper);
        const double q = yr * yr + xc * xc;
        if (q > 1.0) continue;
        // Bright capsule rim pins the intensity range to [-1, 1], so the
        // acquisition shift survives per-volume normalization.
        if (q > kRimStart) {
          g.at(r, c, s) = 1.0f;
          continue;
        }
        double v = gland_level + 0.05 * std::sin(a.texture_freq * static_cast<double>(r) + a.texture_phase) *
                                     std::cos(a.texture_freq * static_cast<double>(c) - a.texture_phase);
        const double dr = static_cast<double>(r) - a.biopsy.row;
        const double dc = static_cast<double>(c) - a.biopsy.col;
        v -= lesion_depth * slice_lesion * std::exp(-0.5 * (dr * dr + dc * dc) / (lesion_sigma * lesion_sigma));
        v += opt.noise * noise_rng.normal();
        g.at(r, c, s) = static_cast<float>(std::clamp(v, -1.0, 1.0));
      }
    }
  }
  return g;
}

}  // namespace

Grid3 apply_synthetic_shift(const Grid3& voxels, double strength) {
  if (strength <= 0.0) return voxels;
  Grid3 out = blur_in_plane(voxels, 0.8 * strength);
  const double gamma = 1.0 + 0.8 * strength;
  for (auto& x : out.data()) {
    const double u = std::clamp((static_cast<double>(x) + 1.0) / 2.0, 0.0, 1.0);
    x = static_cast<float>(2.0 * std::pow(u, gamma) - 1.0);
  }
  return out;
}

std::vector<SynthPatient> synth_two_domain_dataset(std::size_t n_patients, std::uint64_t seed,
                                                   const SynthOptions& opt) {
  if (n_patients < 10) throw DomainError("synthetic dataset needs at least 10 patients");
  if (opt.rows < 16 || opt.cols < 16 || opt.depth < 3) throw DomainError("synthetic volume too small");
  Rng rng(seed);

  // Balanced labels per domain: even indices are source, odd are target.
  std::vector<int> labels(n_patients, 0);
  for (int d = 0; d < 2; ++d) {
    std::vector<std::size_t> members;
    for (std::size_t i = static_cast<std::size_t>(d); i < n_patients; i += 2) members.push_back(i);
    std::vector<int> pool(members.size(), 0);
    for (std::size_t i = 0; i < members.size() / 2; ++i) pool[i] = 1;
    if (members.size() % 2 == 1 && rng.uniform() < 0.5) pool[members.size() / 2] = 1;
    rng.shuffle(pool);
    for (std::size_t i = 0; i < members.size(); ++i) labels[members[i]] = pool[i];
  }

  const double scale = static_cast<double>(opt.rows) / 64.0;
  std::vector<SynthPatient> out;
  out.reserve(n_patients);
  for (std::size_t i = 0; i < n_patients; ++i) {
    Anatomy a{};
    a.center_row = static_cast<double>(opt.rows) / 2.0 + rng.uniform(-3.0, 3.0) * scale;
    a.center_col = static_cast<double>(opt.cols) / 2.0 + rng.uniform(-3.0, 3.0) * scale;
    a.axis_row = rng.uniform(8.0, 11.0) * scale;
    a.axis_col = rng.uniform(8.0, 11.0) * scale;
    a.texture_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    a.texture_freq = rng.uniform(0.3, 0.6);
    a.biopsy.slice = static_cast<int>(opt.depth / 2) + static_cast<int>(rng.index(3)) - 1;
    a.biopsy.row = static_cast<int>(std::lround(a.center_row + rng.uniform(-0.35, 0.35) * a.axis_row));
    a.biopsy.col = static_cast<int>(std::lround(a.center_col + rng.uniform(-0.35, 0.35) * a.axis_col));

    const int label = labels[i];
    const Domain domain = i % 2 == 0 ? Domain::kSource3T : Domain::kTarget1p5T;
    char id[32];
    std::snprintf(id, sizeof id, "synth%03zu", i);

    Rng noise_rng(derive_seed(seed, i));
    SynthPatient p;
    const double t2_lesion = 0.35 + opt.lesion_margin * label;
    const double adc_lesion = 0.25 + opt.lesion_margin * label;
    Grid3 t2 = render(a, opt, 0.25, t2_lesion, noise_rng);
    Grid3 adc = render(a, opt, 0.05, adc_lesion, noise_rng);
    if (domain == Domain::kTarget1p5T) {
      t2 = apply_synthetic_shift(t2, opt.domain_shift);
      adc = apply_synthetic_shift(adc, opt.domain_shift);
    }

    VolumeMeta meta;
    meta.patient_id = id;
    meta.domain = domain;
    meta.spacing = Spacing{0.5, 0.5, 3.0};
    meta.biopsy = a.biopsy;
    meta.label = label;
    meta.gleason = label == 1 ? 7 : 6;

    meta.modality = Modality::kT2;
    p.t2 = normalize_intensity(VolumeRecord{std::move(t2), meta});
    meta.modality = Modality::kAdc;
    p.adc = normalize_intensity(VolumeRecord{std::move(adc), meta});
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace evident::data
