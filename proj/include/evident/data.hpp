#pragma once

// Volume ingestion and patch preparation: resampling, normalization, rotation
// augmentation, biopsy-centred patch extraction, modality stacking,
// patient-exclusive splits, slice/restack conversion and a synthetic
// two-domain generator.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "evident/grid.hpp"

namespace evident::data {

enum class Modality { kT2, kAdc };
enum class Domain { kSource3T, kTarget1p5T };

std::string_view to_string(Modality m);
std::string_view to_string(Domain d);
Modality parse_modality(std::string_view s);
Domain parse_domain(std::string_view s);

enum class ClassifierVariant { kT2Only, kMpMri, kVolMpMri, kMsMpMri, kMpMriCoTeaching };

std::string_view to_string(ClassifierVariant v);
ClassifierVariant parse_variant(std::string_view s);
/// Channel depth of the stacked patch a variant consumes (ms_mpmri: both streams).
std::size_t stacked_depth(ClassifierVariant v);

/// Voxel spacing in mm: x along columns, y along rows, z across slices.
struct Spacing {
  double x = 0.5;
  double y = 0.5;
  double z = 3.0;
  friend bool operator==(const Spacing&, const Spacing&) = default;
};

struct BiopsyLocation {
  int row = 0;
  int col = 0;
  int slice = 0;
  friend bool operator==(const BiopsyLocation&, const BiopsyLocation&) = default;
};

struct VolumeMeta {
  std::string patient_id;
  Modality modality = Modality::kT2;
  Domain domain = Domain::kTarget1p5T;
  Spacing spacing;
  std::optional<BiopsyLocation> biopsy;
  std::optional<int> label;
  std::optional<int> gleason;
  int rotation_deg = 0;
  friend bool operator==(const VolumeMeta&, const VolumeMeta&) = default;
};

struct VolumeRecord {
  Grid3 voxels;  // rows x cols x slices
  VolumeMeta meta;

  void validate() const;
};

struct PatchRecord {
  Grid3 pixels;  // 64 x 64 x k, channels along depth
  std::string patient_id;
  std::vector<Modality> modalities;
  int rotation_deg = 0;
  int label = 0;
};

enum class SplitStage { kTranslation, kClassification };

struct SplitManifest {
  SplitStage stage = SplitStage::kClassification;
  std::uint64_t seed = 0;
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;

  bool contains_test(const std::string& patient_id) const;
};

struct PatientEntry {
  std::string patient_id;
  Domain domain = Domain::kTarget1p5T;
};

struct SplitRatios {
  // 34 of 104 local (target-domain) patients are held out for testing.
  double test_fraction_of_target = 34.0 / 104.0;
  double classification_val_fraction = 0.2;
  double translation_val_fraction = 0.1;
};

struct SliceStackHeader {
  VolumeMeta meta;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t depth = 0;
};

inline constexpr std::size_t kPatchSize = 64;
inline constexpr int kRotationStepDeg = 5;
inline constexpr int kRotationCount = 20;
inline constexpr float kFillValue = -1.0f;

/// Cosine-windowed sinc resampling to a new voxel spacing. Grid origin is
/// kept at voxel 0; each axis is resized by round(n * old / new).
VolumeRecord resample_volume(const VolumeRecord& v, const Spacing& target);

/// Resample in-plane to a fixed rows x cols, adjusting spacing to match.
VolumeRecord resize_in_plane(const VolumeRecord& v, std::size_t rows, std::size_t cols);

/// Affine min -> -1, max -> +1. A constant volume maps to all -1.
VolumeRecord normalize_intensity(const VolumeRecord& v);

/// 20 copies rotated 0, 5, ..., 95 degrees about the slice normal; bilinear,
/// out-of-frame pixels filled with -1. The biopsy location is carried
/// through the rotation.
std::vector<VolumeRecord> augment_rotations(const VolumeRecord& v);

/// Rotate every slice by `degrees` about the in-plane centre.
VolumeRecord rotate_volume(const VolumeRecord& v, double degrees);

/// 64 x 64 windows centred on the biopsy (row, col) from slices s-1, s, s+1.
/// Edge slices are replicated; pixels outside the image are -1.
PatchRecord extract_patch(const VolumeRecord& v, std::size_t size = kPatchSize);

PatchRecord stack_modalities(const PatchRecord& t2, const PatchRecord& adc, ClassifierVariant variant);
/// Inverse of stack_modalities for the two-modality variants.
std::pair<PatchRecord, PatchRecord> unstack_modalities(const PatchRecord& stacked,
                                                       ClassifierVariant variant);

SplitManifest make_splits(std::vector<PatientEntry> patients, SplitStage stage, std::uint64_t seed,
                          const SplitRatios& ratios = {});
SplitManifest make_splits(const std::vector<VolumeRecord>& records, SplitStage stage,
                          std::uint64_t seed, const SplitRatios& ratios = {});

std::vector<Slice2> volume_to_slices(const VolumeRecord& v);
SliceStackHeader header_of(const VolumeRecord& v);
VolumeRecord slices_to_volume(const std::vector<Slice2>& slices, const SliceStackHeader& header);

struct SynthOptions {
  std::size_t rows = 64;
  std::size_t cols = 64;
  std::size_t depth = 8;
  double domain_shift = 1.0;   // 0 disables the acquisition difference
  double lesion_margin = 0.5;  // extra lesion darkening for positive cases
  double noise = 0.03;
};

struct SynthPatient {
  VolumeRecord t2;
  VolumeRecord adc;
};

/// Desk-scale surrogate corpus: patients alternate between the two domains,
/// labels are balanced per domain, and each volume holds a gland with a
/// lesion blob at the recorded biopsy location.
std::vector<SynthPatient> synth_two_domain_dataset(std::size_t n_patients, std::uint64_t seed,
                                                   const SynthOptions& options = {});

/// Apply the synthetic acquisition transform (blur + gamma) that separates
/// the target domain from the source domain.
Grid3 apply_synthetic_shift(const Grid3& voxels, double strength);

}  // namespace evident::data
