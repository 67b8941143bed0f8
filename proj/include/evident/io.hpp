#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "evident/data.hpp"

namespace evident::io {

struct NiftiVolume {
  Grid3 voxels;
  data::Spacing spacing;
};

/// Single-file NIfTI-1 (.nii), float32, x = columns, y = rows, z = slices.
void write_nifti(const std::filesystem::path& path, const Grid3& voxels, const data::Spacing& spacing);
/// Reads uint8, int16, int32, float32 and float64 payloads, applying scl_slope/scl_inter.
NiftiVolume read_nifti(const std::filesystem::path& path);

/// Dataset directory layout: `cases.csv` sidecar plus `<patient>_T2.nii` and
/// `<patient>_ADC.nii` per patient.
inline constexpr const char* kCasesFile = "cases.csv";

void write_dataset(const std::filesystem::path& dir, const std::vector<data::SynthPatient>& patients);
std::vector<data::SynthPatient> read_dataset(const std::filesystem::path& dir);

/// Whole-file helpers.
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double v);

/// Minimal CSV splitting (no quoting; the project's tables never contain commas).
std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace evident::io
