#include "evident/io.hpp"

#include <array>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "evident/error.hpp"

namespace evident::io {
namespace {

constexpr std::int32_t kHeaderSize = 348;
constexpr float kVoxOffset = 352.0f;

template <typename T>
void put(std::array<char, 352>& buf, std::size_t offset, T value) {
  std::memcpy(buf.data() + offset, &value, sizeof(T));
}

template <typename T>
T get(const std::array<char, 352>& buf, std::size_t offset) {
  T value;
  std::memcpy(&value, buf.data() + offset, sizeof(T));
  return value;
}

std::string field(const std::vector<std::string>& cells, std::size_t i) {
  return i < cells.size() ? cells[i] : std::string();
}

std::optional<int> optional_int(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stoi(s);
}

}  // namespace

void write_nifti(const std::filesystem::path& path, const Grid3& voxels, const data::Spacing& spacing) {
  std::array<char, 352> h{};
  put<std::int32_t>(h, 0, kHeaderSize);
  put<char>(h, 39, 0);  // dim_info
  const std::array<std::int16_t, 8> dim{3,
                                        static_cast<std::int16_t>(voxels.cols()),
                                        static_cast<std::int16_t>(voxels.rows()),
                                        static_cast<std::int16_t>(voxels.depth()),
                                        1, 1, 1, 1};
  for (std::size_t i = 0; i < 8; ++i) put<std::int16_t>(h, 40 + 2 * i, dim[i]);
  put<std::int16_t>(h, 70, 16);  // DT_FLOAT32
  put<std::int16_t>(h, 72, 32);
  const std::array<float, 8> pixdim{1.0f,
                                    static_cast<float>(spacing.x),
                                    static_cast<float>(spacing.y),
                                    static_cast<float>(spacing.z),
                                    0.0f, 0.0f, 0.0f, 0.0f};
  for (std::size_t i = 0; i < 8; ++i) put<float>(h, 76 + 4 * i, pixdim[i]);
  put<float>(h, 108, kVoxOffset);
  put<float>(h, 112, 1.0f);  // scl_slope
  put<float>(h, 116, 0.0f);  // scl_inter
  put<char>(h, 123, 2);      // xyzt_units: mm
  put<std::int16_t>(h, 252, 0);
  put<std::int16_t>(h, 254, 0);
  std::memcpy(h.data() + 344, "n+1\0", 4);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(reinterpret_cast<const char*>(voxels.data().data()),
            static_cast<std::streamsize>(voxels.size() * sizeof(float)));
  if (!out) throw IoError("failed writing " + path.string());
}

NiftiVolume read_nifti(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<char, 352> h{};
  in.read(h.data(), 348);
  if (in.gcount() != 348 || get<std::int32_t>(h, 0) != kHeaderSize) {
    throw IoError(path.string() + " is not a NIfTI-1 file");
  }
  if (std::memcmp(h.data() + 344, "n+1", 3) != 0) throw IoError(path.string() + " is not a single-file NIfTI-1 image");
  const auto ndim = get<std::int16_t>(h, 40);
  if (ndim < 2 || ndim > 4) throw IoError(path.string() + ": unsupported dimensionality");
  const std::size_t cols = static_cast<std::size_t>(get<std::int16_t>(h, 42));
  const std::size_t rows = static_cast<std::size_t>(get<std::int16_t>(h, 44));
  const std::size_t depth = ndim >= 3 ? static_cast<std::size_t>(get<std::int16_t>(h, 46)) : 1;
  if (ndim == 4 && get<std::int16_t>(h, 48) > 1) throw IoError(path.string() + ": time series not supported");
  const auto datatype = get<std::int16_t>(h, 70);
  const float slope = get<float>(h, 112);
  const float inter = get<float>(h, 116);
  const auto offset = static_cast<std::streamoff>(get<float>(h, 108));

  NiftiVolume v;
  v.spacing = data::Spacing{get<float>(h, 80), get<float>(h, 84), ndim >= 3 ? get<float>(h, 88) : 1.0f};
  if (!(v.spacing.x > 0) || !(v.spacing.y > 0) || !(v.spacing.z > 0)) {
    throw IoError(path.string() + ": non-positive voxel spacing");
  }
  const std::size_t n = rows * cols * depth;
  std::vector<float> voxels(n);
  in.seekg(offset);
  const auto read_as = [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> raw(n);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(T)));
    if (static_cast<std::size_t>(in.gcount()) != n * sizeof(T)) throw IoError(path.string() + ": truncated payload");
    for (std::size_t i = 0; i < n; ++i) voxels[i] = static_cast<float>(raw[i]);
  };
  switch (datatype) {
    case 2: read_as(std::uint8_t{}); break;
    case 4: read_as(std::int16_t{}); break;
    case 8: read_as(std::int32_t{}); break;
    case 16: read_as(float{}); break;
    case 64: read_as(double{}); break;
    default: throw IoError(path.string() + ": unsupported NIfTI datatype " + std::to_string(datatype));
  }
  if (slope != 0.0f && !(slope == 1.0f && inter == 0.0f)) {
    for (auto& x : voxels) x = x * slope + inter;
  }
  v.voxels = Grid3(rows, cols, depth, std::move(voxels));
  return v;
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void write_dataset(const std::filesystem::path& dir, const std::vector<data::SynthPatient>& patients) {
  std::filesystem::create_directories(dir);
  std::ostringstream csv;
  csv << "patient_id,domain,biopsy_row,biopsy_col,biopsy_slice,label,gleason\n";
  for (const auto& p : patients) {
    const auto& m = p.t2.meta;
    csv << m.patient_id << ',' << data::to_string(m.domain) << ',';
    if (m.biopsy) {
      csv << m.biopsy->row << ',' << m.biopsy->col << ',' << m.biopsy->slice << ',';
    } else {
      csv << ",,,";
    }
    if (m.label) csv << *m.label;
    csv << ',';
    if (m.gleason) csv << *m.gleason;
    csv << '\n';
    write_nifti(dir / (m.patient_id + "_T2.nii"), p.t2.voxels, p.t2.meta.spacing);
    write_nifti(dir / (m.patient_id + "_ADC.nii"), p.adc.voxels, p.adc.meta.spacing);
  }
  write_text(dir / kCasesFile, csv.str());
}

std::vector<data::SynthPatient> read_dataset(const std::filesystem::path& dir) {
  std::istringstream csv(read_text(dir / kCasesFile));
  std::string line;
  std::getline(csv, line);
  if (line.rfind("patient_id,domain", 0) != 0) throw IoError((dir / kCasesFile).string() + ": unexpected header");
  std::vector<data::SynthPatient> out;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    data::VolumeMeta meta;
    meta.patient_id = field(cells, 0);
    meta.domain = data::parse_domain(field(cells, 1));
    const auto row = optional_int(field(cells, 2));
    const auto col = optional_int(field(cells, 3));
    const auto slice = optional_int(field(cells, 4));
    if (row && col && slice) meta.biopsy = data::BiopsyLocation{*row, *col, *slice};
    meta.label = optional_int(field(cells, 5));
    meta.gleason = optional_int(field(cells, 6));

    data::SynthPatient p;
    for (auto modality : {data::Modality::kT2, data::Modality::kAdc}) {
      auto nii = read_nifti(dir / (meta.patient_id + "_" + std::string(data::to_string(modality)) + ".nii"));
      data::VolumeMeta m = meta;
      m.modality = modality;
      m.spacing = nii.spacing;
      data::VolumeRecord v{std::move(nii.voxels), std::move(m)};
      v.validate();
      (modality == data::Modality::kT2 ? p.t2 : p.adc) = std::move(v);
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace evident::io
