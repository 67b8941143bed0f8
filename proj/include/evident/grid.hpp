#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "evident/error.hpp"

namespace evident {

/// Dense rows x cols x depth float grid stored slice-major: element (r, c, s)
/// lives at (s * rows + r) * cols + c, so each depth index is a contiguous
/// 2-D slice. Used for volumes (depth = slices) and patches (depth = channels).
class Grid3 {
 public:
  Grid3() = default;
  Grid3(std::size_t rows, std::size_t cols, std::size_t depth, float fill = 0.0f)
      : rows_(rows), cols_(cols), depth_(depth), data_(rows * cols * depth, fill) {}
  Grid3(std::size_t rows, std::size_t cols, std::size_t depth, std::vector<float> data)
      : rows_(rows), cols_(cols), depth_(depth), data_(std::move(data)) {
    if (data_.size() != rows * cols * depth) throw DomainError("grid buffer size mismatch");
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t depth() const { return depth_; }
  std::size_t slice_size() const { return rows_ * cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& at(std::size_t r, std::size_t c, std::size_t s) { return data_[(s * rows_ + r) * cols_ + c]; }
  float at(std::size_t r, std::size_t c, std::size_t s) const {
    return data_[(s * rows_ + r) * cols_ + c];
  }

  std::span<float> slice(std::size_t s) { return {data_.data() + s * slice_size(), slice_size()}; }
  std::span<const float> slice(std::size_t s) const {
    return {data_.data() + s * slice_size(), slice_size()};
  }

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  bool same_shape(const Grid3& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && depth_ == o.depth_;
  }
  friend bool operator==(const Grid3&, const Grid3&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t depth_ = 0;
  std::vector<float> data_;
};

/// A single 2-D slice (rows x cols), row-major.
struct Slice2 {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> pixels;

  float at(std::size_t r, std::size_t c) const { return pixels[r * cols + c]; }
  friend bool operator==(const Slice2&, const Slice2&) = default;
};

}  // namespace evident
