#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace dod {

using Shape = std::vector<int>;

// Thrown when tensor shapes do not line up for an operation.
struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown on malformed or truncated serialized data.
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of doubles. Canonical feature-map layout is
// [channels, height, width].
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(numel_of(shape), 0.0) {}
  Tensor(Shape s, std::vector<double> d);

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, double v);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }
  int rank() const { return static_cast<int>(shape.size()); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  // 3-d accessor for [C,H,W] maps.
  double& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
  }

  bool all_finite() const;
};

// "DTEN" binary format: magic `DTEN`, u8 version=1, u8 dtype (0=f32,1=f64),
// u8 rank, u64 dims little-endian, then raw values little-endian.
void write_dten(std::ostream& os, const Tensor& t, bool as_f32 = false);
Tensor read_dten(std::istream& is);
void save_dten(const std::string& path, const Tensor& t);
Tensor load_dten(const std::string& path);

}  // namespace dod
