#include "dod/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dod {

int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (numel_of(shape) != static_cast<int64_t>(data.size()))
    throw DimensionError("shape " + shape_str(shape) + " does not match data length " +
                         std::to_string(data.size()));
}

Tensor Tensor::full(Shape s, double v) {
  Tensor t(std::move(s));
  std::fill(t.data.begin(), t.data.end(), v);
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  // assumes little-endian host
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ParseError(std::string("DTEN: truncated while reading ") + what);
  return v;
}

}  // namespace

void write_dten(std::ostream& os, const Tensor& t, bool as_f32) {
  os.write("DTEN", 4);
  put<uint8_t>(os, 1);
  put<uint8_t>(os, as_f32 ? 0 : 1);
  put<uint8_t>(os, static_cast<uint8_t>(t.rank()));
  for (int d : t.shape) put<uint64_t>(os, static_cast<uint64_t>(d));
  if (as_f32) {
    for (double v : t.data) put<float>(os, static_cast<float>(v));
  } else {
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
}

Tensor read_dten(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "DTEN", 4) != 0) throw ParseError("DTEN: bad magic");
  uint8_t version = get<uint8_t>(is, "version");
  if (version != 1) throw ParseError("DTEN: unsupported version " + std::to_string(version));
  uint8_t dtype = get<uint8_t>(is, "dtype");
  if (dtype > 1) throw ParseError("DTEN: unknown dtype " + std::to_string(dtype));
  uint8_t rank = get<uint8_t>(is, "rank");
  Shape shape;
  int64_t n = 1;
  for (int i = 0; i < rank; ++i) {
    uint64_t d = get<uint64_t>(is, "dims");
    if (d == 0 || d > (1u << 30)) throw ParseError("DTEN: implausible dimension");
    shape.push_back(static_cast<int>(d));
    n *= static_cast<int64_t>(d);
  }
  Tensor t(shape);
  if (dtype == 1) {
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw ParseError("DTEN: truncated values");
  } else {
    for (int64_t i = 0; i < n; ++i) t.data[static_cast<size_t>(i)] = get<float>(is, "values");
  }
  return t;
}

void save_dten(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ParseError("cannot open for writing: " + path);
  write_dten(os, t);
  if (!os) throw ParseError("write failed: " + path);
}

Tensor load_dten(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("cannot open: " + path);
  return read_dten(is);
}

}  // namespace dod
