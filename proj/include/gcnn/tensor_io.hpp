#pragma once

#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <variant>

#include "gcnn/binary_io.hpp"
#include "gcnn/tensor.hpp"

namespace gcnn {

/// A tensor read from disk, in whichever precision it was written.
using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

// .gct layout: "GCT1", u8 element width (4 or 8), u32 n,c,h,w, then the
// elements, all little-endian.
template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  os.write("GCT1", 4);
  os.put(static_cast<char>(sizeof(T)));
  for (std::size_t d : {t.n(), t.c(), t.h(), t.w()}) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw FormatError("dimension exceeds u32");
    binio::put_le(os, static_cast<std::uint32_t>(d));
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    if constexpr (std::is_same_v<T, float>)
      binio::put_f32(os, t[i]);
    else
      binio::put_f64(os, t[i]);
  }
}

inline AnyTensor read_tensor(std::istream& is) {
  binio::expect_magic(is, "GCT1");
  const int width = is.get();
  if (width != 4 && width != 8) throw FormatError("element width must be 4 or 8, got " + std::to_string(width));
  Shape s;
  s.n = binio::get_le<std::uint32_t>(is, "tensor header");
  s.c = binio::get_le<std::uint32_t>(is, "tensor header");
  s.h = binio::get_le<std::uint32_t>(is, "tensor header");
  s.w = binio::get_le<std::uint32_t>(is, "tensor header");
  if (width == 4) {
    Tensor<float> t(s);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = binio::get_f32(is, "tensor payload");
    return t;
  }
  Tensor<double> t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = binio::get_f64(is, "tensor payload");
  return t;
}

template <typename T>
void write_tensor_file(const std::string& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_tensor(os, t);
}

inline AnyTensor read_tensor_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path);
  return read_tensor(is);
}

}  // namespace gcnn
