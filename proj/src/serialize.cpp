// SPDX-License-Identifier: Apache-2.0
#include "gridcast/serialize.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace gridcast {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats assume a little-endian host");

namespace {

template <typename T>
void write_raw(std::ostream& os, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  os.write(buf, sizeof(T));
}

template <typename T>
T read_raw(std::istream& is) {
  char buf[sizeof(T)];
  if (!is.read(buf, sizeof(T))) {
    throw std::runtime_error("unexpected end of stream");
  }
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

template <typename Dtype>
constexpr DtypeCode code_of() {
  return sizeof(Dtype) == 4 ? DtypeCode::Float32 : DtypeCode::Float64;
}

}  // namespace

void write_u8(std::ostream& os, std::uint8_t v) { write_raw(os, v); }
void write_u32(std::ostream& os, std::uint32_t v) { write_raw(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { write_raw(os, v); }
void write_f32(std::ostream& os, float v) { write_raw(os, v); }
void write_f64(std::ostream& os, double v) { write_raw(os, v); }
std::uint8_t read_u8(std::istream& is) { return read_raw<std::uint8_t>(is); }
std::uint32_t read_u32(std::istream& is) { return read_raw<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return read_raw<std::uint64_t>(is); }
float read_f32(std::istream& is) { return read_raw<float>(is); }
double read_f64(std::istream& is) { return read_raw<double>(is); }

void write_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

void expect_magic(std::istream& is, const char (&magic)[5]) {
  char buf[4];
  if (!is.read(buf, 4) || std::memcmp(buf, magic, 4) != 0) {
    throw std::runtime_error(std::string("bad magic, expected \"") + magic + "\"");
  }
}

template <typename Dtype>
void write_tensor(std::ostream& os, const Tensor<Dtype>& t) {
  write_magic(os, "GCT1");
  write_u8(os, static_cast<std::uint8_t>(code_of<Dtype>()));
  write_u8(os, static_cast<std::uint8_t>(t.rank()));
  for (auto e : t.shape()) write_u64(os, e);
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * sizeof(Dtype)));
}

template <typename Dtype>
Tensor<Dtype> read_tensor(std::istream& is) {
  expect_magic(is, "GCT1");
  const auto code = static_cast<DtypeCode>(read_u8(is));
  const std::size_t rank = read_u8(is);
  Shape shape(rank);
  for (auto& e : shape) e = read_u64(is);
  const std::size_t n = shape_numel(shape);
  Tensor<Dtype> out(shape);
  if (code == code_of<Dtype>()) {
    if (!is.read(reinterpret_cast<char*>(out.data()),
                 static_cast<std::streamsize>(n * sizeof(Dtype)))) {
      throw std::runtime_error("truncated tensor payload");
    }
  } else if (code == DtypeCode::Float32) {
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<Dtype>(read_f32(is));
  } else if (code == DtypeCode::Float64) {
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<Dtype>(read_f64(is));
  } else {
    throw std::runtime_error("unknown tensor dtype code " +
                             std::to_string(static_cast<int>(code)));
  }
  return out;
}

template void write_tensor(std::ostream&, const Tensor<float>&);
template void write_tensor(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor(std::istream&);
template Tensor<double> read_tensor(std::istream&);

}  // namespace gridcast
