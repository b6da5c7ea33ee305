// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>

#include "gridcast/tensor.hpp"

namespace gridcast {

/// Binary tensor record, little-endian:
///   "GCT1" | u8 dtype (1 = f32, 2 = f64) | u8 rank | u64 extent × rank | data
enum class DtypeCode : std::uint8_t { Float32 = 1, Float64 = 2 };

template <typename Dtype>
void write_tensor(std::ostream& os, const Tensor<Dtype>& t);

/// Reads one record, converting from the stored element type if needed.
template <typename Dtype>
Tensor<Dtype> read_tensor(std::istream& is);

// Little-endian scalar helpers shared by the other on-disk formats.
void write_u8(std::ostream& os, std::uint8_t v);
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f32(std::ostream& os, float v);
void write_f64(std::ostream& os, double v);
std::uint8_t read_u8(std::istream& is);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
float read_f32(std::istream& is);
double read_f64(std::istream& is);
void write_magic(std::ostream& os, const char (&magic)[5]);
/// Throws std::runtime_error when the next four bytes differ.
void expect_magic(std::istream& is, const char (&magic)[5]);

}  // namespace gridcast
