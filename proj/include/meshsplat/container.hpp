#pragma once

// Binary container shared by every binary asset:
//
//   bytes 0..7    magic
//   bytes 8..11   u32 version (little-endian)
//   bytes 12..15  u32 metadata length L
//   bytes 16..    L bytes of JSON metadata, space-padded to a multiple of 8
//   then          each declared array, packed little-endian in declared order
//
// The metadata's "arrays" list declares name, dtype (f32, f64, u32) and
// shape of every array.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace meshsplat {

enum class DType { F32, F64, U32 };

std::string_view to_string(DType t);
std::size_t dtype_size(DType t);

struct ContainerArray {
  std::string name;
  DType dtype = DType::F32;
  std::vector<std::size_t> shape;
  std::vector<std::uint8_t> bytes;

  std::size_t element_count() const;

  /// Values widened to double.
  std::vector<double> as_double() const;
  std::vector<std::uint32_t> as_u32() const;

  static ContainerArray from_f32(std::string name, std::vector<std::size_t> shape, std::span<const double> values);
  static ContainerArray from_f64(std::string name, std::vector<std::size_t> shape, std::span<const double> values);
  static ContainerArray from_u32(std::string name, std::vector<std::size_t> shape,
                                 std::span<const std::uint32_t> values);
};

struct Container {
  std::string magic;  // exactly 8 bytes
  std::uint32_t version = 1;
  nlohmann::json meta = nlohmann::json::object();  // "arrays" is managed by encode/decode
  std::vector<ContainerArray> arrays;

  const ContainerArray* find(const std::string& name) const;
  /// Throws Error(Format) naming the array when it is absent.
  const ContainerArray& require(const std::string& name) const;
};

std::vector<std::uint8_t> encode_container(const Container& c);

/// Throws Error(Format) on a wrong magic, unsupported version or
/// truncation; the message names the section that is missing.
Container decode_container(std::span<const std::uint8_t> bytes, std::string_view expected_magic,
                           std::uint32_t max_version);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace meshsplat
