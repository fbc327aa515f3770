#include "meshsplat/container.hpp"

#include "meshsplat/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace meshsplat {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

constexpr std::size_t kHeaderSize = 16;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::F32;
  if (s == "f64") return DType::F64;
  if (s == "u32") return DType::U32;
  throw Error(ErrorCode::Format, "unknown dtype '" + s + "'");
}

std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

template <typename T>
ContainerArray make_array(std::string name, DType dtype, std::vector<std::size_t> shape, std::span<const T> values) {
  ContainerArray a{std::move(name), dtype, std::move(shape), {}};
  if (a.element_count() != values.size()) {
    throw Error(ErrorCode::ShapeMismatch, "array '" + a.name + "' shape does not match its value count");
  }
  a.bytes.resize(values.size() * sizeof(T));
  if (!values.empty()) std::memcpy(a.bytes.data(), values.data(), a.bytes.size());
  return a;
}

}  // namespace

std::string_view to_string(DType t) {
  switch (t) {
    case DType::F32: return "f32";
    case DType::F64: return "f64";
    case DType::U32: return "u32";
  }
  return "?";
}

std::size_t dtype_size(DType t) { return t == DType::F64 ? 8 : 4; }

std::size_t ContainerArray::element_count() const { return product(shape); }

std::vector<double> ContainerArray::as_double() const {
  const std::size_t n = element_count();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (dtype) {
      case DType::F32: {
        float f;
        std::memcpy(&f, bytes.data() + 4 * i, 4);
        out[i] = f;
        break;
      }
      case DType::F64: std::memcpy(&out[i], bytes.data() + 8 * i, 8); break;
      case DType::U32: out[i] = get_u32(bytes.data() + 4 * i); break;
    }
  }
  return out;
}

std::vector<std::uint32_t> ContainerArray::as_u32() const {
  if (dtype != DType::U32) throw Error(ErrorCode::Format, "array '" + name + "' is not u32");
  std::vector<std::uint32_t> out(element_count());
  if (!out.empty()) std::memcpy(out.data(), bytes.data(), 4 * out.size());
  return out;
}

ContainerArray ContainerArray::from_f32(std::string name, std::vector<std::size_t> shape,
                                        std::span<const double> values) {
  std::vector<float> f(values.begin(), values.end());
  return make_array<float>(std::move(name), DType::F32, std::move(shape), f);
}

ContainerArray ContainerArray::from_f64(std::string name, std::vector<std::size_t> shape,
                                        std::span<const double> values) {
  return make_array<double>(std::move(name), DType::F64, std::move(shape), values);
}

ContainerArray ContainerArray::from_u32(std::string name, std::vector<std::size_t> shape,
                                        std::span<const std::uint32_t> values) {
  return make_array<std::uint32_t>(std::move(name), DType::U32, std::move(shape), values);
}

const ContainerArray* Container::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

const ContainerArray& Container::require(const std::string& name) const {
  if (const ContainerArray* a = find(name)) return *a;
  throw Error(ErrorCode::Format, "missing array '" + name + "'");
}

std::vector<std::uint8_t> encode_container(const Container& c) {
  if (c.magic.size() != 8) throw Error(ErrorCode::InvalidArgument, "container magic must be 8 bytes");
  nlohmann::json meta = c.meta;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& a : c.arrays) {
    if (a.bytes.size() != a.element_count() * dtype_size(a.dtype)) {
      throw Error(ErrorCode::ShapeMismatch, "array '" + a.name + "' byte size does not match its shape");
    }
    list.push_back({{"name", a.name}, {"dtype", std::string(to_string(a.dtype))}, {"shape", a.shape}});
  }
  meta["arrays"] = list;
  std::string text = meta.dump();
  while ((kHeaderSize + text.size()) % 8 != 0) text.push_back(' ');

  std::vector<std::uint8_t> out(c.magic.begin(), c.magic.end());
  put_u32(out, c.version);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& a : c.arrays) out.insert(out.end(), a.bytes.begin(), a.bytes.end());
  return out;
}

Container decode_container(std::span<const std::uint8_t> bytes, std::string_view expected_magic,
                           std::uint32_t max_version) {
  if (bytes.size() < kHeaderSize) throw Error(ErrorCode::Format, "truncated file: header incomplete");
  Container c;
  c.magic.assign(bytes.begin(), bytes.begin() + 8);
  if (c.magic != expected_magic) throw Error(ErrorCode::Format, "bad magic: not a " + std::string(expected_magic.substr(0, expected_magic.find('\0'))) + " file");
  c.version = get_u32(bytes.data() + 8);
  if (c.version == 0 || c.version > max_version) {
    throw Error(ErrorCode::Format, "unsupported version " + std::to_string(c.version) + " (max " +
                                       std::to_string(max_version) + ")");
  }
  const std::size_t meta_len = get_u32(bytes.data() + 12);
  if (bytes.size() < kHeaderSize + meta_len) throw Error(ErrorCode::Format, "truncated file: metadata incomplete");
  const std::string text(bytes.begin() + kHeaderSize, bytes.begin() + static_cast<std::ptrdiff_t>(kHeaderSize + meta_len));
  try {
    c.meta = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, std::string("metadata is not valid JSON: ") + e.what());
  }
  if (!c.meta.is_object() || !c.meta.contains("arrays") || !c.meta["arrays"].is_array()) {
    throw Error(ErrorCode::Format, "metadata lacks the array list");
  }
  std::size_t offset = kHeaderSize + meta_len;
  for (const auto& entry : c.meta["arrays"]) {
    ContainerArray a;
    try {
      a.name = entry.at("name").get<std::string>();
      a.dtype = parse_dtype(entry.at("dtype").get<std::string>());
      a.shape = entry.at("shape").get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::Format, std::string("malformed array descriptor: ") + e.what());
    }
    const std::size_t need = a.element_count() * dtype_size(a.dtype);
    if (bytes.size() - offset < need) {
      throw Error(ErrorCode::Format, "truncated file: array '" + a.name + "' needs " + std::to_string(need) +
                                         " bytes, " + std::to_string(bytes.size() - offset) + " remain");
    }
    a.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                   bytes.begin() + static_cast<std::ptrdiff_t>(offset + need));
    offset += need;
    c.arrays.push_back(std::move(a));
  }
  if (offset != bytes.size()) {
    throw Error(ErrorCode::Format, "trailing bytes after the last array");
  }
  c.meta.erase("arrays");
  return c;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for '" + path.string() + "'");
}

}  // namespace meshsplat
