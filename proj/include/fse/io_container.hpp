#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fse/params.hpp"
#include "fse/tensor.hpp"

namespace fse {

// Single-file tensor container: magic, manifest JSON (names, shapes, byte
// offsets plus free-form meta), then raw little-endian f32 payloads. Used by
// checkpoints and file-based perceptual backends.

inline constexpr char kContainerMagic[8] = {'F', 'S', 'E', 'T', 'N', 'S', 'R', '1'};

namespace detail {

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (unsigned char)((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= (std::uint64_t(b[i]) << (8 * i));
  return v;
}

inline void write_f32_le(std::ostream& os, const float* data, std::int64_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(data), std::streamsize(count) * 4);
  } else {
    std::vector<unsigned char> buf(std::size_t(count) * 4);
    for (std::int64_t i = 0; i < count; ++i) {
      std::uint32_t v;
      std::memcpy(&v, data + i, 4);
      buf[std::size_t(i) * 4 + 0] = (unsigned char)(v & 0xff);
      buf[std::size_t(i) * 4 + 1] = (unsigned char)((v >> 8) & 0xff);
      buf[std::size_t(i) * 4 + 2] = (unsigned char)((v >> 16) & 0xff);
      buf[std::size_t(i) * 4 + 3] = (unsigned char)((v >> 24) & 0xff);
    }
    os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
  }
}

inline void read_f32_le(std::istream& is, float* data, std::int64_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(data), std::streamsize(count) * 4);
  } else {
    std::vector<unsigned char> buf(std::size_t(count) * 4);
    is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    for (std::int64_t i = 0; i < count; ++i) {
      std::uint32_t v = std::uint32_t(buf[std::size_t(i) * 4 + 0]) |
                        (std::uint32_t(buf[std::size_t(i) * 4 + 1]) << 8) |
                        (std::uint32_t(buf[std::size_t(i) * 4 + 2]) << 16) |
                        (std::uint32_t(buf[std::size_t(i) * 4 + 3]) << 24);
      std::memcpy(data + i, &v, 4);
    }
  }
}

}  // namespace detail

inline void save_container(const std::string& path, const NamedTensorMap& tensors, const nlohmann::json& meta) {
  nlohmann::json manifest;
  manifest["meta"] = meta;
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["dtype"] = "f32";
    e["offset"] = offset;
    e["nbytes"] = std::uint64_t(t.numel()) * 4;
    manifest["tensors"].push_back(e);
    offset += std::uint64_t(t.numel()) * 4;
  }
  const std::string mstr = manifest.dump();

  std::ofstream os(path, std::ios::binary);
  FSE_CHECK(os.good(), IoError, "cannot write " + path);
  os.write(kContainerMagic, 8);
  detail::write_u64_le(os, mstr.size());
  os.write(mstr.data(), std::streamsize(mstr.size()));
  for (const auto& [name, t] : tensors) {
    (void)name;
    detail::write_f32_le(os, t.data(), t.numel());
  }
  FSE_CHECK(os.good(), IoError, "write failed: " + path);
}

inline NamedTensorMap load_container(const std::string& path, nlohmann::json* meta_out = nullptr) {
  std::ifstream is(path, std::ios::binary);
  FSE_CHECK(is.good(), IoError, "cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  FSE_CHECK(is.good() && std::memcmp(magic, kContainerMagic, 8) == 0, FormatError,
            path + ": not a tensor container");
  const std::uint64_t mlen = detail::read_u64_le(is);
  std::string mstr(mlen, '\0');
  is.read(mstr.data(), std::streamsize(mlen));
  FSE_CHECK(is.good(), FormatError, path + ": truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mstr);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": bad manifest: " + e.what());
  }
  if (meta_out) *meta_out = manifest.value("meta", nlohmann::json::object());

  const std::streampos payload_start = is.tellg();
  NamedTensorMap tensors;
  for (const auto& e : manifest.at("tensors")) {
    const std::string name = e.at("name").get<std::string>();
    Shape shape = e.at("shape").get<Shape>();
    FSE_CHECK(e.value("dtype", "f32") == std::string("f32"), FormatError,
              path + ": tensor '" + name + "' has unsupported dtype");
    Tensor t(shape);
    FSE_CHECK(e.at("nbytes").get<std::uint64_t>() == std::uint64_t(t.numel()) * 4, FormatError,
              path + ": tensor '" + name + "' byte count mismatch");
    is.seekg(payload_start + std::streampos(e.at("offset").get<std::uint64_t>()));
    detail::read_f32_le(is, t.data(), t.numel());
    FSE_CHECK(is.good(), FormatError, path + ": truncated payload for '" + name + "'");
    tensors[name] = std::move(t);
  }
  return tensors;
}

}  // namespace fse
