#pragma once

// Binary container for named arrays plus a JSON metadata block: the on-disk
// format behind checkpoints and density-map outputs.
//
// Little-endian layout:
//   bytes 0-3   magic "GUNC"
//   bytes 4-7   u32 format version (currently 1)
//   bytes 8-15  u64 payload length
//   bytes 16-19 u32 CRC-32 of the payload
//   payload:    u32 header length, UTF-8 JSON header, raw array bytes
//
// The JSON header holds {"meta": <free-form>, "arrays": [{name, dtype,
// shape, offset, bytes}, ...]}; offsets are relative to the start of the
// raw-bytes section. Save -> load -> save reproduces identical bytes.

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gunet/errors.hpp"

namespace gunet {

constexpr char kStoreMagic[4] = {'G', 'U', 'N', 'C'};
constexpr std::uint32_t kStoreVersion = 1;

inline std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32") return 4;
  if (dtype == "f64") return 8;
  if (dtype == "i64") return 8;
  if (dtype == "u8") return 1;
  throw FormatError("unknown array dtype '" + dtype + "'");
}

template <typename T>
struct DtypeName;
template <>
struct DtypeName<float> {
  static constexpr const char* value = "f32";
};
template <>
struct DtypeName<double> {
  static constexpr const char* value = "f64";
};
template <>
struct DtypeName<std::int64_t> {
  static constexpr const char* value = "i64";
};
template <>
struct DtypeName<std::uint8_t> {
  static constexpr const char* value = "u8";
};

struct ArrayEntry {
  std::string name;
  std::string dtype;
  std::vector<std::int64_t> shape;
  std::vector<std::uint8_t> bytes;

  std::int64_t element_count() const {
    std::int64_t n = 1;
    for (std::int64_t d : shape) n *= d;
    return n;
  }
};

// In-memory array set with free-form JSON metadata; serializes to the
// container format above.
class ArrayStore {
 public:
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();

  template <typename T>
  void put(const std::string& name, std::vector<std::int64_t> shape, const T* data,
           std::size_t count) {
    std::int64_t expect = 1;
    for (std::int64_t d : shape) expect *= d;
    if (expect != static_cast<std::int64_t>(count))
      throw ShapeError("array '" + name + "': shape holds " + std::to_string(expect) +
                       " elements but " + std::to_string(count) + " were supplied");
    if (find(name) != nullptr) throw FormatError("duplicate array name '" + name + "'");
    ArrayEntry e;
    e.name = name;
    e.dtype = DtypeName<T>::value;
    e.shape = std::move(shape);
    e.bytes.resize(count * sizeof(T));
    std::memcpy(e.bytes.data(), data, e.bytes.size());
    arrays_.push_back(std::move(e));
  }

  template <typename T>
  void put(const std::string& name, const std::vector<T>& data) {
    put(name, {static_cast<std::int64_t>(data.size())}, data.data(), data.size());
  }

  const ArrayEntry* find(const std::string& name) const {
    for (const ArrayEntry& e : arrays_)
      if (e.name == name) return &e;
    return nullptr;
  }

  const ArrayEntry& require(const std::string& name) const {
    const ArrayEntry* e = find(name);
    if (e == nullptr) throw FormatError("array '" + name + "' missing from store");
    return *e;
  }

  // Typed read with dtype verification.
  template <typename T>
  std::vector<T> get(const std::string& name) const {
    const ArrayEntry& e = require(name);
    if (e.dtype != DtypeName<T>::value)
      throw FormatError("array '" + name + "' has dtype " + e.dtype + ", expected " +
                        DtypeName<T>::value);
    std::vector<T> out(e.bytes.size() / sizeof(T));
    std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
    return out;
  }

  const std::vector<ArrayEntry>& arrays() const { return arrays_; }

  std::vector<std::uint8_t> serialize() const {
    nlohmann::ordered_json header;
    header["meta"] = meta;
    header["arrays"] = nlohmann::ordered_json::array();
    std::uint64_t offset = 0;
    for (const ArrayEntry& e : arrays_) {
      nlohmann::ordered_json a;
      a["name"] = e.name;
      a["dtype"] = e.dtype;
      a["shape"] = e.shape;
      a["offset"] = offset;
      a["bytes"] = e.bytes.size();
      header["arrays"].push_back(a);
      offset += e.bytes.size();
    }
    const std::string header_text = header.dump();

    std::vector<std::uint8_t> payload;
    payload.reserve(4 + header_text.size() + offset);
    append_u32(payload, static_cast<std::uint32_t>(header_text.size()));
    payload.insert(payload.end(), header_text.begin(), header_text.end());
    for (const ArrayEntry& e : arrays_)
      payload.insert(payload.end(), e.bytes.begin(), e.bytes.end());

    std::vector<std::uint8_t> out;
    out.reserve(20 + payload.size());
    out.insert(out.end(), kStoreMagic, kStoreMagic + 4);
    append_u32(out, kStoreVersion);
    append_u64(out, payload.size());
    append_u32(out, static_cast<std::uint32_t>(
                        ::crc32(0, payload.data(), static_cast<uInt>(payload.size()))));
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
  }

  void save(const std::string& path) const {
    const std::vector<std::uint8_t> bytes = serialize();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path);
  }

  static ArrayStore deserialize(const std::vector<std::uint8_t>& bytes,
                                const std::string& origin) {
    if (bytes.size() < 20)
      throw FormatError(origin + ": truncated container (only " + std::to_string(bytes.size()) +
                        " bytes)");
    if (std::memcmp(bytes.data(), kStoreMagic, 4) != 0)
      throw FormatError(origin + ": bad magic bytes, not a GUNC container");
    const std::uint32_t version = read_u32(bytes, 4);
    if (version != kStoreVersion)
      throw FormatError(origin + ": unsupported container version " + std::to_string(version));
    const std::uint64_t payload_len = read_u64(bytes, 8);
    const std::uint32_t crc_stored = read_u32(bytes, 16);
    if (bytes.size() != 20 + payload_len)
      throw FormatError(origin + ": payload length field says " + std::to_string(payload_len) +
                        " bytes but file holds " + std::to_string(bytes.size() - 20));
    const std::uint8_t* payload = bytes.data() + 20;
    const std::uint32_t crc_actual =
        static_cast<std::uint32_t>(::crc32(0, payload, static_cast<uInt>(payload_len)));
    if (crc_actual != crc_stored)
      throw FormatError(origin + ": checksum mismatch (stored " + std::to_string(crc_stored) +
                        ", computed " + std::to_string(crc_actual) + ")");
    if (payload_len < 4) throw FormatError(origin + ": payload too small for header length");
    const std::uint32_t header_len = read_u32(bytes, 20);
    if (4 + static_cast<std::uint64_t>(header_len) > payload_len)
      throw FormatError(origin + ": header length " + std::to_string(header_len) +
                        " overruns payload");
    nlohmann::ordered_json header;
    try {
      header = nlohmann::ordered_json::parse(payload + 4, payload + 4 + header_len);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(origin + ": invalid JSON header: " + e.what());
    }

    ArrayStore store;
    const std::uint8_t* blob = payload + 4 + header_len;
    const std::uint64_t blob_len = payload_len - 4 - header_len;
    try {
      store.meta = header.at("meta");
      for (const auto& a : header.at("arrays")) {
        ArrayEntry e;
        e.name = a.at("name").get<std::string>();
        e.dtype = a.at("dtype").get<std::string>();
        e.shape = a.at("shape").get<std::vector<std::int64_t>>();
        const std::uint64_t offset = a.at("offset").get<std::uint64_t>();
        const std::uint64_t nbytes = a.at("bytes").get<std::uint64_t>();
        if (offset + nbytes > blob_len)
          throw FormatError(origin + ": array '" + e.name + "' overruns the data section");
        if (nbytes != e.element_count() * dtype_size(e.dtype))
          throw FormatError(origin + ": array '" + e.name + "' byte count " +
                            std::to_string(nbytes) + " does not match its shape");
        e.bytes.assign(blob + offset, blob + offset + nbytes);
        store.arrays_.push_back(std::move(e));
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(origin + ": malformed header: " + e.what());
    }
    return store;
  }

  static ArrayStore load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return deserialize(bytes, path);
  }

 private:
  static void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  static void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  static std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
    return v;
  }
  static std::uint64_t read_u64(const std::vector<std::uint8_t>& b, std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[at + i]) << (8 * i);
    return v;
  }

  std::vector<ArrayEntry> arrays_;
};

}  // namespace gunet
