#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include "nvs/substrate/tensor.hpp"

// Parameter archive: a single file holding a JSON manifest followed by raw
// little-endian arrays.
//
//   bytes 0..7    magic "NVSARCH1"
//   bytes 8..11   format version (uint32)
//   bytes 12..19  manifest length in bytes (uint64)
//   manifest      {"version", "meta": {...}, "entries": [{name, shape, dtype, offset, nbytes}]}
//   data          concatenated arrays; offsets are relative to the start of data

namespace nvs::ad {

static_assert(std::endian::native == std::endian::little, "archive IO assumes a little-endian host");

inline constexpr char kArchiveMagic[8] = {'N', 'V', 'S', 'A', 'R', 'C', 'H', '1'};
inline constexpr std::uint32_t kArchiveVersion = 1;

template <class T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>) return "float32";
  else if constexpr (std::is_same_v<T, double>) return "float64";
  else static_assert(sizeof(T) == 0, "unsupported dtype");
}

class ArchiveWriter {
 public:
  template <class T>
  void add(const std::string& name, const Tensor<T>& t) {
    NVS_CHECK(!index_.count(name), "duplicate archive entry " + name);
    const std::size_t offset = blob_.size();
    const std::size_t nbytes = static_cast<std::size_t>(t.numel()) * sizeof(T);
    blob_.resize(offset + nbytes);
    if (nbytes) std::memcpy(blob_.data() + offset, t.data(), nbytes);
    nlohmann::json e = {{"name", name}, {"shape", t.shape()}, {"dtype", dtype_name<T>()},
                        {"offset", offset}, {"nbytes", nbytes}};
    index_[name] = entries_.size();
    entries_.push_back(std::move(e));
  }

  void set_meta(const std::string& key, nlohmann::json value) { meta_[key] = std::move(value); }

  void write(const std::string& path) const {
    nlohmann::json manifest = {{"version", kArchiveVersion}, {"meta", meta_}, {"entries", entries_}};
    const std::string text = manifest.dump();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open archive for writing: " + path);
    const std::uint32_t version = kArchiveVersion;
    const std::uint64_t len = text.size();
    os.write(kArchiveMagic, 8);
    os.write(reinterpret_cast<const char*>(&version), 4);
    os.write(reinterpret_cast<const char*>(&len), 8);
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    os.write(reinterpret_cast<const char*>(blob_.data()), static_cast<std::streamsize>(blob_.size()));
    if (!os) throw DataError("failed writing archive: " + path);
  }

 private:
  nlohmann::json meta_ = nlohmann::json::object();
  nlohmann::json entries_ = nlohmann::json::array();
  std::map<std::string, std::size_t> index_;
  std::vector<unsigned char> blob_;
};

class ArchiveReader {
 public:
  explicit ArchiveReader(const std::string& path) : path_(path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open archive: " + path);
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    is.read(magic, 8);
    is.read(reinterpret_cast<char*>(&version), 4);
    is.read(reinterpret_cast<char*>(&len), 8);
    if (!is || std::memcmp(magic, kArchiveMagic, 8) != 0) throw CheckpointError("not a parameter archive: " + path);
    if (version != kArchiveVersion)
      throw CheckpointError("archive version " + std::to_string(version) + " unsupported: " + path);
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    if (!is) throw CheckpointError("truncated archive manifest: " + path);
    try {
      manifest_ = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
      throw CheckpointError("corrupt archive manifest: " + std::string(e.what()));
    }
    blob_.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
    for (std::size_t i = 0; i < manifest_["entries"].size(); ++i)
      index_[manifest_["entries"][i]["name"].get<std::string>()] = i;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }
  const nlohmann::json& meta() const { return manifest_["meta"]; }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& e : manifest_["entries"]) out.push_back(e["name"].get<std::string>());
    return out;
  }

  // Reads an entry, converting between float32 and float64 as needed.
  template <class T>
  Tensor<T> get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw CheckpointError("archive " + path_ + " has no entry " + name);
    const auto& e = manifest_["entries"][it->second];
    const Shape shape = e["shape"].get<Shape>();
    const auto offset = e["offset"].get<std::size_t>(), nbytes = e["nbytes"].get<std::size_t>();
    if (offset + nbytes > blob_.size()) throw CheckpointError("entry " + name + " exceeds archive data");
    const std::string dtype = e["dtype"].get<std::string>();
    if (dtype == "float32") return read_as<float, T>(shape, offset, nbytes);
    if (dtype == "float64") return read_as<double, T>(shape, offset, nbytes);
    throw CheckpointError("entry " + name + " has unsupported dtype " + dtype);
  }

 private:
  template <class S, class T>
  Tensor<T> read_as(const Shape& shape, std::size_t offset, std::size_t nbytes) const {
    const auto n = numel_of(shape);
    if (static_cast<std::size_t>(n) * sizeof(S) != nbytes) throw CheckpointError("entry size mismatch");
    std::vector<S> raw(static_cast<std::size_t>(n));
    if (nbytes) std::memcpy(raw.data(), blob_.data() + offset, nbytes);
    std::vector<T> out(raw.begin(), raw.end());
    return Tensor<T>(shape, std::move(out));
  }

  std::string path_;
  nlohmann::json manifest_;
  std::map<std::string, std::size_t> index_;
  std::vector<char> blob_;
};

}  // namespace nvs::ad
