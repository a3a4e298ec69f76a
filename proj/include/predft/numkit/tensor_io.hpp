#pragma once

// Tensor container: a directory holding manifest.json plus one raw
// little-endian f64 file per tensor.
//
//   {"entries": [{"name": "enc/w0", "dtype": "f64", "shape": [4, 3], "file": "enc__w0.bin"}]}

#include <bit>
#include <cctype>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "predft/error.hpp"
#include "predft/numkit/tensor.hpp"

namespace predft::numkit {

static_assert(std::endian::native == std::endian::little,
              "tensor container IO assumes a little-endian host");

using TensorMap = std::map<std::string, Tensor>;

inline std::string container_file_name(const std::string& name) {
  std::string out;
  for (char c : name) {
    if (c == '/') {
      out += "__";
    } else if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.') {
      out += c;
    } else {
      out += '_';
    }
  }
  return out + ".bin";
}

inline void write_raw(const std::filesystem::path& file, const Tensor& t) {
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw ValidationError("cannot write " + file.string());
  os.write(reinterpret_cast<const char*>(t.data().data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!os) throw ValidationError("short write to " + file.string());
}

inline Tensor read_raw(const std::filesystem::path& file, const Shape& shape) {
  const std::size_t expect = shape_size(shape) * sizeof(double);
  std::error_code ec;
  const auto actual = std::filesystem::file_size(file, ec);
  if (ec) throw ValidationError("cannot stat " + file.string());
  if (actual != expect) {
    throw ValidationError(file.string() + ": size " + std::to_string(actual) + " bytes but shape " +
                          shape_string(shape) + " needs " + std::to_string(expect));
  }
  std::vector<double> data(shape_size(shape));
  std::ifstream is(file, std::ios::binary);
  is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(expect));
  if (!is) throw ValidationError("short read from " + file.string());
  return Tensor(shape, std::move(data));
}

/// Writes every tensor into `dir` (created if missing).
inline void save_container(const std::filesystem::path& dir, const TensorMap& tensors) {
  std::filesystem::create_directories(dir);
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [name, t] : tensors) {
    const std::string file = container_file_name(name);
    write_raw(dir / file, t);
    entries.push_back({{"name", name}, {"dtype", "f64"}, {"shape", t.shape()}, {"file", file}});
  }
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  os << nlohmann::json{{"entries", entries}}.dump(2) << '\n';
  if (!os) throw ValidationError("cannot write " + (dir / "manifest.json").string());
}

/// Loads and validates a container written by save_container.
inline TensorMap load_container(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw ValidationError("missing tensor manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed tensor manifest in " + dir.string() + ": " + e.what());
  }
  TensorMap out;
  for (const auto& e : manifest.at("entries")) {
    if (e.at("dtype").get<std::string>() != "f64") {
      throw ValidationError("unsupported dtype for " + e.at("name").get<std::string>());
    }
    const auto shape = e.at("shape").get<Shape>();
    if (shape.empty()) throw ValidationError("empty shape for " + e.at("name").get<std::string>());
    for (std::size_t ext : shape)
      if (ext == 0) throw ValidationError("zero extent for " + e.at("name").get<std::string>());
    out.emplace(e.at("name").get<std::string>(),
                read_raw(dir / e.at("file").get<std::string>(), shape));
  }
  return out;
}

}  // namespace predft::numkit
