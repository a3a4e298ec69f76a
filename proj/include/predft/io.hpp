#pragma once

// File helpers shared by every writer: JSON/text output with a trailing
// newline, and directories that appear atomically via rename.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>

#include <nlohmann/json.hpp>

#include "predft/error.hpp"

namespace predft::io {

namespace fs = std::filesystem;
using Json = nlohmann::json;

inline void write_text(const fs::path& path, std::string text) {
  if (text.empty() || text.back() != '\n') text.push_back('\n');
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ValidationError("cannot write " + path.string());
  os << text;
  if (!os) throw ValidationError("short write to " + path.string());
}

/// Pretty-printed JSON; nlohmann's default object type keeps keys sorted.
inline void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2)); }

inline std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline Json read_json(const fs::path& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const Json::parse_error& e) {
    throw ValidationError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

/// Shortest decimal text that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

/// A directory built under a temporary sibling name and renamed into place
/// by commit(). Abandoned staging directories are removed on destruction.
class StagedDir {
 public:
  explicit StagedDir(fs::path target) : target_(std::move(target)) {
    if (target_.empty()) throw ValidationError("output directory must not be empty");
    staging_ = target_;
    staging_ += ".staging";
    std::error_code ec;
    fs::remove_all(staging_, ec);
    if (target_.has_parent_path()) fs::create_directories(target_.parent_path(), ec);
    if (!fs::create_directories(staging_, ec) || ec) {
      throw ValidationError("cannot create " + staging_.string());
    }
  }
  StagedDir(const StagedDir&) = delete;
  StagedDir& operator=(const StagedDir&) = delete;

  ~StagedDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(staging_, ec);
    }
  }

  const fs::path& path() const { return staging_; }
  const fs::path& target() const { return target_; }

  void commit() {
    std::error_code ec;
    fs::remove_all(target_, ec);
    fs::rename(staging_, target_, ec);
    if (ec) throw ValidationError("cannot move output into " + target_.string() + ": " + ec.message());
    committed_ = true;
  }

 private:
  fs::path target_;
  fs::path staging_;
  bool committed_ = false;
};

}  // namespace predft::io
