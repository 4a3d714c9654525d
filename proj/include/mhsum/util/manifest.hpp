#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mhsum::util {

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

/// Describes how an output directory was produced. Written as manifest.txt:
/// command, parameters, input hashes, then the hash of every file under the
/// directory (sorted, relative paths, the manifest itself excluded). Nothing
/// time-dependent is recorded, so reruns give identical bytes.
struct Manifest {
  std::string command;
  std::vector<std::pair<std::string, std::string>> params;
  std::vector<std::filesystem::path> inputs;

  void param(std::string key, std::string value) { params.emplace_back(std::move(key), std::move(value)); }
  void input(std::filesystem::path p) { inputs.push_back(std::move(p)); }

  std::string render(const std::filesystem::path& out_dir) const;
  void write(const std::filesystem::path& out_dir) const;
};

inline constexpr const char* kManifestName = "manifest.txt";

}  // namespace mhsum::util
