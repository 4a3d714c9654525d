#include "mhsum/util/manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <memory>
#include <stdexcept>

#include "mhsum/util/kvfile.hpp"

namespace mhsum::util {

namespace fs = std::filesystem;

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256: digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

std::string Manifest::render(const fs::path& out_dir) const {
  std::string out = "command " + command + "\n";
  for (const auto& [k, v] : params) out += "param " + k + " = " + v + "\n";
  for (const auto& p : inputs) {
    if (fs::is_directory(p)) {
      out += "input " + p.generic_string() + " (directory)\n";
    } else {
      out += "input " + p.generic_string() + " sha256=" + sha256_file(p) + "\n";
    }
  }
  std::vector<std::string> files;
  if (fs::exists(out_dir)) {
    for (const auto& e : fs::recursive_directory_iterator(out_dir)) {
      if (!e.is_regular_file()) continue;
      const auto rel = fs::relative(e.path(), out_dir).generic_string();
      if (rel != kManifestName) files.push_back(rel);
    }
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) out += "output " + f + " sha256=" + sha256_file(out_dir / f) + "\n";
  return out;
}

void Manifest::write(const fs::path& out_dir) const { write_file(out_dir / kManifestName, render(out_dir)); }

}  // namespace mhsum::util
