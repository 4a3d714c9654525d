#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace mhsum::util {

/// Flat "key = value" text. Blank lines and lines starting with '#' are
/// ignored; keys and values are trimmed. Duplicate keys are an error.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_kv(std::string_view text);
KeyValues load_kv(const std::filesystem::path& path);
std::string format_kv(const KeyValues& kv);

/// Typed lookups; the fallback is returned when the key is absent. Malformed
/// values throw std::invalid_argument naming the key.
std::string kv_string(const KeyValues& kv, const std::string& key, const std::string& fallback);
long long kv_int(const KeyValues& kv, const std::string& key, long long fallback);
double kv_double(const KeyValues& kv, const std::string& key, double fallback);
bool kv_bool(const KeyValues& kv, const std::string& key, bool fallback);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace mhsum::util
