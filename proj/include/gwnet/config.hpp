#pragma once

#include <filesystem>
#include <map>
#include <string>

namespace gwnet {

using KeyValues = std::map<std::string, std::string>;

/// Parses `key = value` lines. Blank lines and `#` comments are ignored.
/// Throws std::invalid_argument naming the line on malformed input.
KeyValues parse_kv(const std::string& text, const std::string& origin = "<config>");
KeyValues read_kv_file(const std::filesystem::path& path);

/// Entries of `overrides` replace those of `base`.
KeyValues merge_kv(KeyValues base, const KeyValues& overrides);

std::string format_kv(const KeyValues& kv);

}  // namespace gwnet
