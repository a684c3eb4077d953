#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace stainfocus {

// Ordered "key = value" document. Blank lines and lines starting with '#' are
// ignored; keys may be dotted. Duplicate keys are a parse error.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text, const std::string& source_name);
KeyValues read_key_values(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& values);
void write_key_values(const std::filesystem::path& path, const KeyValues& values);

std::vector<std::string> split_list(const std::string& text, char separator = ',');
std::string join_list(const std::vector<std::string>& items, char separator = ',');
std::string trim(const std::string& text);

}  // namespace stainfocus
