#include "stainfocus/keyvalue.hpp"

#include "stainfocus/errors.hpp"

#include <fstream>
#include <sstream>

namespace stainfocus {

std::string trim(const std::string& text) {
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = text.find_last_not_of(" \t\r\n");
    return text.substr(first, last - first + 1);
}

KeyValues parse_key_values(const std::string& text, const std::string& source_name) {
    KeyValues values;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string body = trim(line);
        if (body.empty() || body.front() == '#') continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw ParseError(source_name + ":" + std::to_string(line_no) + ": expected 'key = value'");
        const std::string key = trim(body.substr(0, eq));
        if (key.empty()) throw ParseError(source_name + ":" + std::to_string(line_no) + ": empty key");
        if (!values.emplace(key, trim(body.substr(eq + 1))).second)
            throw ParseError(source_name + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    return values;
}

KeyValues read_key_values(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_key_values(buffer.str(), path.string());
}

std::string format_key_values(const KeyValues& values) {
    std::ostringstream out;
    for (const auto& [key, value] : values) out << key << " = " << value << '\n';
    return out.str();
}

void write_key_values(const std::filesystem::path& path, const KeyValues& values) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << format_key_values(values);
}

std::vector<std::string> split_list(const std::string& text, char separator) {
    std::vector<std::string> items;
    if (trim(text).empty()) return items;
    std::string item;
    std::istringstream in(text);
    while (std::getline(in, item, separator)) items.push_back(trim(item));
    return items;
}

std::string join_list(const std::vector<std::string>& items, char separator) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += separator;
        out += items[i];
    }
    return out;
}

}  // namespace stainfocus
