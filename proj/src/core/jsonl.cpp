#include "quiltclean/core/error.hpp"
#include "quiltclean/core/files.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

namespace quiltclean {

namespace fs = std::filesystem;

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

void write_text_file(const fs::path& path, std::string_view text) {
    write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<JsonLine> parse_jsonl(std::string_view text) {
    std::vector<JsonLine> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
        try {
            out.push_back({line_no, json::parse(line)});
        } catch (const json::parse_error& e) {
            throw MalformedRow(line_no, e.what());
        }
    }
    return out;
}

std::vector<JsonLine> read_jsonl(const fs::path& path) { return parse_jsonl(read_text_file(path)); }

std::string to_jsonl(std::span<const json> values) {
    std::string out;
    for (const auto& v : values) {
        out += v.dump();
        out += '\n';
    }
    return out;
}

void write_jsonl(const fs::path& path, std::span<const json> values) { write_text_file(path, to_jsonl(values)); }

void write_json(const fs::path& path, const json& value) { write_text_file(path, value.dump(2) + "\n"); }

json read_json(const fs::path& path) {
    try {
        return json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

}  // namespace quiltclean
