#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace quiltclean {

using json = nlohmann::json;

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it into place, so readers
/// never observe a half-written file.
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, std::string_view text);

struct JsonLine {
    std::size_t line_no;
    json value;
};

/// Parses one JSON value per non-blank line. Throws MalformedRow on the first
/// undecodable line.
std::vector<JsonLine> read_jsonl(const std::filesystem::path& path);
std::vector<JsonLine> parse_jsonl(std::string_view text);

/// Serialises each value with `dump()` (compact, keys in sorted order) and a
/// trailing newline.
std::string to_jsonl(std::span<const json> values);
void write_jsonl(const std::filesystem::path& path, std::span<const json> values);

/// Stable, human-diffable JSON document encoding (2-space indent, trailing newline).
void write_json(const std::filesystem::path& path, const json& value);
json read_json(const std::filesystem::path& path);

}  // namespace quiltclean
