#pragma once

#include "quiltclean/core/files.hpp"
#include "quiltclean/labels.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace quiltclean::manifest {

enum class Source { YouTube, Twitter, PubMed, Exemplar, Synthetic, Other };

std::string_view source_name(Source s) noexcept;
std::optional<Source> parse_source(std::string_view s) noexcept;

/// One image and every caption linked to it.
struct ManifestEntry {
    std::string image_id;
    std::string image_path;
    std::vector<std::string> captions;
    Source source = Source::Other;
    std::optional<std::string> sha256;
    std::optional<int> width_px;
    std::optional<int> height_px;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

json to_json(const ManifestEntry& e);
/// Throws InvalidArgument with a description of the first violated field rule.
ManifestEntry entry_from_json(const json& j);

enum class Format { Csv, Jsonl };
enum class ParseMode { Strict, Lenient };

/// A row that was skipped in lenient mode.
struct RowIssue {
    std::size_t line_no = 0;
    std::string kind;  // "MalformedRow" or "DuplicatePathConflict"
    std::string message;
};

struct LoadResult {
    std::vector<ManifestEntry> entries;
    std::vector<RowIssue> issues;
};

/// Rows are merged by image_id in order of first appearance; duplicate
/// captions are dropped on exact match. CSV needs the columns
/// image_id, image_path, caption (optional: source, sha256, width, height).
///
/// Strict mode throws MalformedRow / DuplicatePathConflict on the first bad
/// row; lenient mode skips and reports it.
LoadResult load_manifest(const std::filesystem::path& path, Format format, ParseMode mode = ParseMode::Strict);
LoadResult parse_manifest(std::string_view text, Format format, ParseMode mode = ParseMode::Strict);
Format format_from_extension(const std::filesystem::path& path);

std::string manifest_to_jsonl(std::span<const ManifestEntry> entries);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

/// Relative image paths are resolved against `base_dir` (usually the directory
/// that holds the manifest). URLs and absolute paths pass through.
std::filesystem::path resolve_image_path(const std::string& image_path, const std::filesystem::path& base_dir);
bool is_remote(std::string_view image_path) noexcept;

struct SampleResult {
    std::vector<ManifestEntry> sampled;
    std::vector<ManifestEntry> remainder;
};

/// round_half_up(fraction * N) entries chosen by a seeded shuffle of the
/// image_id-sorted input; both outputs are returned in image_id order.
/// Throws InvalidArgument unless fraction is in (0, 1].
SampleResult sample_fraction(std::span<const ManifestEntry> entries, double fraction, std::uint64_t seed);

/// floor(x + 0.5) with a guard band for products like 0.15 * N whose exact
/// value ends in .5 but whose binary value falls just below it.
std::size_t round_half_up(double x) noexcept;

struct LabeledEntry {
    ManifestEntry entry;
    ImpurityLabelSet labels;
};

struct InjectResult {
    std::vector<LabeledEntry> records;
    std::vector<RowIssue> failures;  // kind "UndecodableImage", message carries the path
};

/// Appends every decodable image under `exemplar_dir` (sorted by file name)
/// as an all-negative record with source=exemplar. The image_id is
/// "exemplar-" + the first 16 hex digits of sha256(relative path), so the
/// same bytes under two names yield two entries.
InjectResult inject_clean_exemplars(std::vector<LabeledEntry> annotated, const std::filesystem::path& exemplar_dir);

enum class Split { Train, Val, Test };
std::string_view split_name(Split s) noexcept;
std::optional<Split> parse_split(std::string_view s) noexcept;

struct SplitRatios {
    double train = 0.7;
    double val = 0.15;
    double test = 0.15;
};

struct SplitSizes {
    std::size_t train = 0, val = 0, test = 0;
    friend bool operator==(const SplitSizes&, const SplitSizes&) = default;
};

struct SplitAssignment {
    std::string image_id;
    Split split = Split::Train;
    std::uint64_t seed = 0;
    SplitRatios ratios;
};

/// test = round_half_up(r_test N), val = round_half_up(r_val N), train takes
/// the rest. Throws InvalidArgument unless all ratios are positive and sum to
/// 1 within 1e-9.
SplitSizes split_sizes(std::size_t n, const SplitRatios& ratios);

/// Deterministic partition of unique ids: sort, seeded shuffle, then test,
/// val and train are cut from the front. Output is sorted by image_id.
std::vector<SplitAssignment> split_ids(std::vector<std::string> ids, const SplitRatios& ratios, std::uint64_t seed);

/// Partition of a labeled set. With exemplars_in_test=false, records whose
/// source is exemplar are split between train and val only (in proportion
/// train:val), and the test cut is computed from the remaining records.
std::vector<SplitAssignment> split(std::span<const LabeledEntry> records, const SplitRatios& ratios,
                                   std::uint64_t seed, bool exemplars_in_test = false);

SplitSizes count_splits(std::span<const SplitAssignment> assignments);

/// `{image_id, split, seed}` per line.
std::string splits_to_jsonl(std::span<const SplitAssignment> assignments);
void write_splits(const std::filesystem::path& path, std::span<const SplitAssignment> assignments);
std::vector<SplitAssignment> read_splits(const std::filesystem::path& path);

enum class ImageStatus { Ok, Missing, Undecodable, HashMismatch };
std::string_view status_name(ImageStatus s) noexcept;

struct IntegrityRow {
    std::string image_id;
    ImageStatus status = ImageStatus::Ok;
    std::string detail;
};

struct IntegrityReport {
    std::vector<IntegrityRow> rows;  // sorted by image_id
    std::map<std::string, std::size_t> counts;  // by status name, all four present

    std::size_t count(ImageStatus s) const;
};

/// Checks every entry's file: present, decodable, and matching its sha256
/// when one is recorded. Work fans out to `workers` threads (0 = hardware).
IntegrityReport verify_images(std::span<const ManifestEntry> entries, const std::filesystem::path& base_dir = {},
                              std::size_t workers = 0);

json to_json(const IntegrityReport& report);

}  // namespace quiltclean::manifest
