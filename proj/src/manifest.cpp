#include "quiltclean/manifest.hpp"

#include "quiltclean/core/error.hpp"
#include "quiltclean/core/hashing.hpp"
#include "quiltclean/core/image.hpp"
#include "quiltclean/core/parallel.hpp"
#include "quiltclean/core/rng.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <set>
#include <unordered_map>

namespace quiltclean::manifest {

namespace fs = std::filesystem;

std::string_view source_name(Source s) noexcept {
    switch (s) {
        case Source::YouTube: return "youtube";
        case Source::Twitter: return "twitter";
        case Source::PubMed: return "pubmed";
        case Source::Exemplar: return "exemplar";
        case Source::Synthetic: return "synthetic";
        case Source::Other: return "other";
    }
    return "other";
}

std::optional<Source> parse_source(std::string_view s) noexcept {
    std::string lower(s);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    for (auto src : {Source::YouTube, Source::Twitter, Source::PubMed, Source::Exemplar, Source::Synthetic, Source::Other})
        if (source_name(src) == lower) return src;
    return std::nullopt;
}

namespace {

bool valid_utf8(std::string_view s) {
    std::size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        std::size_t len = 0;
        std::uint32_t cp = 0;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xE0) == 0xC0) {
            len = 2;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            len = 3;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            len = 4;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + len > s.size()) return false;
        for (std::size_t k = 1; k < len; ++k) {
            const auto cc = static_cast<unsigned char>(s[i + k]);
            if ((cc & 0xC0) != 0x80) return false;
            cp = (cp << 6) | (cc & 0x3F);
        }
        // Overlong encodings, surrogates and out-of-range code points.
        if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) || cp > 0x10FFFF ||
            (cp >= 0xD800 && cp <= 0xDFFF))
            return false;
        i += len;
    }
    return true;
}

bool is_hex_digest(std::string_view s) {
    return s.size() == 64 && std::all_of(s.begin(), s.end(), [](char c) {
               return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
           });
}

std::optional<int> parse_positive(std::string_view s) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || v <= 0) return std::nullopt;
    return v;
}

struct CsvRow {
    std::size_t line_no;
    std::vector<std::string> fields;
    std::string error;  // non-empty when the row could not be tokenised
};

/// RFC 4180 tokeniser. Quoted fields may span lines; line_no is the
/// physical line on which the record starts.
std::vector<CsvRow> tokenize_csv(std::string_view text) {
    std::vector<CsvRow> rows;
    std::size_t i = 0, line = 1;
    if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") i = 3;
    while (i < text.size()) {
        CsvRow row{line, {}, {}};
        std::string field;
        bool in_quotes = false, field_was_quoted = false;
        bool done = false;
        while (!done) {
            if (i >= text.size()) {
                if (in_quotes) row.error = "unterminated quoted field";
                row.fields.push_back(std::move(field));
                break;
            }
            const char c = text[i];
            if (in_quotes) {
                if (c == '"') {
                    if (i + 1 < text.size() && text[i + 1] == '"') {
                        field.push_back('"');
                        i += 2;
                    } else {
                        in_quotes = false;
                        ++i;
                    }
                } else {
                    if (c == '\n') ++line;
                    field.push_back(c);
                    ++i;
                }
                continue;
            }
            switch (c) {
                case ',':
                    row.fields.push_back(std::move(field));
                    field.clear();
                    field_was_quoted = false;
                    ++i;
                    break;
                case '"':
                    if (!field.empty() || field_was_quoted) {
                        if (row.error.empty()) row.error = "stray quote inside unquoted field";
                        field.push_back(c);
                    } else {
                        in_quotes = true;
                        field_was_quoted = true;
                    }
                    ++i;
                    break;
                case '\r':
                    ++i;
                    break;
                case '\n':
                    row.fields.push_back(std::move(field));
                    ++line;
                    ++i;
                    done = true;
                    break;
                default:
                    if (field_was_quoted && row.error.empty()) row.error = "text after closing quote";
                    field.push_back(c);
                    ++i;
            }
        }
        const bool blank = row.fields.size() == 1 && row.fields[0].empty() && row.error.empty();
        if (!blank) rows.push_back(std::move(row));
    }
    return rows;
}

class ManifestBuilder {
public:
    explicit ManifestBuilder(ParseMode mode) : mode_(mode) {}

    void malformed(std::size_t line_no, const std::string& reason) {
        if (mode_ == ParseMode::Strict) throw MalformedRow(line_no, reason);
        result_.issues.push_back({line_no, "MalformedRow", reason});
    }

    void add(std::size_t line_no, ManifestEntry row) {
        auto it = index_.find(row.image_id);
        if (it == index_.end()) {
            dedup_captions(row.captions);
            index_.emplace(row.image_id, result_.entries.size());
            result_.entries.push_back(std::move(row));
            return;
        }
        auto& existing = result_.entries[it->second];
        if (existing.image_path != row.image_path) {
            const std::string msg = "image_id '" + row.image_id + "' maps to both '" + existing.image_path +
                                    "' and '" + row.image_path + "' (line " + std::to_string(line_no) + ")";
            if (mode_ == ParseMode::Strict) throw DuplicatePathConflict(msg);
            result_.issues.push_back({line_no, "DuplicatePathConflict", msg});
            return;
        }
        for (auto& c : row.captions) existing.captions.push_back(std::move(c));
        dedup_captions(existing.captions);
        if (!existing.sha256) existing.sha256 = row.sha256;
        if (!existing.width_px) existing.width_px = row.width_px;
        if (!existing.height_px) existing.height_px = row.height_px;
    }

    LoadResult finish() && { return std::move(result_); }

private:
    static void dedup_captions(std::vector<std::string>& captions) {
        std::vector<std::string> unique;
        std::set<std::string> seen;
        for (auto& c : captions)
            if (seen.insert(c).second) unique.push_back(std::move(c));
        captions = std::move(unique);
    }

    ParseMode mode_;
    LoadResult result_;
    std::unordered_map<std::string, std::size_t> index_;
};

LoadResult parse_csv(std::string_view text, ParseMode mode) {
    ManifestBuilder builder(mode);
    auto rows = tokenize_csv(text);
    if (rows.empty()) throw MalformedRow(1, "missing header row");
    const auto& header = rows.front();
    if (!header.error.empty()) throw MalformedRow(header.line_no, "header: " + header.error);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.fields.size(); ++i) {
        std::string name = header.fields[i];
        name.erase(0, name.find_first_not_of(" \t"));
        name.erase(name.find_last_not_of(" \t") + 1);
        col[name] = i;
    }
    for (const char* required : {"image_id", "image_path", "caption"})
        if (!col.contains(required)) throw MalformedRow(header.line_no, std::string("missing required column ") + required);
    auto field = [&](const CsvRow& r, const char* name) -> std::optional<std::string> {
        auto it = col.find(name);
        if (it == col.end() || it->second >= r.fields.size()) return std::nullopt;
        return r.fields[it->second];
    };

    for (std::size_t k = 1; k < rows.size(); ++k) {
        const auto& r = rows[k];
        if (!r.error.empty()) {
            builder.malformed(r.line_no, r.error);
            continue;
        }
        if (r.fields.size() != header.fields.size()) {
            builder.malformed(r.line_no, "expected " + std::to_string(header.fields.size()) + " fields, got " +
                                             std::to_string(r.fields.size()));
            continue;
        }
        ManifestEntry e;
        e.image_id = *field(r, "image_id");
        e.image_path = *field(r, "image_path");
        auto caption = *field(r, "caption");
        if (e.image_id.empty() || e.image_path.empty() || caption.empty()) {
            builder.malformed(r.line_no, "image_id, image_path and caption must be non-empty");
            continue;
        }
        if (!valid_utf8(e.image_id) || !valid_utf8(e.image_path) || !valid_utf8(caption)) {
            builder.malformed(r.line_no, "invalid UTF-8");
            continue;
        }
        e.captions.push_back(std::move(caption));
        if (auto s = field(r, "source"); s && !s->empty()) {
            auto src = parse_source(*s);
            if (!src) {
                builder.malformed(r.line_no, "unknown source '" + *s + "'");
                continue;
            }
            e.source = *src;
        }
        if (auto h = field(r, "sha256"); h && !h->empty()) {
            std::string lower = *h;
            std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
            if (!is_hex_digest(lower)) {
                builder.malformed(r.line_no, "sha256 is not a 64-digit hex digest");
                continue;
            }
            e.sha256 = lower;
        }
        bool dims_ok = true;
        for (auto [name, target] : {std::pair{"width", &e.width_px}, std::pair{"height", &e.height_px}}) {
            if (auto v = field(r, name); v && !v->empty()) {
                *target = parse_positive(*v);
                if (!*target) dims_ok = false;
            }
        }
        if (!dims_ok) {
            builder.malformed(r.line_no, "width/height must be positive integers");
            continue;
        }
        builder.add(r.line_no, std::move(e));
    }
    return std::move(builder).finish();
}

LoadResult parse_jsonl_manifest(std::string_view text, ParseMode mode) {
    ManifestBuilder builder(mode);
    std::size_t line_no = 0, pos = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            builder.malformed(line_no, e.what());
            continue;
        }
        ManifestEntry e;
        try {
            e = entry_from_json(j);
        } catch (const InvalidArgument& err) {
            builder.malformed(line_no, err.what());
            continue;
        }
        builder.add(line_no, std::move(e));
    }
    return std::move(builder).finish();
}

}  // namespace

json to_json(const ManifestEntry& e) {
    json j{{"image_id", e.image_id},
           {"image_path", e.image_path},
           {"captions", e.captions},
           {"source", std::string(source_name(e.source))}};
    if (e.sha256) j["sha256"] = *e.sha256;
    if (e.width_px) j["width_px"] = *e.width_px;
    if (e.height_px) j["height_px"] = *e.height_px;
    return j;
}

ManifestEntry entry_from_json(const json& j) {
    if (!j.is_object()) throw InvalidArgument("manifest line is not an object");
    auto str = [&](const char* key) -> std::string {
        if (!j.contains(key) || !j[key].is_string()) throw InvalidArgument(std::string(key) + " must be a string");
        return j[key].get<std::string>();
    };
    ManifestEntry e;
    e.image_id = str("image_id");
    e.image_path = str("image_path");
    if (e.image_id.empty() || e.image_path.empty()) throw InvalidArgument("image_id and image_path must be non-empty");
    if (!j.contains("captions") || !j["captions"].is_array() || j["captions"].empty())
        throw InvalidArgument("captions must be a non-empty array");
    for (const auto& c : j["captions"]) {
        if (!c.is_string() || c.get_ref<const std::string&>().empty())
            throw InvalidArgument("captions must be non-empty strings");
        e.captions.push_back(c.get<std::string>());
    }
    if (j.contains("source") && !j["source"].is_null()) {
        if (!j["source"].is_string()) throw InvalidArgument("source must be a string");
        auto src = parse_source(j["source"].get<std::string>());
        if (!src) throw InvalidArgument("unknown source");
        e.source = *src;
    }
    if (j.contains("sha256") && !j["sha256"].is_null()) {
        if (!j["sha256"].is_string() || !is_hex_digest(j["sha256"].get<std::string>()))
            throw InvalidArgument("sha256 must be a lower-case 64-digit hex digest");
        e.sha256 = j["sha256"].get<std::string>();
    }
    for (auto [key, target] : {std::pair{"width_px", &e.width_px}, std::pair{"height_px", &e.height_px}}) {
        if (j.contains(key) && !j[key].is_null()) {
            if (!j[key].is_number_integer() || j[key].get<long long>() <= 0)
                throw InvalidArgument(std::string(key) + " must be a positive integer");
            *target = j[key].get<int>();
        }
    }
    return e;
}

LoadResult parse_manifest(std::string_view text, Format format, ParseMode mode) {
    return format == Format::Csv ? parse_csv(text, mode) : parse_jsonl_manifest(text, mode);
}

LoadResult load_manifest(const fs::path& path, Format format, ParseMode mode) {
    return parse_manifest(read_text_file(path), format, mode);
}

Format format_from_extension(const fs::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".csv") return Format::Csv;
    if (ext == ".jsonl" || ext == ".ndjson") return Format::Jsonl;
    throw InvalidArgument("cannot infer manifest format from '" + path.string() + "' (expected .csv or .jsonl)");
}

std::string manifest_to_jsonl(std::span<const ManifestEntry> entries) {
    std::string out;
    for (const auto& e : entries) {
        out += to_json(e).dump();
        out += '\n';
    }
    return out;
}

void write_manifest(const fs::path& path, std::span<const ManifestEntry> entries) {
    write_text_file(path, manifest_to_jsonl(entries));
}

bool is_remote(std::string_view image_path) noexcept {
    return image_path.starts_with("http://") || image_path.starts_with("https://");
}

fs::path resolve_image_path(const std::string& image_path, const fs::path& base_dir) {
    fs::path p(image_path);
    if (is_remote(image_path) || p.is_absolute() || base_dir.empty()) return p;
    return base_dir / p;
}

std::size_t round_half_up(double x) noexcept {
    if (x <= 0) return 0;
    return static_cast<std::size_t>(std::floor(x + 0.5 + 1e-9 * std::max(1.0, x)));
}

namespace {

constexpr std::uint64_t kSampleStream = 0x53414D50;  // "SAMP"
constexpr std::uint64_t kSplitStream = 0x53504C54;   // "SPLT"
constexpr std::uint64_t kExemplarStream = 0x4558454D;

template <typename T, typename Key>
std::vector<T> sorted_by(std::span<const T> items, Key key) {
    std::vector<T> out(items.begin(), items.end());
    std::sort(out.begin(), out.end(), [&](const T& a, const T& b) { return key(a) < key(b); });
    return out;
}

}  // namespace

SampleResult sample_fraction(std::span<const ManifestEntry> entries, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("fraction must be in (0, 1]");
    auto ordered = sorted_by(entries, [](const ManifestEntry& e) -> const std::string& { return e.image_id; });
    for (std::size_t i = 1; i < ordered.size(); ++i)
        if (ordered[i].image_id == ordered[i - 1].image_id)
            throw InvalidArgument("duplicate image_id '" + ordered[i].image_id + "'");
    const std::size_t k = std::min(ordered.size(), round_half_up(fraction * static_cast<double>(ordered.size())));

    std::vector<std::size_t> perm(ordered.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    CounterRng rng(derive_seed({seed, kSampleStream}));
    rng.shuffle(perm);

    std::vector<bool> chosen(ordered.size(), false);
    for (std::size_t i = 0; i < k; ++i) chosen[perm[i]] = true;
    SampleResult out;
    out.sampled.reserve(k);
    out.remainder.reserve(ordered.size() - k);
    for (std::size_t i = 0; i < ordered.size(); ++i)
        (chosen[i] ? out.sampled : out.remainder).push_back(std::move(ordered[i]));
    return out;
}

InjectResult inject_clean_exemplars(std::vector<LabeledEntry> annotated, const fs::path& exemplar_dir) {
    InjectResult out;
    out.records = std::move(annotated);
    if (!fs::is_directory(exemplar_dir)) throw IoError("exemplar directory not found: " + exemplar_dir.string());
    std::vector<fs::path> files;
    for (const auto& de : fs::recursive_directory_iterator(exemplar_dir))
        if (de.is_regular_file()) files.push_back(de.path());
    std::sort(files.begin(), files.end());

    std::set<std::string> existing;
    for (const auto& r : out.records) existing.insert(r.entry.image_id);

    for (const auto& file : files) {
        const auto rel = fs::relative(file, exemplar_dir).generic_string();
        std::vector<std::uint8_t> bytes;
        Image img;
        try {
            bytes = read_file_bytes(file);
            img = decode_image(bytes);
        } catch (const Error& e) {
            out.failures.push_back({0, "UndecodableImage", file.string() + ": " + e.what()});
            continue;
        }
        ManifestEntry e;
        e.image_id = "exemplar-" + sha256_hex(rel).substr(0, 16);
        if (!existing.insert(e.image_id).second)
            throw InvalidArgument("exemplar id collision for " + rel);
        e.image_path = file.string();
        e.captions = {file.stem().string()};
        e.source = Source::Exemplar;
        e.sha256 = sha256_hex(bytes);
        e.width_px = img.width;
        e.height_px = img.height;
        out.records.push_back({std::move(e), ImpurityLabelSet{}});
    }
    return out;
}

std::string_view split_name(Split s) noexcept {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

std::optional<Split> parse_split(std::string_view s) noexcept {
    for (auto sp : {Split::Train, Split::Val, Split::Test})
        if (split_name(sp) == s) return sp;
    return std::nullopt;
}

SplitSizes split_sizes(std::size_t n, const SplitRatios& r) {
    if (!(r.train > 0 && r.val > 0 && r.test > 0)) throw InvalidArgument("split ratios must be positive");
    if (std::abs(r.train + r.val + r.test - 1.0) > 1e-9) throw InvalidArgument("split ratios must sum to 1");
    SplitSizes s;
    const auto nd = static_cast<double>(n);
    s.test = std::min(n, round_half_up(r.test * nd));
    s.val = std::min(n - s.test, round_half_up(r.val * nd));
    s.train = n - s.test - s.val;
    return s;
}

std::vector<SplitAssignment> split_ids(std::vector<std::string> ids, const SplitRatios& ratios, std::uint64_t seed) {
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw InvalidArgument("duplicate image_id in split input");
    const auto sizes = split_sizes(ids.size(), ratios);
    std::vector<std::size_t> perm(ids.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    CounterRng rng(derive_seed({seed, kSplitStream}));
    rng.shuffle(perm);

    std::vector<SplitAssignment> out(ids.size());
    for (std::size_t rank = 0; rank < perm.size(); ++rank) {
        auto& a = out[perm[rank]];
        a.image_id = ids[perm[rank]];
        a.seed = seed;
        a.ratios = ratios;
        a.split = rank < sizes.test ? Split::Test : rank < sizes.test + sizes.val ? Split::Val : Split::Train;
    }
    return out;
}

std::vector<SplitAssignment> split(std::span<const LabeledEntry> records, const SplitRatios& ratios,
                                   std::uint64_t seed, bool exemplars_in_test) {
    std::vector<std::string> regular, exemplars;
    for (const auto& r : records)
        (r.entry.source == Source::Exemplar && !exemplars_in_test ? exemplars : regular).push_back(r.entry.image_id);
    auto out = split_ids(std::move(regular), ratios, seed);
    if (exemplars.empty()) return out;

    // Exemplars are divided between train and val in proportion train:val.
    split_sizes(0, ratios);  // validates ratios
    std::sort(exemplars.begin(), exemplars.end());
    const auto n_val = round_half_up(ratios.val / (ratios.train + ratios.val) * static_cast<double>(exemplars.size()));
    std::vector<std::size_t> perm(exemplars.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    CounterRng rng(derive_seed({seed, kExemplarStream}));
    rng.shuffle(perm);
    for (std::size_t rank = 0; rank < perm.size(); ++rank)
        out.push_back({exemplars[perm[rank]], rank < n_val ? Split::Val : Split::Train, seed, ratios});
    std::sort(out.begin(), out.end(), [](const SplitAssignment& a, const SplitAssignment& b) { return a.image_id < b.image_id; });
    if (std::adjacent_find(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.image_id == b.image_id; }) != out.end())
        throw InvalidArgument("duplicate image_id in split input");
    return out;
}

SplitSizes count_splits(std::span<const SplitAssignment> assignments) {
    SplitSizes s;
    for (const auto& a : assignments) {
        switch (a.split) {
            case Split::Train: ++s.train; break;
            case Split::Val: ++s.val; break;
            case Split::Test: ++s.test; break;
        }
    }
    return s;
}

std::string splits_to_jsonl(std::span<const SplitAssignment> assignments) {
    std::string out;
    for (const auto& a : assignments) {
        out += json{{"image_id", a.image_id}, {"split", std::string(split_name(a.split))}, {"seed", a.seed}}.dump();
        out += '\n';
    }
    return out;
}

void write_splits(const fs::path& path, std::span<const SplitAssignment> assignments) {
    write_text_file(path, splits_to_jsonl(assignments));
}

std::vector<SplitAssignment> read_splits(const fs::path& path) {
    std::vector<SplitAssignment> out;
    for (const auto& line : read_jsonl(path)) {
        const auto& j = line.value;
        if (!j.is_object() || !j.contains("image_id") || !j.contains("split") || !j["split"].is_string())
            throw MalformedRow(line.line_no, "split line needs image_id and split");
        auto sp = parse_split(j["split"].get<std::string>());
        if (!sp) throw MalformedRow(line.line_no, "unknown split name");
        SplitAssignment a;
        a.image_id = j["image_id"].get<std::string>();
        a.split = *sp;
        a.seed = j.value("seed", std::uint64_t{0});
        out.push_back(std::move(a));
    }
    return out;
}

std::string_view status_name(ImageStatus s) noexcept {
    switch (s) {
        case ImageStatus::Ok: return "ok";
        case ImageStatus::Missing: return "missing";
        case ImageStatus::Undecodable: return "undecodable";
        case ImageStatus::HashMismatch: return "hash_mismatch";
    }
    return "ok";
}

std::size_t IntegrityReport::count(ImageStatus s) const {
    auto it = counts.find(std::string(status_name(s)));
    return it == counts.end() ? 0 : it->second;
}

IntegrityReport verify_images(std::span<const ManifestEntry> entries, const fs::path& base_dir, std::size_t workers) {
    IntegrityReport report;
    report.rows.resize(entries.size());
    parallel_for(entries.size(), workers, [&](std::size_t i) {
        const auto& e = entries[i];
        auto& row = report.rows[i];
        row.image_id = e.image_id;
        if (is_remote(e.image_path)) {
            row.status = ImageStatus::Missing;
            row.detail = "remote image not available locally";
            return;
        }
        const auto path = resolve_image_path(e.image_path, base_dir);
        std::error_code ec;
        if (!fs::is_regular_file(path, ec)) {
            row.status = ImageStatus::Missing;
            row.detail = path.string();
            return;
        }
        std::vector<std::uint8_t> bytes;
        try {
            bytes = read_file_bytes(path);
        } catch (const IoError& err) {
            row.status = ImageStatus::Missing;
            row.detail = err.what();
            return;
        }
        if (e.sha256 && sha256_hex(bytes) != *e.sha256) {
            row.status = ImageStatus::HashMismatch;
            row.detail = "expected " + *e.sha256;
            return;
        }
        try {
            (void)decode_image(bytes);
        } catch (const Error& err) {
            row.status = ImageStatus::Undecodable;
            row.detail = err.what();
        }
    });
    std::sort(report.rows.begin(), report.rows.end(),
              [](const IntegrityRow& a, const IntegrityRow& b) { return a.image_id < b.image_id; });
    for (auto s : {ImageStatus::Ok, ImageStatus::Missing, ImageStatus::Undecodable, ImageStatus::HashMismatch})
        report.counts[std::string(status_name(s))] = 0;
    for (const auto& r : report.rows) ++report.counts[std::string(status_name(r.status))];
    return report;
}

json to_json(const IntegrityReport& report) {
    json rows = json::array();
    for (const auto& r : report.rows)
        rows.push_back({{"image_id", r.image_id}, {"status", std::string(status_name(r.status))}, {"detail", r.detail}});
    return json{{"counts", report.counts}, {"rows", rows}};
}

}  // namespace quiltclean::manifest
