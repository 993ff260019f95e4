#include "quiltclean/pipeline.hpp"

#include "quiltclean/core/error.hpp"
#include "quiltclean/core/hashing.hpp"
#include "quiltclean/core/parallel.hpp"
#include "quiltclean/core/rng.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <set>
#include <sstream>

namespace quiltclean::pipeline {

namespace fs = std::filesystem;

namespace {

std::string pair_key(const std::string& id, std::size_t idx) { return id + '\x1f' + std::to_string(idx); }

std::vector<manifest::ManifestEntry> sorted_entries(std::vector<manifest::ManifestEntry> entries) {
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.image_id < b.image_id; });
    return entries;
}

std::string slug(const std::string& s) {
    std::string out;
    bool dash = false;
    for (unsigned char c : s) {
        if (std::isalnum(c)) {
            if (dash && !out.empty()) out += '-';
            out += static_cast<char>(std::tolower(c));
            dash = false;
        } else {
            dash = true;
        }
    }
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
    return s;
}

std::string shell_quote(const std::string& s) { return "'" + replace_all(s, "'", "'\\''") + "'"; }

}  // namespace

// --- variants --------------------------------------------------------------------

std::string_view variant_name(VariantName v) noexcept {
    switch (v) {
        case VariantName::Unfiltered: return "unfiltered";
        case VariantName::ImpurityFiltered: return "impurity_filtered";
        case VariantName::SemanticFiltered: return "semantic_filtered";
        case VariantName::BothFiltered: return "both_filtered";
    }
    return "unknown";
}

std::optional<VariantName> parse_variant(std::string_view s) noexcept {
    for (auto v : kAllVariants)
        if (variant_name(v) == s) return v;
    return std::nullopt;
}

json to_json(const DropRecord& d) {
    return json{{"image_id", d.image_id}, {"caption_index", d.caption_index}, {"reason", d.reason}};
}

std::size_t DatasetVariant::n_pairs() const noexcept {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.captions.size();
    return n;
}

std::string content_hash(std::span<const manifest::ManifestEntry> entries) {
    const auto sorted = sorted_entries({entries.begin(), entries.end()});
    return sha256_hex(manifest::manifest_to_jsonl(sorted));
}

DatasetVariant make_unfiltered(std::vector<manifest::ManifestEntry> entries) {
    DatasetVariant v;
    v.name = VariantName::Unfiltered;
    v.entries = sorted_entries(std::move(entries));
    for (std::size_t i = 1; i < v.entries.size(); ++i)
        if (v.entries[i].image_id == v.entries[i - 1].image_id)
            throw InvalidArgument("duplicate image_id in manifest: " + v.entries[i].image_id);
    v.content_hash = content_hash(v.entries);
    return v;
}

ImpurityFilterResult filter_dataset(const DatasetVariant& input,
                                    std::span<const classifier::PredictionRecord> predictions,
                                    const ImpurityFilterConfig& config) {
    std::map<std::string, const classifier::PredictionRecord*> by_id;
    for (const auto& p : predictions) by_id[p.image_id] = &p;

    ImpurityFilterResult r;
    r.variant.name = VariantName::ImpurityFiltered;
    r.variant.parent = input.name;
    json params{{"mode", config.mode == FilterMode::AnyFlag ? "any_flag" : "per_category"}};
    if (config.mode == FilterMode::PerCategory) {
        json cats = json::array();
        for (auto c : kAllCategories)
            if (config.categories[index_of(c)]) cats.push_back(std::string(category_name(c)));
        params["categories"] = cats;
    }
    if (config.thresholds) params["thresholds"] = *config.thresholds;
    r.variant.filter_params = params;
    for (auto c : kAllCategories) r.drop_histogram[std::string(category_name(c))] = 0;

    for (const auto& e : input.entries) {
        const auto it = by_id.find(e.image_id);
        if (it == by_id.end()) throw MissingPrediction(e.image_id);
        const auto& p = *it->second;
        if (!p.ok()) {
            ++r.n_dropped_images;
            ++r.drop_histogram["UNSCORABLE"];
            for (std::size_t c = 0; c < e.captions.size(); ++c)
                r.variant.drops.push_back({e.image_id, c, "unscorable:" + *p.error});
            continue;
        }
        std::vector<std::string> fired;
        for (auto c : kAllCategories) {
            const std::size_t k = index_of(c);
            const bool flag = config.thresholds ? p.probs[k] >= (*config.thresholds)[k] : p.flags[k];
            const bool counts = config.mode == FilterMode::AnyFlag || config.categories[k];
            if (flag && counts) fired.emplace_back(category_name(c));
        }
        if (fired.empty()) {
            r.variant.entries.push_back(e);
            continue;
        }
        ++r.n_dropped_images;
        std::string reason = "impurity:";
        for (std::size_t i = 0; i < fired.size(); ++i) {
            reason += (i ? "," : "") + fired[i];
            ++r.drop_histogram[fired[i]];
        }
        for (std::size_t c = 0; c < e.captions.size(); ++c) r.variant.drops.push_back({e.image_id, c, reason});
    }
    r.variant.content_hash = content_hash(r.variant.entries);
    return r;
}

DatasetVariant restrict_pairs(const DatasetVariant& input, VariantName name,
                              std::span<const semantic::PairScore> kept,
                              std::span<const semantic::PairFailure> failures, const std::string& reason,
                              json filter_params) {
    std::set<std::string> keep;
    for (const auto& s : kept) keep.insert(pair_key(s.image_id, s.caption_index));
    std::map<std::string, std::string> failed;
    for (const auto& f : failures) failed[pair_key(f.image_id, f.caption_index)] = "semantic:score_failed:" + f.kind;

    DatasetVariant v;
    v.name = name;
    v.parent = input.name;
    v.filter_params = std::move(filter_params);
    for (const auto& e : input.entries) {
        manifest::ManifestEntry k = e;
        k.captions.clear();
        for (std::size_t c = 0; c < e.captions.size(); ++c) {
            const auto key = pair_key(e.image_id, c);
            if (keep.count(key)) {
                k.captions.push_back(e.captions[c]);
            } else {
                const auto f = failed.find(key);
                v.drops.push_back({e.image_id, c, f != failed.end() ? f->second : reason});
            }
        }
        if (!k.captions.empty()) v.entries.push_back(std::move(k));
    }
    v.content_hash = content_hash(v.entries);
    return v;
}

// --- prompts ----------------------------------------------------------------------

std::vector<ReferenceRow> read_reference_rows(const fs::path& path) {
    std::vector<ReferenceRow> rows;
    for (const auto& line : read_jsonl(path)) {
        const auto& j = line.value;
        auto field = [&](const char* key) {
            if (!j.is_object() || !j.contains(key) || !j[key].is_string())
                throw MalformedRow(line.line_no, std::string("missing string field ") + key);
            return j[key].get<std::string>();
        };
        rows.push_back({field("image_path"), field("organ"), field("tumor_type")});
    }
    return rows;
}

json to_json(const PromptSpec& p) {
    return json{{"condition_key", p.condition_key},
                {"organ", p.organ},
                {"tumor_type", p.tumor_type},
                {"prompt_text", p.prompt_text},
                {"template_id", p.template_id}};
}

std::string condition_key(const std::string& organ, const std::string& tumor_type) {
    return slug(organ) + "__" + slug(tumor_type);
}

std::string render_template(const std::string& templ, const std::string& organ, const std::string& tumor_type) {
    return replace_all(replace_all(templ, "{organ}", organ), "{tumor_type}", tumor_type);
}

std::vector<PromptSpec> derive_prompts(std::span<const ReferenceRow> rows, const std::string& templ,
                                       const std::string& template_id) {
    std::map<std::string, PromptSpec> by_key;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto organ = trim(rows[i].organ), tumor = trim(rows[i].tumor_type);
        if (organ.empty() || tumor.empty() || slug(organ).empty() || slug(tumor).empty())
            throw EmptyField("row " + std::to_string(i + 1) + ": organ and tumor_type must be non-empty");
        const auto key = condition_key(organ, tumor);
        const auto it = by_key.find(key);
        if (it != by_key.end()) {
            if (it->second.organ != organ || it->second.tumor_type != tumor)
                throw InvalidArgument("condition key collision: " + key);
            continue;
        }
        by_key[key] = PromptSpec{key, organ, tumor, render_template(templ, organ, tumor), template_id};
    }
    std::vector<PromptSpec> out;
    for (auto& [_, p] : by_key) out.push_back(std::move(p));
    return out;
}

// --- crops ------------------------------------------------------------------------

CropSet sample_reference_crops(std::span<const ReferenceRow> rows, const fs::path& base_dir, int crop_size,
                               std::size_t n_per_image, std::uint64_t seed, std::optional<std::size_t> total_n,
                               std::size_t workers) {
    if (crop_size <= 0) throw InvalidArgument("crop_size must be positive");
    std::vector<const ReferenceRow*> order;
    for (const auto& r : rows) order.push_back(&r);
    std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->image_path < b->image_path; });

    std::vector<Image> images(order.size());
    std::vector<std::string> errors(order.size());
    parallel_for(order.size(), workers, [&](std::size_t i) {
        try {
            images[i] = read_image(manifest::resolve_image_path(order[i]->image_path, base_dir));
        } catch (const Error& e) {
            errors[i] = e.kind() + ": " + e.what();
        }
    });

    CropSet out;
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (!errors[i].empty()) {
            out.skipped.push_back({order[i]->image_path, errors[i]});
        } else if (images[i].width < crop_size || images[i].height < crop_size) {
            out.skipped.push_back({order[i]->image_path, "smaller than crop size"});
        } else {
            usable.push_back(i);
        }
    }
    std::vector<std::size_t> counts(usable.size(), n_per_image);
    if (total_n && !usable.empty()) {
        const std::size_t base = *total_n / usable.size(), extra = *total_n % usable.size();
        for (std::size_t j = 0; j < usable.size(); ++j) counts[j] = base + (j < extra ? 1 : 0);
    }
    for (std::size_t j = 0; j < usable.size(); ++j) {
        const std::size_t i = usable[j];
        const auto& row = *order[i];
        const auto key = condition_key(trim(row.organ), trim(row.tumor_type));
        CounterRng rng(derive_seed({seed, hash_string("crop"), hash_string(row.image_path), static_cast<std::uint64_t>(j)}));
        for (std::size_t c = 0; c < counts[j]; ++c) {
            const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(images[i].width - crop_size + 1)));
            const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(images[i].height - crop_size + 1)));
            std::ostringstream id;
            id << "crop-" << std::setw(6) << std::setfill('0') << out.records.size();
            out.records.push_back({id.str(), row.image_path, key, x, y, crop_size});
            out.by_condition[key].push_back(crop(images[i], {x, y, crop_size, crop_size}));
        }
    }
    return out;
}

// --- generation -------------------------------------------------------------------

void StubNoiseAdapter::generate(const GenerationRequest& req) const {
    fs::create_directories(req.out_dir);
    const int size = req.image_size;
    for (std::size_t i = 0; i < req.count; ++i) {
        CounterRng rng(derive_seed({req.seed, hash_string("stub-noise"), hash_string(req.variant),
                                    hash_string(req.prompt.condition_key), static_cast<std::uint64_t>(i)}));
        // Coarse random field upsampled, plus fine per-pixel noise.
        Image coarse(8, 8);
        for (auto& px : coarse.pixels) px = static_cast<std::uint8_t>(rng.below(256));
        Image img = resize(coarse, size, size);
        for (auto& px : img.pixels) {
            const int v = px + static_cast<int>(rng.below(61)) - 30;
            px = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
        }
        std::ostringstream name;
        name << "img-" << std::setw(5) << std::setfill('0') << i << ".png";
        write_png(req.out_dir / name.str(), img);
    }
}

CommandAdapter::CommandAdapter(std::string id, std::string command_template, std::string probe_command)
    : id_(std::move(id)), template_(std::move(command_template)), probe_(std::move(probe_command)) {
    if (template_.empty()) throw InvalidArgument("command adapter needs a command template");
}

std::string CommandAdapter::render(const GenerationRequest& r) const {
    std::string cmd = template_;
    cmd = replace_all(cmd, "{prompt}", shell_quote(r.prompt.prompt_text));
    cmd = replace_all(cmd, "{count}", std::to_string(r.count));
    cmd = replace_all(cmd, "{seed}", std::to_string(r.seed));
    cmd = replace_all(cmd, "{out_dir}", shell_quote(r.out_dir.string()));
    cmd = replace_all(cmd, "{variant}", shell_quote(r.variant));
    cmd = replace_all(cmd, "{manifest}", shell_quote(r.variant_manifest.string()));
    cmd = replace_all(cmd, "{size}", std::to_string(r.image_size));
    return cmd;
}

void CommandAdapter::probe() const {
    if (probe_.empty()) return;
    if (std::system(probe_.c_str()) != 0) throw AdapterFailure("probe command failed: " + probe_);
}

void CommandAdapter::generate(const GenerationRequest& request) const {
    fs::create_directories(request.out_dir);
    const auto cmd = render(request);
    const int rc = std::system(cmd.c_str());
    if (rc != 0) throw AdapterFailure("generator command exited with status " + std::to_string(rc) + ": " + cmd);
}

std::unique_ptr<GeneratorAdapter> make_adapter(const std::string& id, const std::string& command,
                                               const std::string& probe_command) {
    if (id == "stub-noise-v1") return std::make_unique<StubNoiseAdapter>();
    if (id.rfind("command:", 0) == 0) return std::make_unique<CommandAdapter>(id, command, probe_command);
    throw InvalidArgument("unknown generator adapter: " + id);
}

std::map<std::string, std::size_t> allocate_counts(std::span<const PromptSpec> prompts, std::size_t total_n) {
    if (prompts.empty()) throw InvalidArgument("no prompts to allocate images to");
    std::vector<std::string> keys;
    for (const auto& p : prompts) keys.push_back(p.condition_key);
    std::sort(keys.begin(), keys.end());
    if (std::adjacent_find(keys.begin(), keys.end()) != keys.end()) throw InvalidArgument("duplicate condition_key");
    std::map<std::string, std::size_t> out;
    const std::size_t base = total_n / keys.size(), extra = total_n % keys.size();
    for (std::size_t i = 0; i < keys.size(); ++i) out[keys[i]] = base + (i < extra ? 1 : 0);
    return out;
}

std::vector<fs::path> list_images(const fs::path& dir) {
    std::vector<fs::path> out;
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) return out;
    for (const auto& de : fs::directory_iterator(dir)) {
        if (!de.is_regular_file() || !is_image_extension(de.path())) continue;
        try {
            read_image(de.path());
            out.push_back(de.path());
        } catch (const Error&) {
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

GeneratedSet run_generation(const GeneratorAdapter& adapter, std::span<const PromptSpec> prompts, std::size_t total_n,
                            std::uint64_t seed, const fs::path& out_dir, const std::string& variant,
                            const fs::path& variant_manifest, int image_size) {
    adapter.probe();
    const auto counts = allocate_counts(prompts, total_n);
    std::map<std::string, const PromptSpec*> by_key;
    for (const auto& p : prompts) by_key[p.condition_key] = &p;
    GeneratedSet out;
    for (const auto& [key, count] : counts) {
        const fs::path dir = out_dir / key;
        auto existing = list_images(dir);
        if (existing.size() != count) {
            fs::remove_all(dir);
            fs::create_directories(dir);
            if (count > 0) {
                GenerationRequest req{variant,
                                      *by_key.at(key),
                                      count,
                                      derive_seed({seed, hash_string(key)}),
                                      dir,
                                      variant_manifest,
                                      image_size};
                adapter.generate(req);
            }
            existing = list_images(dir);
            if (existing.size() != count)
                throw AdapterFailure("adapter " + adapter.id() + " produced " + std::to_string(existing.size()) +
                                     " images for " + key + ", expected " + std::to_string(count));
        }
        out.by_condition[key] = std::move(existing);
    }
    return out;
}

// --- FID --------------------------------------------------------------------------

GroupedFeatures extract_grouped(const features::Extractor& extractor, const GroupedImages& images,
                                std::size_t workers) {
    GroupedFeatures out;
    for (const auto& [key, imgs] : images) out[key] = features::extract_all(extractor, imgs, workers);
    return out;
}

json evaluate_variant(const std::string& variant, const std::string& reference, const GroupedFeatures& generated,
                      const GroupedFeatures& reference_features, const std::string& extractor_id) {
    std::size_t n_gen = 0, n_ref = 0;
    for (const auto& [_, m] : generated) n_gen += static_cast<std::size_t>(m.rows());
    for (const auto& [_, m] : reference_features) n_ref += static_cast<std::size_t>(m.rows());
    const auto fid = metrics::conditional_fid(generated, reference_features);
    json j = metrics::to_json(fid);
    j["variant"] = variant;
    j["reference"] = reference;
    j["extractor_id"] = extractor_id;
    j["n_generated"] = n_gen;
    j["n_reference"] = n_ref;
    return j;
}

// --- report -----------------------------------------------------------------------

std::string render_markdown(const json& report) {
    std::ostringstream md;
    md << "# Pipeline report\n\n";
    if (report.contains("variants")) {
        md << "## Dataset variants\n\n| variant | parent | images | pairs | content hash |\n|---|---|---:|---:|---|\n";
        for (const auto& v : report["variants"]) {
            md << "| " << v.value("name", "") << " | " << (v.contains("parent") && v["parent"].is_string()
                                                              ? v["parent"].get<std::string>()
                                                              : std::string("-"))
               << " | " << v.value("n_images", 0) << " | " << v.value("n_pairs", 0) << " | `"
               << v.value("content_hash", "").substr(0, 16) << "` |\n";
        }
        md << "\n";
    }
    std::vector<std::string> references;
    if (report.contains("references"))
        for (const auto& r : report["references"]) references.push_back(r.get<std::string>());
    std::vector<std::string> variants;
    if (report.contains("variant_order"))
        for (const auto& v : report["variant_order"]) variants.push_back(v.get<std::string>());
    if (!references.empty() && !variants.empty()) {
        const std::string extractor = report.value("extractor_id", "");
        md << "## Conditional FID (" << extractor << ")\n\n| variant |";
        for (const auto& r : references) md << " " << r << " |";
        md << "\n|---|";
        for (std::size_t i = 0; i < references.size(); ++i) md << "---:|";
        md << "\n";
        for (const auto& v : variants) {
            md << "| " << v << " |";
            for (const auto& r : references) {
                const json* cell = nullptr;
                if (report.contains("fid") && report["fid"].contains(v) && report["fid"][v].contains(r) &&
                    report["fid"][v][r].is_object())
                    cell = &report["fid"][v][r];
                if (cell && cell->contains("mean")) {
                    std::ostringstream num;
                    num << std::fixed << std::setprecision(3) << (*cell)["mean"].get<double>();
                    md << " " << num.str() << " |";
                } else {
                    md << " n/a |";
                }
            }
            md << "\n";
        }
        md << "\n";
    }
    if (report.contains("impurity_filter") && report["impurity_filter"].contains("drop_histogram")) {
        md << "## Impurity drop reasons\n\n| category | dropped images |\n|---|---:|\n";
        for (const auto& [k, v] : report["impurity_filter"]["drop_histogram"].items())
            md << "| " << k << " | " << v.get<std::size_t>() << " |\n";
        md << "\n";
    }
    if (report.contains("semantic_filter")) {
        const auto& s = report["semantic_filter"];
        md << "## Semantic filter\n\n";
        for (const auto& [k, v] : s.items()) md << "- " << k << ": " << v.dump() << "\n";
        md << "\n";
    }
    return md.str();
}

}  // namespace quiltclean::pipeline
