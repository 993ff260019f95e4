#include "quiltclean/pipeline_config.hpp"

#include "quiltclean/core/files.hpp"
#include "quiltclean/core/hashing.hpp"
#include "quiltclean/core/image.hpp"
#include "quiltclean/core/rng.hpp"
#include "quiltclean/features.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <iomanip>
#include <set>
#include <sstream>

namespace quiltclean::pipeline {

namespace fs = std::filesystem;

// --- config parsing -----------------------------------------------------------------

namespace {

void check_keys(const YAML::Node& node, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!node.IsMap()) throw ConfigError(where + ": expected a mapping");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        if (!ok.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

template <typename T>
T scalar(const YAML::Node& node, const std::string& where) {
    try {
        return node.as<T>();
    } catch (const YAML::Exception&) {
        throw ConfigError(where + ": invalid value");
    }
}

fs::path path_value(const YAML::Node& node, const std::string& where, const fs::path& dir) {
    const auto s = scalar<std::string>(node, where);
    if (s.empty()) throw ConfigError(where + ": empty path");
    const fs::path p(s);
    return p.is_absolute() ? p : (dir / p).lexically_normal();
}

std::size_t count_value(const YAML::Node& node, const std::string& where) {
    const auto v = scalar<long long>(node, where);
    if (v < 0) throw ConfigError(where + ": must be non-negative");
    return static_cast<std::size_t>(v);
}

classifier::Thresholds thresholds_value(const YAML::Node& node) {
    classifier::Thresholds t;
    t.fill(0.5);
    if (node.IsSequence()) {
        if (node.size() != kNumCategories) throw ConfigError("filter.thresholds: expected 8 values");
        for (std::size_t i = 0; i < kNumCategories; ++i) t[i] = scalar<double>(node[i], "filter.thresholds");
    } else if (node.IsMap()) {
        for (const auto& kv : node) {
            const auto name = kv.first.as<std::string>();
            const auto c = parse_category(name);
            if (!c) throw ConfigError("filter.thresholds: unknown category '" + name + "'");
            t[index_of(*c)] = scalar<double>(kv.second, "filter.thresholds." + name);
        }
    } else {
        throw ConfigError("filter.thresholds: expected a list or a mapping");
    }
    for (double v : t)
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("filter.thresholds: values must lie in [0, 1]");
    return t;
}

}  // namespace

PipelineConfig parse_config(const std::string& yaml_text, const fs::path& config_dir) {
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("invalid YAML: ") + e.what());
    }
    check_keys(root, "config",
               {"seed", "workers", "out_dir", "manifest", "image_base_dir", "predictions", "filter", "semantic",
                "prompts", "references", "generation", "variants", "fid", "evaluation"});

    PipelineConfig c;
    if (!root["manifest"]) throw ConfigError("config: 'manifest' is required");
    c.manifest = path_value(root["manifest"], "manifest", config_dir);
    c.image_base_dir = root["image_base_dir"] ? path_value(root["image_base_dir"], "image_base_dir", config_dir)
                                              : c.manifest.parent_path();
    c.out_dir = root["out_dir"] ? path_value(root["out_dir"], "out_dir", config_dir) : config_dir / "out";
    if (root["seed"]) c.seed = scalar<std::uint64_t>(root["seed"], "seed");
    if (root["workers"]) c.workers = count_value(root["workers"], "workers");

    if (const auto p = root["predictions"]) {
        check_keys(p, "predictions", {"file", "checkpoint"});
        if (p["file"] && p["checkpoint"]) throw ConfigError("predictions: give either 'file' or 'checkpoint'");
        if (p["file"]) c.predictions_file = path_value(p["file"], "predictions.file", config_dir);
        if (p["checkpoint"]) c.checkpoint = path_value(p["checkpoint"], "predictions.checkpoint", config_dir);
    }

    if (const auto f = root["filter"]) {
        check_keys(f, "filter", {"mode", "categories", "thresholds"});
        if (f["mode"]) {
            const auto mode = scalar<std::string>(f["mode"], "filter.mode");
            if (mode == "any_flag")
                c.filter.mode = FilterMode::AnyFlag;
            else if (mode == "per_category")
                c.filter.mode = FilterMode::PerCategory;
            else
                throw ConfigError("filter.mode: expected any_flag or per_category");
        }
        if (f["categories"]) {
            if (!f["categories"].IsSequence()) throw ConfigError("filter.categories: expected a list");
            for (const auto& n : f["categories"]) {
                const auto name = scalar<std::string>(n, "filter.categories");
                const auto cat = parse_category(name);
                if (!cat) throw ConfigError("filter.categories: unknown category '" + name + "'");
                c.filter.categories[index_of(*cat)] = true;
            }
        }
        if (c.filter.mode == FilterMode::PerCategory &&
            std::none_of(c.filter.categories.begin(), c.filter.categories.end(), [](bool b) { return b; }))
            throw ConfigError("filter.categories: per_category mode needs at least one category");
        if (f["thresholds"]) c.filter.thresholds = thresholds_value(f["thresholds"]);
    }

    if (const auto s = root["semantic"]) {
        check_keys(s, "semantic", {"scorer", "embeddings", "population"});
        if (s["scorer"]) c.scorer = scalar<std::string>(s["scorer"], "semantic.scorer");
        if (s["embeddings"]) c.scorer_embeddings = path_value(s["embeddings"], "semantic.embeddings", config_dir);
        if (s["population"]) c.semantic_population = scalar<std::string>(s["population"], "semantic.population");
        if (c.semantic_population != "survivors" && c.semantic_population != "full")
            throw ConfigError("semantic.population: expected survivors or full");
    }
    if (c.scorer != "stub-hash-v1" && c.scorer.rfind("precomputed:", 0) != 0)
        throw ConfigError("semantic.scorer: unknown scorer '" + c.scorer + "'");
    if (c.scorer.rfind("precomputed:", 0) == 0 && c.scorer_embeddings.empty())
        throw ConfigError("semantic.embeddings: required for scorer " + c.scorer);

    if (const auto p = root["prompts"]) {
        check_keys(p, "prompts", {"template", "template_id"});
        if (p["template"]) c.prompt_template = scalar<std::string>(p["template"], "prompts.template");
        if (p["template_id"]) c.template_id = scalar<std::string>(p["template_id"], "prompts.template_id");
        if (p["template"] && !p["template_id"]) c.template_id = "custom";
    }

    if (const auto refs = root["references"]) {
        if (!refs.IsSequence()) throw ConfigError("references: expected a list");
        std::set<std::string> names;
        for (std::size_t i = 0; i < refs.size(); ++i) {
            const auto& r = refs[i];
            const std::string where = "references[" + std::to_string(i) + "]";
            check_keys(r, where, {"name", "metadata", "base_dir", "crop_size", "crops_per_image", "total_crops"});
            if (!r["name"] || !r["metadata"]) throw ConfigError(where + ": 'name' and 'metadata' are required");
            ReferenceConfig rc;
            rc.name = scalar<std::string>(r["name"], where + ".name");
            if (rc.name.empty() || rc.name.find_first_of("/\\") != std::string::npos)
                throw ConfigError(where + ".name: must be a plain non-empty name");
            if (!names.insert(rc.name).second) throw ConfigError(where + ".name: duplicate reference " + rc.name);
            rc.metadata = path_value(r["metadata"], where + ".metadata", config_dir);
            rc.base_dir = r["base_dir"] ? path_value(r["base_dir"], where + ".base_dir", config_dir)
                                        : rc.metadata.parent_path();
            if (r["crop_size"]) rc.crop_size = scalar<int>(r["crop_size"], where + ".crop_size");
            if (rc.crop_size <= 0) throw ConfigError(where + ".crop_size: must be positive");
            if (r["crops_per_image"]) rc.crops_per_image = count_value(r["crops_per_image"], where + ".crops_per_image");
            if (r["total_crops"]) rc.total_crops = count_value(r["total_crops"], where + ".total_crops");
            c.references.push_back(std::move(rc));
        }
    }

    if (const auto g = root["generation"]) {
        check_keys(g, "generation", {"adapter", "command", "probe", "total_n", "image_size"});
        if (g["adapter"]) c.adapter = scalar<std::string>(g["adapter"], "generation.adapter");
        if (g["command"]) c.adapter_command = scalar<std::string>(g["command"], "generation.command");
        if (g["probe"]) c.adapter_probe = scalar<std::string>(g["probe"], "generation.probe");
        if (g["total_n"]) c.generation_total = count_value(g["total_n"], "generation.total_n");
        if (g["image_size"]) c.image_size = scalar<int>(g["image_size"], "generation.image_size");
        if (c.image_size <= 0) throw ConfigError("generation.image_size: must be positive");
    }
    if (c.adapter != "stub-noise-v1" && c.adapter.rfind("command:", 0) != 0)
        throw ConfigError("generation.adapter: unknown adapter '" + c.adapter + "'");
    if (c.adapter.rfind("command:", 0) == 0 && c.adapter_command.empty())
        throw ConfigError("generation.command: required for adapter " + c.adapter);

    if (const auto v = root["variants"]) {
        if (!v.IsSequence() || v.size() == 0) throw ConfigError("variants: expected a non-empty list");
        std::set<VariantName> chosen;
        for (const auto& n : v) {
            const auto name = scalar<std::string>(n, "variants");
            const auto parsed = parse_variant(name);
            if (!parsed) throw ConfigError("variants: unknown variant '" + name + "'");
            chosen.insert(*parsed);
        }
        c.variants.clear();
        for (auto name : kAllVariants)
            if (chosen.count(name)) c.variants.push_back(name);
    }

    if (const auto f = root["fid"]) {
        check_keys(f, "fid", {"extractor"});
        if (f["extractor"]) c.extractor = scalar<std::string>(f["extractor"], "fid.extractor");
    }
    const auto ids = features::extractor_ids();
    if (std::find(ids.begin(), ids.end(), c.extractor) == ids.end())
        throw ConfigError("fid.extractor: unknown extractor '" + c.extractor + "'");

    if (const auto e = root["evaluation"]) {
        check_keys(e, "evaluation", {"labels"});
        if (e["labels"]) c.evaluation_labels = path_value(e["labels"], "evaluation.labels", config_dir);
    }

    const bool needs_predictions =
        std::any_of(c.variants.begin(), c.variants.end(), [](VariantName v) {
            return v == VariantName::ImpurityFiltered || v == VariantName::BothFiltered;
        }) ||
        c.evaluation_labels.has_value();
    if (needs_predictions && !c.predictions_file && !c.checkpoint)
        throw ConfigError("predictions: a file or checkpoint is required for the impurity filter");
    return c;
}

PipelineConfig load_config(const fs::path& yaml_path) {
    std::string text;
    try {
        text = read_text_file(yaml_path);
    } catch (const Error& e) {
        throw ConfigError("cannot read config " + yaml_path.string() + ": " + e.what());
    }
    return parse_config(text, fs::absolute(yaml_path).parent_path());
}

// --- stages -------------------------------------------------------------------------

std::string_view stage_name(Stage s) noexcept {
    switch (s) {
        case Stage::Filter: return "filter";
        case Stage::Prompts: return "derive-prompts";
        case Stage::Crops: return "crops";
        case Stage::Generate: return "generate";
        case Stage::Fid: return "fid";
        case Stage::Report: return "report";
    }
    return "unknown";
}

std::optional<Stage> parse_stage(std::string_view s) noexcept {
    for (auto st : {Stage::Filter, Stage::Prompts, Stage::Crops, Stage::Generate, Stage::Fid, Stage::Report})
        if (stage_name(st) == s) return st;
    return std::nullopt;
}

int exit_code_for(const Error& e) noexcept {
    static const std::set<std::string> validation = {
        "ConfigError",    "InvalidArgument", "MalformedRow",    "EmptyField",      "MissingPrediction",
        "DuplicatePathConflict", "UnsupportedCategory", "EmptySubset", "EmptyLabels", "SplitLeakage",
        "LengthMismatch", "EmptyBaseSet"};
    return validation.count(e.kind()) ? 2 : 3;
}

namespace {

std::string file_digest(const fs::path& p) {
    std::error_code ec;
    if (fs::is_directory(p, ec)) {
        std::vector<fs::path> files;
        for (const auto& de : fs::recursive_directory_iterator(p))
            if (de.is_regular_file()) files.push_back(de.path());
        std::sort(files.begin(), files.end());
        Sha256 h;
        for (const auto& f : files) h.update(fs::relative(f, p).generic_string()).update(sha256_file(f));
        return h.hex();
    }
    return sha256_file(p);
}

std::string join_key(const std::vector<std::string>& parts) {
    Sha256 h;
    for (const auto& p : parts) h.update(p).update(std::string_view("\x1e", 1));
    return h.hex();
}

json filter_params_json(const ImpurityFilterConfig& f) {
    json j{{"mode", f.mode == FilterMode::AnyFlag ? "any_flag" : "per_category"}};
    json cats = json::array();
    for (auto c : kAllCategories)
        if (f.categories[index_of(c)]) cats.push_back(std::string(category_name(c)));
    j["categories"] = cats;
    j["thresholds"] = f.thresholds ? json(*f.thresholds) : json(nullptr);
    return j;
}

std::vector<std::string> variant_strings(const std::vector<VariantName>& vs) {
    std::vector<std::string> out;
    for (auto v : vs) out.emplace_back(variant_name(v));
    return out;
}

bool wants(const PipelineConfig& c, VariantName v) {
    return std::find(c.variants.begin(), c.variants.end(), v) != c.variants.end();
}

class Runner {
public:
    Runner(const PipelineConfig& c, const RunOptions& o) : c_(c), o_(o) {}

    void run(Stage last) {
        fs::create_directories(c_.out_dir / ".stages");
        const std::vector<Stage> order = {Stage::Filter, Stage::Prompts, Stage::Crops,
                                          Stage::Generate, Stage::Fid, Stage::Report};
        for (auto s : order) {
            step(s);
            if (s == last) break;
        }
    }

private:
    const PipelineConfig& c_;
    const RunOptions& o_;
    std::map<Stage, std::string> keys_;

    void log(const std::string& msg) const {
        if (o_.log) *o_.log << msg << "\n";
    }

    fs::path marker(Stage s) const { return c_.out_dir / ".stages" / (std::string(stage_name(s)) + ".done"); }

    std::string key_for(Stage s) const {
        switch (s) {
            case Stage::Filter: {
                std::vector<std::string> parts = {"filter", std::to_string(c_.seed), file_digest(c_.manifest),
                                                  c_.image_base_dir.string(), filter_params_json(c_.filter).dump(),
                                                  c_.scorer, c_.semantic_population,
                                                  json(variant_strings(c_.variants)).dump()};
                if (!c_.scorer_embeddings.empty()) parts.push_back(file_digest(c_.scorer_embeddings));
                if (c_.predictions_file) parts.push_back("file:" + file_digest(*c_.predictions_file));
                if (c_.checkpoint) parts.push_back("ckpt:" + file_digest(*c_.checkpoint));
                return join_key(parts);
            }
            case Stage::Prompts: {
                std::vector<std::string> parts = {"prompts", c_.prompt_template, c_.template_id};
                for (const auto& r : c_.references) parts.push_back(file_digest(r.metadata));
                return join_key(parts);
            }
            case Stage::Crops: {
                std::vector<std::string> parts = {"crops", std::to_string(c_.seed), keys_.at(Stage::Prompts)};
                for (const auto& r : c_.references)
                    parts.insert(parts.end(), {r.name, r.base_dir.string(), std::to_string(r.crop_size),
                                               std::to_string(r.crops_per_image),
                                               r.total_crops ? std::to_string(*r.total_crops) : "-"});
                return join_key(parts);
            }
            case Stage::Generate:
                return join_key({"generate", std::to_string(c_.seed), keys_.at(Stage::Filter),
                                 keys_.at(Stage::Prompts), c_.adapter, c_.adapter_command, c_.adapter_probe,
                                 std::to_string(c_.generation_total), std::to_string(c_.image_size)});
            case Stage::Fid:
                return join_key({"fid", keys_.at(Stage::Generate), keys_.at(Stage::Crops), c_.extractor});
            case Stage::Report: {
                std::vector<std::string> parts = {"report", keys_.at(Stage::Fid)};
                if (c_.evaluation_labels) parts.push_back(file_digest(*c_.evaluation_labels));
                return join_key(parts);
            }
        }
        return {};
    }

    void step(Stage s) {
        const auto key = key_for(s);
        keys_[s] = key;
        const auto m = marker(s);
        std::error_code ec;
        if (!o_.force && fs::exists(m, ec)) {
            try {
                if (read_json(m).value("input_hash", "") == key) {
                    log("[" + std::string(stage_name(s)) + "] up to date");
                    return;
                }
            } catch (const Error&) {
            }
        }
        fs::remove(m, ec);
        log("[" + std::string(stage_name(s)) + "] running");
        switch (s) {
            case Stage::Filter: filter(); break;
            case Stage::Prompts: prompts(); break;
            case Stage::Crops: crops(); break;
            case Stage::Generate: generate(); break;
            case Stage::Fid: fid(); break;
            case Stage::Report: report(); break;
        }
        write_json(m, json{{"stage", stage_name(s)}, {"input_hash", key}});
    }

    // -- filter ------------------------------------------------------------------------

    void write_variant(const DatasetVariant& v, json& index) {
        const std::string name(variant_name(v.name));
        write_manifest(c_.out_dir / "variants" / (name + ".jsonl"), v.entries);
        std::vector<json> drops;
        for (const auto& d : v.drops) drops.push_back(to_json(d));
        write_jsonl(c_.out_dir / "drops" / (name + ".jsonl"), drops);
        index.push_back(json{{"name", name},
                             {"parent", v.parent ? json(std::string(variant_name(*v.parent))) : json(nullptr)},
                             {"manifest", "variants/" + name + ".jsonl"},
                             {"drops", "drops/" + name + ".jsonl"},
                             {"filter_params", v.filter_params},
                             {"content_hash", v.content_hash},
                             {"n_images", v.n_images()},
                             {"n_pairs", v.n_pairs()},
                             {"n_dropped_pairs", v.drops.size()}});
    }

    void filter() {
        const auto loaded = manifest::load_manifest(c_.manifest, manifest::format_from_extension(c_.manifest));
        const auto unfiltered = make_unfiltered(loaded.entries);
        log("  manifest: " + std::to_string(unfiltered.n_images()) + " images, " +
            std::to_string(unfiltered.n_pairs()) + " pairs");

        json summary = json::object();
        summary["composition_order"] = {"impurity", "semantic"};
        json index = json::array();
        const bool need_impurity = wants(c_, VariantName::ImpurityFiltered) || wants(c_, VariantName::BothFiltered);
        const bool need_semantic = wants(c_, VariantName::SemanticFiltered) || wants(c_, VariantName::BothFiltered);

        std::vector<classifier::PredictionRecord> preds;
        classifier::Thresholds thresholds;
        thresholds.fill(0.5);
        if (c_.predictions_file) {
            preds = classifier::read_predictions(*c_.predictions_file);
        } else if (c_.checkpoint) {
            const auto model = classifier::Classifier::load(*c_.checkpoint);
            thresholds = model.thresholds();
            preds = classifier::predict(model, unfiltered.entries, c_.image_base_dir, c_.workers);
        }
        if (c_.filter.thresholds) thresholds = *c_.filter.thresholds;
        if (c_.predictions_file || c_.checkpoint) {
            classifier::write_predictions(c_.out_dir / "predictions.jsonl", preds);
            summary["effective_thresholds"] = thresholds;
        }

        std::optional<ImpurityFilterResult> impurity;
        if (need_impurity) {
            impurity = filter_dataset(unfiltered, preds, c_.filter);
            summary["impurity_filter"] = json{{"params", impurity->variant.filter_params},
                                              {"drop_histogram", impurity->drop_histogram},
                                              {"n_input_images", unfiltered.n_images()},
                                              {"n_dropped_images", impurity->n_dropped_images}};
        }

        std::optional<DatasetVariant> semantic_v, both_v;
        if (need_semantic) {
            const auto scorer = semantic::make_scorer(c_.scorer, c_.scorer_embeddings);
            auto scored = semantic::score_manifest(*scorer, unfiltered.entries, c_.image_base_dir, c_.workers);
            auto by_pair = [](const auto& a, const auto& b) {
                return std::tie(a.image_id, a.caption_index) < std::tie(b.image_id, b.caption_index);
            };
            std::sort(scored.scores.begin(), scored.scores.end(), by_pair);
            std::sort(scored.failures.begin(), scored.failures.end(), by_pair);
            semantic::write_scores(c_.out_dir / "scores.jsonl", scored.scores);
            std::vector<json> failures;
            for (const auto& f : scored.failures)
                failures.push_back(json{{"image_id", f.image_id},
                                        {"caption_index", f.caption_index},
                                        {"kind", f.kind},
                                        {"message", f.message}});
            write_jsonl(c_.out_dir / "score_failures.jsonl", failures);

            const auto full = semantic::median_filter(scored.scores);
            json sem{{"scorer_id", scorer->binding().scorer_id},
                     {"population", c_.semantic_population},
                     {"n_scored", scored.scores.size()},
                     {"n_failed", scored.failures.size()},
                     {"median_full", full.median},
                     {"full", semantic::summary(full)}};
            if (wants(c_, VariantName::SemanticFiltered)) {
                semantic_v = restrict_pairs(unfiltered, VariantName::SemanticFiltered, full.kept, scored.failures,
                                            "semantic:not_above_median",
                                            json{{"scorer_id", scorer->binding().scorer_id},
                                                 {"median", full.median},
                                                 {"population", "full"}});
            }
            if (wants(c_, VariantName::BothFiltered)) {
                std::set<std::string> survivors;
                for (const auto& e : impurity->variant.entries) survivors.insert(e.image_id);
                std::vector<semantic::PairScore> kept;
                std::vector<semantic::PairFailure> failed;
                double med = full.median;
                if (c_.semantic_population == "survivors") {
                    std::vector<semantic::PairScore> pool;
                    for (const auto& s : scored.scores)
                        if (survivors.count(s.image_id)) pool.push_back(s);
                    const auto r = semantic::median_filter(pool);
                    kept = r.kept;
                    med = r.median;
                    sem["survivors"] = semantic::summary(r);
                } else {
                    for (const auto& s : full.kept)
                        if (survivors.count(s.image_id)) kept.push_back(s);
                }
                for (const auto& f : scored.failures)
                    if (survivors.count(f.image_id)) failed.push_back(f);
                both_v = restrict_pairs(impurity->variant, VariantName::BothFiltered, kept, failed,
                                        "semantic:not_above_median",
                                        json{{"scorer_id", scorer->binding().scorer_id},
                                             {"median", med},
                                             {"population", c_.semantic_population},
                                             {"composition_order", {"impurity", "semantic"}}});
            }
            summary["semantic_filter"] = sem;
        }

        fs::remove_all(c_.out_dir / "variants");
        fs::remove_all(c_.out_dir / "drops");
        for (auto v : c_.variants) {
            switch (v) {
                case VariantName::Unfiltered: write_variant(unfiltered, index); break;
                case VariantName::ImpurityFiltered: write_variant(impurity->variant, index); break;
                case VariantName::SemanticFiltered: write_variant(*semantic_v, index); break;
                case VariantName::BothFiltered: write_variant(*both_v, index); break;
            }
            log("  " + index.back()["name"].get<std::string>() + ": " +
                std::to_string(index.back()["n_images"].get<std::size_t>()) + " images, " +
                std::to_string(index.back()["n_pairs"].get<std::size_t>()) + " pairs");
        }
        write_json(c_.out_dir / "variants" / "index.json", index);
        write_json(c_.out_dir / "filter_summary.json", summary);
    }

    // -- prompts -------------------------------------------------------------------------

    std::vector<ReferenceRow> all_reference_rows() const {
        std::vector<ReferenceRow> rows;
        for (const auto& r : c_.references) {
            auto part = read_reference_rows(r.metadata);
            rows.insert(rows.end(), part.begin(), part.end());
        }
        return rows;
    }

    void prompts() {
        if (c_.references.empty()) throw ConfigError("references: at least one reference dataset is required");
        const auto rows = all_reference_rows();
        const auto specs = derive_prompts(rows, c_.prompt_template, c_.template_id);
        std::vector<json> lines;
        for (const auto& p : specs) lines.push_back(to_json(p));
        write_jsonl(c_.out_dir / "prompts.jsonl", lines);
        log("  " + std::to_string(specs.size()) + " prompts");
    }

    std::vector<PromptSpec> read_prompts() const {
        std::vector<PromptSpec> out;
        for (const auto& line : read_jsonl(c_.out_dir / "prompts.jsonl")) {
            const auto& j = line.value;
            out.push_back({j.at("condition_key").get<std::string>(), j.at("organ").get<std::string>(),
                           j.at("tumor_type").get<std::string>(), j.at("prompt_text").get<std::string>(),
                           j.at("template_id").get<std::string>()});
        }
        return out;
    }

    // -- crops ---------------------------------------------------------------------------

    void crops() {
        for (const auto& r : c_.references) {
            const auto rows = read_reference_rows(r.metadata);
            const auto set = sample_reference_crops(rows, r.base_dir, r.crop_size, r.crops_per_image,
                                                    derive_seed({c_.seed, hash_string("reference"), hash_string(r.name)}),
                                                    r.total_crops, c_.workers);
            const fs::path dir = c_.out_dir / "references" / r.name;
            fs::remove_all(dir);
            fs::create_directories(dir / "crops");
            std::map<std::string, std::size_t> next;
            std::vector<json> records;
            for (const auto& rec : set.records) {
                const auto& img = set.by_condition.at(rec.condition_key).at(next[rec.condition_key]++);
                write_png(dir / "crops" / (rec.crop_id + ".png"), img);
                records.push_back(json{{"crop_id", rec.crop_id},
                                       {"file", "crops/" + rec.crop_id + ".png"},
                                       {"source", rec.source},
                                       {"condition_key", rec.condition_key},
                                       {"x", rec.x},
                                       {"y", rec.y},
                                       {"size", rec.size}});
            }
            write_jsonl(dir / "crops.jsonl", records);
            std::vector<json> skipped;
            for (const auto& s : set.skipped) skipped.push_back(json{{"source", s.source}, {"reason", s.reason}});
            write_jsonl(dir / "skipped.jsonl", skipped);
            log("  " + r.name + ": " + std::to_string(set.records.size()) + " crops, " +
                std::to_string(set.skipped.size()) + " images skipped");
        }
    }

    // -- generate ------------------------------------------------------------------------

    void generate() {
        const auto specs = read_prompts();
        const auto adapter = make_adapter(c_.adapter, c_.adapter_command, c_.adapter_probe);
        for (auto v : c_.variants) {
            const std::string name(variant_name(v));
            const auto set = run_generation(*adapter, specs, c_.generation_total,
                                            derive_seed({c_.seed, hash_string("generate")}),
                                            c_.out_dir / "generated" / name, name,
                                            fs::absolute(c_.out_dir / "variants" / (name + ".jsonl")), c_.image_size);
            std::size_t n = 0;
            for (const auto& [_, files] : set.by_condition) n += files.size();
            log("  " + name + ": " + std::to_string(n) + " images");
        }
    }

    // -- fid -----------------------------------------------------------------------------

    GroupedImages reference_images(const ReferenceConfig& r) const {
        const fs::path dir = c_.out_dir / "references" / r.name;
        GroupedImages out;
        for (const auto& line : read_jsonl(dir / "crops.jsonl"))
            out[line.value.at("condition_key").get<std::string>()].push_back(
                read_image(dir / line.value.at("file").get<std::string>()));
        return out;
    }

    GroupedImages generated_images(const std::string& variant, const std::vector<PromptSpec>& specs) const {
        GroupedImages out;
        for (const auto& p : specs) {
            auto& imgs = out[p.condition_key];
            for (const auto& f : list_images(c_.out_dir / "generated" / variant / p.condition_key))
                imgs.push_back(read_image(f));
        }
        return out;
    }

    void fid() {
        const auto extractor = features::make_extractor(c_.extractor);
        const auto specs = read_prompts();
        std::map<std::string, GroupedFeatures> refs;
        for (const auto& r : c_.references) refs[r.name] = extract_grouped(*extractor, reference_images(r), c_.workers);
        fs::remove_all(c_.out_dir / "fid");
        for (auto v : c_.variants) {
            const std::string name(variant_name(v));
            const auto gen = extract_grouped(*extractor, generated_images(name, specs), c_.workers);
            for (const auto& r : c_.references) {
                json cell;
                try {
                    cell = evaluate_variant(name, r.name, gen, refs.at(r.name), extractor->id());
                    std::ostringstream msg;
                    msg << "  " << name << " vs " << r.name << ": " << cell["mean"].get<double>();
                    log(msg.str());
                } catch (const Error& e) {
                    cell = json{{"variant", name}, {"reference", r.name}, {"error", e.kind()}, {"message", e.what()}};
                    log("  " + name + " vs " + r.name + ": " + e.kind());
                }
                write_json(c_.out_dir / "fid" / (name + "__" + r.name + ".json"), cell);
            }
        }
    }

    // -- report --------------------------------------------------------------------------

    void report() {
        json rep = json::object();
        rep["variants"] = read_json(c_.out_dir / "variants" / "index.json");
        rep["variant_order"] = variant_strings(c_.variants);
        json refs = json::array();
        for (const auto& r : c_.references) refs.push_back(r.name);
        rep["references"] = refs;
        rep["extractor_id"] = c_.extractor;

        const auto summary = read_json(c_.out_dir / "filter_summary.json");
        rep["composition_order"] = summary.at("composition_order");
        rep["impurity_filter"] = summary.contains("impurity_filter") ? summary["impurity_filter"] : json(nullptr);
        rep["semantic_filter"] = summary.contains("semantic_filter") ? summary["semantic_filter"] : json(nullptr);

        json prompts = json::array();
        for (const auto& p : read_prompts()) prompts.push_back(to_json(p));
        rep["prompts"] = prompts;

        json fid = json::object();
        for (auto v : c_.variants) {
            const std::string name(variant_name(v));
            fid[name] = json::object();
            for (const auto& r : c_.references) {
                const auto path = c_.out_dir / "fid" / (name + "__" + r.name + ".json");
                json cell = nullptr;
                std::error_code ec;
                if (fs::exists(path, ec)) {
                    cell = read_json(path);
                    if (cell.contains("error")) cell = nullptr;
                }
                fid[name][r.name] = cell;
            }
        }
        rep["fid"] = fid;

        rep["config"] = json{{"seed", c_.seed},
                             {"manifest_sha256", file_digest(c_.manifest)},
                             {"filter", filter_params_json(c_.filter)},
                             {"scorer", c_.scorer},
                             {"semantic_population", c_.semantic_population},
                             {"template_id", c_.template_id},
                             {"adapter", c_.adapter},
                             {"generation_total", c_.generation_total},
                             {"image_size", c_.image_size},
                             {"extractor", c_.extractor}};

        if (c_.evaluation_labels) {
            const auto truth = read_labels(*c_.evaluation_labels);
            const auto preds = classifier::read_predictions(c_.out_dir / "predictions.jsonl");
            classifier::Thresholds t;
            t.fill(0.5);
            if (summary.contains("effective_thresholds")) t = summary["effective_thresholds"].get<classifier::Thresholds>();
            std::vector<classifier::PredictionRecord> usable;
            for (const auto& p : preds)
                if (p.ok()) usable.push_back(p);
            rep["classifier_metrics"] = metrics::to_json(classifier::evaluate(usable, truth, t));
        }

        write_json(c_.out_dir / "report.json", rep);
        write_text_file(c_.out_dir / "report.md", render_markdown(rep));
        log("  wrote report.json and report.md");
    }
};

}  // namespace

void run(const PipelineConfig& config, Stage last, const RunOptions& options) {
    Runner(config, options).run(last);
}

}  // namespace quiltclean::pipeline
