#include "../fixtures.hpp"
#include "../support.hpp"

#include "quiltclean/core/error.hpp"
#include "quiltclean/pipeline.hpp"
#include "quiltclean/pipeline_config.hpp"

#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

using namespace quiltclean;
using namespace quiltclean::pipeline;
namespace fs = std::filesystem;

namespace {

std::vector<manifest::ManifestEntry> load_entries(const fs::path& p) {
    return manifest::load_manifest(p, manifest::format_from_extension(p)).entries;
}

classifier::PredictionRecord prediction(const std::string& id, std::initializer_list<ImpurityCategory> on) {
    classifier::PredictionRecord p;
    p.image_id = id;
    for (auto c : on) {
        p.flags[index_of(c)] = true;
        p.probs[index_of(c)] = 0.8;
    }
    return p;
}

DatasetVariant three_images() {
    return make_unfiltered({{"c", "c.png", {"c0"}}, {"a", "a.png", {"a0", "a1"}}, {"b", "b.png", {"b0"}}});
}

std::string pair_id(const std::string& id, std::size_t c) { return id + "#" + std::to_string(c); }

std::set<std::string> pairs_of(const std::vector<manifest::ManifestEntry>& entries) {
    std::set<std::string> out;
    for (const auto& e : entries)
        for (std::size_t c = 0; c < e.captions.size(); ++c) out.insert(pair_id(e.image_id, c));
    return out;
}

}  // namespace

TEST_CASE("variant names round trip") {
    for (auto v : kAllVariants) CHECK(parse_variant(variant_name(v)) == v);
    CHECK(variant_name(VariantName::BothFiltered) == "both_filtered");
    CHECK_FALSE(parse_variant("cleaned").has_value());
}

TEST_CASE("unfiltered variant is id sorted and hashed by content") {
    const auto v = three_images();
    REQUIRE(v.n_images() == 3);
    CHECK(v.entries[0].image_id == "a");
    CHECK(v.n_pairs() == 4);
    CHECK(v.content_hash.size() == 64);
    auto shuffled = v.entries;
    std::swap(shuffled[0], shuffled[2]);
    CHECK(make_unfiltered(shuffled).content_hash == v.content_hash);
    shuffled[0].captions.push_back("x");
    CHECK(make_unfiltered(shuffled).content_hash != v.content_hash);
}

TEST_CASE("impurity filter in any-flag mode") {
    const auto in = three_images();
    std::vector<classifier::PredictionRecord> preds = {
        prediction("a", {}), prediction("b", {ImpurityCategory::Narrator, ImpurityCategory::TextLogo}),
        prediction("c", {ImpurityCategory::TextLogo})};
    const auto r = filter_dataset(in, preds, {});
    REQUIRE(r.variant.n_images() == 1);
    CHECK(r.variant.entries[0].image_id == "a");
    CHECK(r.variant.parent == VariantName::Unfiltered);
    CHECK(r.n_dropped_images == 2);
    CHECK(r.drop_histogram.at("TEXT_LOGO") == 2);
    CHECK(r.drop_histogram.at("NARRATOR") == 1);
    REQUIRE(r.variant.drops.size() == 2);
    CHECK(r.variant.drops[0].reason == "impurity:NARRATOR,TEXT_LOGO");

    std::size_t hist = 0;
    for (const auto& [_, n] : r.drop_histogram) hist += n;
    CHECK(hist >= r.n_dropped_images);
}

TEST_CASE("impurity filter with all-negative predictions keeps everything") {
    const auto in = three_images();
    std::vector<classifier::PredictionRecord> preds = {prediction("a", {}), prediction("b", {}), prediction("c", {})};
    const auto r = filter_dataset(in, preds, {});
    CHECK(r.variant.entries == in.entries);
    CHECK(r.variant.drops.empty());
    CHECK(r.n_dropped_images == 0);
}

TEST_CASE("per-category mode and threshold override") {
    const auto in = three_images();
    std::vector<classifier::PredictionRecord> preds = {
        prediction("a", {}), prediction("b", {ImpurityCategory::Narrator}), prediction("c", {ImpurityCategory::TextLogo})};
    ImpurityFilterConfig cfg;
    cfg.mode = FilterMode::PerCategory;
    cfg.categories[index_of(ImpurityCategory::Narrator)] = true;
    auto r = filter_dataset(in, preds, cfg);
    CHECK(r.variant.n_images() == 2);
    CHECK(r.drop_histogram.at("TEXT_LOGO") == 0);

    ImpurityFilterConfig strict;
    classifier::Thresholds t;
    t.fill(0.9);
    strict.thresholds = t;
    r = filter_dataset(in, preds, strict);
    CHECK(r.variant.n_images() == 3);
    t.fill(0.0);
    strict.thresholds = t;
    r = filter_dataset(in, preds, strict);
    CHECK(r.variant.n_images() == 0);
}

TEST_CASE("missing and failed predictions") {
    const auto in = three_images();
    std::vector<classifier::PredictionRecord> preds = {prediction("a", {}), prediction("b", {})};
    CHECK_THROWS_AS(filter_dataset(in, preds, {}), MissingPrediction);
    auto bad = prediction("c", {});
    bad.error = "UndecodableImage";
    preds.push_back(bad);
    const auto r = filter_dataset(in, preds, {});
    CHECK(r.variant.n_images() == 2);
    REQUIRE(r.variant.drops.size() == 1);
    CHECK(r.variant.drops[0].reason == "unscorable:UndecodableImage");
    CHECK(r.drop_histogram.at("UNSCORABLE") == 1);
}

TEST_CASE("oracle predictions keep exactly the clean images") {
    qc_test::TempDir tmp;
    synthetic::generate_base_tiles(tmp / "tiles", 4, 64, 1);
    synthetic::CorpusConfig cfg;
    cfg.n = 60;
    cfg.seed = 3;
    cfg.width = cfg.height = 64;
    const auto corpus = synthetic::generate_corpus(synthetic::load_base_images(tmp / "tiles"), cfg, tmp / "corpus");
    const auto r = filter_dataset(make_unfiltered(corpus.manifest), qc_test::oracle_predictions(corpus.labels), {});
    std::set<std::string> clean, kept;
    for (const auto& l : corpus.labels)
        if (!l.labels.any()) clean.insert(l.image_id);
    for (const auto& e : r.variant.entries) kept.insert(e.image_id);
    CHECK(kept == clean);
    CHECK(r.n_dropped_images == corpus.labels.size() - clean.size());
}

TEST_CASE("restrict_pairs logs each dropped pair once") {
    const auto in = three_images();
    std::vector<semantic::PairScore> kept = {{"a", 1, 0.5, "s"}, {"c", 0, 0.4, "s"}};
    std::vector<semantic::PairFailure> failed = {{"b", 0, "ScorerFailure", "x"}};
    const auto out = restrict_pairs(in, VariantName::SemanticFiltered, kept, failed, "semantic:not_above_median", {});
    REQUIRE(out.n_images() == 2);
    CHECK(out.entries[0].captions == std::vector<std::string>{"a1"});
    REQUIRE(out.drops.size() == 2);
    std::map<std::string, std::string> reasons;
    for (const auto& d : out.drops) reasons[pair_id(d.image_id, d.caption_index)] = d.reason;
    CHECK(reasons.at("a#0") == "semantic:not_above_median");
    CHECK(reasons.at("b#0") == "semantic:score_failed:ScorerFailure");
}

TEST_CASE("prompt derivation") {
    CHECK(condition_key("Breast", "Invasive Carcinoma") == "breast__invasive-carcinoma");
    CHECK(render_template(kDefaultTemplate, "colon", "adenocarcinoma") ==
          "a histopathology image of adenocarcinoma in the colon");
    CHECK(render_template("{organ}/{organ}", "x", "y") == "x/x");

    std::vector<ReferenceRow> rows = {
        {"1.png", "lung", "squamous cell carcinoma"}, {"2.png", "colon", "adenocarcinoma"},
        {"3.png", "lung", "squamous cell carcinoma"}};
    const auto specs = derive_prompts(rows);
    REQUIRE(specs.size() == 2);
    CHECK(specs[0].condition_key == "colon__adenocarcinoma");
    CHECK(specs[1].prompt_text == "a histopathology image of squamous cell carcinoma in the lung");
    CHECK(specs[1].template_id == kDefaultTemplateId);
    CHECK(derive_prompts(rows, "{organ}", "t2")[0].template_id == "t2");

    rows.push_back({"4.png", " ", "x"});
    CHECK_THROWS_AS(derive_prompts(rows), EmptyField);
}

TEST_CASE("generation counts are split evenly") {
    auto specs_for = [](std::size_t n) {
        std::vector<PromptSpec> out;
        for (std::size_t i = 0; i < n; ++i) out.push_back({"k" + std::to_string(i), "o", "t", "p", "id"});
        return out;
    };
    auto three = allocate_counts(specs_for(3), 10);
    CHECK(three["k0"] == 4);
    CHECK(three["k1"] == 3);
    CHECK(three["k2"] == 3);
    for (const auto& [k, n] : allocate_counts(specs_for(8), 10000)) CHECK(n == 1250);
    std::size_t total = 0;
    for (const auto& [k, n] : allocate_counts(specs_for(7), 1001)) total += n;
    CHECK(total == 1001);
}

TEST_CASE("reference crops") {
    qc_test::TempDir tmp;
    qc_test::write_reference_set(tmp.path(), 6, 80, 4);
    write_png(tmp / "images/tiny.png", Image(20, 20));
    auto rows = read_reference_rows(tmp / "metadata.jsonl");
    rows.push_back({"images/tiny.png", "breast", "invasive carcinoma"});
    rows.push_back({"images/missing.png", "breast", "invasive carcinoma"});

    const auto a = sample_reference_crops(rows, tmp.path(), 32, 3, 11);
    const auto b = sample_reference_crops(rows, tmp.path(), 32, 3, 11);
    CHECK(a.records.size() == 18);
    CHECK(a.skipped.size() == 2);
    std::size_t n = 0;
    for (const auto& [k, imgs] : a.by_condition) {
        n += imgs.size();
        for (const auto& img : imgs) {
            CHECK(img.width == 32);
            CHECK(img.height == 32);
        }
        REQUIRE(b.by_condition.at(k).size() == imgs.size());
        for (std::size_t i = 0; i < imgs.size(); ++i) CHECK(imgs[i].pixels == b.by_condition.at(k)[i].pixels);
    }
    CHECK(n == 18);
    for (const auto& r : a.records) {
        CHECK(r.x >= 0);
        CHECK(r.x + r.size <= 80);
        CHECK(r.y + r.size <= 80);
    }
    const auto c = sample_reference_crops(rows, tmp.path(), 32, 3, 12);
    CHECK(c.records[0].x * 1000 + c.records[0].y != a.records[0].x * 1000 + a.records[0].y);

    const auto fixed = sample_reference_crops(rows, tmp.path(), 32, 3, 11, std::size_t{20});
    CHECK(fixed.records.size() == 20);
}

TEST_CASE("stub generation produces exact counts and resumes") {
    qc_test::TempDir tmp;
    std::vector<PromptSpec> specs = {{"a", "o", "t", "p1", "id"}, {"b", "o", "t", "p2", "id"}};
    StubNoiseAdapter stub;
    const auto set = run_generation(stub, specs, 7, 1, tmp / "gen", "unfiltered", tmp / "m.jsonl", 24);
    CHECK(set.by_condition.at("a").size() == 4);
    CHECK(set.by_condition.at("b").size() == 3);
    CHECK(list_images(tmp / "gen" / "a").size() == 4);
    const auto img = read_image(set.by_condition.at("a")[0]);
    CHECK(img.width == 24);

    const auto before = read_file_bytes(set.by_condition.at("b")[0]);
    const auto again = run_generation(stub, specs, 7, 1, tmp / "gen", "unfiltered", tmp / "m.jsonl", 24);
    CHECK(again.by_condition.at("b") == set.by_condition.at("b"));
    CHECK(read_file_bytes(again.by_condition.at("b")[0]) == before);

    qc_test::TempDir other;
    const auto fresh = run_generation(stub, specs, 7, 1, other / "gen", "unfiltered", tmp / "m.jsonl", 24);
    CHECK(read_file_bytes(fresh.by_condition.at("b")[0]) == before);
}

TEST_CASE("command adapter") {
    qc_test::TempDir tmp;
    CommandAdapter quoting("cmd", "echo {prompt} {count}");
    GenerationRequest req;
    req.prompt.prompt_text = "it's";
    req.count = 3;
    CHECK(quoting.render(req) == "echo 'it'\\''s' 3");

    std::vector<PromptSpec> specs = {{"a", "o", "t", "p", "id"}};
    CHECK_THROWS_AS(run_generation(CommandAdapter("fails", "false"), specs, 2, 1, tmp / "g", "v", tmp / "m", 16),
                    AdapterFailure);
    CHECK_THROWS_AS(run_generation(CommandAdapter("lazy", "true"), specs, 2, 1, tmp / "g", "v", tmp / "m", 16),
                    AdapterFailure);
    CHECK_THROWS_AS(CommandAdapter("p", "true", "false").probe(), AdapterFailure);
    CHECK_THROWS_AS(make_adapter("nope"), InvalidArgument);
}

TEST_CASE("markdown report marks missing cells") {
    json rep = {{"variant_order", {"unfiltered", "both_filtered"}},
                {"references", {"ref-a"}},
                {"extractor_id", "x"},
                {"fid", {{"unfiltered", {{"ref-a", {{"mean", 12.5}}}}}, {"both_filtered", {{"ref-a", nullptr}}}}}};
    const auto md = render_markdown(rep);
    CHECK(md.find("n/a") != std::string::npos);
    CHECK(md.find("12.5") != std::string::npos);
}

// --- configuration --------------------------------------------------------------------

TEST_CASE("config parsing") {
    const auto base = "manifest: m.jsonl\n"
                      "predictions:\n  file: p.jsonl\n";
    const auto c = parse_config(base, "/cfg");
    CHECK(c.manifest == fs::path("/cfg/m.jsonl"));
    CHECK(c.image_base_dir == fs::path("/cfg"));
    CHECK(c.variants.size() == 4);
    CHECK(c.scorer == "stub-hash-v1");

    const auto per_cat = parse_config(std::string(base) +
                                          "filter:\n  mode: per_category\n  categories: [NARRATOR, MULTI_PANEL]\n"
                                          "  thresholds: {NARRATOR: 0.7}\n",
                                      "/cfg");
    CHECK(per_cat.filter.mode == FilterMode::PerCategory);
    CHECK(per_cat.filter.categories[0]);
    CHECK(per_cat.filter.categories[7]);
    CHECK_FALSE(per_cat.filter.categories[1]);
    REQUIRE(per_cat.filter.thresholds);
    CHECK((*per_cat.filter.thresholds)[0] == doctest::Approx(0.7));
    CHECK((*per_cat.filter.thresholds)[1] == doctest::Approx(0.5));

    CHECK_THROWS_AS(parse_config("seed: 1\n", "/cfg"), ConfigError);
    CHECK_THROWS_AS(parse_config(std::string(base) + "bogus: 1\n", "/cfg"), ConfigError);
    CHECK_THROWS_AS(parse_config(std::string(base) + "filter:\n  mode: sometimes\n", "/cfg"), ConfigError);
    CHECK_THROWS_AS(parse_config(std::string(base) + "filter:\n  categories: [NOPE]\n", "/cfg"), ConfigError);
    CHECK_THROWS_AS(parse_config(std::string(base) + "variants: [cleaned]\n", "/cfg"), ConfigError);
    CHECK_THROWS_AS(parse_config("manifest: m.jsonl\nvariants: [impurity_filtered]\n", "/cfg"), ConfigError);
    CHECK_NOTHROW(parse_config("manifest: m.jsonl\nvariants: [unfiltered, semantic_filtered]\n", "/cfg"));
    CHECK_THROWS_AS(parse_config("manifest: [", "/cfg"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/pipeline.yaml"), ConfigError);
}

TEST_CASE("stage names and exit codes") {
    CHECK(parse_stage("derive-prompts") == Stage::Prompts);
    CHECK(stage_name(Stage::Fid) == "fid");
    CHECK_FALSE(parse_stage("train").has_value());
    CHECK(exit_code_for(ConfigError("x")) == 2);
    CHECK(exit_code_for(MissingPrediction("x")) == 2);
    CHECK(exit_code_for(AdapterFailure("x")) == 3);
    CHECK(exit_code_for(IoError("x")) == 3);
}

// --- end to end ------------------------------------------------------------------------

TEST_CASE("pipeline outputs, subset chain and drop partition") {
    qc_test::TempDir tmp;
    const auto fx = qc_test::make_pipeline_fixture(tmp.path());
    const auto cfg = load_config(fx.config);
    std::ostringstream log;
    run(cfg, Stage::Report, {false, &log});
    const auto out = tmp / "out";

    const auto report = read_json(out / "report.json");
    CHECK(report["variant_order"].size() == 4);
    std::size_t cells = 0;
    for (const auto& [v, row] : report["fid"].items())
        for (const auto& [r, cell] : row.items()) {
            REQUIRE(cell.is_object());
            CHECK(cell["mean"].get<double>() >= 0.0);
            ++cells;
        }
    CHECK(cells == 8);
    CHECK(report["composition_order"] == json::array({"impurity", "semantic"}));
    CHECK(fs::exists(out / "report.md"));

    std::map<std::string, std::vector<manifest::ManifestEntry>> variants;
    for (auto v : kAllVariants) {
        const std::string n(variant_name(v));
        variants[n] = load_entries(out / "variants" / (n + ".jsonl"));
    }
    const auto unfiltered = pairs_of(variants["unfiltered"]);
    auto subset = [](const std::set<std::string>& a, const std::set<std::string>& b) {
        return std::includes(b.begin(), b.end(), a.begin(), a.end());
    };
    CHECK(subset(pairs_of(variants["impurity_filtered"]), unfiltered));
    CHECK(subset(pairs_of(variants["semantic_filtered"]), unfiltered));
    CHECK(subset(pairs_of(variants["both_filtered"]), pairs_of(variants["impurity_filtered"])));
    CHECK(pairs_of(variants["both_filtered"]).size() < pairs_of(variants["impurity_filtered"]).size());

    // kept pairs and logged drops partition the parent
    for (const auto& entry : read_json(out / "variants" / "index.json")) {
        if (entry["parent"].is_null()) continue;
        const auto parent = pairs_of(variants[entry["parent"].get<std::string>()]);
        const auto kept = pairs_of(variants[entry["name"].get<std::string>()]);
        std::set<std::string> dropped;
        const auto parent_entries = variants[entry["parent"].get<std::string>()];
        for (const auto& line : read_jsonl(out / entry["drops"].get<std::string>())) {
            const auto id = line.value["image_id"].get<std::string>();
            CHECK(dropped.insert(pair_id(id, line.value["caption_index"].get<std::size_t>())).second);
        }
        std::set<std::string> both;
        std::set_union(kept.begin(), kept.end(), dropped.begin(), dropped.end(), std::inserter(both, both.end()));
        CHECK(both.size() == kept.size() + dropped.size());
        CHECK(entry["n_pairs"] == kept.size());
        CHECK(entry["n_dropped_pairs"] == dropped.size());
        if (entry["name"] != "both_filtered") CHECK(both == parent);
    }
}

TEST_CASE("stage markers skip unchanged stages and rerun on change") {
    qc_test::TempDir tmp;
    const auto fx = qc_test::make_pipeline_fixture(tmp.path(), 24);
    auto cfg = load_config(fx.config);
    std::ostringstream first;
    run(cfg, Stage::Crops, {false, &first});
    CHECK(first.str().find("[filter] running") != std::string::npos);
    CHECK(first.str().find("[generate]") == std::string::npos);
    CHECK(fs::exists(tmp / "out/.stages/crops.done"));

    std::ostringstream second;
    run(cfg, Stage::Crops, {false, &second});
    CHECK(second.str().find("[filter] up to date") != std::string::npos);
    CHECK(second.str().find("[crops] up to date") != std::string::npos);

    cfg.references[0].crops_per_image = 2;
    std::ostringstream third;
    run(cfg, Stage::Crops, {false, &third});
    CHECK(third.str().find("[filter] up to date") != std::string::npos);
    CHECK(third.str().find("[crops] running") != std::string::npos);

    std::ostringstream forced;
    run(cfg, Stage::Prompts, {true, &forced});
    CHECK(forced.str().find("[filter] running") != std::string::npos);
}

TEST_CASE("failing generator surfaces as AdapterFailure") {
    qc_test::TempDir tmp;
    const auto fx = qc_test::make_pipeline_fixture(tmp.path(), 16);
    auto cfg = load_config(fx.config);
    cfg.adapter = "command:broken";
    cfg.adapter_command = "false";
    CHECK_THROWS_AS(run(cfg), AdapterFailure);
    CHECK(fs::exists(tmp / "out/.stages/crops.done"));
    CHECK_FALSE(fs::exists(tmp / "out/.stages/generate.done"));
}
