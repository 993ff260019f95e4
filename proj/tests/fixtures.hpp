#pragma once

#include "quiltclean/classifier.hpp"
#include "quiltclean/core/files.hpp"
#include "quiltclean/core/image.hpp"
#include "quiltclean/synthetic.hpp"

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace qc_test {

struct Condition {
    const char* organ;
    const char* tumor;
};

inline const std::vector<Condition>& fixture_conditions() {
    static const std::vector<Condition> c = {
        {"breast", "invasive carcinoma"}, {"colon", "adenocarcinoma"}, {"lung", "squamous cell carcinoma"}};
    return c;
}

// Reference dataset of tissue tiles with organ/tumor metadata cycling over
// the fixture conditions.
inline void write_reference_set(const std::filesystem::path& dir, std::size_t n, int size, std::uint64_t seed) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    std::vector<quiltclean::json> rows;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& c = fixture_conditions()[i % fixture_conditions().size()];
        const std::string name = "images/ref-" + std::to_string(1000 + i) + ".png";
        quiltclean::write_png(dir / name, quiltclean::synthetic::make_tissue_tile(size, size, seed * 1000 + i));
        rows.push_back({{"image_path", name}, {"organ", c.organ}, {"tumor_type", c.tumor}});
    }
    quiltclean::write_jsonl(dir / "metadata.jsonl", rows);
}

// Predictions that reproduce the ground-truth labels exactly.
inline std::vector<quiltclean::classifier::PredictionRecord> oracle_predictions(
    const std::vector<quiltclean::LabelRecord>& labels) {
    std::vector<quiltclean::classifier::PredictionRecord> out;
    for (const auto& l : labels) {
        quiltclean::classifier::PredictionRecord p;
        p.image_id = l.image_id;
        p.flags = l.labels.flags();
        for (std::size_t k = 0; k < quiltclean::kNumCategories; ++k) p.probs[k] = p.flags[k] ? 0.9 : 0.1;
        out.push_back(p);
    }
    return out;
}

struct PipelineFixture {
    std::filesystem::path config;
    std::filesystem::path root;
};

// Small synthetic corpus, oracle predictions, two reference datasets and a
// pipeline.yaml using the stub scorer and stub generator.
inline PipelineFixture make_pipeline_fixture(const std::filesystem::path& root, std::size_t n_images = 40,
                                             const std::string& extra_yaml = "") {
    namespace fs = std::filesystem;
    using namespace quiltclean;
    synthetic::generate_base_tiles(root / "tiles", 8, 96, 3);
    const auto bases = synthetic::load_base_images(root / "tiles");
    synthetic::CorpusConfig cfg;
    cfg.n = n_images;
    cfg.seed = 5;
    const auto corpus = synthetic::generate_corpus(bases, cfg, root / "corpus");
    classifier::write_predictions(root / "preds.jsonl", oracle_predictions(corpus.labels));
    write_reference_set(root / "ref-a", 9, 128, 1);
    write_reference_set(root / "ref-b", 9, 128, 2);
    const auto config = root / "pipeline.yaml";
    std::ofstream out(config);
    out << "seed: 7\n"
           "out_dir: out\n"
           "manifest: corpus/manifest.jsonl\n"
           "predictions:\n"
           "  file: preds.jsonl\n"
           "semantic:\n"
           "  scorer: stub-hash-v1\n"
           "references:\n"
           "  - name: ref-a\n"
           "    metadata: ref-a/metadata.jsonl\n"
           "    crop_size: 48\n"
           "    crops_per_image: 6\n"
           "  - name: ref-b\n"
           "    metadata: ref-b/metadata.jsonl\n"
           "    crop_size: 48\n"
           "    crops_per_image: 6\n"
           "generation:\n"
           "  adapter: stub-noise-v1\n"
           "  total_n: 54\n"
           "  image_size: 48\n"
           "fid:\n"
           "  extractor: color-texture-v1\n"
        << extra_yaml;
    return {config, root};
}

}  // namespace qc_test
