#pragma once

#include "quiltclean/core/image.hpp"
#include "quiltclean/core/rng.hpp"
#include "quiltclean/labels.hpp"
#include "quiltclean/manifest.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace quiltclean::synthetic {

/// Per-category prevalence of the human-annotated 1% sample, used as the
/// default injection rates so synthetic corpora share its label marginals.
inline constexpr std::array<double, kNumCategories> kAnnotatedPrevalence = {
    0.1976, 0.3596, 0.2636, 0.1114, 0.0634, 0.1413, 0.3189, 0.0788,
};

inline constexpr int kMinDimension = 64;

struct ImpurityResult {
    Image image;
    ImpurityLabelSet delta;  // exactly the applied category
    Mask region;             // every pixel the renderer may have changed
};

/// Renders one impurity onto a copy of `image`. Overlay categories only
/// touch pixels inside `region`; LOW_QUALITY degrades the whole frame.
/// Dimensions never change. Throws UnsupportedCategory for MULTI_PANEL and
/// InvalidArgument for images smaller than 64x64.
ImpurityResult apply_impurity(const Image& image, ImpurityCategory category, CounterRng& rng);

struct MultipanelConfig {
    int gutter = 4;
    Rgb gutter_color{255, 255, 255};
};

struct MultipanelResult {
    Image image;
    ImpurityLabelSet labels;
    int rows = 1, cols = 1;
};

/// Grid composite of 2-4 equally sized tiles with `gutter` pixels between
/// panels: 2 tiles go side by side or stacked, 3 in a row or column, 4 in a
/// 2x2 grid. Labels are the OR of the tile labels plus MULTI_PANEL.
/// Throws MixedDimensions or InvalidArgument (tile count).
MultipanelResult compose_multipanel(std::span<const Image> tiles, std::span<const ImpurityLabelSet> tile_labels,
                                    CounterRng& rng, const MultipanelConfig& config = {});

/// Procedural H&E-like tissue texture: eosin background, fibre strokes,
/// haematoxylin nuclei and occasional lumina.
Image make_tissue_tile(int width, int height, std::uint64_t seed);

/// Writes `n` tissue tiles as PNG files tile-00000.png ... under `dir`.
std::vector<std::filesystem::path> generate_base_tiles(const std::filesystem::path& dir, std::size_t n, int size,
                                                       std::uint64_t seed);

/// Loads every decodable image under `dir` (sorted by path). Throws
/// EmptyBaseSet when none is found.
std::vector<Image> load_base_images(const std::filesystem::path& dir);

struct CorpusConfig {
    std::size_t n = 1000;
    std::array<double, kNumCategories> rates = kAnnotatedPrevalence;
    std::uint64_t seed = 0;
    int width = 96;
    int height = 96;
    MultipanelConfig multipanel{};
};

struct Sample {
    Image image;
    ImpurityLabelSet labels;
    std::string caption;
};

/// Record `index` of a corpus; a pure function of (bases, config, index).
/// Each category is drawn independently with its configured rate.
Sample render_sample(std::span<const Image> bases, const CorpusConfig& config, std::size_t index);

struct Corpus {
    std::vector<manifest::ManifestEntry> manifest;
    std::vector<LabelRecord> labels;
};

/// Renders `config.n` records to out_dir/images/syn-XXXXXX.png and writes
/// out_dir/manifest.jsonl and out_dir/labels.jsonl. Image paths in the
/// manifest are relative to out_dir. Throws EmptyBaseSet.
Corpus generate_corpus(std::span<const Image> bases, const CorpusConfig& config,
                       const std::filesystem::path& out_dir, std::size_t workers = 0);

}  // namespace quiltclean::synthetic
