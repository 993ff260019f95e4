#pragma once

#include "quiltclean/classifier.hpp"
#include "quiltclean/core/image.hpp"
#include "quiltclean/features.hpp"
#include "quiltclean/manifest.hpp"
#include "quiltclean/metrics.hpp"
#include "quiltclean/semantic.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace quiltclean::pipeline {

// --- dataset variants ---------------------------------------------------------

enum class VariantName { Unfiltered, ImpurityFiltered, SemanticFiltered, BothFiltered };

inline constexpr std::array<VariantName, 4> kAllVariants = {VariantName::Unfiltered, VariantName::ImpurityFiltered,
                                                            VariantName::SemanticFiltered, VariantName::BothFiltered};

std::string_view variant_name(VariantName v) noexcept;
std::optional<VariantName> parse_variant(std::string_view s) noexcept;

/// One removed image-text pair and why.
struct DropRecord {
    std::string image_id;
    std::size_t caption_index = 0;  // index in the unfiltered entry
    std::string reason;             // "impurity:CAT[,CAT...]" or "semantic:not_above_median"
};

json to_json(const DropRecord& d);

struct DatasetVariant {
    VariantName name = VariantName::Unfiltered;
    std::optional<VariantName> parent;
    std::vector<manifest::ManifestEntry> entries;  // sorted by image_id
    json filter_params = json::object();
    std::string content_hash;
    std::vector<DropRecord> drops;  // relative to the parent

    std::size_t n_images() const noexcept { return entries.size(); }
    std::size_t n_pairs() const noexcept;
};

/// sha256 of the JSONL encoding of the id-sorted entries.
std::string content_hash(std::span<const manifest::ManifestEntry> entries);

DatasetVariant make_unfiltered(std::vector<manifest::ManifestEntry> entries);

enum class FilterMode { AnyFlag, PerCategory };

struct ImpurityFilterConfig {
    FilterMode mode = FilterMode::AnyFlag;
    /// Per-category mode: only these categories cause a drop.
    std::array<bool, kNumCategories> categories{};
    /// When set, flags are recomputed as probs >= threshold.
    std::optional<classifier::Thresholds> thresholds;
};

struct ImpurityFilterResult {
    DatasetVariant variant;
    std::map<std::string, std::size_t> drop_histogram;  // category name -> dropped images carrying it
    std::size_t n_dropped_images = 0;
};

/// Drops every image whose (selected) flags fire. Images whose prediction
/// carries an error are dropped as "unscorable:<kind>". Throws
/// MissingPrediction for a manifest image without any prediction.
ImpurityFilterResult filter_dataset(const DatasetVariant& input,
                                    std::span<const classifier::PredictionRecord> predictions,
                                    const ImpurityFilterConfig& config);

/// Keeps the pairs of `input` that are in `kept`. Caption indices refer to
/// the entries of `input`, which must still carry all their captions.
/// Dropped pairs are logged with `reason`, or "semantic:score_failed:<kind>"
/// for pairs listed in `failures`.
DatasetVariant restrict_pairs(const DatasetVariant& input, VariantName name,
                              std::span<const semantic::PairScore> kept,
                              std::span<const semantic::PairFailure> failures, const std::string& reason,
                              json filter_params);

// --- prompts -------------------------------------------------------------------

inline constexpr const char* kDefaultTemplate = "a histopathology image of {tumor_type} in the {organ}";
inline constexpr const char* kDefaultTemplateId = "organ-tumor-v1";

struct ReferenceRow {
    std::string image_path;
    std::string organ;
    std::string tumor_type;
};

/// JSONL rows `{image_path, organ, tumor_type}`.
std::vector<ReferenceRow> read_reference_rows(const std::filesystem::path& path);

struct PromptSpec {
    std::string condition_key;
    std::string organ;
    std::string tumor_type;
    std::string prompt_text;
    std::string template_id;
};

json to_json(const PromptSpec& p);

/// Lower-case slug "organ__tumor-type".
std::string condition_key(const std::string& organ, const std::string& tumor_type);
std::string render_template(const std::string& templ, const std::string& organ, const std::string& tumor_type);

/// One PromptSpec per distinct (organ, tumor_type), sorted by condition_key.
/// Throws EmptyField for a row with a blank field.
std::vector<PromptSpec> derive_prompts(std::span<const ReferenceRow> rows, const std::string& templ = kDefaultTemplate,
                                       const std::string& template_id = kDefaultTemplateId);

// --- reference crops ---------------------------------------------------------------

struct CropRecord {
    std::string crop_id;
    std::string source;
    std::string condition_key;
    int x = 0, y = 0, size = 0;
};

struct CropSkip {
    std::string source;
    std::string reason;
};

struct CropSet {
    std::map<std::string, std::vector<Image>> by_condition;
    std::vector<CropRecord> records;
    std::vector<CropSkip> skipped;
};

/// `n_per_image` random crops of exactly crop_size from every reference
/// image at least crop_size in both dimensions. With `total_n` the total is
/// spread evenly over the usable images instead (remainder to the first in
/// path order). Deterministic under seed.
CropSet sample_reference_crops(std::span<const ReferenceRow> rows, const std::filesystem::path& base_dir,
                               int crop_size, std::size_t n_per_image, std::uint64_t seed,
                               std::optional<std::size_t> total_n = std::nullopt, std::size_t workers = 0);

// --- generation -------------------------------------------------------------------

struct GenerationRequest {
    std::string variant;
    PromptSpec prompt;
    std::size_t count = 0;
    std::uint64_t seed = 0;
    std::filesystem::path out_dir;
    std::filesystem::path variant_manifest;
    int image_size = 64;
};

/// Contract: after generate() returns, out_dir holds exactly `count`
/// decodable images.
class GeneratorAdapter {
public:
    virtual ~GeneratorAdapter() = default;
    virtual const std::string& id() const = 0;
    /// Throws AdapterFailure when the generator is unusable.
    virtual void probe() const = 0;
    virtual void generate(const GenerationRequest& request) const = 0;
};

/// Seeded smooth-noise images.
class StubNoiseAdapter final : public GeneratorAdapter {
public:
    const std::string& id() const override { return id_; }
    void probe() const override {}
    void generate(const GenerationRequest& request) const override;

private:
    std::string id_ = "stub-noise-v1";
};

/// Runs an external command. Placeholders {prompt} {count} {seed} {out_dir}
/// {variant} {manifest} {size} are substituted shell-quoted.
class CommandAdapter final : public GeneratorAdapter {
public:
    CommandAdapter(std::string id, std::string command_template, std::string probe_command = {});
    const std::string& id() const override { return id_; }
    void probe() const override;
    void generate(const GenerationRequest& request) const override;
    std::string render(const GenerationRequest& request) const;

private:
    std::string id_, template_, probe_;
};

std::unique_ptr<GeneratorAdapter> make_adapter(const std::string& id, const std::string& command = {},
                                               const std::string& probe_command = {});

/// Even split of total_n over prompts; the remainder goes one each to the
/// lexicographically first condition keys.
std::map<std::string, std::size_t> allocate_counts(std::span<const PromptSpec> prompts, std::size_t total_n);

struct GeneratedSet {
    std::map<std::string, std::vector<std::filesystem::path>> by_condition;  // sorted file lists
};

/// Generates into out_dir/<condition_key>/. A condition directory that
/// already holds the requested number of decodable images is reused, so an
/// interrupted run resumes. Throws AdapterFailure.
GeneratedSet run_generation(const GeneratorAdapter& adapter, std::span<const PromptSpec> prompts, std::size_t total_n,
                            std::uint64_t seed, const std::filesystem::path& out_dir, const std::string& variant,
                            const std::filesystem::path& variant_manifest, int image_size);

/// Sorted list of decodable images directly inside `dir`.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

// --- FID --------------------------------------------------------------------------

using GroupedImages = std::map<std::string, std::vector<Image>>;
using GroupedFeatures = std::map<std::string, Eigen::MatrixXd>;

GroupedFeatures extract_grouped(const features::Extractor& extractor, const GroupedImages& images,
                                std::size_t workers = 0);

/// `{variant, reference, extractor_id, n_generated, n_reference,
/// per_condition, mean, skipped}`.
json evaluate_variant(const std::string& variant, const std::string& reference, const GroupedFeatures& generated,
                      const GroupedFeatures& reference_features, const std::string& extractor_id);

// --- report -----------------------------------------------------------------------

/// Markdown table variant x reference -> mean FID ("n/a" where missing).
std::string render_markdown(const json& report);

}  // namespace quiltclean::pipeline
