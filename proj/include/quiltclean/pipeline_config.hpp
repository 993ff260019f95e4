#pragma once

#include "quiltclean/core/error.hpp"
#include "quiltclean/pipeline.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace quiltclean::pipeline {

struct ReferenceConfig {
    std::string name;
    std::filesystem::path metadata;  // JSONL rows {image_path, organ, tumor_type}
    std::filesystem::path base_dir;  // image paths are relative to this
    int crop_size = 64;
    std::size_t crops_per_image = 4;
    std::optional<std::size_t> total_crops;
};

/// Parsed pipeline.yaml. Relative paths are resolved against the directory
/// holding the config file.
struct PipelineConfig {
    std::filesystem::path out_dir;
    std::uint64_t seed = 0;
    std::size_t workers = 0;

    std::filesystem::path manifest;
    std::filesystem::path image_base_dir;  // defaults to the manifest's directory
    std::optional<std::filesystem::path> predictions_file;
    std::optional<std::filesystem::path> checkpoint;

    ImpurityFilterConfig filter;

    std::string scorer = "stub-hash-v1";
    std::filesystem::path scorer_embeddings;
    std::string semantic_population = "survivors";  // or "full"

    std::string prompt_template = kDefaultTemplate;
    std::string template_id = kDefaultTemplateId;

    std::vector<ReferenceConfig> references;

    std::string adapter = "stub-noise-v1";
    std::string adapter_command;
    std::string adapter_probe;
    std::size_t generation_total = 100;
    int image_size = 64;

    std::vector<VariantName> variants{kAllVariants.begin(), kAllVariants.end()};
    std::string extractor = "color-texture-v1";

    std::optional<std::filesystem::path> evaluation_labels;
};

/// Throws ConfigError with the offending key.
PipelineConfig load_config(const std::filesystem::path& yaml_path);
PipelineConfig parse_config(const std::string& yaml_text, const std::filesystem::path& config_dir);

/// Stages in execution order.
enum class Stage { Filter, Prompts, Crops, Generate, Fid, Report };

std::string_view stage_name(Stage s) noexcept;
std::optional<Stage> parse_stage(std::string_view s) noexcept;

struct RunOptions {
    bool force = false;  // ignore completion markers
    std::ostream* log = nullptr;
};

/// Runs every stage up to and including `last`. A stage whose completion
/// marker matches its input hash is skipped. Errors propagate; outputs of
/// completed stages stay on disk so the run can resume.
void run(const PipelineConfig& config, Stage last = Stage::Report, const RunOptions& options = {});

/// 2 for input and configuration problems, 3 for everything else.
int exit_code_for(const Error& e) noexcept;

}  // namespace quiltclean::pipeline
