#pragma once

#include "quiltclean/core/image.hpp"
#include "quiltclean/labels.hpp"
#include "quiltclean/manifest.hpp"
#include "quiltclean/metrics.hpp"
#include "quiltclean/nn/backbones.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace quiltclean::classifier {

using Thresholds = std::array<double, kNumCategories>;

struct TrainConfig {
    std::string backbone = "resnet50d";
    int input_size = 224;
    int batch_size = 32;
    double learning_rate = 1e-3;
    double weight_decay = 1e-4;
    int max_epochs = 50;
    int early_stop_patience = 5;
    std::uint64_t seed = 0;
    std::string augmentation = "standard-v1";
    std::string loss = "per-label-bce-with-logits";
    bool pos_weighting = true;
    bool calibrate_thresholds = false;
    Thresholds binarize_thresholds = {0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5};
    std::size_t workers = 0;

    /// Throws InvalidArgument for any field out of range.
    void validate() const;
};

json to_json(const TrainConfig& c);
/// Keys that are absent keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const json& j);

/// Patience-based stopping on validation loss. Only a strict decrease counts
/// as an improvement. Epochs are 1-based.
class EarlyStopping {
public:
    explicit EarlyStopping(int patience);

    /// Records one epoch; returns true once `patience` epochs have passed
    /// without improvement.
    bool update(double val_loss);

    int best_epoch() const noexcept { return best_epoch_; }
    double best_loss() const noexcept { return best_loss_; }
    int epochs() const noexcept { return epochs_; }
    bool improved_last() const noexcept { return improved_last_; }

private:
    int patience_;
    int epochs_ = 0;
    int best_epoch_ = 0;
    double best_loss_ = 0.0;
    int since_best_ = 0;
    bool improved_last_ = false;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainingRun {
    std::vector<EpochRecord> history;
    int selected_epoch = 0;
    double selected_val_loss = 0.0;
    bool stopped_early = false;
    TrainConfig config;
    std::array<double, kNumCategories> pos_weight{};
    std::optional<std::filesystem::path> checkpoint;
};

json to_json(const TrainingRun& run);

struct Example {
    std::string image_id;
    Image image;
    ImpurityLabelSet labels;
};

/// Weighted per-label binary cross-entropy with logits, averaged over all
/// B x 8 terms. When `grad` is non-null it receives d(loss)/d(logit).
double bce_with_logits(std::span<const float> logits, std::span<const float> targets,
                       const std::array<double, kNumCategories>& pos_weight, std::span<float> grad = {});

/// N_neg / N_pos per category on the given labels (1 when a class is absent).
std::array<double, kNumCategories> positive_weights(std::span<const Example> examples);

/// A trained network plus its preprocessing and binarisation settings.
/// Prediction is const and safe to call from several threads.
class Classifier {
public:
    explicit Classifier(TrainConfig config);

    const TrainConfig& config() const noexcept { return config_; }
    const Thresholds& thresholds() const noexcept { return thresholds_; }
    void set_thresholds(const Thresholds& t);
    const std::array<double, kNumCategories>& pos_weight() const noexcept { return pos_weight_; }
    void set_pos_weight(const std::array<double, kNumCategories>& w) { pos_weight_ = w; }

    nn::Network& network() noexcept { return *net_; }

    /// Sigmoid probabilities for each image.
    std::vector<std::array<double, kNumCategories>> probabilities(std::span<const Image> images) const;
    /// Raw logits for already prepared (input_size square) images.
    nn::Tensor logits(std::span<const Image> prepared) const;

    ImpurityFlags binarize(const std::array<double, kNumCategories>& probs) const noexcept;

    /// Mean weighted loss over a labelled set in inference mode.
    double evaluate_loss(std::span<const Example> examples) const;

    /// Writes weights.bin, config.json (training config, thresholds,
    /// positive weights) and, when given, history.json.
    void save(const std::filesystem::path& dir, const TrainingRun* run = nullptr);
    static Classifier load(const std::filesystem::path& dir);

private:
    TrainConfig config_;
    Thresholds thresholds_;
    std::array<double, kNumCategories> pos_weight_;
    std::unique_ptr<nn::Network> net_;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

struct TrainResult {
    Classifier model;
    TrainingRun run;
};

/// Trains with Adam and restores the weights of the epoch with the lowest
/// validation loss. When `checkpoint_dir` is set the selected model is saved
/// there. Throws EmptySet, SplitLeakage, NonFiniteLoss.
TrainResult train(std::span<const Example> train_set, std::span<const Example> val_set, const TrainConfig& config,
                  const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt,
                  const EpochCallback& on_epoch = {});

/// Per-label threshold maximising Youden's J (recall + specificity - 1) on
/// the given set; 0.5 where a class is missing.
Thresholds calibrate_youden(const Classifier& model, std::span<const Example> examples);

struct PredictionRecord {
    std::string image_id;
    std::array<double, kNumCategories> probs{};
    ImpurityFlags flags{};
    std::optional<std::string> error;  // error kind when the image could not be scored

    bool ok() const noexcept { return !error.has_value(); }
};

json to_json(const PredictionRecord& p);
PredictionRecord prediction_from_json(const json& j);
void write_predictions(const std::filesystem::path& path, std::vector<PredictionRecord> preds);
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);

/// Scores in-memory images in batches.
std::vector<PredictionRecord> predict(const Classifier& model, std::span<const Example> images,
                                      std::size_t batch_size = 32);

/// Scores manifest entries by loading each image from disk. Undecodable or
/// missing files yield a record carrying the error and the batch continues.
std::vector<PredictionRecord> predict(const Classifier& model, std::span<const manifest::ManifestEntry> entries,
                                      const std::filesystem::path& base_dir, std::size_t workers = 0,
                                      std::size_t batch_size = 32);

/// Table-style report on a labelled set. Throws EmptySet.
metrics::MetricsReport evaluate(const Classifier& model, std::span<const Example> test_set);
metrics::MetricsReport evaluate(std::span<const PredictionRecord> predictions, std::span<const LabelRecord> truth,
                                const Thresholds& thresholds);

/// Loads images for labelled records listed in the manifest. Entries
/// without labels are skipped; unreadable images throw.
std::vector<Example> load_examples(std::span<const manifest::ManifestEntry> entries,
                                   std::span<const LabelRecord> labels, const std::filesystem::path& base_dir,
                                   int prepare_size = 0, std::size_t workers = 0);

}  // namespace quiltclean::classifier
