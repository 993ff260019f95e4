#pragma once

#include "quiltclean/core/files.hpp"
#include "quiltclean/labels.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace quiltclean::metrics {

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::size_t total() const noexcept { return tp + fp + tn + fn; }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Four-way partition of (pred, truth) pairs. Throws LengthMismatch on
/// unequal lengths and InvalidArgument on empty input.
ConfusionCounts confusion(std::span<const bool> predicted, std::span<const bool> truth);

// Each returns nullopt when its denominator is zero.
std::optional<double> accuracy(const ConfusionCounts& c) noexcept;
std::optional<double> recall(const ConfusionCounts& c) noexcept;
std::optional<double> specificity(const ConfusionCounts& c) noexcept;
std::optional<double> precision(const ConfusionCounts& c) noexcept;

/// Area under the ROC curve as the Mann-Whitney statistic with midranks for
/// ties: P(pos > neg) + P(pos == neg) / 2 over all positive/negative pairs.
/// O(n log n). nullopt unless both classes are present. Scores must be finite.
std::optional<double> roc_auc(std::span<const double> scores, std::span<const bool> truth);

/// Mean and covariance of a feature sample.
struct GaussianStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    std::size_t n = 0;

    Eigen::Index dim() const noexcept { return mean.size(); }
};

/// Sample mean and unbiased (n - 1) covariance of the rows of `features`,
/// symmetrised. Rows are reduced pairwise, so permuting them changes the
/// result only at rounding level. Throws TooFewSamples for n < 2.
GaussianStats estimate_stats(const Eigen::MatrixXd& features);

/// Principal square root of a symmetric PSD matrix by eigendecomposition;
/// eigenvalues below `floor` are clamped to zero.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, double floor = 1e-10);

/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).
///
/// The trace of (S_a S_b)^{1/2} is taken from the symmetric form
/// S_a^{1/2} S_b S_a^{1/2}, which has the same eigenvalues. Result is
/// clamped at zero. Throws DimensionMismatch or NonPSD.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

struct ConditionalFid {
    std::map<std::string, double> per_condition;
    double mean = 0.0;
    /// Keys present on only one side.
    std::vector<std::string> skipped;
};

/// Per-condition Fréchet distance over shared condition keys, reduced by an
/// unweighted mean. Throws NoSharedConditions.
ConditionalFid conditional_fid(const std::map<std::string, GaussianStats>& generated,
                               const std::map<std::string, GaussianStats>& reference);
ConditionalFid conditional_fid(const std::map<std::string, Eigen::MatrixXd>& generated,
                               const std::map<std::string, Eigen::MatrixXd>& reference);

json to_json(const ConditionalFid& fid);

// ---------------------------------------------------------------------------
// Table-style classification report.

struct MetricsRow {
    std::string category;  // machine name, or "any"
    std::string title;
    std::optional<double> accuracy, precision, recall, specificity, auc;
    ConfusionCounts counts;
};

struct MetricsReport {
    std::vector<MetricsRow> rows;  // 8 category rows in channel order, then "any"
    std::size_t n = 0;
    std::array<double, kNumCategories> thresholds{};

    const MetricsRow& any_row() const { return rows.back(); }
};

/// One evaluated image: classifier scores, binarised flags and ground truth.
struct ScoredExample {
    std::array<double, kNumCategories> probs{};
    ImpurityFlags predicted{};
    ImpurityFlags truth{};
};

/// Per-category rows plus the aggregate row. The aggregate uses the OR of the
/// flags on both sides and the maximum probability as its ROC score.
MetricsReport build_report(std::span<const ScoredExample> examples,
                           const std::array<double, kNumCategories>& thresholds);

json to_json(const MetricsReport& report);
std::string to_markdown(const MetricsReport& report);

}  // namespace quiltclean::metrics
