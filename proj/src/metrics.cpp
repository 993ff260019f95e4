#include "quiltclean/metrics.hpp"

#include "quiltclean/core/error.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>

namespace quiltclean::metrics {

ConfusionCounts confusion(std::span<const bool> predicted, std::span<const bool> truth) {
    if (predicted.size() != truth.size())
        throw LengthMismatch("confusion: " + std::to_string(predicted.size()) + " predictions vs " +
                             std::to_string(truth.size()) + " labels");
    if (predicted.empty()) throw InvalidArgument("confusion: empty input");
    ConfusionCounts c;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i]) {
            predicted[i] ? ++c.tp : ++c.fn;
        } else {
            predicted[i] ? ++c.fp : ++c.tn;
        }
    }
    return c;
}

namespace {

std::optional<double> ratio(std::size_t num, std::size_t den) noexcept {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

std::optional<double> accuracy(const ConfusionCounts& c) noexcept { return ratio(c.tp + c.tn, c.total()); }
std::optional<double> recall(const ConfusionCounts& c) noexcept { return ratio(c.tp, c.tp + c.fn); }
std::optional<double> specificity(const ConfusionCounts& c) noexcept { return ratio(c.tn, c.tn + c.fp); }
std::optional<double> precision(const ConfusionCounts& c) noexcept { return ratio(c.tp, c.tp + c.fp); }

std::optional<double> roc_auc(std::span<const double> scores, std::span<const bool> truth) {
    if (scores.size() != truth.size()) throw LengthMismatch("roc_auc: scores and labels differ in length");
    for (double s : scores)
        if (!std::isfinite(s)) throw InvalidArgument("roc_auc: non-finite score");
    const auto n_pos = static_cast<std::size_t>(std::count(truth.begin(), truth.end(), true));
    const std::size_t n_neg = truth.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Sum of midranks (1-based) of the positives.
    double pos_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i + 1;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k)
            if (truth[order[k]]) pos_rank_sum += midrank;
        i = j;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    const double u = pos_rank_sum - np * (np + 1.0) / 2.0;
    return u / (np * nn);
}

namespace {

constexpr Eigen::Index kLeafRows = 32;

Eigen::VectorXd pairwise_sum(const Eigen::MatrixXd& x, Eigen::Index begin, Eigen::Index end) {
    if (end - begin <= kLeafRows) return x.middleRows(begin, end - begin).colwise().sum().transpose();
    const auto mid = begin + (end - begin) / 2;
    return pairwise_sum(x, begin, mid) + pairwise_sum(x, mid, end);
}

Eigen::MatrixXd pairwise_scatter(const Eigen::MatrixXd& centered, Eigen::Index begin, Eigen::Index end) {
    if (end - begin <= kLeafRows) {
        const auto block = centered.middleRows(begin, end - begin);
        return block.transpose() * block;
    }
    const auto mid = begin + (end - begin) / 2;
    return pairwise_scatter(centered, begin, mid) + pairwise_scatter(centered, mid, end);
}

void check_symmetric_psd(const Eigen::MatrixXd& cov, const char* which) {
    if (cov.rows() != cov.cols()) throw DimensionMismatch(std::string(which) + " covariance is not square");
    const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
        throw NonPSD(std::string(which) + " covariance is not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().size() > 0 && es.eigenvalues().minCoeff() < -1e-6 * scale)
        throw NonPSD(std::string(which) + " covariance has a negative eigenvalue " +
                     std::to_string(es.eigenvalues().minCoeff()));
}

}  // namespace

GaussianStats estimate_stats(const Eigen::MatrixXd& features) {
    const auto n = features.rows();
    if (n < 2) throw TooFewSamples("estimate_stats needs at least 2 samples, got " + std::to_string(n));
    GaussianStats s;
    s.n = static_cast<std::size_t>(n);
    s.mean = pairwise_sum(features, 0, n) / static_cast<double>(n);
    const Eigen::MatrixXd centered = features.rowwise() - s.mean.transpose();
    s.cov = pairwise_scatter(centered, 0, n) / static_cast<double>(n - 1);
    s.cov = (0.5 * (s.cov + s.cov.transpose())).eval();
    return s;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, double floor) {
    const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    Eigen::VectorXd roots = es.eigenvalues().unaryExpr([floor](double v) { return v < floor ? 0.0 : std::sqrt(v); });
    return es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
    if (a.dim() != b.dim() || a.cov.rows() != a.dim() || b.cov.rows() != b.dim())
        throw DimensionMismatch("frechet_distance: dimensions " + std::to_string(a.dim()) + " and " +
                                std::to_string(b.dim()));
    check_symmetric_psd(a.cov, "first");
    check_symmetric_psd(b.cov, "second");

    const double mean_term = (a.mean - b.mean).squaredNorm();
    const Eigen::MatrixXd root_a = psd_sqrt(a.cov);
    Eigen::MatrixXd inner = root_a * b.cov * root_a;
    inner = (0.5 * (inner + inner.transpose())).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner, Eigen::EigenvaluesOnly);
    double trace_sqrt = 0.0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        const double v = es.eigenvalues()[i];
        if (v >= 1e-10) trace_sqrt += std::sqrt(v);
    }
    const double d = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * trace_sqrt;
    return std::max(0.0, d);
}

ConditionalFid conditional_fid(const std::map<std::string, GaussianStats>& generated,
                               const std::map<std::string, GaussianStats>& reference) {
    ConditionalFid out;
    for (const auto& [key, gen] : generated) {
        auto it = reference.find(key);
        if (it == reference.end()) {
            out.skipped.push_back(key);
            continue;
        }
        out.per_condition[key] = frechet_distance(gen, it->second);
    }
    for (const auto& [key, _] : reference)
        if (!generated.contains(key)) out.skipped.push_back(key);
    std::sort(out.skipped.begin(), out.skipped.end());
    if (out.per_condition.empty()) throw NoSharedConditions("generated and reference sets share no condition key");
    double sum = 0.0;
    for (const auto& [_, v] : out.per_condition) sum += v;
    out.mean = sum / static_cast<double>(out.per_condition.size());
    return out;
}

ConditionalFid conditional_fid(const std::map<std::string, Eigen::MatrixXd>& generated,
                               const std::map<std::string, Eigen::MatrixXd>& reference) {
    std::map<std::string, GaussianStats> g, r;
    for (const auto& [k, f] : generated)
        if (reference.contains(k)) g[k] = estimate_stats(f);
        else g[k] = {};
    for (const auto& [k, f] : reference)
        if (generated.contains(k)) r[k] = estimate_stats(f);
        else r[k] = {};
    return conditional_fid(g, r);
}

json to_json(const ConditionalFid& fid) {
    json per = json::object();
    for (const auto& [k, v] : fid.per_condition) per[k] = v;
    return json{{"per_condition", per}, {"mean", fid.mean}, {"skipped", fid.skipped}};
}

MetricsReport build_report(std::span<const ScoredExample> examples,
                           const std::array<double, kNumCategories>& thresholds) {
    if (examples.empty()) throw EmptySet("cannot build a report from an empty test set");
    MetricsReport report;
    report.n = examples.size();
    report.thresholds = thresholds;

    auto make_row = [](std::string category, std::string title, const std::vector<bool>& pred,
                       const std::vector<bool>& truth, const std::vector<double>& scores) {
        // std::vector<bool> has no contiguous storage; copy into plain buffers.
        std::unique_ptr<bool[]> p(new bool[pred.size()]), t(new bool[truth.size()]);
        for (std::size_t i = 0; i < pred.size(); ++i) {
            p[i] = pred[i];
            t[i] = truth[i];
        }
        const std::span<const bool> ps(p.get(), pred.size()), ts(t.get(), truth.size());
        MetricsRow row;
        row.category = std::move(category);
        row.title = std::move(title);
        row.counts = confusion(ps, ts);
        row.accuracy = accuracy(row.counts);
        row.precision = precision(row.counts);
        row.recall = recall(row.counts);
        row.specificity = specificity(row.counts);
        row.auc = roc_auc(scores, ts);
        return row;
    };

    const auto n = examples.size();
    for (auto c : kAllCategories) {
        const auto k = index_of(c);
        std::vector<bool> pred(n), truth(n);
        std::vector<double> scores(n);
        for (std::size_t i = 0; i < n; ++i) {
            pred[i] = examples[i].predicted[k];
            truth[i] = examples[i].truth[k];
            scores[i] = examples[i].probs[k];
        }
        report.rows.push_back(make_row(std::string(category_name(c)), std::string(category_title(c)), pred, truth, scores));
    }

    std::vector<bool> pred(n), truth(n);
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& e = examples[i];
        pred[i] = ImpurityLabelSet(e.predicted).any();
        truth[i] = ImpurityLabelSet(e.truth).any();
        scores[i] = *std::max_element(e.probs.begin(), e.probs.end());
    }
    report.rows.push_back(make_row("any", "Any of the above", pred, truth, scores));
    return report;
}

namespace {

json nullable(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string percent(const std::optional<double>& v) {
    if (!v) return "n/a";
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(2);
    os << *v * 100.0 << "%";
    return os.str();
}

}  // namespace

json to_json(const MetricsReport& report) {
    json rows = json::array();
    for (const auto& r : report.rows) {
        rows.push_back(json{{"category", r.category},
                            {"accuracy", nullable(r.accuracy)},
                            {"precision", nullable(r.precision)},
                            {"recall", nullable(r.recall)},
                            {"specificity", nullable(r.specificity)},
                            {"auc", nullable(r.auc)},
                            {"tp", r.counts.tp},
                            {"fp", r.counts.fp},
                            {"tn", r.counts.tn},
                            {"fn", r.counts.fn}});
    }
    return json{{"n", report.n}, {"thresholds", report.thresholds}, {"rows", rows}};
}

std::string to_markdown(const MetricsReport& report) {
    std::ostringstream os;
    os << "| Impurity | Accuracy | Precision | Recall | Specificity | ROC AUC |\n";
    os << "|---|---:|---:|---:|---:|---:|\n";
    for (const auto& r : report.rows) {
        std::string auc = "n/a";
        if (r.auc) {
            std::ostringstream a;
            a.setf(std::ios::fixed);
            a.precision(4);
            a << *r.auc;
            auc = a.str();
        }
        os << "| " << r.title << " | " << percent(r.accuracy) << " | " << percent(r.precision) << " | "
           << percent(r.recall) << " | " << percent(r.specificity) << " | " << auc << " |\n";
    }
    os << "\nN = " << report.n << "\n";
    return os.str();
}

}  // namespace quiltclean::metrics
