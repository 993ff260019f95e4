#include "../support.hpp"

#include "quiltclean/core/error.hpp"
#include "quiltclean/labels.hpp"
#include "quiltclean/metrics.hpp"
#include "quiltclean/synthetic.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace quiltclean;

TEST_CASE("category names round trip in channel order") {
    std::size_t i = 0;
    for (auto c : kAllCategories) {
        CHECK(index_of(c) == i++);
        CHECK(parse_category(category_name(c)) == c);
    }
    CHECK(category_name(ImpurityCategory::Narrator) == "NARRATOR");
    CHECK(category_name(ImpurityCategory::MultiPanel) == "MULTI_PANEL");
    CHECK_FALSE(parse_category("narrator").has_value());
}

TEST_CASE("flags json validation") {
    ImpurityFlags f{};
    f[2] = true;
    CHECK(flags_from_json(flags_to_json(f)) == f);
    CHECK_THROWS_AS(flags_from_json(json::array({true, false})), InvalidArgument);
    CHECK_THROWS_AS(flags_from_json(json::array({1, 0, 0, 0, 0, 0, 0, 0})), InvalidArgument);
}

TEST_CASE("label files are sorted on write and read back") {
    qc_test::TempDir tmp;
    std::vector<LabelRecord> recs = {{"b", ImpurityLabelSet::only(ImpurityCategory::TextLogo)}, {"a", {}}};
    write_labels(tmp / "l.jsonl", recs);
    const auto back = read_labels(tmp / "l.jsonl");
    REQUIRE(back.size() == 2);
    CHECK(back[0].image_id == "a");
    CHECK(back[1].labels.test(ImpurityCategory::TextLogo));
}

TEST_CASE("prevalence counts") {
    std::vector<ImpurityLabelSet> ls(4);
    ls[0].set(ImpurityCategory::Narrator, true);
    ls[1].set(ImpurityCategory::Narrator, true);
    ls[1].set(ImpurityCategory::MultiPanel, true);
    const auto p = compute_prevalence(ls);
    CHECK(p.n == 4);
    CHECK(p.per_category[0] == doctest::Approx(0.5));
    CHECK(p.per_category[7] == doctest::Approx(0.25));
    CHECK(p.any == doctest::Approx(0.5));
    CHECK_THROWS_AS(compute_prevalence(std::span<const ImpurityLabelSet>{}), EmptyLabels);
}

TEST_CASE("default injection rates equal the annotated per-category prevalence") {
    const std::array<double, kNumCategories> table = {0.1976, 0.3596, 0.2636, 0.1114, 0.0634, 0.1413, 0.3189, 0.0788};
    CHECK(synthetic::kAnnotatedPrevalence == table);
}

TEST_CASE("confusion and rates") {
    const bool pred[] = {true, true, false, false, true};
    const bool truth[] = {true, false, false, true, true};
    const auto c = metrics::confusion(pred, truth);
    CHECK(c == metrics::ConfusionCounts{2, 1, 1, 1});
    CHECK(*metrics::accuracy(c) == doctest::Approx(0.6));
    CHECK(*metrics::recall(c) == doctest::Approx(2.0 / 3.0));
    CHECK(*metrics::specificity(c) == doctest::Approx(0.5));
    CHECK(*metrics::precision(c) == doctest::Approx(2.0 / 3.0));
    const bool none[] = {false, false};
    const bool neg[] = {false, false};
    const auto z = metrics::confusion(none, neg);
    CHECK_FALSE(metrics::recall(z).has_value());
    CHECK_FALSE(metrics::precision(z).has_value());
    CHECK_THROWS_AS(metrics::confusion(std::span<const bool>(pred, 2), std::span<const bool>(truth, 3)), LengthMismatch);
}

TEST_CASE("roc_auc edge cases") {
    const bool t[] = {false, false, true, true};
    const double perfect[] = {0.1, 0.2, 0.8, 0.9};
    const double reversed[] = {0.9, 0.8, 0.2, 0.1};
    const double ties[] = {0.5, 0.5, 0.5, 0.5};
    CHECK(*metrics::roc_auc(perfect, t) == 1.0);
    CHECK(*metrics::roc_auc(reversed, t) == 0.0);
    CHECK(*metrics::roc_auc(ties, t) == 0.5);
    const bool one_class[] = {true, true, true, true};
    CHECK_FALSE(metrics::roc_auc(perfect, one_class).has_value());
    const double bad[] = {0.1, NAN, 0.3, 0.4};
    CHECK_THROWS(metrics::roc_auc(bad, t));
}

TEST_CASE("roc_auc is invariant under strictly increasing maps") {
    std::mt19937 gen(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> s(40), e(40);
        std::unique_ptr<bool[]> truth(new bool[40]);
        for (int i = 0; i < 40; ++i) {
            s[i] = std::uniform_int_distribution<int>(0, 9)(gen);
            e[i] = std::exp(s[i] / 3.0);
            truth[i] = i % 3 == 0;
        }
        CHECK(*metrics::roc_auc(s, {truth.get(), 40}) == doctest::Approx(*metrics::roc_auc(e, {truth.get(), 40})));
    }
}

TEST_CASE("gaussian stats and psd sqrt") {
    Eigen::MatrixXd x(4, 2);
    x << 1, 2, 3, 4, 5, 6, 7, 9;
    const auto s = metrics::estimate_stats(x);
    CHECK(s.n == 4);
    CHECK(s.mean(0) == doctest::Approx(4.0));
    CHECK(s.cov(0, 0) == doctest::Approx(20.0 / 3.0));
    CHECK(s.cov(0, 1) == doctest::Approx(s.cov(1, 0)));
    CHECK_THROWS_AS(metrics::estimate_stats(Eigen::MatrixXd::Ones(1, 3)), TooFewSamples);

    Eigen::MatrixXd a(2, 2);
    a << 4, 1, 1, 3;
    const auto r = metrics::psd_sqrt(a);
    CHECK((r * r - a).norm() < 1e-10);
}

TEST_CASE("frechet distance errors and bounds") {
    metrics::GaussianStats a, b;
    a.mean = Eigen::VectorXd::Zero(2);
    a.cov = Eigen::MatrixXd::Identity(2, 2);
    b.mean = Eigen::VectorXd::Zero(3);
    b.cov = Eigen::MatrixXd::Identity(3, 3);
    CHECK_THROWS_AS(metrics::frechet_distance(a, b), DimensionMismatch);
    b.mean = Eigen::VectorXd::Zero(2);
    b.cov = Eigen::MatrixXd::Identity(2, 2);
    b.cov(0, 0) = -1.0;
    CHECK_THROWS_AS(metrics::frechet_distance(a, b), NonPSD);
    b.cov = 4.0 * Eigen::MatrixXd::Identity(2, 2);
    // per dimension (1 - 2)^2
    CHECK(metrics::frechet_distance(a, b) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("conditional fid is an unweighted mean over shared keys") {
    auto st = [](double m, double v) {
        metrics::GaussianStats s;
        s.mean = Eigen::VectorXd::Constant(1, m);
        s.cov = Eigen::MatrixXd::Constant(1, 1, v);
        s.n = 10;
        return s;
    };
    std::map<std::string, metrics::GaussianStats> gen = {{"a", st(1, 1)}, {"b", st(0, 4)}, {"only-gen", st(0, 1)}};
    std::map<std::string, metrics::GaussianStats> ref = {{"a", st(0, 1)}, {"b", st(0, 1)}, {"only-ref", st(0, 1)}};
    const auto f = metrics::conditional_fid(gen, ref);
    CHECK(f.per_condition.at("a") == doctest::Approx(1.0));
    CHECK(f.per_condition.at("b") == doctest::Approx(1.0));
    CHECK(f.mean == doctest::Approx(1.0));
    CHECK(f.skipped == std::vector<std::string>{"only-gen", "only-ref"});
    std::map<std::string, metrics::GaussianStats> other = {{"z", st(0, 1)}};
    CHECK_THROWS_AS(metrics::conditional_fid(gen, other), NoSharedConditions);
}

TEST_CASE("report rows: eight categories then the aggregate") {
    std::vector<metrics::ScoredExample> ex(4);
    ex[0].truth[0] = true;
    ex[0].predicted[0] = true;
    ex[0].probs[0] = 0.9;
    ex[1].truth[3] = true;
    ex[1].probs[3] = 0.4;
    ex[2].predicted[5] = true;
    ex[2].probs[5] = 0.7;
    std::array<double, kNumCategories> th;
    th.fill(0.5);
    const auto r = metrics::build_report(ex, th);
    REQUIRE(r.rows.size() == 9);
    CHECK(r.any_row().category == "any");
    CHECK(r.any_row().counts == metrics::ConfusionCounts{1, 1, 1, 1});
    const auto j = metrics::to_json(r);
    CHECK(j["rows"].size() == 9);
    CHECK(j["rows"][0]["category"] == "NARRATOR");
    CHECK(j["rows"][0].contains("specificity"));
    CHECK(metrics::to_markdown(r).find("Any of the above") != std::string::npos);
    CHECK_THROWS_AS(metrics::build_report({}, th), EmptySet);
}
