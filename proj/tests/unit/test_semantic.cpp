#include "../support.hpp"

#include "quiltclean/core/error.hpp"
#include "quiltclean/core/files.hpp"
#include "quiltclean/semantic.hpp"
#include "quiltclean/synthetic.hpp"

#include <doctest.h>

using namespace quiltclean;
using namespace quiltclean::semantic;

TEST_CASE("stub scorer is deterministic and bounded") {
    StubHashScorer s;
    const auto img = synthetic::make_tissue_tile(32, 32, 1);
    const double a = s.score("x", img, "caption one");
    CHECK(a == s.score("other-id", img, "caption one"));
    CHECK(a != s.score("x", img, "caption two"));
    CHECK(a >= -1.0);
    CHECK(a <= 1.0);
    CHECK(s.binding().scorer_id == "stub-hash-v1");
    CHECK(s.binding().embedding_dim == 64);
}

TEST_CASE("precomputed scorer uses cosine similarity") {
    qc_test::TempDir tmp;
    write_jsonl(tmp / "e.jsonl", std::vector<json>{{{"kind", "image"}, {"key", "a"}, {"embedding", {1.0, 0.0}}},
                                                   {{"kind", "text"}, {"key", "up"}, {"embedding", {1.0, 1.0}}},
                                                   {{"kind", "text"}, {"key", "zero"}, {"embedding", {0.0, 0.0}}}});
    const auto s = make_scorer("precomputed:toy", tmp / "e.jsonl");
    const Image img(4, 4);
    CHECK(s->score("a", img, "up") == doctest::Approx(std::sqrt(0.5)));
    CHECK_THROWS_AS(s->score("missing", img, "up"), ScorerFailure);
    CHECK_THROWS_AS(s->score("a", img, "zero"), ScorerFailure);
    CHECK_THROWS_AS(make_scorer("precomputed:toy", {}), InvalidArgument);
    CHECK_THROWS_AS(make_scorer("clip-vit", {}), InvalidArgument);
}

TEST_CASE("per-pair failures do not abort the batch") {
    StubHashScorer s;
    const Image img = synthetic::make_tissue_tile(16, 16, 2);
    std::vector<PairInput> pairs = {{"a", 0, &img, "fine"}, {"a", 1, &img, ""}, {"b", 0, nullptr, "x"}};
    const auto r = score_pairs(s, pairs, 2);
    CHECK(r.scores.size() == 1);
    REQUIRE(r.failures.size() == 2);
    CHECK(r.failures[0].kind == "ScorerFailure");
}

TEST_CASE("manifest scoring reports missing images per pair") {
    qc_test::TempDir tmp;
    write_png(tmp / "a.png", synthetic::make_tissue_tile(16, 16, 3));
    std::vector<manifest::ManifestEntry> entries = {{"a", "a.png", {"c1", "c2"}}, {"b", "b.png", {"c1"}}};
    const auto r = score_manifest(StubHashScorer(), entries, tmp.path());
    CHECK(r.scores.size() == 2);
    REQUIRE(r.failures.size() == 1);
    CHECK(r.failures[0].image_id == "b");
    CHECK(r.failures[0].kind == "IoError");
}

TEST_CASE("median filter keeps scores strictly above the median") {
    auto pairs = [](std::vector<double> v) {
        std::vector<PairScore> out;
        for (std::size_t i = 0; i < v.size(); ++i) out.push_back({"i" + std::to_string(i), 0, v[i], "t"});
        return out;
    };
    auto r = median_filter(pairs({0.1, 0.5, 0.3}));
    CHECK(r.median == 0.3);
    REQUIRE(r.kept.size() == 1);
    CHECK(r.kept[0].score == 0.5);
    r = median_filter(pairs({0.1, 0.2, 0.3, 0.4}));
    CHECK(r.median == doctest::Approx(0.25));
    CHECK(r.kept.size() == 2);
    r = median_filter(pairs({0.2, 0.2, 0.2, 0.9}));
    CHECK(r.kept.size() == 1);  // ties at the median are dropped
    CHECK_THROWS_AS(median_filter(pairs({0.4})), TooFewPairs);
    CHECK_THROWS_AS(median(std::vector<double>{}), TooFewPairs);
    const auto s = summary(r);
    CHECK(s["n"] == 4);
    CHECK(s["n_kept"] == 1);
    CHECK(s["n_dropped"] == 3);
}

TEST_CASE("score files round trip and reject duplicates") {
    qc_test::TempDir tmp;
    const std::vector<PairScore> scores = {{"a", 0, 0.25, "stub-hash-v1"}, {"a", 1, -0.5, "stub-hash-v1"}};
    write_scores(tmp / "s.jsonl", scores);
    const auto back = read_scores(tmp / "s.jsonl");
    REQUIRE(back.size() == 2);
    CHECK(back[1].caption_index == 1);
    CHECK(back[1].score == -0.5);
    write_text_file(tmp / "d.jsonl", read_text_file(tmp / "s.jsonl") + to_json(scores[0]).dump() + "\n");
    CHECK_THROWS_AS(read_scores(tmp / "d.jsonl"), MalformedRow);
}

TEST_CASE("split_manifest separates kept and dropped captions") {
    std::vector<manifest::ManifestEntry> entries = {{"a", "a.png", {"c0", "c1"}}, {"b", "b.png", {"c0"}}};
    const std::vector<PairScore> kept = {{"a", 1, 0.9, "t"}};
    const auto s = split_manifest(entries, kept);
    REQUIRE(s.kept.size() == 1);
    CHECK(s.kept[0].captions == std::vector<std::string>{"c1"});
    REQUIRE(s.dropped.size() == 2);
    CHECK(s.dropped[0].captions == std::vector<std::string>{"c0"});
}
