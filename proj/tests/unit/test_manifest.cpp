#include "../support.hpp"

#include "quiltclean/core/error.hpp"
#include "quiltclean/core/hashing.hpp"
#include "quiltclean/core/image.hpp"
#include "quiltclean/manifest.hpp"

#include <doctest.h>

#include <random>
#include <set>

using namespace quiltclean;
using namespace quiltclean::manifest;

namespace {

std::vector<ManifestEntry> make_entries(std::size_t n) {
    std::vector<ManifestEntry> out;
    for (std::size_t i = 0; i < n; ++i) {
        ManifestEntry e;
        e.image_id = "img-" + std::to_string(i);
        e.image_path = "images/" + e.image_id + ".png";
        e.captions = {"caption " + std::to_string(i)};
        out.push_back(e);
    }
    return out;
}

}  // namespace

TEST_CASE("csv rows merge by image_id and drop exact duplicate captions") {
    const std::string csv =
        "image_id,image_path,caption,source\n"
        "a,img/a.png,first,youtube\n"
        "b,img/b.png,\"quoted, with comma\",pubmed\n"
        "a,img/a.png,second,youtube\n"
        "a,img/a.png,first,youtube\n";
    const auto r = parse_manifest(csv, Format::Csv);
    REQUIRE(r.entries.size() == 2);
    CHECK(r.entries[0].image_id == "a");
    CHECK(r.entries[0].captions == std::vector<std::string>{"first", "second"});
    CHECK(r.entries[0].source == Source::YouTube);
    CHECK(r.entries[1].captions[0] == "quoted, with comma");
}

TEST_CASE("conflicting paths: strict throws, lenient reports") {
    const std::string csv =
        "image_id,image_path,caption\n"
        "a,img/a.png,x\n"
        "a,img/other.png,y\n"
        ",img/c.png,z\n";
    CHECK_THROWS_AS(parse_manifest(csv, Format::Csv), DuplicatePathConflict);
    const auto r = parse_manifest(csv, Format::Csv, ParseMode::Lenient);
    CHECK(r.entries.size() == 1);
    REQUIRE(r.issues.size() == 2);
    CHECK(r.issues[0].kind == "DuplicatePathConflict");
    CHECK(r.issues[0].line_no == 3);
    CHECK(r.issues[1].kind == "MalformedRow");
}

TEST_CASE("jsonl manifests round trip") {
    auto entries = make_entries(3);
    entries[1].sha256 = std::string(64, 'a');
    entries[2].captions.push_back("another");
    const auto text = manifest_to_jsonl(entries);
    const auto back = parse_manifest(text, Format::Jsonl);
    CHECK(back.entries == entries);
    CHECK_THROWS_AS(parse_manifest("{\"image_id\": \"x\"}\n", Format::Jsonl), MalformedRow);
    CHECK(format_from_extension("m.csv") == Format::Csv);
    CHECK(format_from_extension("m.jsonl") == Format::Jsonl);
}

TEST_CASE("path resolution") {
    CHECK(resolve_image_path("a/b.png", "/data") == std::filesystem::path("/data/a/b.png"));
    CHECK(resolve_image_path("/abs/b.png", "/data") == std::filesystem::path("/abs/b.png"));
    CHECK(is_remote("https://x/y.png"));
    CHECK_FALSE(is_remote("y.png"));
}

TEST_CASE("one percent sample of the full corpus size") {
    CHECK(round_half_up(0.01 * 653209) == 6532);
    CHECK(round_half_up(0.15 * 6532) == 980);
    CHECK(round_half_up(2.5) == 3);
    CHECK(round_half_up(2.4999) == 2);
}

TEST_CASE("sample_fraction is a deterministic partition") {
    const auto entries = make_entries(101);
    const auto a = sample_fraction(entries, 0.1, 9);
    const auto b = sample_fraction(entries, 0.1, 9);
    CHECK(a.sampled.size() == 10);
    CHECK(a.remainder.size() == 91);
    CHECK(a.sampled == b.sampled);
    std::set<std::string> ids;
    for (const auto& e : a.sampled) ids.insert(e.image_id);
    for (const auto& e : a.remainder) CHECK(ids.insert(e.image_id).second);
    CHECK(ids.size() == 101);
    CHECK(sample_fraction(entries, 0.1, 10).sampled != a.sampled);
    CHECK_THROWS_AS(sample_fraction(entries, 0.0, 1), InvalidArgument);
    CHECK_THROWS_AS(sample_fraction(entries, 1.5, 1), InvalidArgument);
}

TEST_CASE("split sizes") {
    CHECK(split_sizes(6532, {}) == SplitSizes{4572, 980, 980});
    CHECK(split_sizes(10, {}) == SplitSizes{6, 2, 2});
    CHECK_THROWS_AS(split_sizes(10, {0.5, 0.5, 0.5}), InvalidArgument);
    CHECK_THROWS_AS(split_sizes(10, {1.0, 0.0, 0.0}), InvalidArgument);
}

TEST_CASE("split ids partition and ignore input order") {
    std::vector<std::string> ids;
    for (int i = 0; i < 200; ++i) ids.push_back("id" + std::to_string(i));
    const auto a = split_ids(ids, {}, 3);
    std::reverse(ids.begin(), ids.end());
    const auto b = split_ids(ids, {}, 3);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].image_id == b[i].image_id);
        CHECK(a[i].split == b[i].split);
    }
    CHECK(count_splits(a) == split_sizes(200, {}));
    const auto c = split_ids(ids, {}, 4);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) differs |= a[i].split != c[i].split;
    CHECK(differs);
}

TEST_CASE("exemplars stay out of the test split by default") {
    std::vector<LabeledEntry> recs;
    for (auto& e : make_entries(60)) recs.push_back({e, {}});
    for (auto& e : make_entries(40)) {
        e.image_id = "exemplar-" + e.image_id;
        e.source = Source::Exemplar;
        recs.push_back({e, {}});
    }
    const auto s = split(recs, {}, 1);
    std::size_t test_total = 0;
    for (const auto& a : s) {
        if (a.split == Split::Test) {
            ++test_total;
            CHECK(a.image_id.rfind("exemplar-", 0) != 0);
        }
    }
    CHECK(test_total == split_sizes(60, {}).test);
    const auto with = split(recs, {}, 1, true);
    CHECK(count_splits(with) == split_sizes(100, {}));
}

TEST_CASE("split files round trip") {
    qc_test::TempDir tmp;
    const auto a = split_ids({"x", "y", "z", "w"}, {}, 5);
    write_splits(tmp / "s.jsonl", a);
    const auto b = read_splits(tmp / "s.jsonl");
    REQUIRE(b.size() == a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(b[i].image_id == a[i].image_id);
        CHECK(b[i].split == a[i].split);
        CHECK(b[i].seed == 5);
    }
}

TEST_CASE("inject exemplars appends clean records with stable ids") {
    qc_test::TempDir tmp;
    std::filesystem::create_directories(tmp / "ex" / "sub");
    write_png(tmp / "ex" / "b.png", Image(64, 64, {200, 100, 150}));
    write_png(tmp / "ex" / "sub" / "a.png", Image(64, 64, {200, 100, 150}));
    write_text_file(tmp / "ex" / "broken.png", "not a png");
    ImpurityLabelSet flagged = ImpurityLabelSet::only(ImpurityCategory::Narrator);
    std::vector<LabeledEntry> base = {{make_entries(1)[0], flagged}};
    const auto r = inject_clean_exemplars(base, tmp / "ex");
    REQUIRE(r.records.size() == 3);
    CHECK(r.failures.size() == 1);
    CHECK(r.failures[0].kind == "UndecodableImage");
    std::set<std::string> ids;
    for (std::size_t i = 1; i < r.records.size(); ++i) {
        CHECK(r.records[i].entry.source == Source::Exemplar);
        CHECK_FALSE(r.records[i].labels.any());
        CHECK(r.records[i].entry.image_id.rfind("exemplar-", 0) == 0);
        ids.insert(r.records[i].entry.image_id);
    }
    CHECK(ids.size() == 2);
    const auto again = inject_clean_exemplars(base, tmp / "ex");
    CHECK(again.records[1].entry.image_id == r.records[1].entry.image_id);
}

TEST_CASE("verify_images classifies each file") {
    qc_test::TempDir tmp;
    auto entries = make_entries(4);
    std::filesystem::create_directories(tmp / "images");
    write_png(tmp / entries[0].image_path, Image(8, 8));
    write_png(tmp / entries[1].image_path, Image(8, 8));
    entries[1].sha256 = std::string(64, '0');
    write_text_file(tmp / entries[2].image_path, "garbage");
    const auto rep = verify_images(entries, tmp.path(), 2);
    REQUIRE(rep.rows.size() == 4);
    CHECK(rep.rows[0].status == ImageStatus::Ok);
    CHECK(rep.rows[1].status == ImageStatus::HashMismatch);
    CHECK(rep.rows[2].status == ImageStatus::Undecodable);
    CHECK(rep.rows[3].status == ImageStatus::Missing);
    CHECK(rep.counts.size() == 4);
    entries[0].sha256 = sha256_file(tmp / entries[0].image_path);
    CHECK(verify_images(std::span(entries).first(1), tmp.path()).count(ImageStatus::Ok) == 1);
}
