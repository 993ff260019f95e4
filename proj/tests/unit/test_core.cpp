#include "../support.hpp"

#include "quiltclean/core/error.hpp"
#include "quiltclean/core/files.hpp"
#include "quiltclean/core/hashing.hpp"
#include "quiltclean/core/image.hpp"
#include "quiltclean/core/parallel.hpp"
#include "quiltclean/core/rng.hpp"

#include <doctest.h>

#include <atomic>
#include <set>

using namespace quiltclean;

TEST_CASE("sha256 known digests") {
    CHECK(sha256_hex(std::string_view("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex(std::string_view("")) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    Sha256 h;
    h.update("a").update("bc");
    CHECK(h.hex() == sha256_hex(std::string_view("abc")));
}

TEST_CASE("sha256_file matches in-memory digest") {
    qc_test::TempDir tmp;
    write_text_file(tmp / "x.txt", "hello\n");
    CHECK(sha256_file(tmp / "x.txt") == sha256_hex(std::string_view("hello\n")));
    CHECK_THROWS_AS(sha256_file(tmp / "missing"), IoError);
}

TEST_CASE("jsonl round trip skips blank lines and reports the bad line") {
    const std::vector<json> values = {json{{"b", 1}, {"a", "x"}}, json::array({1, 2})};
    const auto text = to_jsonl(values);
    CHECK(text == "{\"a\":\"x\",\"b\":1}\n[1,2]\n");
    const auto parsed = parse_jsonl("\n" + text + "\n");
    REQUIRE(parsed.size() == 2);
    CHECK(parsed[0].line_no == 2);
    CHECK(parsed[1].value == values[1]);
    try {
        parse_jsonl("{}\n{oops\n");
        FAIL("expected MalformedRow");
    } catch (const MalformedRow& e) {
        CHECK(e.line_no() == 2);
    }
}

TEST_CASE("write_json is stable and readable") {
    qc_test::TempDir tmp;
    write_json(tmp / "a.json", json{{"z", 1}, {"a", {1, 2}}});
    const auto text = read_text_file(tmp / "a.json");
    CHECK(text.back() == '\n');
    CHECK(text.find("\"a\"") < text.find("\"z\""));
    CHECK(read_json(tmp / "a.json")["z"] == 1);
}

TEST_CASE("png round trip and content sniffing") {
    qc_test::TempDir tmp;
    Image img(5, 3, {10, 20, 30});
    img.set(4, 2, {255, 0, 128});
    write_png(tmp / "a.png", img);
    const auto back = read_image(tmp / "a.png");
    CHECK(back == img);
    const auto bytes = read_file_bytes(tmp / "a.png");
    CHECK(sniff_content_type(bytes) == "image/png");
    const std::vector<std::uint8_t> jpeg_magic = {0xFF, 0xD8, 0xFF, 0xE0, 0, 0};
    CHECK(sniff_content_type(jpeg_magic) == "image/jpeg");
    const std::vector<std::uint8_t> junk = {1, 2, 3, 4};
    CHECK_THROWS_AS(decode_image(junk), UndecodableImage);
    CHECK(is_image_extension("x.PNG"));
    CHECK_FALSE(is_image_extension("x.txt"));
}

TEST_CASE("geometric helpers") {
    Image img(4, 2);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 4; ++x) img.set(x, y, {static_cast<std::uint8_t>(x * 40), static_cast<std::uint8_t>(y * 90), 7});
    CHECK(flip_horizontal(flip_horizontal(img)) == img);
    CHECK(rotate90(rotate90(rotate90(rotate90(img, 1), 1), 1), 1) == img);
    const auto r = rotate90(img, 1);
    CHECK(r.width == 2);
    CHECK(r.height == 4);
    const auto c = crop(img, {1, 0, 2, 2});
    CHECK(c.width == 2);
    CHECK(c.get(0, 1) == img.get(1, 1));
    const auto z = resize(img, 9, 5);
    CHECK(z.width == 9);
    CHECK(z.height == 5);
    CHECK(mean_absolute_difference(img, img) == 0.0);
}

TEST_CASE("mask bookkeeping") {
    Mask m(10, 10);
    m.mark_rect(2, 2, 3, 3);
    CHECK(m.count() == 9);
    m.mark_rect(8, 8, 5, 5);  // clipped
    CHECK(m.count() == 13);
    Image img(10, 10);
    Mask touched(10, 10);
    fill_rect(img, {0, 0, 2, 2}, {1, 1, 1}, &touched);
    CHECK(touched.count() == 4);
}

TEST_CASE("counter rng is deterministic and bounded") {
    CounterRng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        CHECK(x == b.next_u64());
    }
    CHECK(a.next_u64() != c.next_u64());
    CounterRng r(7);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 2000; ++i) {
        const auto v = r.below(10);
        CHECK(v < 10);
        seen.insert(v);
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    CHECK(seen.size() == 10);
    CHECK(derive_seed({1, 2}) != derive_seed({2, 1}));
    CHECK(hash_string("a") != hash_string("b"));
}

TEST_CASE("parallel_for visits every index once and rethrows") {
    std::vector<std::atomic<int>> hits(1000);
    parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i]++; });
    for (auto& h : hits) CHECK(h.load() == 1);
    CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) {
                        if (i == 7) throw InvalidArgument("boom");
                    }),
                    InvalidArgument);
}
