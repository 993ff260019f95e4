#include "../support.hpp"

#include "quiltclean/annotation.hpp"
#include "quiltclean/core/error.hpp"
#include "quiltclean/core/files.hpp"
#include "quiltclean/core/image.hpp"

#include <doctest.h>
#include <httplib.h>

#include <set>
#include <thread>

using namespace quiltclean;
using namespace quiltclean::annotation;

namespace {

std::vector<manifest::ManifestEntry> queue_entries(std::size_t n) {
    std::vector<manifest::ManifestEntry> out;
    for (std::size_t i = 0; i < n; ++i) {
        const auto id = "img-" + std::to_string(i);
        out.push_back({id, "images/" + id + ".png", {"caption"}});
    }
    return out;
}

struct FakeClock {
    double now = 1700000000.0;
    Clock fn() {
        return [this] { return now; };
    }
};

ImpurityFlags flags_with(std::initializer_list<ImpurityCategory> cats) {
    ImpurityFlags f{};
    for (auto c : cats) f[index_of(c)] = true;
    return f;
}

}  // namespace

TEST_CASE("timestamps are ISO 8601 UTC with milliseconds") {
    CHECK(format_timestamp(0.0) == "1970-01-01T00:00:00.000Z");
    CHECK(format_timestamp(1700000000.25) == "2023-11-14T22:13:20.250Z");
}

TEST_CASE("queue order is a seeded shuffle independent of input order") {
    AnnotationStore a(":memory:"), b(":memory:"), c(":memory:");
    auto entries = queue_entries(30);
    const auto qa = a.create_queue(entries, 3);
    std::reverse(entries.begin(), entries.end());
    const auto qb = b.create_queue(entries, 3);
    const auto qc = c.create_queue(entries, 4);
    CHECK(qa.pending == qb.pending);
    CHECK(qa.pending != qc.pending);
    CHECK(qa.total == 30);
    CHECK(qa.done == 0);
    CHECK_THROWS_AS(a.create_queue({}, 1), EmptySubset);
}

TEST_CASE("annotations upsert with revision history") {
    FakeClock clock;
    AnnotationStore s(":memory:", clock.fn());
    s.create_queue(queue_entries(3), 1);
    const auto r1 = s.record_annotation("img-1", flags_with({ImpurityCategory::Narrator}), "ann");
    CHECK(r1.revision == 1);
    CHECK(r1.timestamp == "2023-11-14T22:13:20.000Z");
    clock.now += 1.5;
    const auto r2 = s.record_annotation("img-1", flags_with({}), "ann2");
    CHECK(r2.revision == 2);
    const auto hist = s.history("img-1");
    REQUIRE(hist.size() == 2);
    CHECK(hist[0].revision == 1);
    CHECK(hist[0].flags[0]);
    CHECK(hist[1].annotator == "ann2");
    CHECK(s.current("img-1")->revision == 2);
    CHECK_FALSE(s.current("img-0").has_value());
    CHECK_THROWS_AS(s.record_annotation("nope", {}, "x"), UnknownImage);
    CHECK(s.progress().done == 1);
    CHECK(s.progress().total == 3);
}

TEST_CASE("leases hand out distinct tasks and expire") {
    FakeClock clock;
    AnnotationStore s(":memory:", clock.fn());
    s.create_queue(queue_entries(2), 1);
    const auto t1 = s.next_task(60);
    const auto t2 = s.next_task(60);
    REQUIRE(t1);
    REQUIRE(t2);
    CHECK(t1->image_id != t2->image_id);
    CHECK_FALSE(s.next_task(60).has_value());
    clock.now += 61;
    const auto t3 = s.next_task(60);
    REQUIRE(t3);
    CHECK(t3->image_id == t1->image_id);
    s.record_annotation(t1->image_id, {}, "a");
    s.record_annotation(t2->image_id, {}, "a");
    clock.now += 61;
    CHECK_FALSE(s.next_task(60).has_value());
}

TEST_CASE("concurrent callers never share a lease") {
    AnnotationStore s(":memory:");
    s.create_queue(queue_entries(40), 2);
    std::vector<std::string> got[4];
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t)
        threads.emplace_back([&, t] {
            for (int i = 0; i < 10; ++i)
                if (auto task = s.next_task(300)) got[t].push_back(task->image_id);
        });
    for (auto& t : threads) t.join();
    std::set<std::string> all;
    std::size_t n = 0;
    for (auto& g : got) {
        n += g.size();
        all.insert(g.begin(), g.end());
    }
    CHECK(n == 40);
    CHECK(all.size() == 40);
}

TEST_CASE("labels survive reopening the database") {
    qc_test::TempDir tmp;
    {
        AnnotationStore s(tmp / "db" / "labels.sqlite");
        s.create_queue(queue_entries(2), 1);
        s.record_annotation("img-0", flags_with({ImpurityCategory::TextLogo}), "a");
    }
    AnnotationStore s(tmp / "db" / "labels.sqlite");
    CHECK(s.state().total == 2);
    const auto labels = s.labels();
    REQUIRE(labels.size() == 1);
    CHECK(labels[0].labels.test(ImpurityCategory::TextLogo));
    CHECK(s.export_labels() == labels_to_jsonl(labels));
}

// --- REST ------------------------------------------------------------------------

namespace {

struct Service {
    qc_test::TempDir tmp;
    AnnotationStore store{":memory:"};
    std::unique_ptr<AnnotationServer> server;
    std::unique_ptr<httplib::Client> client;

    explicit Service(std::size_t n = 2) {
        auto entries = queue_entries(n);
        std::filesystem::create_directories(tmp / "images");
        for (const auto& e : entries) write_png(tmp / e.image_path, Image(8, 8, {1, 2, 3}));
        store.create_queue(entries, 0);
        ServerConfig cfg;
        cfg.port = 0;
        cfg.image_base_dir = tmp.path();
        server = std::make_unique<AnnotationServer>(store, cfg);
        const int port = server->start();
        client = std::make_unique<httplib::Client>("127.0.0.1", port);
    }
    ~Service() { server->stop(); }

    httplib::Result post(const json& body) {
        return client->Post("/api/annotations", body.dump(), "application/json");
    }
};

json flag_array(std::initializer_list<int> on) {
    json f = json::array();
    for (int i = 0; i < 8; ++i) f.push_back(std::find(on.begin(), on.end(), i) != on.end());
    return f;
}

}  // namespace

TEST_CASE("task, submit and progress over HTTP") {
    Service svc;
    auto next = svc.client->Get("/api/tasks/next");
    REQUIRE(next);
    CHECK(next->status == 200);
    const auto task = json::parse(next->body);
    const std::string id = task["image_id"];
    CHECK(task["image_url"] == "/api/images/" + id);

    auto img = svc.client->Get(task["image_url"].get<std::string>());
    REQUIRE(img);
    CHECK(img->status == 200);
    CHECK(img->get_header_value("Content-Type") == "image/png");
    CHECK(img->body == read_text_file(svc.tmp / ("images/" + id + ".png")));

    auto posted = svc.post({{"image_id", id}, {"flags", flag_array({0})}, {"annotator", "alice"}});
    REQUIRE(posted);
    CHECK(posted->status == 201);
    const auto rec = json::parse(posted->body);
    CHECK(rec["revision"] == 1);
    CHECK(rec["flags"][0] == true);
    CHECK(rec["annotator"] == "alice");

    auto prog = svc.client->Get("/api/progress");
    REQUIRE(prog);
    CHECK(json::parse(prog->body) == json{{"done", 1}, {"total", 2}});
}

TEST_CASE("annotation body validation") {
    Service svc;
    auto status = [&](const json& body) { return svc.post(body)->status; };
    CHECK(status({{"image_id", "img-0"}, {"flags", flag_array({})}}) == 201);  // annotator optional
    CHECK(status({{"image_id", "img-0"}, {"flags", flag_array({})}, {"extra", 1}}) == 400);
    CHECK(status({{"image_id", "img-0"}}) == 400);
    CHECK(status({{"image_id", "img-0"}, {"flags", json::array({true})}}) == 400);
    CHECK(status({{"image_id", "img-0"}, {"flags", json::array({1, 0, 0, 0, 0, 0, 0, 0})}}) == 400);
    CHECK(status({{"image_id", ""}, {"flags", flag_array({})}}) == 400);
    CHECK(status({{"image_id", "nope"}, {"flags", flag_array({})}}) == 404);
    CHECK(svc.client->Post("/api/annotations", "{not json", "application/json")->status == 400);
    CHECK(svc.client->Get("/api/images/nope")->status == 404);
    CHECK(svc.client->Get("/api/annotations/nope")->status == 404);
}

TEST_CASE("review listing, history and export") {
    Service svc(3);
    svc.post({{"image_id", "img-0"}, {"flags", flag_array({0})}});
    svc.post({{"image_id", "img-1"}, {"flags", flag_array({2})}});
    svc.post({{"image_id", "img-2"}, {"flags", flag_array({})}});
    svc.post({{"image_id", "img-1"}, {"flags", flag_array({0, 2})}});

    auto list = [&](const std::string& q) { return json::parse(svc.client->Get("/api/annotations" + q)->body); };
    CHECK(list("").size() == 3);
    CHECK(list("?filter=NARRATOR").size() == 2);
    CHECK(list("?filter=TEXT_LOGO").size() == 1);
    CHECK(list("?filter=any").size() == 2);
    CHECK(list("?filter=MULTI_PANEL").empty());
    CHECK(svc.client->Get("/api/annotations?filter=bogus")->status == 400);

    const auto one = json::parse(svc.client->Get("/api/annotations/img-1")->body);
    CHECK(one["current"]["revision"] == 2);
    CHECK(one["history"].size() == 2);

    const auto exp = svc.client->Get("/api/labels/export");
    REQUIRE(exp);
    CHECK(exp->status == 200);
    const auto lines = parse_jsonl(exp->body);
    REQUIRE(lines.size() == 3);
    CHECK(lines[0].value["image_id"] == "img-0");
    CHECK(lines[1].value["flags"] == flag_array({0, 2}));
}

TEST_CASE("queue drains to 204") {
    Service svc(2);
    for (int i = 0; i < 2; ++i) {
        auto next = svc.client->Get("/api/tasks/next");
        REQUIRE(next->status == 200);
        svc.post({{"image_id", json::parse(next->body)["image_id"]}, {"flags", flag_array({})}});
    }
    CHECK(svc.client->Get("/api/tasks/next")->status == 204);
    CHECK(json::parse(svc.client->Get("/api/progress")->body)["done"] == 2);
}

TEST_CASE("keyboard sequences map to valid submissions") {
    // Digits 1-8 toggle categories in channel order, 0 clears and submits,
    // Enter submits. Every reachable draft must be accepted by the service.
    Service svc(3);
    auto drive = [&](const std::string& keys) {
        ImpurityFlags draft{};
        for (char k : keys) {
            if (k >= '1' && k <= '8') draft[static_cast<std::size_t>(k - '1')] ^= true;
            if (k == '0') draft = {};
            if (k == '0' || k == '\n') break;
        }
        auto next = svc.client->Get("/api/tasks/next");
        REQUIRE(next->status == 200);
        const auto res = svc.post({{"image_id", json::parse(next->body)["image_id"]}, {"flags", flags_to_json(draft)}});
        REQUIRE(res->status == 201);
        return json::parse(res->body)["flags"];
    };
    CHECK(drive("1\n") == flag_array({0}));
    CHECK(drive("0") == flag_array({}));
    CHECK(drive("33\n") == flag_array({}));
    CHECK(svc.client->Get("/api/tasks/next")->status == 204);
}
