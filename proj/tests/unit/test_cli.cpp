#include "../fixtures.hpp"
#include "../support.hpp"

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

namespace fs = std::filesystem;
using namespace quiltclean;

namespace {

// Exit status of the CLI with stdout/stderr captured to `log`.
int cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(QUILTCLEAN_CLI) + " " + args + " > '" + log.string() + "' 2>&1";
    const int rc = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(rc));
    return WEXITSTATUS(rc);
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_CASE("usage errors exit 2") {
    qc_test::TempDir tmp;
    CHECK(cli("--help", tmp / "log") == 0);
    CHECK(cli("no-such-command", tmp / "log") == 2);
    CHECK(cli("train --labels x.jsonl", tmp / "log") == 2);
    CHECK(cli("pipeline", tmp / "log") == 2);
}

TEST_CASE("synthetic data, prevalence and verify") {
    qc_test::TempDir tmp;
    REQUIRE(cli("synth-tiles --out " + q(tmp / "tiles") + " --n 3 --size 64 --seed 1", tmp / "log") == 0);
    REQUIRE(cli("synth-corpus --tiles " + q(tmp / "tiles") + " --out " + q(tmp / "c") +
                    " --n 30 --seed 2 --width 64 --height 64",
                tmp / "log") == 0);
    CHECK(read_jsonl(tmp / "c/manifest.jsonl").size() == 30);

    CHECK(cli("prevalence --labels " + q(tmp / "c/labels.jsonl"), tmp / "prev") == 0);
    CHECK(read_text_file(tmp / "prev").find("NARRATOR") != std::string::npos);

    CHECK(cli("manifest verify --manifest " + q(tmp / "c/manifest.jsonl"), tmp / "log") == 0);
    std::ofstream(tmp / "c/images/syn-000000.png", std::ios::trunc) << "garbage";
    CHECK(cli("manifest verify --manifest " + q(tmp / "c/manifest.jsonl") + " --out " + q(tmp / "bad.json"),
              tmp / "log") == 2);
    const auto report = read_json(tmp / "bad.json");
    CHECK(report["rows"].size() == 30);
    CHECK(report["counts"]["ok"] == 29);
}

TEST_CASE("pipeline exit codes") {
    qc_test::TempDir tmp;
    std::ofstream(tmp / "bad.yaml") << "manifest: m.jsonl\nunknown_key: 1\n";
    CHECK(cli("pipeline run --config " + q(tmp / "bad.yaml"), tmp / "log") == 2);
    CHECK(read_text_file(tmp / "log").find("unknown_key") != std::string::npos);

    const auto fx = qc_test::make_pipeline_fixture(tmp / "fx", 16,
                                                   "variants: [unfiltered]\n");
    CHECK(cli("pipeline filter --config " + q(fx.config), tmp / "log") == 0);
    CHECK(fs::exists(tmp / "fx/out/variants/unfiltered.jsonl"));

    const auto broken = qc_test::make_pipeline_fixture(tmp / "broken", 16, "");
    std::string text = read_text_file(broken.config);
    text.replace(text.find("adapter: stub-noise-v1"), 22, "adapter: \"command:broken\"\n  command: \"false\"");
    std::ofstream(broken.config, std::ios::trunc) << text;
    CHECK(cli("pipeline run --config " + q(broken.config), tmp / "log") == 3);
    CHECK(read_text_file(tmp / "log").find("AdapterFailure") != std::string::npos);
}
