#include "../support.hpp"

#include "quiltclean/augment.hpp"
#include "quiltclean/classifier.hpp"
#include "quiltclean/core/error.hpp"
#include "quiltclean/core/files.hpp"
#include "quiltclean/synthetic.hpp"

#include <doctest.h>

#include <cmath>

using namespace quiltclean;
using namespace quiltclean::classifier;

namespace {

double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

std::vector<Example> toy_examples(std::size_t n, const std::string& prefix, std::uint64_t seed) {
    std::vector<Example> out;
    for (std::size_t i = 0; i < n; ++i) {
        Example e;
        e.image_id = prefix + std::to_string(i);
        e.image = synthetic::make_tissue_tile(32, 32, seed + i);
        if (i % 2 == 0) {
            // bright square marks the positive class of channel 0
            fill_rect(e.image, {4, 4, 12, 12}, {255, 255, 255});
            e.labels.set(ImpurityCategory::Narrator, true);
        }
        out.push_back(std::move(e));
    }
    return out;
}

TrainConfig small_config() {
    TrainConfig c;
    c.backbone = "tiny-cnn";
    c.input_size = 32;
    c.batch_size = 8;
    c.max_epochs = 3;
    c.early_stop_patience = 2;
    c.augmentation = "none";
    c.learning_rate = 3e-3;
    return c;
}

}  // namespace

TEST_CASE("weighted bce matches the closed form and its gradient") {
    const float logits[] = {0.3f, -1.2f, 2.0f, 0.0f, 0.5f, -0.5f, 1.0f, -2.0f};
    const float targets[] = {1, 0, 1, 0, 0, 1, 1, 0};
    std::array<double, kNumCategories> w;
    for (std::size_t k = 0; k < kNumCategories; ++k) w[k] = 1.0 + 0.5 * k;
    double expect = 0.0;
    for (std::size_t k = 0; k < 8; ++k)
        expect += targets[k] ? w[k] * softplus(-logits[k]) : softplus(logits[k]);
    expect /= 8.0;
    std::vector<float> grad(8);
    const double loss = bce_with_logits(logits, targets, w, grad);
    CHECK(loss == doctest::Approx(expect).epsilon(1e-6));
    for (std::size_t k = 0; k < 8; ++k) {
        float up[8], down[8];
        std::copy(std::begin(logits), std::end(logits), up);
        std::copy(std::begin(logits), std::end(logits), down);
        up[k] += 1e-3f;
        down[k] -= 1e-3f;
        const double num = (bce_with_logits(up, targets, w) - bce_with_logits(down, targets, w)) / 2e-3;
        CHECK(grad[k] == doctest::Approx(num).epsilon(1e-2));
    }
}

TEST_CASE("positive weights are neg/pos with a neutral fallback") {
    auto ex = toy_examples(6, "p", 1);
    const auto w = positive_weights(ex);
    CHECK(w[0] == doctest::Approx(1.0));  // 3 of 6 positive
    CHECK(w[1] == 1.0);                   // absent class
    ex[1].labels.set(ImpurityCategory::Narrator, true);
    CHECK(positive_weights(ex)[0] == doctest::Approx(2.0 / 4.0));
}

TEST_CASE("early stopping needs a strict improvement") {
    EarlyStopping es(2);
    CHECK_FALSE(es.update(1.0));
    CHECK_FALSE(es.update(0.8));
    CHECK_FALSE(es.update(0.8));  // tie: no improvement
    CHECK(es.update(0.9));
    CHECK(es.best_epoch() == 2);
    CHECK(es.best_loss() == 0.8);
    CHECK(es.epochs() == 4);
}

TEST_CASE("train config validation and json") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    const auto back = train_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    json j = to_json(c);
    j["learning_rate"] = -1.0;
    CHECK_THROWS_AS(train_config_from_json(j), InvalidArgument);
    CHECK_THROWS_AS(train_config_from_json(json{{"bogus", 1}}), InvalidArgument);
    c.backbone = "nope";
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    CHECK(train_config_from_json(json{{"backbone", "tiny-cnn"}}).max_epochs == 50);
}

TEST_CASE("augmentation profiles") {
    CHECK(augment::profile_ids().size() == 3);
    CHECK_THROWS_AS(augment::profile("heavy"), InvalidArgument);
    const auto img = synthetic::make_tissue_tile(48, 40, 3);
    CounterRng a(1), b(1);
    const auto x = augment::augment(img, augment::profile("standard-v1"), 32, a);
    CHECK(x.width == 32);
    CHECK(x.height == 32);
    CHECK(x == augment::augment(img, augment::profile("standard-v1"), 32, b));
    CounterRng c(1);
    CHECK(augment::augment(img, augment::profile("none"), 32, c) == augment::prepare(img, 32));
}

TEST_CASE("training rejects leakage and empty sets") {
    const auto tr = toy_examples(8, "a", 1);
    auto va = toy_examples(4, "b", 50);
    CHECK_THROWS_AS(train({}, va, small_config()), EmptySet);
    va[0].image_id = "a0";
    CHECK_THROWS_AS(train(tr, va, small_config()), SplitLeakage);
}

TEST_CASE("training, checkpointing and prediction") {
    qc_test::TempDir tmp;
    const auto tr = toy_examples(32, "t", 1);
    const auto va = toy_examples(8, "v", 100);
    std::vector<EpochRecord> seen;
    auto result = train(tr, va, small_config(), tmp / "ckpt", [&](const EpochRecord& e) { seen.push_back(e); });
    CHECK(seen.size() == result.run.history.size());
    CHECK(result.run.selected_epoch >= 1);
    CHECK(std::isfinite(result.run.selected_val_loss));
    double best = 1e9;
    for (const auto& e : result.run.history) best = std::min(best, e.val_loss);
    CHECK(result.run.selected_val_loss == doctest::Approx(best));
    CHECK(result.model.evaluate_loss(va) == doctest::Approx(best).epsilon(1e-4));
    for (const char* f : {"weights.bin", "config.json", "history.json"})
        CHECK(std::filesystem::exists(tmp / "ckpt" / f));

    const auto loaded = Classifier::load(tmp / "ckpt");
    std::vector<Image> imgs;
    for (const auto& e : va) imgs.push_back(e.image);
    CHECK(loaded.probabilities(imgs) == result.model.probabilities(imgs));

    // same seed, same run
    auto again = train(tr, va, small_config());
    CHECK(again.run.history.size() == result.run.history.size());
    CHECK(again.run.history.back().val_loss == result.run.history.back().val_loss);

    const auto preds = predict(loaded, va);
    REQUIRE(preds.size() == va.size());
    for (const auto& p : preds) {
        for (double v : p.probs) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        CHECK(p.flags == loaded.binarize(p.probs));
    }
    const auto th = calibrate_youden(loaded, va);
    for (double t : th) {
        CHECK(t >= 0.0);
        CHECK(t <= 1.0);
    }
}

TEST_CASE("manifest prediction records unreadable images and keeps going") {
    qc_test::TempDir tmp;
    Classifier model(small_config());
    std::filesystem::create_directories(tmp / "img");
    write_png(tmp / "img/a.png", synthetic::make_tissue_tile(32, 32, 1));
    write_text_file(tmp / "img/b.png", "nope");
    std::vector<manifest::ManifestEntry> entries(3);
    entries[0] = {"a", "img/a.png", {"c"}};
    entries[1] = {"b", "img/b.png", {"c"}};
    entries[2] = {"c", "img/c.png", {"c"}};
    const auto preds = predict(model, entries, tmp.path(), 2);
    REQUIRE(preds.size() == 3);
    CHECK(preds[0].ok());
    CHECK(preds[1].error == "UndecodableImage");
    CHECK(preds[2].error == "MissingImage");

    write_predictions(tmp / "p.jsonl", preds);
    const auto back = read_predictions(tmp / "p.jsonl");
    REQUIRE(back.size() == 3);
    CHECK(back[0].probs == preds[0].probs);
    CHECK(back[1].error == preds[1].error);
}

TEST_CASE("evaluation from prediction files") {
    std::vector<PredictionRecord> preds(2);
    preds[0].image_id = "x";
    preds[0].probs[0] = 0.9;
    preds[1].image_id = "y";
    std::vector<LabelRecord> truth = {{"x", ImpurityLabelSet::only(ImpurityCategory::Narrator)}, {"y", {}}};
    Thresholds th;
    th.fill(0.5);
    const auto r = evaluate(preds, truth, th);
    CHECK(r.n == 2);
    CHECK(*r.rows[0].accuracy == 1.0);
    CHECK(*r.rows[0].auc == 1.0);
    truth.push_back({"z", {}});
    CHECK_THROWS_AS(evaluate(preds, truth, th), MissingPrediction);
}
