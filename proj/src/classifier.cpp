#include "quiltclean/classifier.hpp"

#include "quiltclean/augment.hpp"
#include "quiltclean/core/error.hpp"
#include "quiltclean/core/parallel.hpp"
#include "quiltclean/nn/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace quiltclean::classifier {

namespace {

constexpr const char* kCheckpointFormat = "quiltclean-classifier-v1";

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

std::vector<float> targets_of(std::span<const ImpurityLabelSet> labels) {
    std::vector<float> t(labels.size() * kNumCategories);
    for (std::size_t i = 0; i < labels.size(); ++i)
        for (std::size_t k = 0; k < kNumCategories; ++k) t[i * kNumCategories + k] = labels[i].flags()[k] ? 1.0f : 0.0f;
    return t;
}

nn::Tensor batch_tensor(std::span<const Image> images, int size) {
    nn::Tensor x(static_cast<int>(images.size()), 3, size, size);
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i].width != size || images[i].height != size)
            throw InvalidArgument("batch image is not " + std::to_string(size) + "x" + std::to_string(size));
        augment::to_chw(images[i], x.sample(static_cast<int>(i)));
    }
    return x;
}

std::vector<Image> prepare_all(std::span<const Example> examples, int size, std::size_t workers) {
    std::vector<Image> out(examples.size());
    parallel_for(examples.size(), workers, [&](std::size_t i) { out[i] = augment::prepare(examples[i].image, size); });
    return out;
}

std::vector<ImpurityLabelSet> labels_of(std::span<const Example> examples) {
    std::vector<ImpurityLabelSet> out;
    out.reserve(examples.size());
    for (const auto& e : examples) out.push_back(e.labels);
    return out;
}

// Mean loss of prepared images in inference mode.
double loss_on(const Classifier& model, std::span<const Image> prepared, std::span<const ImpurityLabelSet> labels) {
    const std::size_t bs = 64;
    double total = 0.0;
    for (std::size_t begin = 0; begin < prepared.size(); begin += bs) {
        const std::size_t end = std::min(prepared.size(), begin + bs);
        const nn::Tensor z = model.logits(prepared.subspan(begin, end - begin));
        const auto t = targets_of(labels.subspan(begin, end - begin));
        total += bce_with_logits(z.data, t, model.pos_weight()) * static_cast<double>(end - begin);
    }
    return total / static_cast<double>(prepared.size());
}

struct Adam {
    Adam(double lr_, double weight_decay_) : lr(lr_), weight_decay(weight_decay_) {}

    double lr, weight_decay, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long step = 0;
    std::vector<std::vector<float>> m, v;

    void apply(const std::vector<nn::Parameter*>& params) {
        if (m.empty()) {
            for (const auto* p : params) {
                m.emplace_back(p->value.size(), 0.0f);
                v.emplace_back(p->value.size(), 0.0f);
            }
        }
        ++step;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto& p = *params[k];
            auto& mk = m[k];
            auto& vk = v[k];
            const double decay = p.decay ? lr * weight_decay : 0.0;
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                const double g = p.grad.data[i];
                mk[i] = static_cast<float>(beta1 * mk[i] + (1 - beta1) * g);
                vk[i] = static_cast<float>(beta2 * vk[i] + (1 - beta2) * g * g);
                const double update = (mk[i] / c1) / (std::sqrt(vk[i] / c2) + eps);
                p.value.data[i] = static_cast<float>(p.value.data[i] - lr * update - decay * p.value.data[i]);
            }
        }
    }
};

std::vector<std::vector<float>> snapshot(nn::Network& net) {
    std::vector<std::vector<float>> out;
    for (const auto* p : net.parameters()) out.push_back(p->value.data);
    for (const auto& b : net.buffers()) out.push_back(b.value->data);
    return out;
}

void restore(nn::Network& net, const std::vector<std::vector<float>>& snap) {
    std::size_t k = 0;
    for (auto* p : net.parameters()) p->value.data = snap[k++];
    for (auto& b : net.buffers()) b.value->data = snap[k++];
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

std::array<double, kNumCategories> array8(const json& j, const char* what) {
    if (!j.is_array() || j.size() != kNumCategories)
        throw InvalidArgument(std::string(what) + " must be an array of 8 numbers");
    std::array<double, kNumCategories> out{};
    for (std::size_t k = 0; k < kNumCategories; ++k) {
        if (!j[k].is_number()) throw InvalidArgument(std::string(what) + " must be an array of 8 numbers");
        out[k] = j[k].get<double>();
    }
    return out;
}

}  // namespace

// --- config -------------------------------------------------------------------

void TrainConfig::validate() const {
    if (!nn::is_backbone(backbone)) throw InvalidArgument("unknown backbone: " + backbone);
    if (input_size < 16) throw InvalidArgument("input_size must be at least 16");
    if (batch_size < 2) throw InvalidArgument("batch_size must be at least 2");
    if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw InvalidArgument("learning_rate must be positive");
    if (!(weight_decay >= 0) || !std::isfinite(weight_decay)) throw InvalidArgument("weight_decay must be >= 0");
    if (max_epochs < 1) throw InvalidArgument("max_epochs must be at least 1");
    if (early_stop_patience < 1) throw InvalidArgument("early_stop_patience must be at least 1");
    augment::profile(augmentation);
    if (loss != "per-label-bce-with-logits") throw InvalidArgument("unsupported loss: " + loss);
    for (double t : binarize_thresholds)
        if (!(t > 0.0 && t < 1.0)) throw InvalidArgument("thresholds must lie in (0, 1)");
}

json to_json(const TrainConfig& c) {
    return json{{"backbone", c.backbone},
                {"input_size", c.input_size},
                {"batch_size", c.batch_size},
                {"learning_rate", c.learning_rate},
                {"weight_decay", c.weight_decay},
                {"max_epochs", c.max_epochs},
                {"early_stop_patience", c.early_stop_patience},
                {"seed", c.seed},
                {"augmentation", c.augmentation},
                {"loss", c.loss},
                {"pos_weighting", c.pos_weighting},
                {"calibrate_thresholds", c.calibrate_thresholds},
                {"binarize_thresholds", c.binarize_thresholds}};
}

TrainConfig train_config_from_json(const json& j) {
    if (!j.is_object()) throw InvalidArgument("train config must be a JSON object");
    static const std::set<std::string> known = {
        "backbone", "input_size", "batch_size", "learning_rate", "weight_decay", "max_epochs",
        "early_stop_patience", "seed", "augmentation", "loss", "pos_weighting", "calibrate_thresholds",
        "binarize_thresholds", "workers"};
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw InvalidArgument("unknown train config key: " + key);
    TrainConfig c;
    try {
        read_field(j, "backbone", c.backbone);
        read_field(j, "input_size", c.input_size);
        read_field(j, "batch_size", c.batch_size);
        read_field(j, "learning_rate", c.learning_rate);
        read_field(j, "weight_decay", c.weight_decay);
        read_field(j, "max_epochs", c.max_epochs);
        read_field(j, "early_stop_patience", c.early_stop_patience);
        read_field(j, "seed", c.seed);
        read_field(j, "augmentation", c.augmentation);
        read_field(j, "loss", c.loss);
        read_field(j, "pos_weighting", c.pos_weighting);
        read_field(j, "calibrate_thresholds", c.calibrate_thresholds);
        read_field(j, "workers", c.workers);
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("train config: ") + e.what());
    }
    if (j.contains("binarize_thresholds")) c.binarize_thresholds = array8(j["binarize_thresholds"], "binarize_thresholds");
    c.validate();
    return c;
}

// --- early stopping -------------------------------------------------------------

EarlyStopping::EarlyStopping(int patience) : patience_(patience) {
    if (patience < 1) throw InvalidArgument("patience must be at least 1");
}

bool EarlyStopping::update(double val_loss) {
    ++epochs_;
    improved_last_ = best_epoch_ == 0 || val_loss < best_loss_;
    if (improved_last_) {
        best_epoch_ = epochs_;
        best_loss_ = val_loss;
        since_best_ = 0;
    } else {
        ++since_best_;
    }
    return since_best_ >= patience_;
}

json to_json(const TrainingRun& run) {
    json epochs = json::array();
    for (const auto& e : run.history)
        epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
    return json{{"epochs", epochs},
                {"selected_epoch", run.selected_epoch},
                {"selected_val_loss", run.selected_val_loss},
                {"stopped_early", run.stopped_early},
                {"pos_weight", run.pos_weight},
                {"config", to_json(run.config)}};
}

// --- loss -----------------------------------------------------------------------

double bce_with_logits(std::span<const float> logits, std::span<const float> targets,
                       const std::array<double, kNumCategories>& pos_weight, std::span<float> grad) {
    if (logits.size() != targets.size() || logits.size() % kNumCategories != 0)
        throw LengthMismatch("logits and targets must be B x 8");
    if (!grad.empty() && grad.size() != logits.size()) throw LengthMismatch("gradient buffer size");
    const double denom = static_cast<double>(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double z = logits[i], y = targets[i], w = pos_weight[i % kNumCategories];
        total += w * y * softplus(-z) + (1.0 - y) * softplus(z);
        if (!grad.empty()) {
            const double s = sigmoid(z);
            grad[i] = static_cast<float>(((1.0 - y) * s - w * y * (1.0 - s)) / denom);
        }
    }
    return total / denom;
}

std::array<double, kNumCategories> positive_weights(std::span<const Example> examples) {
    std::array<double, kNumCategories> w{};
    for (std::size_t k = 0; k < kNumCategories; ++k) {
        std::size_t pos = 0;
        for (const auto& e : examples) pos += e.labels.flags()[k] ? 1 : 0;
        const std::size_t neg = examples.size() - pos;
        w[k] = (pos == 0 || neg == 0) ? 1.0 : static_cast<double>(neg) / static_cast<double>(pos);
    }
    return w;
}

// --- classifier -----------------------------------------------------------------

Classifier::Classifier(TrainConfig config) : config_(std::move(config)) {
    config_.validate();
    thresholds_ = config_.binarize_thresholds;
    pos_weight_.fill(1.0);
    net_ = std::make_unique<nn::Network>(config_.backbone, static_cast<int>(kNumCategories), config_.seed);
}

void Classifier::set_thresholds(const Thresholds& t) {
    for (double v : t)
        if (!(v > 0.0 && v < 1.0)) throw InvalidArgument("thresholds must lie in (0, 1)");
    thresholds_ = t;
}

nn::Tensor Classifier::logits(std::span<const Image> prepared) const {
    return net_->infer(batch_tensor(prepared, config_.input_size));
}

std::vector<std::array<double, kNumCategories>> Classifier::probabilities(std::span<const Image> images) const {
    std::vector<Image> prepared;
    prepared.reserve(images.size());
    for (const auto& img : images) prepared.push_back(augment::prepare(img, config_.input_size));
    std::vector<std::array<double, kNumCategories>> out(images.size());
    if (images.empty()) return out;
    const nn::Tensor z = logits(prepared);
    for (std::size_t i = 0; i < images.size(); ++i)
        for (std::size_t k = 0; k < kNumCategories; ++k) {
            const double p = sigmoid(z.data[i * kNumCategories + k]);
            if (!std::isfinite(p)) throw NonFiniteLoss("non-finite probability");
            out[i][k] = p;
        }
    return out;
}

ImpurityFlags Classifier::binarize(const std::array<double, kNumCategories>& probs) const noexcept {
    ImpurityFlags f{};
    for (std::size_t k = 0; k < kNumCategories; ++k) f[k] = probs[k] >= thresholds_[k];
    return f;
}

double Classifier::evaluate_loss(std::span<const Example> examples) const {
    if (examples.empty()) throw EmptySet("cannot evaluate loss on an empty set");
    const auto prepared = prepare_all(examples, config_.input_size, config_.workers);
    const auto labels = labels_of(examples);
    return loss_on(*this, prepared, labels);
}

void Classifier::save(const std::filesystem::path& dir, const TrainingRun* run) {
    std::filesystem::create_directories(dir);
    nn::save_weights(*net_, dir / "weights.bin");
    write_json(dir / "config.json", json{{"format", kCheckpointFormat},
                                         {"train_config", to_json(config_)},
                                         {"thresholds", thresholds_},
                                         {"pos_weight", pos_weight_}});
    if (run) write_json(dir / "history.json", to_json(*run));
}

Classifier Classifier::load(const std::filesystem::path& dir) {
    const json j = read_json(dir / "config.json");
    if (j.value("format", "") != kCheckpointFormat) throw InvalidArgument("not a classifier checkpoint: " + dir.string());
    Classifier model(train_config_from_json(j.at("train_config")));
    model.set_thresholds(array8(j.at("thresholds"), "thresholds"));
    model.set_pos_weight(array8(j.at("pos_weight"), "pos_weight"));
    nn::load_weights(*model.net_, dir / "weights.bin");
    return model;
}

// --- training ---------------------------------------------------------------------

TrainResult train(std::span<const Example> train_set, std::span<const Example> val_set, const TrainConfig& config,
                  const std::optional<std::filesystem::path>& checkpoint_dir, const EpochCallback& on_epoch) {
    config.validate();
    if (train_set.empty()) throw EmptySet("training set is empty");
    if (val_set.empty()) throw EmptySet("validation set is empty");
    std::set<std::string> train_ids;
    for (const auto& e : train_set) train_ids.insert(e.image_id);
    for (const auto& e : val_set)
        if (train_ids.count(e.image_id)) throw SplitLeakage("image in both train and val: " + e.image_id);

    Classifier model(config);
    model.set_pos_weight(config.pos_weighting ? positive_weights(train_set) : std::array<double, kNumCategories>{
                                                                                    1, 1, 1, 1, 1, 1, 1, 1});
    nn::Network& net = model.network();
    const int size = config.input_size;
    const auto& profile = augment::profile(config.augmentation);

    // Fixed base order so shuffles do not depend on input order.
    std::vector<std::size_t> base_order(train_set.size());
    std::iota(base_order.begin(), base_order.end(), std::size_t{0});
    std::sort(base_order.begin(), base_order.end(),
              [&](std::size_t a, std::size_t b) { return train_set[a].image_id < train_set[b].image_id; });

    const auto train_prep = prepare_all(train_set, size, config.workers);
    const auto val_prep = prepare_all(val_set, size, config.workers);
    const auto val_labels = labels_of(val_set);

    auto params = net.parameters();
    Adam adam(config.learning_rate, config.weight_decay);
    EarlyStopping stopper(config.early_stop_patience);
    TrainingRun run;
    run.config = config;
    run.pos_weight = model.pos_weight();
    std::vector<std::vector<float>> best;

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        auto order = base_order;
        CounterRng shuffle_rng(derive_seed({config.seed, hash_string("shuffle"), static_cast<std::uint64_t>(epoch)}));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t seen = 0;
        const auto bs = static_cast<std::size_t>(config.batch_size);
        for (std::size_t begin = 0; begin < order.size(); begin += bs) {
            const std::size_t end = std::min(order.size(), begin + bs);
            const std::size_t b = end - begin;
            if (b < 2) break;  // normalisation layers need at least two samples
            std::vector<Image> views(b);
            std::vector<ImpurityLabelSet> labels(b);
            parallel_for(b, config.workers, [&](std::size_t j) {
                const std::size_t idx = order[begin + j];
                CounterRng rng(derive_seed({config.seed, hash_string("augment"), static_cast<std::uint64_t>(epoch),
                                            hash_string(train_set[idx].image_id)}));
                views[j] = augment::augment(train_prep[idx], profile, size, rng);
                labels[j] = train_set[idx].labels;
            });
            const nn::Tensor x = batch_tensor(views, size);
            const auto targets = targets_of(labels);

            for (auto* p : params) p->grad.zero();
            const nn::Tensor z = net.forward(x);
            nn::Tensor grad(z.n, z.c, 1, 1);
            const double loss = bce_with_logits(z.data, targets, model.pos_weight(), grad.data);
            if (!std::isfinite(loss)) {
                std::ostringstream msg;
                msg << "non-finite training loss at epoch " << epoch << ", batch starting at " << begin
                    << " (lr=" << config.learning_rate << ")";
                throw NonFiniteLoss(msg.str());
            }
            net.backward(grad);
            adam.apply(params);
            loss_sum += loss * static_cast<double>(b);
            seen += b;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
        rec.val_loss = loss_on(model, val_prep, val_labels);
        if (!std::isfinite(rec.val_loss))
            throw NonFiniteLoss("non-finite validation loss at epoch " + std::to_string(epoch));
        run.history.push_back(rec);
        const bool stop = stopper.update(rec.val_loss);
        if (stopper.improved_last()) best = snapshot(net);
        if (on_epoch) on_epoch(rec);
        if (stop) {
            run.stopped_early = epoch < config.max_epochs;
            break;
        }
    }

    restore(net, best);
    run.selected_epoch = stopper.best_epoch();
    run.selected_val_loss = stopper.best_loss();
    if (config.calibrate_thresholds) model.set_thresholds(calibrate_youden(model, val_set));
    if (checkpoint_dir) {
        model.save(*checkpoint_dir, &run);
        run.checkpoint = *checkpoint_dir;
    }
    return TrainResult{std::move(model), std::move(run)};
}

Thresholds calibrate_youden(const Classifier& model, std::span<const Example> examples) {
    const auto preds = predict(model, examples);
    Thresholds out;
    out.fill(0.5);
    for (std::size_t k = 0; k < kNumCategories; ++k) {
        std::vector<std::pair<double, bool>> scored;
        std::size_t pos = 0;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            const bool y = examples[i].labels.flags()[k];
            scored.emplace_back(preds[i].probs[k], y);
            pos += y ? 1 : 0;
        }
        const std::size_t neg = scored.size() - pos;
        if (pos == 0 || neg == 0) continue;
        // Sweep thresholds from high to low; flags are p >= t.
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        std::size_t tp = 0, fp = 0;
        double best_j = -1.0, best_t = 0.5;
        for (std::size_t i = 0; i < scored.size(); ++i) {
            (scored[i].second ? tp : fp) += 1;
            if (i + 1 < scored.size() && scored[i + 1].first == scored[i].first) continue;
            const double j = static_cast<double>(tp) / pos - static_cast<double>(fp) / neg;
            if (j > best_j) {
                best_j = j;
                best_t = scored[i].first;
            }
        }
        out[k] = std::clamp(best_t, 1e-6, 1.0 - 1e-6);
    }
    return out;
}

// --- prediction -------------------------------------------------------------------

json to_json(const PredictionRecord& p) {
    json j{{"image_id", p.image_id}, {"probs", p.probs}, {"flags", flags_to_json(p.flags)}};
    if (p.error) j["error"] = *p.error;
    return j;
}

PredictionRecord prediction_from_json(const json& j) {
    if (!j.is_object() || !j.contains("image_id") || !j["image_id"].is_string())
        throw InvalidArgument("prediction needs a string image_id");
    PredictionRecord p;
    p.image_id = j["image_id"].get<std::string>();
    if (j.contains("error") && !j["error"].is_null()) {
        p.error = j["error"].get<std::string>();
        return p;
    }
    p.probs = array8(j.at("probs"), "probs");
    for (double v : p.probs)
        if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("probability outside [0, 1] for " + p.image_id);
    p.flags = flags_from_json(j.at("flags"));
    return p;
}

void write_predictions(const std::filesystem::path& path, std::vector<PredictionRecord> preds) {
    std::sort(preds.begin(), preds.end(), [](const auto& a, const auto& b) { return a.image_id < b.image_id; });
    std::vector<json> lines;
    lines.reserve(preds.size());
    for (const auto& p : preds) lines.push_back(to_json(p));
    write_jsonl(path, lines);
}

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
    std::vector<PredictionRecord> out;
    for (const auto& line : read_jsonl(path)) {
        try {
            out.push_back(prediction_from_json(line.value));
        } catch (const json::exception& e) {
            throw MalformedRow(line.line_no, e.what());
        } catch (const InvalidArgument& e) {
            throw MalformedRow(line.line_no, e.what());
        }
    }
    return out;
}

std::vector<PredictionRecord> predict(const Classifier& model, std::span<const Example> images,
                                      std::size_t batch_size) {
    if (batch_size == 0) batch_size = 32;
    std::vector<PredictionRecord> out(images.size());
    const std::size_t n_batches = (images.size() + batch_size - 1) / batch_size;
    parallel_for(n_batches, model.config().workers, [&](std::size_t bi) {
        const std::size_t begin = bi * batch_size, end = std::min(images.size(), begin + batch_size);
        std::vector<Image> batch;
        for (std::size_t i = begin; i < end; ++i) batch.push_back(images[i].image);
        const auto probs = model.probabilities(batch);
        for (std::size_t i = begin; i < end; ++i) {
            out[i].image_id = images[i].image_id;
            out[i].probs = probs[i - begin];
            out[i].flags = model.binarize(out[i].probs);
        }
    });
    return out;
}

std::vector<PredictionRecord> predict(const Classifier& model, std::span<const manifest::ManifestEntry> entries,
                                      const std::filesystem::path& base_dir, std::size_t workers,
                                      std::size_t batch_size) {
    if (batch_size == 0) batch_size = 32;
    std::vector<PredictionRecord> out(entries.size());
    const std::size_t n_batches = (entries.size() + batch_size - 1) / batch_size;
    parallel_for(n_batches, workers, [&](std::size_t bi) {
        const std::size_t begin = bi * batch_size, end = std::min(entries.size(), begin + batch_size);
        std::vector<Image> batch;
        std::vector<std::size_t> slots;
        for (std::size_t i = begin; i < end; ++i) {
            out[i].image_id = entries[i].image_id;
            try {
                if (manifest::is_remote(entries[i].image_path)) throw IoError("remote image: " + entries[i].image_path);
                batch.push_back(read_image(manifest::resolve_image_path(entries[i].image_path, base_dir)));
                slots.push_back(i);
            } catch (const UndecodableImage&) {
                out[i].error = "UndecodableImage";
            } catch (const IoError&) {
                out[i].error = "MissingImage";
            }
        }
        if (batch.empty()) return;
        const auto probs = model.probabilities(batch);
        for (std::size_t j = 0; j < slots.size(); ++j) {
            out[slots[j]].probs = probs[j];
            out[slots[j]].flags = model.binarize(probs[j]);
        }
    });
    return out;
}

// --- evaluation -------------------------------------------------------------------

metrics::MetricsReport evaluate(const Classifier& model, std::span<const Example> test_set) {
    if (test_set.empty()) throw EmptySet("test set is empty");
    const auto preds = predict(model, test_set);
    std::vector<LabelRecord> truth;
    truth.reserve(test_set.size());
    for (const auto& e : test_set) truth.push_back({e.image_id, e.labels});
    return evaluate(preds, truth, model.thresholds());
}

metrics::MetricsReport evaluate(std::span<const PredictionRecord> predictions, std::span<const LabelRecord> truth,
                                const Thresholds& thresholds) {
    if (truth.empty()) throw EmptySet("test set is empty");
    std::map<std::string, const PredictionRecord*> by_id;
    for (const auto& p : predictions) by_id[p.image_id] = &p;
    std::vector<const LabelRecord*> ordered;
    for (const auto& t : truth) ordered.push_back(&t);
    std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->image_id < b->image_id; });
    std::vector<metrics::ScoredExample> scored;
    scored.reserve(truth.size());
    for (const auto* t : ordered) {
        const auto it = by_id.find(t->image_id);
        if (it == by_id.end() || !it->second->ok()) throw MissingPrediction(t->image_id);
        metrics::ScoredExample s;
        s.probs = it->second->probs;
        for (std::size_t k = 0; k < kNumCategories; ++k) s.predicted[k] = s.probs[k] >= thresholds[k];
        s.truth = t->labels.flags();
        scored.push_back(s);
    }
    return metrics::build_report(scored, thresholds);
}

std::vector<Example> load_examples(std::span<const manifest::ManifestEntry> entries,
                                   std::span<const LabelRecord> labels, const std::filesystem::path& base_dir,
                                   int prepare_size, std::size_t workers) {
    const auto by_id = labels_by_id(labels);
    std::vector<const manifest::ManifestEntry*> chosen;
    for (const auto& e : entries)
        if (by_id.count(e.image_id)) chosen.push_back(&e);
    std::vector<Example> out(chosen.size());
    parallel_for(chosen.size(), workers, [&](std::size_t i) {
        const auto& e = *chosen[i];
        Image img = read_image(manifest::resolve_image_path(e.image_path, base_dir));
        if (prepare_size > 0) img = augment::prepare(img, prepare_size);
        out[i] = Example{e.image_id, std::move(img), by_id.at(e.image_id)};
    });
    return out;
}

}  // namespace quiltclean::classifier
