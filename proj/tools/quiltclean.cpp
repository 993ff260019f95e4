#include "quiltclean/annotation.hpp"
#include "quiltclean/classifier.hpp"
#include "quiltclean/core/error.hpp"
#include "quiltclean/core/files.hpp"
#include "quiltclean/labels.hpp"
#include "quiltclean/manifest.hpp"
#include "quiltclean/pipeline_config.hpp"
#include "quiltclean/semantic.hpp"
#include "quiltclean/synthetic.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <iomanip>
#include <iostream>
#include <set>

namespace fs = std::filesystem;
using namespace quiltclean;

namespace {

std::vector<manifest::ManifestEntry> read_manifest(const fs::path& path, bool lenient = false) {
    auto r = manifest::load_manifest(path, manifest::format_from_extension(path),
                                     lenient ? manifest::ParseMode::Lenient : manifest::ParseMode::Strict);
    for (const auto& issue : r.issues)
        std::cerr << "skipped line " << issue.line_no << ": " << issue.kind << ": " << issue.message << "\n";
    return r.entries;
}

fs::path base_dir_or(const std::string& base, const fs::path& manifest_path) {
    return base.empty() ? manifest_path.parent_path() : fs::path(base);
}

std::vector<manifest::LabeledEntry> join_labels(const std::vector<manifest::ManifestEntry>& entries,
                                                const std::vector<LabelRecord>& labels) {
    const auto by_id = labels_by_id(labels);
    std::vector<manifest::LabeledEntry> out;
    for (const auto& e : entries) {
        const auto it = by_id.find(e.image_id);
        if (it != by_id.end()) out.push_back({e, it->second});
    }
    if (out.empty()) throw EmptySet("no manifest entry has a label");
    return out;
}

std::vector<manifest::ManifestEntry> entries_in(const std::vector<manifest::ManifestEntry>& entries,
                                                const std::vector<manifest::SplitAssignment>& splits,
                                                manifest::Split which) {
    std::set<std::string> ids;
    for (const auto& s : splits)
        if (s.split == which) ids.insert(s.image_id);
    std::vector<manifest::ManifestEntry> out;
    for (const auto& e : entries)
        if (ids.count(e.image_id)) out.push_back(e);
    return out;
}

annotation::AnnotationServer* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"quiltclean: impurity filtering and curation tools for histopathology image-text data"};
    app.require_subcommand(1);
    std::size_t workers = 0;
    app.add_option("--workers", workers, "worker threads (0 = hardware concurrency)");

    std::function<void()> action;

    // synth-tiles
    auto* tiles_cmd = app.add_subcommand("synth-tiles", "write procedural tissue tiles");
    std::string tiles_out;
    std::size_t tiles_n = 64;
    int tiles_size = 96;
    std::uint64_t tiles_seed = 0;
    tiles_cmd->add_option("--out", tiles_out)->required();
    tiles_cmd->add_option("--n", tiles_n);
    tiles_cmd->add_option("--size", tiles_size);
    tiles_cmd->add_option("--seed", tiles_seed);
    tiles_cmd->callback([&] {
        action = [&] {
            const auto files = synthetic::generate_base_tiles(tiles_out, tiles_n, tiles_size, tiles_seed);
            std::cout << "wrote " << files.size() << " tiles to " << tiles_out << "\n";
        };
    });

    // synth-corpus
    auto* corpus_cmd = app.add_subcommand("synth-corpus", "render a labelled synthetic corpus");
    std::string corpus_tiles, corpus_out;
    synthetic::CorpusConfig corpus_cfg;
    corpus_cmd->add_option("--tiles", corpus_tiles, "directory of clean base tiles")->required();
    corpus_cmd->add_option("--out", corpus_out)->required();
    corpus_cmd->add_option("--n", corpus_cfg.n);
    corpus_cmd->add_option("--seed", corpus_cfg.seed);
    corpus_cmd->add_option("--width", corpus_cfg.width);
    corpus_cmd->add_option("--height", corpus_cfg.height);
    corpus_cmd->callback([&] {
        action = [&] {
            const auto bases = synthetic::load_base_images(corpus_tiles);
            const auto corpus = synthetic::generate_corpus(bases, corpus_cfg, corpus_out, workers);
            std::cout << "wrote " << corpus.manifest.size() << " records to " << corpus_out << "\n"
                      << to_json(compute_prevalence(corpus.labels)).dump(2) << "\n";
        };
    });

    // manifest ...
    auto* man_cmd = app.add_subcommand("manifest", "manifest utilities");
    man_cmd->require_subcommand(1);

    auto* sample_cmd = man_cmd->add_subcommand("sample", "draw a seeded fraction of the images");
    std::string sample_in, sample_out, sample_rest;
    double sample_fraction = 0.01;
    std::uint64_t sample_seed = 0;
    sample_cmd->add_option("--manifest", sample_in)->required();
    sample_cmd->add_option("--fraction", sample_fraction);
    sample_cmd->add_option("--seed", sample_seed);
    sample_cmd->add_option("--out", sample_out)->required();
    sample_cmd->add_option("--out-rest", sample_rest);
    sample_cmd->callback([&] {
        action = [&] {
            const auto r = manifest::sample_fraction(read_manifest(sample_in), sample_fraction, sample_seed);
            manifest::write_manifest(sample_out, r.sampled);
            if (!sample_rest.empty()) manifest::write_manifest(sample_rest, r.remainder);
            std::cout << "sampled " << r.sampled.size() << ", remainder " << r.remainder.size() << "\n";
        };
    });

    auto* split_cmd = man_cmd->add_subcommand("split", "train/val/test partition of the labelled images");
    std::string split_manifest, split_labels, split_out;
    std::uint64_t split_seed = 0;
    manifest::SplitRatios ratios;
    bool exemplars_in_test = false;
    split_cmd->add_option("--manifest", split_manifest)->required();
    split_cmd->add_option("--labels", split_labels)->required();
    split_cmd->add_option("--out", split_out)->required();
    split_cmd->add_option("--seed", split_seed);
    split_cmd->add_option("--train", ratios.train);
    split_cmd->add_option("--val", ratios.val);
    split_cmd->add_option("--test", ratios.test);
    split_cmd->add_flag("--exemplars-in-test", exemplars_in_test);
    split_cmd->callback([&] {
        action = [&] {
            const auto records = join_labels(read_manifest(split_manifest), read_labels(split_labels));
            const auto s = manifest::split(records, ratios, split_seed, exemplars_in_test);
            manifest::write_splits(split_out, s);
            const auto c = manifest::count_splits(s);
            std::cout << "train " << c.train << ", val " << c.val << ", test " << c.test << "\n";
        };
    });

    auto* verify_cmd = man_cmd->add_subcommand("verify", "check that every image exists and decodes");
    std::string verify_manifest, verify_base, verify_out;
    verify_cmd->add_option("--manifest", verify_manifest)->required();
    verify_cmd->add_option("--base-dir", verify_base);
    verify_cmd->add_option("--out", verify_out);
    int verify_status = 0;
    verify_cmd->callback([&] {
        action = [&] {
            const auto report = manifest::verify_images(read_manifest(verify_manifest),
                                                        base_dir_or(verify_base, verify_manifest), workers);
            if (!verify_out.empty()) write_json(verify_out, manifest::to_json(report));
            for (const auto& [k, v] : report.counts) std::cout << k << ": " << v << "\n";
            if (report.count(manifest::ImageStatus::Ok) != report.rows.size()) verify_status = 2;
        };
    });

    auto* inject_cmd = man_cmd->add_subcommand("inject-exemplars", "append clean exemplar crops as negatives");
    std::string inj_manifest, inj_labels, inj_dir, inj_out_manifest, inj_out_labels;
    inject_cmd->add_option("--manifest", inj_manifest)->required();
    inject_cmd->add_option("--labels", inj_labels)->required();
    inject_cmd->add_option("--exemplars", inj_dir)->required();
    inject_cmd->add_option("--out-manifest", inj_out_manifest)->required();
    inject_cmd->add_option("--out-labels", inj_out_labels)->required();
    inject_cmd->callback([&] {
        action = [&] {
            auto records = join_labels(read_manifest(inj_manifest), read_labels(inj_labels));
            const auto r = manifest::inject_clean_exemplars(std::move(records), inj_dir);
            std::vector<manifest::ManifestEntry> entries;
            std::vector<LabelRecord> labels;
            for (const auto& rec : r.records) {
                entries.push_back(rec.entry);
                labels.push_back({rec.entry.image_id, rec.labels});
            }
            manifest::write_manifest(inj_out_manifest, entries);
            write_labels(inj_out_labels, labels);
            for (const auto& f : r.failures) std::cerr << f.kind << ": " << f.message << "\n";
            std::cout << "records " << r.records.size() << ", failures " << r.failures.size() << "\n";
        };
    });

    // train
    auto* train_cmd = app.add_subcommand("train", "train the impurity classifier");
    std::string train_labels, train_manifest, train_out, train_splits, train_config, train_base;
    classifier::TrainConfig tc;
    train_cmd->add_option("--labels", train_labels)->required();
    train_cmd->add_option("--manifest", train_manifest)->required();
    train_cmd->add_option("--out", train_out)->required();
    train_cmd->add_option("--splits", train_splits, "split file; computed with --seed when absent");
    train_cmd->add_option("--config", train_config, "JSON training config");
    train_cmd->add_option("--base-dir", train_base);
    train_cmd->add_option("--backbone", tc.backbone);
    train_cmd->add_option("--input-size", tc.input_size);
    train_cmd->add_option("--batch-size", tc.batch_size);
    train_cmd->add_option("--lr", tc.learning_rate);
    train_cmd->add_option("--epochs", tc.max_epochs);
    train_cmd->add_option("--patience", tc.early_stop_patience);
    train_cmd->add_option("--seed", tc.seed);
    train_cmd->add_option("--augmentation", tc.augmentation);
    train_cmd->add_flag("--calibrate", tc.calibrate_thresholds);
    train_cmd->callback([&] {
        action = [&] {
            classifier::TrainConfig cfg = tc;
            if (!train_config.empty()) {
                cfg = classifier::train_config_from_json(read_json(train_config));
                for (const auto* opt : {"--backbone", "--input-size", "--batch-size", "--lr", "--epochs", "--patience",
                                        "--seed", "--augmentation"})
                    if (train_cmd->count(opt)) std::cerr << "note: " << opt << " ignored, --config given\n";
            }
            cfg.workers = workers;
            const auto entries = read_manifest(train_manifest);
            const auto labels = read_labels(train_labels);
            std::vector<manifest::SplitAssignment> splits;
            if (!train_splits.empty()) {
                splits = manifest::read_splits(train_splits);
            } else {
                splits = manifest::split(join_labels(entries, labels), {}, cfg.seed);
            }
            const auto base = base_dir_or(train_base, train_manifest);
            const auto tr = classifier::load_examples(entries_in(entries, splits, manifest::Split::Train), labels, base,
                                                      0, workers);
            const auto va = classifier::load_examples(entries_in(entries, splits, manifest::Split::Val), labels, base,
                                                      0, workers);
            std::cout << "train " << tr.size() << ", val " << va.size() << "\n";
            const auto result = classifier::train(tr, va, cfg, fs::path(train_out), [](const classifier::EpochRecord& e) {
                std::cout << "epoch " << e.epoch << "  train_loss " << std::fixed << std::setprecision(5)
                          << e.train_loss << "  val_loss " << e.val_loss << std::endl;
            });
            manifest::write_splits(fs::path(train_out) / "splits.jsonl", splits);
            write_json(fs::path(train_out) / "data.json",
                       json{{"manifest", fs::absolute(train_manifest).string()},
                            {"labels", fs::absolute(train_labels).string()},
                            {"base_dir", fs::absolute(base).string()}});
            std::cout << "selected epoch " << result.run.selected_epoch << " (val_loss "
                      << result.run.selected_val_loss << ")\n";
        };
    });

    // predict
    auto* predict_cmd = app.add_subcommand("predict", "score manifest images with a checkpoint");
    std::string pred_ckpt, pred_manifest, pred_out, pred_base;
    predict_cmd->add_option("--ckpt", pred_ckpt)->required();
    predict_cmd->add_option("--manifest", pred_manifest)->required();
    predict_cmd->add_option("--out", pred_out)->required();
    predict_cmd->add_option("--base-dir", pred_base);
    predict_cmd->callback([&] {
        action = [&] {
            const auto model = classifier::Classifier::load(pred_ckpt);
            const auto entries = read_manifest(pred_manifest);
            auto preds = classifier::predict(model, entries, base_dir_or(pred_base, pred_manifest), workers);
            std::size_t failed = 0;
            for (const auto& p : preds) failed += p.ok() ? 0 : 1;
            classifier::write_predictions(pred_out, std::move(preds));
            std::cout << "scored " << entries.size() - failed << ", failed " << failed << "\n";
        };
    });

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "per-category metrics on a split");
    std::string eval_ckpt, eval_labels, eval_split = "test", eval_report, eval_manifest, eval_splits, eval_md;
    eval_cmd->add_option("--ckpt", eval_ckpt)->required();
    eval_cmd->add_option("--labels", eval_labels)->required();
    eval_cmd->add_option("--split", eval_split);
    eval_cmd->add_option("--report", eval_report)->required();
    eval_cmd->add_option("--markdown", eval_md);
    eval_cmd->add_option("--manifest", eval_manifest, "defaults to the training manifest");
    eval_cmd->add_option("--splits", eval_splits, "defaults to the checkpoint's split file");
    eval_cmd->callback([&] {
        action = [&] {
            const auto which = manifest::parse_split(eval_split);
            if (!which) throw InvalidArgument("unknown split: " + eval_split);
            const fs::path ckpt(eval_ckpt);
            json data = json::object();
            if (fs::exists(ckpt / "data.json")) data = read_json(ckpt / "data.json");
            const fs::path man = !eval_manifest.empty() ? fs::path(eval_manifest)
                                                        : fs::path(data.value("manifest", std::string()));
            if (man.empty()) throw InvalidArgument("--manifest is required for this checkpoint");
            const fs::path base = eval_manifest.empty() && data.contains("base_dir")
                                      ? fs::path(data["base_dir"].get<std::string>())
                                      : man.parent_path();
            const auto splits = manifest::read_splits(eval_splits.empty() ? ckpt / "splits.jsonl" : fs::path(eval_splits));
            const auto labels = read_labels(eval_labels);
            const auto model = classifier::Classifier::load(ckpt);
            const auto examples = classifier::load_examples(entries_in(read_manifest(man), splits, *which), labels, base,
                                                            0, workers);
            const auto report = classifier::evaluate(model, examples);
            write_json(eval_report, metrics::to_json(report));
            const auto md = metrics::to_markdown(report);
            if (!eval_md.empty()) write_text_file(eval_md, md);
            std::cout << md;
        };
    });

    // score-clip
    auto* score_cmd = app.add_subcommand("score-clip", "image-text alignment scores for every pair");
    std::string score_manifest, score_scorer = "stub-hash-v1", score_embeddings, score_out, score_failures, score_base;
    score_cmd->add_option("--manifest", score_manifest)->required();
    score_cmd->add_option("--scorer", score_scorer);
    score_cmd->add_option("--embeddings", score_embeddings);
    score_cmd->add_option("--out", score_out)->required();
    score_cmd->add_option("--failures", score_failures);
    score_cmd->add_option("--base-dir", score_base);
    score_cmd->callback([&] {
        action = [&] {
            const auto scorer = semantic::make_scorer(score_scorer, score_embeddings);
            auto r = semantic::score_manifest(*scorer, read_manifest(score_manifest),
                                              base_dir_or(score_base, score_manifest), workers);
            semantic::write_scores(score_out, r.scores);
            if (!score_failures.empty()) {
                std::vector<json> lines;
                for (const auto& f : r.failures)
                    lines.push_back(json{{"image_id", f.image_id},
                                         {"caption_index", f.caption_index},
                                         {"kind", f.kind},
                                         {"message", f.message}});
                write_jsonl(score_failures, lines);
            }
            std::cout << "scored " << r.scores.size() << " pairs, " << r.failures.size() << " failed\n";
        };
    });

    // filter-semantic
    auto* fsem_cmd = app.add_subcommand("filter-semantic", "keep the pairs scoring above the median");
    std::string fsem_scores, fsem_manifest, fsem_kept, fsem_dropped, fsem_summary;
    fsem_cmd->add_option("--scores", fsem_scores)->required();
    fsem_cmd->add_option("--manifest", fsem_manifest)->required();
    fsem_cmd->add_option("--out-kept", fsem_kept)->required();
    fsem_cmd->add_option("--out-dropped", fsem_dropped)->required();
    fsem_cmd->add_option("--summary", fsem_summary);
    fsem_cmd->callback([&] {
        action = [&] {
            const auto scores = semantic::read_scores(fsem_scores);
            const auto r = semantic::median_filter(scores);
            const auto split = semantic::split_manifest(read_manifest(fsem_manifest), r.kept);
            manifest::write_manifest(fsem_kept, split.kept);
            manifest::write_manifest(fsem_dropped, split.dropped);
            const auto s = semantic::summary(r);
            if (!fsem_summary.empty()) write_json(fsem_summary, s);
            std::cout << s.dump() << "\n";
        };
    });

    // annotate-serve
    auto* serve_cmd = app.add_subcommand("annotate-serve", "serve the annotation REST API");
    std::string serve_manifest, serve_db, serve_static, serve_base;
    annotation::ServerConfig serve_cfg;
    std::uint64_t serve_seed = 0;
    serve_cmd->add_option("--manifest", serve_manifest)->required();
    serve_cmd->add_option("--db", serve_db)->required();
    serve_cmd->add_option("--port", serve_cfg.port);
    serve_cmd->add_option("--host", serve_cfg.host);
    serve_cmd->add_option("--lease-seconds", serve_cfg.lease_seconds);
    serve_cmd->add_option("--seed", serve_seed, "queue order seed");
    serve_cmd->add_option("--static", serve_static, "directory of UI assets served under /");
    serve_cmd->add_option("--base-dir", serve_base);
    serve_cmd->callback([&] {
        action = [&] {
            annotation::AnnotationStore store(serve_db);
            if (store.state().total == 0) {
                const auto q = store.create_queue(read_manifest(serve_manifest), serve_seed);
                std::cout << "queued " << q.total << " images\n";
            }
            serve_cfg.image_base_dir = base_dir_or(serve_base, serve_manifest);
            if (!serve_static.empty()) serve_cfg.static_dir = fs::path(serve_static);
            annotation::AnnotationServer server(store, serve_cfg);
            const int port = server.bind();
            g_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::cout << "listening on http://" << serve_cfg.host << ":" << port << std::endl;
            server.listen();
            g_server = nullptr;
        };
    });

    // prevalence
    auto* prev_cmd = app.add_subcommand("prevalence", "label prevalence per category and for any flag");
    std::string prev_labels;
    prev_cmd->add_option("--labels", prev_labels)->required();
    prev_cmd->callback([&] {
        action = [&] { std::cout << to_json(compute_prevalence(read_labels(prev_labels))).dump(2) << "\n"; };
    });

    // pipeline
    auto* pipe_cmd = app.add_subcommand("pipeline", "dataset variants, generation and conditional FID");
    pipe_cmd->require_subcommand(1);
    std::string pipe_config;
    bool pipe_force = false;
    std::optional<pipeline::Stage> pipe_stage;
    auto add_stage = [&](const char* name, const char* help, std::optional<pipeline::Stage> stage) {
        auto* sub = pipe_cmd->add_subcommand(name, help);
        sub->add_option("--config", pipe_config)->required();
        sub->add_flag("--force", pipe_force, "ignore completion markers");
        sub->callback([&, stage] {
            action = [&, stage] {
                auto cfg = pipeline::load_config(pipe_config);
                if (app.count("--workers")) cfg.workers = workers;
                pipeline::RunOptions opts;
                opts.force = pipe_force;
                opts.log = &std::cout;
                pipeline::run(cfg, stage.value_or(pipeline::Stage::Report), opts);
            };
        });
    };
    add_stage("run", "run every stage", std::nullopt);
    add_stage("filter", "build the dataset variants", pipeline::Stage::Filter);
    add_stage("derive-prompts", "derive prompts from reference metadata", pipeline::Stage::Prompts);
    add_stage("crops", "sample reference crops", pipeline::Stage::Crops);
    add_stage("generate", "generate images per variant", pipeline::Stage::Generate);
    add_stage("fid", "conditional FID per variant and reference", pipeline::Stage::Fid);
    add_stage("report", "write report.json and report.md", pipeline::Stage::Report);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (action) action();
    } catch (const Error& e) {
        std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
        return pipeline::exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return verify_status;
}
