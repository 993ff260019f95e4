#include "quiltclean/semantic.hpp"

#include "quiltclean/core/error.hpp"
#include "quiltclean/core/parallel.hpp"
#include "quiltclean/core/rng.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace quiltclean::semantic {

namespace {

std::vector<double> gaussian_vector(std::uint64_t seed, std::size_t dim) {
    CounterRng rng(seed);
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.normal();
    return v;
}

std::string pair_key(const std::string& id, std::size_t caption_index) {
    return id + '\x1f' + std::to_string(caption_index);
}

}  // namespace

double Scorer::score(const std::string& image_id, const Image& image, const std::string& caption) const {
    const auto a = embed_image(image_id, image);
    const auto b = embed_text(caption);
    const auto dim = binding().embedding_dim;
    if (a.size() != dim || b.size() != dim) throw ScorerFailure("embedding dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (!(na > 0.0) || !(nb > 0.0)) throw ScorerFailure("zero-norm embedding");
    const double s = dot / (std::sqrt(na) * std::sqrt(nb));
    if (!std::isfinite(s)) throw ScorerFailure("non-finite score");
    return std::clamp(s, -1.0, 1.0);
}

StubHashScorer::StubHashScorer(std::size_t dim) : binding_{"stub-hash-v1", dim} {
    if (dim == 0) throw InvalidArgument("embedding dimension must be positive");
}

std::vector<double> StubHashScorer::embed_image(const std::string& /*image_id*/, const Image& image) const {
    const std::string_view bytes(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
    const std::uint64_t seed = derive_seed({hash_string("image"), static_cast<std::uint64_t>(image.width),
                                            static_cast<std::uint64_t>(image.height), hash_string(bytes)});
    return gaussian_vector(seed, binding_.embedding_dim);
}

std::vector<double> StubHashScorer::embed_text(const std::string& caption) const {
    return gaussian_vector(derive_seed({hash_string("text"), hash_string(caption)}), binding_.embedding_dim);
}

PrecomputedScorer::PrecomputedScorer(std::string scorer_id, const std::filesystem::path& embeddings)
    : binding_{std::move(scorer_id), 0} {
    for (const auto& line : read_jsonl(embeddings)) {
        const auto& j = line.value;
        try {
            const auto kind = j.at("kind").get<std::string>();
            auto key = j.at("key").get<std::string>();
            auto vec = j.at("embedding").get<std::vector<double>>();
            if (vec.empty()) throw MalformedRow(line.line_no, "empty embedding");
            if (binding_.embedding_dim == 0) binding_.embedding_dim = vec.size();
            if (vec.size() != binding_.embedding_dim) throw MalformedRow(line.line_no, "inconsistent embedding size");
            if (kind == "image")
                images_[std::move(key)] = std::move(vec);
            else if (kind == "text")
                texts_[std::move(key)] = std::move(vec);
            else
                throw MalformedRow(line.line_no, "kind must be image or text");
        } catch (const json::exception& e) {
            throw MalformedRow(line.line_no, e.what());
        }
    }
}

std::vector<double> PrecomputedScorer::embed_image(const std::string& image_id, const Image& /*image*/) const {
    const auto it = images_.find(image_id);
    if (it == images_.end()) throw ScorerFailure("no image embedding for " + image_id);
    return it->second;
}

std::vector<double> PrecomputedScorer::embed_text(const std::string& caption) const {
    const auto it = texts_.find(caption);
    if (it == texts_.end()) throw ScorerFailure("no text embedding for caption");
    return it->second;
}

std::unique_ptr<Scorer> make_scorer(const std::string& id, const std::filesystem::path& embeddings) {
    if (id == "stub-hash-v1") return std::make_unique<StubHashScorer>();
    if (id.rfind("precomputed:", 0) == 0) {
        if (embeddings.empty()) throw InvalidArgument("scorer " + id + " needs an embeddings file");
        return std::make_unique<PrecomputedScorer>(id, embeddings);
    }
    throw InvalidArgument("unknown scorer: " + id);
}

ScoreResult score_pairs(const Scorer& scorer, std::span<const PairInput> pairs, std::size_t workers) {
    struct Slot {
        bool ok = false;
        PairScore score;
        PairFailure failure;
    };
    std::vector<Slot> slots(pairs.size());
    parallel_for(pairs.size(), workers, [&](std::size_t i) {
        const auto& p = pairs[i];
        try {
            if (!p.image) throw ScorerFailure("missing image");
            if (p.caption.empty()) throw ScorerFailure("empty caption");
            const double s = scorer.score(p.image_id, *p.image, p.caption);
            slots[i].score = {p.image_id, p.caption_index, s, scorer.binding().scorer_id};
            slots[i].ok = true;
        } catch (const Error& e) {
            slots[i].failure = {p.image_id, p.caption_index, e.kind(), e.what()};
        }
    });
    ScoreResult out;
    for (auto& s : slots) {
        if (s.ok)
            out.scores.push_back(std::move(s.score));
        else
            out.failures.push_back(std::move(s.failure));
    }
    return out;
}

ScoreResult score_manifest(const Scorer& scorer, std::span<const manifest::ManifestEntry> entries,
                           const std::filesystem::path& base_dir, std::size_t workers) {
    std::vector<ScoreResult> per_entry(entries.size());
    parallel_for(entries.size(), workers, [&](std::size_t i) {
        const auto& e = entries[i];
        Image img;
        try {
            if (manifest::is_remote(e.image_path)) throw IoError("remote image: " + e.image_path);
            img = read_image(manifest::resolve_image_path(e.image_path, base_dir));
        } catch (const Error& err) {
            for (std::size_t c = 0; c < e.captions.size(); ++c)
                per_entry[i].failures.push_back({e.image_id, c, err.kind(), err.what()});
            return;
        }
        std::vector<PairInput> pairs;
        for (std::size_t c = 0; c < e.captions.size(); ++c) pairs.push_back({e.image_id, c, &img, e.captions[c]});
        per_entry[i] = score_pairs(scorer, pairs, 1);
    });
    ScoreResult out;
    for (auto& r : per_entry) {
        std::move(r.scores.begin(), r.scores.end(), std::back_inserter(out.scores));
        std::move(r.failures.begin(), r.failures.end(), std::back_inserter(out.failures));
    }
    return out;
}

double median(std::vector<double> values) {
    if (values.size() < 2) throw TooFewPairs("median filter needs at least two scores");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

FilterResult median_filter(std::span<const PairScore> scored) {
    std::vector<double> values;
    values.reserve(scored.size());
    for (const auto& s : scored) {
        if (!std::isfinite(s.score)) throw InvalidArgument("non-finite score for " + s.image_id);
        values.push_back(s.score);
    }
    FilterResult r;
    r.median = median(std::move(values));
    for (const auto& s : scored) (s.score > r.median ? r.kept : r.dropped).push_back(s);
    return r;
}

json to_json(const PairScore& s) {
    return json{{"image_id", s.image_id}, {"caption_index", s.caption_index}, {"score", s.score}, {"scorer_id", s.scorer_id}};
}

PairScore pair_score_from_json(const json& j) {
    PairScore s;
    s.image_id = j.at("image_id").get<std::string>();
    s.caption_index = j.at("caption_index").get<std::size_t>();
    s.score = j.at("score").get<double>();
    s.scorer_id = j.at("scorer_id").get<std::string>();
    if (!std::isfinite(s.score)) throw InvalidArgument("non-finite score");
    return s;
}

void write_scores(const std::filesystem::path& path, std::span<const PairScore> scores) {
    std::vector<json> lines;
    lines.reserve(scores.size());
    for (const auto& s : scores) lines.push_back(to_json(s));
    write_jsonl(path, lines);
}

std::vector<PairScore> read_scores(const std::filesystem::path& path) {
    std::vector<PairScore> out;
    std::set<std::string> seen;
    for (const auto& line : read_jsonl(path)) {
        try {
            out.push_back(pair_score_from_json(line.value));
        } catch (const json::exception& e) {
            throw MalformedRow(line.line_no, e.what());
        } catch (const InvalidArgument& e) {
            throw MalformedRow(line.line_no, e.what());
        }
        if (!seen.insert(pair_key(out.back().image_id, out.back().caption_index)).second)
            throw MalformedRow(line.line_no, "duplicate score for pair");
    }
    return out;
}

json summary(const FilterResult& r) {
    return json{{"n", r.kept.size() + r.dropped.size()},
                {"median", r.median},
                {"n_kept", r.kept.size()},
                {"n_dropped", r.dropped.size()}};
}

ManifestSplit split_manifest(std::span<const manifest::ManifestEntry> entries, std::span<const PairScore> kept) {
    std::set<std::string> keep;
    for (const auto& s : kept) keep.insert(pair_key(s.image_id, s.caption_index));
    ManifestSplit out;
    for (const auto& e : entries) {
        manifest::ManifestEntry k = e, d = e;
        k.captions.clear();
        d.captions.clear();
        for (std::size_t c = 0; c < e.captions.size(); ++c)
            (keep.count(pair_key(e.image_id, c)) ? k : d).captions.push_back(e.captions[c]);
        if (!k.captions.empty()) out.kept.push_back(std::move(k));
        if (!d.captions.empty()) out.dropped.push_back(std::move(d));
    }
    return out;
}

}  // namespace quiltclean::semantic
