#pragma once

#include "quiltclean/core/files.hpp"
#include "quiltclean/core/image.hpp"
#include "quiltclean/manifest.hpp"

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace quiltclean::semantic {

struct PairScore {
    std::string image_id;
    std::size_t caption_index = 0;
    double score = 0.0;
    std::string scorer_id;
};

struct ScorerBinding {
    std::string scorer_id;
    std::size_t embedding_dim = 0;
    std::string score_definition = "cosine similarity of unit-normalised image and text embeddings";
};

/// Vision-language embedding model. Scores are cosine similarities, so any
/// implementation only has to provide the two embeddings.
class Scorer {
public:
    virtual ~Scorer() = default;
    virtual const ScorerBinding& binding() const = 0;
    virtual std::vector<double> embed_image(const std::string& image_id, const Image& image) const = 0;
    virtual std::vector<double> embed_text(const std::string& caption) const = 0;

    /// Cosine similarity. Throws ScorerFailure for zero-norm, non-finite or
    /// wrongly sized embeddings.
    double score(const std::string& image_id, const Image& image, const std::string& caption) const;
};

/// Deterministic stand-in: pseudo-embeddings seeded by a hash of the pixels
/// (image) or the caption text.
class StubHashScorer final : public Scorer {
public:
    explicit StubHashScorer(std::size_t dim = 64);
    const ScorerBinding& binding() const override { return binding_; }
    std::vector<double> embed_image(const std::string& image_id, const Image& image) const override;
    std::vector<double> embed_text(const std::string& caption) const override;

private:
    ScorerBinding binding_;
};

/// Embeddings computed offline by an external model. The file is JSONL with
/// one `{"kind": "image"|"text", "key": ..., "embedding": [...]}` per line;
/// image keys are image ids, text keys are the caption strings.
class PrecomputedScorer final : public Scorer {
public:
    PrecomputedScorer(std::string scorer_id, const std::filesystem::path& embeddings);
    const ScorerBinding& binding() const override { return binding_; }
    std::vector<double> embed_image(const std::string& image_id, const Image& image) const override;
    std::vector<double> embed_text(const std::string& caption) const override;

private:
    ScorerBinding binding_;
    std::map<std::string, std::vector<double>> images_, texts_;
};

/// "stub-hash-v1", or "precomputed:<name>" together with an embeddings file.
std::unique_ptr<Scorer> make_scorer(const std::string& id, const std::filesystem::path& embeddings = {});

struct PairInput {
    std::string image_id;
    std::size_t caption_index = 0;
    const Image* image = nullptr;
    std::string caption;
};

struct PairFailure {
    std::string image_id;
    std::size_t caption_index = 0;
    std::string kind;
    std::string message;
};

struct ScoreResult {
    std::vector<PairScore> scores;  // input order, failed pairs omitted
    std::vector<PairFailure> failures;
};

/// One score per pair; a failing pair is recorded and the batch continues.
ScoreResult score_pairs(const Scorer& scorer, std::span<const PairInput> pairs, std::size_t workers = 0);

/// Scores every (image, caption) pair of a manifest. Each image is decoded
/// once; an unreadable image fails all of its pairs.
ScoreResult score_manifest(const Scorer& scorer, std::span<const manifest::ManifestEntry> entries,
                           const std::filesystem::path& base_dir, std::size_t workers = 0);

/// Midpoint of the two central order statistics for even N, the central
/// value for odd N. Throws TooFewPairs below two scores.
double median(std::vector<double> values);

struct FilterResult {
    std::vector<PairScore> kept;     // score strictly above the median, input order
    std::vector<PairScore> dropped;  // everything else, input order
    double median = 0.0;
};

FilterResult median_filter(std::span<const PairScore> scored);

json to_json(const PairScore& s);
PairScore pair_score_from_json(const json& j);
void write_scores(const std::filesystem::path& path, std::span<const PairScore> scores);
std::vector<PairScore> read_scores(const std::filesystem::path& path);

/// `{n, median, n_kept, n_dropped}`.
json summary(const FilterResult& r);

struct ManifestSplit {
    std::vector<manifest::ManifestEntry> kept;
    std::vector<manifest::ManifestEntry> dropped;
};

/// Splits each entry's captions by whether its pair is in `kept`. An entry
/// appears on a side when at least one of its captions does.
ManifestSplit split_manifest(std::span<const manifest::ManifestEntry> entries, std::span<const PairScore> kept);

}  // namespace quiltclean::semantic
