#pragma once

#include "quiltclean/labels.hpp"
#include "quiltclean/manifest.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

struct sqlite3;

namespace quiltclean::annotation {

struct AnnotationRecord {
    std::string image_id;
    ImpurityFlags flags{};
    std::string annotator;
    std::string timestamp;  // ISO 8601 UTC, millisecond precision
    int revision = 0;
};

json to_json(const AnnotationRecord& r);

struct QueueState {
    std::vector<std::string> pending;  // queue order
    std::size_t done = 0;
    std::size_t total = 0;
};

struct Progress {
    std::size_t done = 0;
    std::size_t total = 0;
};

struct Task {
    std::string image_id;
    std::string image_path;
    double lease_expires = 0.0;
};

/// Seconds since the Unix epoch.
using Clock = std::function<double()>;
double system_clock_seconds();
std::string format_timestamp(double seconds);

/// SQLite-backed label store and task queue. Every public call takes one
/// mutex, so mutations are serialised and reads see a consistent state.
class AnnotationStore {
public:
    /// Opens (creating if needed) the database file in WAL mode. ":memory:"
    /// gives a private in-memory store.
    explicit AnnotationStore(const std::filesystem::path& db_path, Clock clock = system_clock_seconds);
    ~AnnotationStore();
    AnnotationStore(const AnnotationStore&) = delete;
    AnnotationStore& operator=(const AnnotationStore&) = delete;

    /// Replaces the queue universe with `subset` in a seeded shuffle of the
    /// id-sorted entries. Existing annotations for ids still in the universe
    /// are kept. Throws EmptySubset.
    QueueState create_queue(std::span<const manifest::ManifestEntry> subset, std::uint64_t seed);

    /// Upsert: the first submission has revision 1, each resubmission bumps
    /// it and archives the previous record. Throws UnknownImage.
    AnnotationRecord record_annotation(const std::string& image_id, const ImpurityFlags& flags,
                                       const std::string& annotator);

    std::optional<AnnotationRecord> current(const std::string& image_id) const;
    /// All revisions, oldest first (the current one last).
    std::vector<AnnotationRecord> history(const std::string& image_id) const;
    /// Current records sorted by image_id.
    std::vector<AnnotationRecord> records() const;

    QueueState state() const;
    Progress progress() const;
    bool contains(const std::string& image_id) const;
    std::optional<std::string> image_path(const std::string& image_id) const;

    /// First pending image without a live lease, leased for `lease_seconds`.
    /// Distinct concurrent callers receive distinct ids.
    std::optional<Task> next_task(double lease_seconds);

    std::vector<LabelRecord> labels() const;
    /// One `{image_id, flags}` line per current record, sorted by image_id.
    std::string export_labels() const;

private:
    void exec(const char* sql) const;

    sqlite3* db_ = nullptr;
    Clock clock_;
    mutable std::mutex mutex_;
    std::map<std::string, double> leases_;
};

struct ServerConfig {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    double lease_seconds = 300.0;
    std::filesystem::path image_base_dir;
    std::optional<std::filesystem::path> static_dir;  // served under "/"
};

/// REST front end:
///   GET  /api/tasks/next        -> 200 {image_id, image_url, lease_seconds} | 204
///   POST /api/annotations       -> 201 record | 400 bad body | 404 unknown image
///   GET  /api/annotations       -> 200 [records] (optional ?filter=CATEGORY|any)
///   GET  /api/annotations/{id}  -> 200 {current, history} | 404
///   GET  /api/progress          -> 200 {done, total}
///   GET  /api/images/{id}       -> image bytes | 404
///   GET  /api/labels/export     -> labels JSONL
class AnnotationServer {
public:
    AnnotationServer(AnnotationStore& store, ServerConfig config);
    ~AnnotationServer();

    /// Binds the socket and returns the bound port.
    int bind();
    /// Blocks serving requests until stop().
    void listen();
    /// bind() and serve on a background thread.
    int start();
    void stop();
    int port() const noexcept { return port_; }

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int port_ = 0;
};

}  // namespace quiltclean::annotation
