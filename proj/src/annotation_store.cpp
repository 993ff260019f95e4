#include "quiltclean/annotation.hpp"

#include "quiltclean/core/error.hpp"
#include "quiltclean/core/rng.hpp"

#include <sqlite3.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>

namespace quiltclean::annotation {

namespace {

class Stmt {
public:
    Stmt(sqlite3* db, const char* sql) : db_(db) {
        if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK)
            throw IoError(std::string("sqlite prepare failed: ") + sqlite3_errmsg(db));
    }
    ~Stmt() { sqlite3_finalize(stmt_); }
    Stmt(const Stmt&) = delete;
    Stmt& operator=(const Stmt&) = delete;

    Stmt& bind(int i, const std::string& v) {
        check(sqlite3_bind_text(stmt_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT));
        return *this;
    }
    Stmt& bind(int i, std::int64_t v) {
        check(sqlite3_bind_int64(stmt_, i, v));
        return *this;
    }

    /// True while a row is available.
    bool step() {
        const int rc = sqlite3_step(stmt_);
        if (rc == SQLITE_ROW) return true;
        if (rc == SQLITE_DONE) return false;
        throw IoError(std::string("sqlite step failed: ") + sqlite3_errmsg(db_));
    }

    std::string text(int col) const {
        const auto* p = sqlite3_column_text(stmt_, col);
        return p ? std::string(reinterpret_cast<const char*>(p), static_cast<std::size_t>(sqlite3_column_bytes(stmt_, col)))
                 : std::string();
    }
    std::int64_t integer(int col) const { return sqlite3_column_int64(stmt_, col); }

private:
    void check(int rc) const {
        if (rc != SQLITE_OK) throw IoError(std::string("sqlite bind failed: ") + sqlite3_errmsg(db_));
    }

    sqlite3* db_;
    sqlite3_stmt* stmt_ = nullptr;
};

std::string flags_text(const ImpurityFlags& f) { return flags_to_json(f).dump(); }

AnnotationRecord record_from_row(const Stmt& s) {
    AnnotationRecord r;
    r.image_id = s.text(0);
    r.flags = flags_from_json(json::parse(s.text(1)));
    r.annotator = s.text(2);
    r.timestamp = s.text(3);
    r.revision = static_cast<int>(s.integer(4));
    return r;
}

}  // namespace

json to_json(const AnnotationRecord& r) {
    return json{{"image_id", r.image_id},
                {"flags", flags_to_json(r.flags)},
                {"annotator", r.annotator},
                {"timestamp", r.timestamp},
                {"revision", r.revision}};
}

double system_clock_seconds() {
    using namespace std::chrono;
    return duration<double>(system_clock::now().time_since_epoch()).count();
}

std::string format_timestamp(double seconds) {
    const auto whole = static_cast<std::time_t>(std::floor(seconds));
    const int millis = std::clamp(static_cast<int>(std::lround((seconds - std::floor(seconds)) * 1000.0)), 0, 999);
    std::tm tm{};
    gmtime_r(&whole, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                  tm.tm_hour, tm.tm_min, tm.tm_sec, millis);
    return buf;
}

AnnotationStore::AnnotationStore(const std::filesystem::path& db_path, Clock clock) : clock_(std::move(clock)) {
    const auto path = db_path.string();
    if (path != ":memory:" && db_path.has_parent_path()) std::filesystem::create_directories(db_path.parent_path());
    if (sqlite3_open_v2(path.c_str(), &db_, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX,
                        nullptr) != SQLITE_OK) {
        const std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
        sqlite3_close(db_);
        db_ = nullptr;
        throw IoError("cannot open annotation store " + path + ": " + msg);
    }
    sqlite3_busy_timeout(db_, 5000);
    if (path != ":memory:") exec("PRAGMA journal_mode=WAL");
    exec("PRAGMA foreign_keys=ON");
    exec(R"sql(
        CREATE TABLE IF NOT EXISTS images (
            image_id   TEXT PRIMARY KEY,
            image_path TEXT NOT NULL,
            position   INTEGER NOT NULL
        );
        CREATE TABLE IF NOT EXISTS annotations (
            image_id  TEXT PRIMARY KEY,
            flags     TEXT NOT NULL,
            annotator TEXT NOT NULL,
            timestamp TEXT NOT NULL,
            revision  INTEGER NOT NULL
        );
        CREATE TABLE IF NOT EXISTS annotation_history (
            id        INTEGER PRIMARY KEY AUTOINCREMENT,
            image_id  TEXT NOT NULL,
            flags     TEXT NOT NULL,
            annotator TEXT NOT NULL,
            timestamp TEXT NOT NULL,
            revision  INTEGER NOT NULL
        );
        CREATE INDEX IF NOT EXISTS history_by_image ON annotation_history(image_id, revision);
    )sql");
}

AnnotationStore::~AnnotationStore() { sqlite3_close(db_); }

void AnnotationStore::exec(const char* sql) const {
    char* err = nullptr;
    if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
        std::string msg = err ? err : "unknown error";
        sqlite3_free(err);
        throw IoError("sqlite: " + msg);
    }
}

QueueState AnnotationStore::create_queue(std::span<const manifest::ManifestEntry> subset, std::uint64_t seed) {
    if (subset.empty()) throw EmptySubset("annotation queue needs at least one image");
    std::vector<const manifest::ManifestEntry*> order;
    for (const auto& e : subset) order.push_back(&e);
    std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->image_id < b->image_id; });
    for (std::size_t i = 1; i < order.size(); ++i)
        if (order[i]->image_id == order[i - 1]->image_id)
            throw InvalidArgument("duplicate image_id in queue subset: " + order[i]->image_id);
    CounterRng rng(derive_seed({seed, hash_string("annotation-queue")}));
    rng.shuffle(order);
    {
        std::lock_guard lock(mutex_);
        exec("BEGIN IMMEDIATE");
        try {
            exec("DELETE FROM images");
            for (std::size_t i = 0; i < order.size(); ++i) {
                Stmt s(db_, "INSERT INTO images(image_id, image_path, position) VALUES (?, ?, ?)");
                s.bind(1, order[i]->image_id).bind(2, order[i]->image_path).bind(3, static_cast<std::int64_t>(i));
                s.step();
            }
            exec("COMMIT");
        } catch (...) {
            exec("ROLLBACK");
            throw;
        }
        leases_.clear();
    }
    return state();
}

AnnotationRecord AnnotationStore::record_annotation(const std::string& image_id, const ImpurityFlags& flags,
                                                    const std::string& annotator) {
    std::lock_guard lock(mutex_);
    {
        Stmt q(db_, "SELECT 1 FROM images WHERE image_id = ?");
        q.bind(1, image_id);
        if (!q.step()) throw UnknownImage(image_id);
    }
    AnnotationRecord rec;
    rec.image_id = image_id;
    rec.flags = flags;
    rec.annotator = annotator;
    rec.timestamp = format_timestamp(clock_());
    exec("BEGIN IMMEDIATE");
    try {
        int previous = 0;
        {
            Stmt q(db_, "SELECT revision FROM annotations WHERE image_id = ?");
            q.bind(1, image_id);
            if (q.step()) previous = static_cast<int>(q.integer(0));
        }
        rec.revision = previous + 1;
        Stmt up(db_,
                "INSERT INTO annotations(image_id, flags, annotator, timestamp, revision) VALUES (?, ?, ?, ?, ?) "
                "ON CONFLICT(image_id) DO UPDATE SET flags = excluded.flags, annotator = excluded.annotator, "
                "timestamp = excluded.timestamp, revision = excluded.revision");
        up.bind(1, image_id).bind(2, flags_text(flags)).bind(3, annotator).bind(4, rec.timestamp).bind(5, rec.revision);
        up.step();
        Stmt hist(db_,
                  "INSERT INTO annotation_history(image_id, flags, annotator, timestamp, revision) VALUES (?, ?, ?, ?, ?)");
        hist.bind(1, image_id).bind(2, flags_text(flags)).bind(3, annotator).bind(4, rec.timestamp).bind(5, rec.revision);
        hist.step();
        exec("COMMIT");
    } catch (...) {
        exec("ROLLBACK");
        throw;
    }
    leases_.erase(image_id);
    return rec;
}

std::optional<AnnotationRecord> AnnotationStore::current(const std::string& image_id) const {
    std::lock_guard lock(mutex_);
    Stmt q(db_, "SELECT image_id, flags, annotator, timestamp, revision FROM annotations WHERE image_id = ?");
    q.bind(1, image_id);
    if (!q.step()) return std::nullopt;
    return record_from_row(q);
}

std::vector<AnnotationRecord> AnnotationStore::history(const std::string& image_id) const {
    std::lock_guard lock(mutex_);
    Stmt q(db_,
           "SELECT image_id, flags, annotator, timestamp, revision FROM annotation_history WHERE image_id = ? "
           "ORDER BY revision");
    q.bind(1, image_id);
    std::vector<AnnotationRecord> out;
    while (q.step()) out.push_back(record_from_row(q));
    return out;
}

std::vector<AnnotationRecord> AnnotationStore::records() const {
    std::lock_guard lock(mutex_);
    Stmt q(db_,
           "SELECT a.image_id, a.flags, a.annotator, a.timestamp, a.revision FROM annotations a "
           "JOIN images i ON i.image_id = a.image_id ORDER BY a.image_id");
    std::vector<AnnotationRecord> out;
    while (q.step()) out.push_back(record_from_row(q));
    return out;
}

QueueState AnnotationStore::state() const {
    std::lock_guard lock(mutex_);
    QueueState s;
    Stmt q(db_,
           "SELECT i.image_id, a.image_id IS NOT NULL FROM images i LEFT JOIN annotations a ON a.image_id = i.image_id "
           "ORDER BY i.position");
    while (q.step()) {
        ++s.total;
        if (q.integer(1))
            ++s.done;
        else
            s.pending.push_back(q.text(0));
    }
    return s;
}

Progress AnnotationStore::progress() const {
    std::lock_guard lock(mutex_);
    Stmt q(db_,
           "SELECT COUNT(*), COUNT(a.image_id) FROM images i LEFT JOIN annotations a ON a.image_id = i.image_id");
    q.step();
    return {static_cast<std::size_t>(q.integer(1)), static_cast<std::size_t>(q.integer(0))};
}

bool AnnotationStore::contains(const std::string& image_id) const { return image_path(image_id).has_value(); }

std::optional<std::string> AnnotationStore::image_path(const std::string& image_id) const {
    std::lock_guard lock(mutex_);
    Stmt q(db_, "SELECT image_path FROM images WHERE image_id = ?");
    q.bind(1, image_id);
    if (!q.step()) return std::nullopt;
    return q.text(0);
}

std::optional<Task> AnnotationStore::next_task(double lease_seconds) {
    std::lock_guard lock(mutex_);
    const double now = clock_();
    Stmt q(db_,
           "SELECT i.image_id, i.image_path FROM images i LEFT JOIN annotations a ON a.image_id = i.image_id "
           "WHERE a.image_id IS NULL ORDER BY i.position");
    while (q.step()) {
        auto id = q.text(0);
        const auto it = leases_.find(id);
        if (it != leases_.end() && it->second > now) continue;
        const double expires = now + lease_seconds;
        leases_[id] = expires;
        return Task{std::move(id), q.text(1), expires};
    }
    return std::nullopt;
}

std::vector<LabelRecord> AnnotationStore::labels() const {
    std::vector<LabelRecord> out;
    for (const auto& r : records()) out.push_back({r.image_id, ImpurityLabelSet(r.flags)});
    return out;
}

std::string AnnotationStore::export_labels() const { return labels_to_jsonl(labels()); }

}  // namespace quiltclean::annotation
