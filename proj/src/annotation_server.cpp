#include "quiltclean/annotation.hpp"

#include "quiltclean/core/error.hpp"
#include "quiltclean/core/image.hpp"

#include <httplib.h>

#include <cctype>
#include <set>
#include <thread>

namespace quiltclean::annotation {

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& message) {
    send_json(res, status, json{{"error", kind}, {"message", message}});
}

// Parses and validates a POST /api/annotations body.
struct Submission {
    std::string image_id;
    ImpurityFlags flags{};
    std::string annotator = "anonymous";
};

Submission parse_submission(const std::string& body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception&) {
        throw InvalidArgument("body is not valid JSON");
    }
    if (!j.is_object()) throw InvalidArgument("body must be a JSON object");
    static const std::set<std::string> allowed = {"image_id", "flags", "annotator"};
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key)) throw InvalidArgument("unexpected field: " + key);
    if (!j.contains("image_id") || !j["image_id"].is_string() || j["image_id"].get<std::string>().empty())
        throw InvalidArgument("image_id must be a non-empty string");
    if (!j.contains("flags")) throw InvalidArgument("flags is required");
    Submission s;
    s.image_id = j["image_id"].get<std::string>();
    s.flags = flags_from_json(j["flags"]);
    if (j.contains("annotator")) {
        if (!j["annotator"].is_string() || j["annotator"].get<std::string>().empty())
            throw InvalidArgument("annotator must be a non-empty string");
        s.annotator = j["annotator"].get<std::string>();
    }
    return s;
}

std::string url_encode(const std::string& s) {
    static const char* hex = "0123456789ABCDEF";
    std::string out;
    for (unsigned char c : s) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
            out += static_cast<char>(c);
        } else {
            out += '%';
            out += hex[c >> 4];
            out += hex[c & 15];
        }
    }
    return out;
}

}  // namespace

struct AnnotationServer::Impl {
    Impl(AnnotationStore& s, ServerConfig c) : store(s), config(std::move(c)) {}

    AnnotationStore& store;
    ServerConfig config;
    httplib::Server server;
    std::thread thread;
};

AnnotationServer::AnnotationServer(AnnotationStore& store, ServerConfig config)
    : impl_(std::make_unique<Impl>(store, std::move(config))) {
    auto& svr = impl_->server;
    auto* impl = impl_.get();

    svr.Get("/api/tasks/next", [impl](const httplib::Request&, httplib::Response& res) {
        const auto task = impl->store.next_task(impl->config.lease_seconds);
        if (!task) {
            res.status = 204;
            return;
        }
        send_json(res, 200,
                  json{{"image_id", task->image_id},
                       {"image_url", "/api/images/" + url_encode(task->image_id)},
                       {"lease_seconds", impl->config.lease_seconds}});
    });

    svr.Post("/api/annotations", [impl](const httplib::Request& req, httplib::Response& res) {
        Submission s;
        try {
            s = parse_submission(req.body);
        } catch (const Error& e) {
            return send_error(res, 400, "InvalidArgument", e.what());
        }
        try {
            const auto rec = impl->store.record_annotation(s.image_id, s.flags, s.annotator);
            send_json(res, 201, to_json(rec));
        } catch (const UnknownImage& e) {
            send_error(res, 404, e.kind(), std::string("unknown image: ") + e.what());
        }
    });

    svr.Get("/api/annotations", [impl](const httplib::Request& req, httplib::Response& res) {
        std::optional<ImpurityCategory> category;
        bool any_only = false;
        if (req.has_param("filter")) {
            const auto f = req.get_param_value("filter");
            if (f == "any") {
                any_only = true;
            } else {
                category = parse_category(f);
                if (!category) return send_error(res, 400, "InvalidArgument", "unknown filter: " + f);
            }
        }
        json out = json::array();
        for (const auto& r : impl->store.records()) {
            const ImpurityLabelSet labels(r.flags);
            if (category && !labels.test(*category)) continue;
            if (any_only && !labels.any()) continue;
            out.push_back(to_json(r));
        }
        send_json(res, 200, out);
    });

    svr.Get(R"(/api/annotations/(.+))", [impl](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        if (!impl->store.contains(id)) return send_error(res, 404, "UnknownImage", "unknown image: " + id);
        const auto cur = impl->store.current(id);
        json hist = json::array();
        for (const auto& r : impl->store.history(id)) hist.push_back(to_json(r));
        send_json(res, 200, json{{"current", cur ? to_json(*cur) : json(nullptr)}, {"history", hist}});
    });

    svr.Get("/api/progress", [impl](const httplib::Request&, httplib::Response& res) {
        const auto p = impl->store.progress();
        send_json(res, 200, json{{"done", p.done}, {"total", p.total}});
    });

    svr.Get(R"(/api/images/(.+))", [impl](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        const auto path = impl->store.image_path(id);
        if (!path) return send_error(res, 404, "UnknownImage", "unknown image: " + id);
        try {
            const auto bytes = read_file_bytes(manifest::resolve_image_path(*path, impl->config.image_base_dir));
            res.status = 200;
            res.set_content(std::string(bytes.begin(), bytes.end()), sniff_content_type(bytes));
        } catch (const Error& e) {
            send_error(res, 404, "MissingImage", e.what());
        }
    });

    svr.Get("/api/labels/export", [impl](const httplib::Request&, httplib::Response& res) {
        res.status = 200;
        res.set_content(impl->store.export_labels(), "application/x-ndjson");
    });

    if (impl_->config.static_dir) svr.set_mount_point("/", impl_->config.static_dir->string());
}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::bind() {
    auto& cfg = impl_->config;
    if (cfg.port == 0) {
        port_ = impl_->server.bind_to_any_port(cfg.host);
        if (port_ <= 0) throw IoError("cannot bind " + cfg.host);
    } else {
        if (!impl_->server.bind_to_port(cfg.host, cfg.port))
            throw IoError("cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
        port_ = cfg.port;
    }
    return port_;
}

void AnnotationServer::listen() { impl_->server.listen_after_bind(); }

int AnnotationServer::start() {
    const int p = bind();
    impl_->thread = std::thread([this] { listen(); });
    impl_->server.wait_until_ready();
    return p;
}

void AnnotationServer::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace quiltclean::annotation
