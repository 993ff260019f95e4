#include "quiltclean/labels.hpp"

#include "quiltclean/core/error.hpp"

#include <algorithm>

namespace quiltclean {

std::string_view category_name(ImpurityCategory c) noexcept {
    switch (c) {
        case ImpurityCategory::Narrator: return "NARRATOR";
        case ImpurityCategory::DesktopChrome: return "DESKTOP_CHROME";
        case ImpurityCategory::TextLogo: return "TEXT_LOGO";
        case ImpurityCategory::ArrowAnnotation: return "ARROW_ANNOTATION";
        case ImpurityCategory::LowQuality: return "LOW_QUALITY";
        case ImpurityCategory::SlideOverview: return "SLIDE_OVERVIEW";
        case ImpurityCategory::ControlElements: return "CONTROL_ELEMENTS";
        case ImpurityCategory::MultiPanel: return "MULTI_PANEL";
    }
    return "UNKNOWN";
}

std::string_view category_title(ImpurityCategory c) noexcept {
    switch (c) {
        case ImpurityCategory::Narrator: return "Narrator/person";
        case ImpurityCategory::DesktopChrome: return "Desktop/window decorations/slide viewer";
        case ImpurityCategory::TextLogo: return "Text/logo";
        case ImpurityCategory::ArrowAnnotation: return "Arrow/annotations";
        case ImpurityCategory::LowQuality: return "Image of insufficient quality";
        case ImpurityCategory::SlideOverview: return "Additional slide overview";
        case ImpurityCategory::ControlElements: return "Additional buttons/control elements";
        case ImpurityCategory::MultiPanel: return "Multi-panel image";
    }
    return "Unknown";
}

std::optional<ImpurityCategory> parse_category(std::string_view name) noexcept {
    for (auto c : kAllCategories)
        if (category_name(c) == name) return c;
    return std::nullopt;
}

json flags_to_json(const ImpurityFlags& flags) {
    json arr = json::array();
    for (bool f : flags) arr.push_back(f);
    return arr;
}

ImpurityFlags flags_from_json(const json& j) {
    if (!j.is_array() || j.size() != kNumCategories)
        throw InvalidArgument("flags must be an array of 8 booleans");
    ImpurityFlags flags{};
    for (std::size_t i = 0; i < kNumCategories; ++i) {
        if (!j[i].is_boolean()) throw InvalidArgument("flags must be an array of 8 booleans");
        flags[i] = j[i].get<bool>();
    }
    return flags;
}

json to_json(const LabelRecord& r) {
    return json{{"image_id", r.image_id}, {"flags", flags_to_json(r.labels.flags())}};
}

LabelRecord label_record_from_json(const json& j) {
    if (!j.is_object() || !j.contains("image_id") || !j["image_id"].is_string() || !j.contains("flags"))
        throw InvalidArgument("label record needs image_id and flags");
    return {j["image_id"].get<std::string>(), ImpurityLabelSet(flags_from_json(j["flags"]))};
}

std::string labels_to_jsonl(std::vector<LabelRecord> records) {
    std::sort(records.begin(), records.end(),
              [](const LabelRecord& a, const LabelRecord& b) { return a.image_id < b.image_id; });
    std::vector<json> lines;
    lines.reserve(records.size());
    for (const auto& r : records) lines.push_back(to_json(r));
    return to_jsonl(lines);
}

void write_labels(const std::filesystem::path& path, std::vector<LabelRecord> records) {
    write_text_file(path, labels_to_jsonl(std::move(records)));
}

std::vector<LabelRecord> read_labels(const std::filesystem::path& path) {
    std::vector<LabelRecord> out;
    for (const auto& line : read_jsonl(path)) {
        try {
            out.push_back(label_record_from_json(line.value));
        } catch (const InvalidArgument& e) {
            throw MalformedRow(line.line_no, e.what());
        }
    }
    return out;
}

std::map<std::string, ImpurityLabelSet> labels_by_id(std::span<const LabelRecord> records) {
    std::map<std::string, ImpurityLabelSet> out;
    for (const auto& r : records) out[r.image_id] = r.labels;
    return out;
}

Prevalence compute_prevalence(std::span<const ImpurityLabelSet> labels) {
    if (labels.empty()) throw EmptyLabels("prevalence of an empty label set");
    std::array<std::size_t, kNumCategories> counts{};
    std::size_t any = 0;
    for (const auto& l : labels) {
        for (std::size_t i = 0; i < kNumCategories; ++i) counts[i] += l.flags()[i] ? 1 : 0;
        any += l.any() ? 1 : 0;
    }
    Prevalence p;
    p.n = labels.size();
    const auto n = static_cast<double>(labels.size());
    for (std::size_t i = 0; i < kNumCategories; ++i) p.per_category[i] = static_cast<double>(counts[i]) / n;
    p.any = static_cast<double>(any) / n;
    return p;
}

Prevalence compute_prevalence(std::span<const LabelRecord> records) {
    std::vector<ImpurityLabelSet> labels;
    labels.reserve(records.size());
    for (const auto& r : records) labels.push_back(r.labels);
    return compute_prevalence(labels);
}

json to_json(const Prevalence& p) {
    json per = json::object();
    for (auto c : kAllCategories) per[std::string(category_name(c))] = p.per_category[index_of(c)];
    return json{{"n", p.n}, {"per_category", per}, {"any", p.any}};
}

}  // namespace quiltclean
