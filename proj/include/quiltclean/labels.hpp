#pragma once

#include "quiltclean/core/files.hpp"

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace quiltclean {

/// The eight impurity classes. The enumerator value is the classifier output
/// channel, so the order is part of every on-disk format.
enum class ImpurityCategory : std::size_t {
    Narrator = 0,
    DesktopChrome,
    TextLogo,
    ArrowAnnotation,
    LowQuality,
    SlideOverview,
    ControlElements,
    MultiPanel,
};

inline constexpr std::size_t kNumCategories = 8;

inline constexpr std::array<ImpurityCategory, kNumCategories> kAllCategories = {
    ImpurityCategory::Narrator,      ImpurityCategory::DesktopChrome, ImpurityCategory::TextLogo,
    ImpurityCategory::ArrowAnnotation, ImpurityCategory::LowQuality, ImpurityCategory::SlideOverview,
    ImpurityCategory::ControlElements, ImpurityCategory::MultiPanel,
};

constexpr std::size_t index_of(ImpurityCategory c) noexcept { return static_cast<std::size_t>(c); }

/// Machine name, e.g. "TEXT_LOGO".
std::string_view category_name(ImpurityCategory c) noexcept;
/// Human-readable row label used in reports.
std::string_view category_title(ImpurityCategory c) noexcept;
std::optional<ImpurityCategory> parse_category(std::string_view name) noexcept;

using ImpurityFlags = std::array<bool, kNumCategories>;

/// Image-level impurity flags. `any()` is always derived from the flags.
class ImpurityLabelSet {
public:
    ImpurityLabelSet() = default;
    explicit ImpurityLabelSet(const ImpurityFlags& flags) : flags_(flags) {}

    static ImpurityLabelSet only(ImpurityCategory c) {
        ImpurityLabelSet s;
        s.set(c, true);
        return s;
    }

    bool test(ImpurityCategory c) const noexcept { return flags_[index_of(c)]; }
    void set(ImpurityCategory c, bool value) noexcept { flags_[index_of(c)] = value; }
    const ImpurityFlags& flags() const noexcept { return flags_; }

    bool any() const noexcept {
        for (bool f : flags_)
            if (f) return true;
        return false;
    }
    std::size_t count() const noexcept {
        std::size_t n = 0;
        for (bool f : flags_) n += f ? 1 : 0;
        return n;
    }

    ImpurityLabelSet operator|(const ImpurityLabelSet& other) const noexcept {
        ImpurityLabelSet r;
        for (std::size_t i = 0; i < kNumCategories; ++i) r.flags_[i] = flags_[i] || other.flags_[i];
        return r;
    }
    ImpurityLabelSet& operator|=(const ImpurityLabelSet& other) noexcept { return *this = *this | other; }

    friend bool operator==(const ImpurityLabelSet&, const ImpurityLabelSet&) = default;

private:
    ImpurityFlags flags_{};
};

/// One line of a labels file: `{"image_id": ..., "flags": [8 bools]}`.
struct LabelRecord {
    std::string image_id;
    ImpurityLabelSet labels;
    friend bool operator==(const LabelRecord&, const LabelRecord&) = default;
};

json flags_to_json(const ImpurityFlags& flags);
/// Throws InvalidArgument unless `j` is an array of exactly 8 booleans.
ImpurityFlags flags_from_json(const json& j);

json to_json(const LabelRecord& r);
LabelRecord label_record_from_json(const json& j);

/// Label files are sorted by image_id on write.
std::string labels_to_jsonl(std::vector<LabelRecord> records);
void write_labels(const std::filesystem::path& path, std::vector<LabelRecord> records);
std::vector<LabelRecord> read_labels(const std::filesystem::path& path);
std::map<std::string, ImpurityLabelSet> labels_by_id(std::span<const LabelRecord> records);

struct Prevalence {
    std::array<double, kNumCategories> per_category{};
    double any = 0.0;
    std::size_t n = 0;
};

/// Fraction of records carrying each flag, and the fraction with at least
/// one flag. Throws EmptyLabels for an empty input.
Prevalence compute_prevalence(std::span<const ImpurityLabelSet> labels);
Prevalence compute_prevalence(std::span<const LabelRecord> records);

json to_json(const Prevalence& p);

}  // namespace quiltclean
