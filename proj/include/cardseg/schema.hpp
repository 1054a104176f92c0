#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cardseg/core.hpp"

namespace cardseg {

using LabelId = std::uint8_t;
constexpr LabelId kBackground = 0;

/// Named label-set variants used across the pipeline stages.
///
/// SIX and SIX_NO_PA_REFINED share the same six entries; they differ in
/// meaning only (in the refined variant the RV label excludes the pulmonary
/// artery section, whose voxels are background until re-extrapolated).
enum class SchemaVariant { SIX, SIX_NO_PA_REFINED, SEVEN, TEN };

inline const char* to_string(SchemaVariant v) {
    switch (v) {
        case SchemaVariant::SIX: return "six";
        case SchemaVariant::SIX_NO_PA_REFINED: return "six_no_pa";
        case SchemaVariant::SEVEN: return "seven";
        case SchemaVariant::TEN: return "ten";
    }
    return "?";
}

/// Ordered (id, name) label set with name-based merge maps between variants.
/// IDs are contiguous from 1; 0 is reserved for background.
class LabelSchema {
public:
    struct Entry {
        LabelId id;
        std::string name;
    };

    static const LabelSchema& six() {
        static const LabelSchema s{SchemaVariant::SIX,
                                   {"LV", "LVMyo", "RV", "LA", "RA", "AA"}};
        return s;
    }
    static const LabelSchema& six_no_pa_refined() {
        static const LabelSchema s{SchemaVariant::SIX_NO_PA_REFINED,
                                   {"LV", "LVMyo", "RV", "LA", "RA", "AA"}};
        return s;
    }
    static const LabelSchema& seven() {
        static const LabelSchema s{SchemaVariant::SEVEN,
                                   {"LV", "LVMyo", "RV", "LA", "RA", "AA", "PA"}};
        return s;
    }
    static const LabelSchema& ten() {
        static const LabelSchema s{
            SchemaVariant::TEN,
            {"LV", "LVMyo", "RV", "RA", "AA", "PA", "LAbody", "LPV", "RPV", "LAA"}};
        return s;
    }

    static const LabelSchema& by_variant(SchemaVariant v) {
        switch (v) {
            case SchemaVariant::SIX: return six();
            case SchemaVariant::SIX_NO_PA_REFINED: return six_no_pa_refined();
            case SchemaVariant::SEVEN: return seven();
            case SchemaVariant::TEN: return ten();
        }
        throw data_error("unknown schema variant");
    }

    static const LabelSchema& by_name(const std::string& s) {
        if (s == "six") return six();
        if (s == "six_no_pa" || s == "six_no_pa_refined") return six_no_pa_refined();
        if (s == "seven") return seven();
        if (s == "ten") return ten();
        throw data_error("unknown schema: " + s);
    }

    SchemaVariant variant() const { return variant_; }
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    LabelId max_id() const { return static_cast<LabelId>(entries_.size()); }

    bool has(LabelId id) const { return id <= max_id(); }  // 0 = background, always valid

    const std::string& name_of(LabelId id) const {
        static const std::string bg = "background";
        if (id == kBackground) return bg;
        if (!has(id)) throw data_error("label id out of schema range");
        return entries_[id - 1].name;
    }

    bool has_name(const std::string& name) const {
        for (const auto& e : entries_)
            if (e.name == name) return true;
        return false;
    }

    LabelId id_of(const std::string& name) const {
        for (const auto& e : entries_)
            if (e.name == name) return e.id;
        throw data_error("label '" + name + "' not in schema " +
                         std::string(to_string(variant_)));
    }

    /// Merge map to a coarser variant, indexed by source label id.
    /// Anatomy folds by name; the exceptions are PA (into RV when the target
    /// lacks a PA entry) and the four LA sublabels (into LA).
    std::vector<LabelId> merge_map_to(const LabelSchema& target) const {
        std::vector<LabelId> map(max_id() + 1, kBackground);
        for (const auto& e : entries_) {
            std::string name = e.name;
            if (!target.has_name(name)) {
                if (name == "PA")
                    name = "RV";
                else if (name == "LAbody" || name == "LPV" || name == "RPV" || name == "LAA")
                    name = "LA";
                else if (name == "LA")
                    name = "LAbody";  // finer target: LA becomes the body label
            }
            if (!target.has_name(name))
                throw data_error("no merge rule for label '" + e.name + "' into schema " +
                                 std::string(to_string(target.variant())));
            map[e.id] = target.id_of(name);
        }
        return map;
    }

    friend bool operator==(const LabelSchema& a, const LabelSchema& b) {
        return a.variant_ == b.variant_;
    }

private:
    LabelSchema(SchemaVariant v, std::vector<std::string> names) : variant_(v) {
        entries_.reserve(names.size());
        for (std::size_t i = 0; i < names.size(); ++i)
            entries_.push_back({static_cast<LabelId>(i + 1), std::move(names[i])});
    }

    SchemaVariant variant_;
    std::vector<Entry> entries_;
};

}  // namespace cardseg
