#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cardseg/label_ops.hpp"

namespace cardseg {

/// Per-case manual-annotation stand-in: the RV/PA valve plane and the LA
/// parcellation boxes.
///
/// JSON form:
///   {"case_id": "...",
///    "plane": {"point": [x,y,z] mm, "normal": [x,y,z]},
///    "boxes": [{"range": [[z0,z1],[y0,y1],[x0,x1]], "label": "LPV"}]}
/// Box ranges are half-open voxel indices in (z,y,x) order; box labels are
/// TEN-schema names (LPV, RPV, LAA) or their numeric ids.
struct CaseAnnotations {
    std::string case_id;
    std::optional<Plane> plane;
    std::vector<CropBox> boxes;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["case_id"] = case_id;
        if (plane) {
            j["plane"] = {{"point", {plane->point.x, plane->point.y, plane->point.z}},
                          {"normal", {plane->normal.x, plane->normal.y, plane->normal.z}}};
        }
        j["boxes"] = nlohmann::json::array();
        for (const auto& b : boxes)
            j["boxes"].push_back(
                {{"range",
                  {{b.lo.z, b.hi.z}, {b.lo.y, b.hi.y}, {b.lo.x, b.hi.x}}},
                 {"label", LabelSchema::ten().name_of(b.label)}});
        return j;
    }

    static CaseAnnotations from_json(const nlohmann::json& j) {
        CaseAnnotations a;
        a.case_id = j.value("case_id", "");
        if (j.contains("plane")) {
            const auto& p = j.at("plane");
            a.plane = Plane({p.at("point").at(0), p.at("point").at(1), p.at("point").at(2)},
                            {p.at("normal").at(0), p.at("normal").at(1), p.at("normal").at(2)});
        }
        for (const auto& jb : j.value("boxes", nlohmann::json::array())) {
            CropBox b;
            const auto& r = jb.at("range");
            b.lo = {r.at(0).at(0), r.at(1).at(0), r.at(2).at(0)};
            b.hi = {r.at(0).at(1), r.at(1).at(1), r.at(2).at(1)};
            const auto& lab = jb.at("label");
            b.label = lab.is_string() ? LabelSchema::ten().id_of(lab.get<std::string>())
                                      : static_cast<LabelId>(lab.get<int>());
            a.boxes.push_back(b);
        }
        return a;
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::trunc);
        if (!f) throw io_error("cannot write annotations: " + path);
        f << to_json().dump(2) << "\n";
    }

    static CaseAnnotations load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw io_error("cannot open annotations: " + path);
        nlohmann::json j;
        try {
            f >> j;
        } catch (const nlohmann::json::exception& e) {
            throw io_error("bad annotation JSON in " + path + ": " + e.what());
        }
        return from_json(j);
    }
};

}  // namespace cardseg
