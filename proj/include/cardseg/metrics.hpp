#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cardseg/volume.hpp"

namespace cardseg {

/// Dice overlap 2|A∩B| / (|A|+|B|) for one label.  Two empty sets agree
/// perfectly and score 1.
inline double dice(const LabelVolume& pred, const LabelVolume& ref, LabelId label_id) {
    require_same_geometry(pred, ref, "dice");
    std::int64_t a = 0, b = 0, ab = 0;
    for (std::size_t l = 0; l < pred.size(); ++l) {
        const bool in_a = pred[static_cast<std::int64_t>(l)] == label_id;
        const bool in_b = ref[static_cast<std::int64_t>(l)] == label_id;
        a += in_a;
        b += in_b;
        ab += (in_a && in_b);
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(ab) / static_cast<double>(a + b);
}

struct LabelAggregate {
    std::string name;
    std::vector<double> scores;  // one per case where the label exists in the reference
    double median = 0.0, mean = 0.0, stddev = 0.0;
};

/// Per-case, per-label Dice with per-label aggregates.  Cases whose reference
/// lacks a label are excluded from that label's aggregate.
struct DiceReport {
    struct CaseScores {
        std::string case_id;
        std::map<std::string, double> by_label;  // label name -> dice
    };

    std::vector<CaseScores> cases;
    std::vector<LabelAggregate> aggregates;  // schema order
    std::size_t case_count = 0;

    std::string to_csv() const {
        std::ostringstream os;
        os << "case_id,label,dice\n";
        for (const auto& c : cases)
            for (const auto& [name, score] : c.by_label)
                os << c.case_id << "," << name << "," << std::setprecision(6) << std::fixed
                   << score << "\n";
        return os.str();
    }

    /// Percent table with one decimal, labels as columns.
    std::string to_table(const std::string& row_name = "dice") const {
        std::ostringstream os;
        os << std::left << std::setw(12) << "";
        for (const auto& a : aggregates) os << std::setw(8) << a.name;
        os << "\n";
        auto row = [&](const std::string& title, auto get) {
            os << std::left << std::setw(12) << title;
            for (const auto& a : aggregates) {
                std::ostringstream cell;
                if (a.scores.empty())
                    cell << "-";
                else
                    cell << std::fixed << std::setprecision(1) << 100.0 * get(a);
                os << std::setw(8) << cell.str();
            }
            os << "\n";
        };
        row(row_name + " mean", [](const LabelAggregate& a) { return a.mean; });
        row(row_name + " med", [](const LabelAggregate& a) { return a.median; });
        row(row_name + " std", [](const LabelAggregate& a) { return a.stddev; });
        return os.str();
    }

    /// Single mean row in the style of a per-method comparison table.
    std::string mean_row(const std::string& method) const {
        std::ostringstream os;
        os << method;
        for (const auto& a : aggregates)
            os << "\t" << std::fixed << std::setprecision(1) << 100.0 * a.mean;
        return os.str();
    }
};

namespace detail {

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    if (n == 0) return 0.0;
    return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

inline DiceReport dice_report(
    const std::vector<std::pair<const LabelVolume*, const LabelVolume*>>& cases,
    const LabelSchema& schema, const std::vector<std::string>& case_ids = {}) {
    if (cases.empty()) throw data_error("dice_report: no cases");
    DiceReport rep;
    rep.case_count = cases.size();
    for (const auto& e : schema.entries()) rep.aggregates.push_back({e.name, {}, 0, 0, 0});

    for (std::size_t i = 0; i < cases.size(); ++i) {
        const auto& [pred, ref] = cases[i];
        DiceReport::CaseScores cs;
        cs.case_id = i < case_ids.size() ? case_ids[i] : "case" + std::to_string(i);
        for (std::size_t e = 0; e < schema.entries().size(); ++e) {
            const LabelId id = schema.entries()[e].id;
            const double score = dice(*pred, *ref, id);
            cs.by_label[schema.entries()[e].name] = score;
            if (ref->count_of(id) > 0) rep.aggregates[e].scores.push_back(score);
        }
        rep.cases.push_back(std::move(cs));
    }

    for (auto& agg : rep.aggregates) {
        if (agg.scores.empty()) continue;
        const double n = static_cast<double>(agg.scores.size());
        double sum = 0.0, sumsq = 0.0;
        for (double s : agg.scores) {
            sum += s;
            sumsq += s * s;
        }
        agg.mean = sum / n;
        agg.stddev = std::sqrt(std::max(0.0, sumsq / n - agg.mean * agg.mean));
        agg.median = detail::median_of(agg.scores);
    }
    return rep;
}

}  // namespace cardseg
