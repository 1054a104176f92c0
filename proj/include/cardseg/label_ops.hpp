#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "cardseg/volume.hpp"

namespace cardseg {

/// Infinite plane in physical (mm) space; `normal` is held to unit length.
struct Plane {
    Vec3 point;
    Vec3 normal;

    Plane(Vec3 p, Vec3 n) : point(p) {
        const double len = n.norm();
        if (len < 1e-12) throw data_error("plane normal must be non-zero");
        // keep an already-unit normal bit-exact so annotation round trips
        // reproduce voxel assignments exactly
        normal = (std::abs(len - 1.0) <= 1e-12) ? n : n * (1.0 / len);
    }

    double signed_distance(const Vec3& p) const { return (p - point).dot(normal); }
    Plane flipped() const { return Plane(point, normal * -1.0); }
};

/// Axis-aligned voxel-index box with half-open ranges [lo, hi) per axis,
/// tagged with the sublabel it assigns.
struct CropBox {
    Index3 lo, hi;  // hi exclusive
    LabelId label = kBackground;

    bool contains(const Index3& i) const {
        return i.z >= lo.z && i.z < hi.z && i.y >= lo.y && i.y < hi.y && i.x >= lo.x && i.x < hi.x;
    }
    void check_within(const Dims3& dims) const {
        if (lo.z < 0 || lo.y < 0 || lo.x < 0 || hi.z > dims.nz || hi.y > dims.ny ||
            hi.x > dims.nx || lo.z >= hi.z || lo.y >= hi.y || lo.x >= hi.x)
            throw data_error("crop box empty or out of bounds");
    }
};

/// Morphological dilation: union of the mask with voxels adjacent to it,
/// repeated `iterations` times.
inline BinaryMask dilate(const BinaryMask& mask, Connectivity connectivity, int iterations) {
    if (iterations < 1) throw data_error("dilate: iterations must be >= 1");
    const auto& dims = mask.dims();
    const auto& offs = neighbor_offsets_26();
    const std::size_t k = neighbor_count(connectivity);

    BinaryMask cur = mask;
    for (int it = 0; it < iterations; ++it) {
        BinaryMask next = cur;
        std::int64_t l = 0;
        for (std::int64_t z = 0; z < dims.nz; ++z)
            for (std::int64_t y = 0; y < dims.ny; ++y)
                for (std::int64_t x = 0; x < dims.nx; ++x, ++l) {
                    if (!cur.get(l)) continue;
                    for (std::size_t o = 0; o < k; ++o) {
                        const Index3 nb = Index3{z, y, x} + offs[o];
                        if (dims.contains(nb)) next.set(nb, true);
                    }
                }
        cur = std::move(next);
    }
    return cur;
}

struct ReassignResult {
    LabelVolume labels;
    int iterations_run = 0;
    std::int64_t voxels_transferred = 0;
};

/// LV/LVMyo over-segmentation correction.
///
/// Repeats up to three times: grow the current LVMyo mask by one face-step,
/// take its overlap with the current LV label, and — when the overlap's mean
/// intensity is closer to the myocardium mean than to the LV mean — move the
/// overlap voxels darker than (mean + std) of the ORIGINAL LVMyo intensities
/// from LV to LVMyo.  The intensity threshold is frozen before iteration 1;
/// the comparison means are recomputed from the current labels each pass.
inline ReassignResult lv_myo_reassign(const IntensityVolume& intensity, const LabelVolume& labels) {
    require_same_geometry(intensity, labels, "lv_myo_reassign");
    const LabelId lv = labels.schema().id_of("LV");
    const LabelId myo = labels.schema().id_of("LVMyo");

    double sum0 = 0.0, sum0sq = 0.0;
    std::int64_t n0 = 0;
    for (std::size_t l = 0; l < labels.size(); ++l)
        if (labels[static_cast<std::int64_t>(l)] == myo) {
            const double v = intensity[static_cast<std::int64_t>(l)];
            sum0 += v;
            sum0sq += v * v;
            ++n0;
        }
    if (n0 == 0) throw data_error("lv_myo_reassign: LVMyo label is empty");
    const double mu0 = sum0 / static_cast<double>(n0);
    const double var0 = std::max(0.0, sum0sq / static_cast<double>(n0) - mu0 * mu0);
    const double threshold = mu0 + std::sqrt(var0);

    ReassignResult res{labels, 0, 0};
    for (int iter = 0; iter < 3; ++iter) {
        ++res.iterations_run;
        const BinaryMask grown = dilate(res.labels.mask_of(myo), Connectivity::FACE6, 1);

        std::vector<std::int64_t> overlap;
        double mean_overlap = 0.0, mean_myo = 0.0, mean_lv = 0.0;
        std::int64_t n_myo = 0, n_lv = 0;
        for (std::size_t l = 0; l < res.labels.size(); ++l) {
            const auto li = static_cast<std::int64_t>(l);
            const LabelId id = res.labels[li];
            const double v = intensity[li];
            if (id == myo) {
                mean_myo += v;
                ++n_myo;
            } else if (id == lv) {
                mean_lv += v;
                ++n_lv;
                if (grown.get(li)) {
                    overlap.push_back(li);
                    mean_overlap += v;
                }
            }
        }
        if (overlap.empty()) break;
        mean_overlap /= static_cast<double>(overlap.size());
        mean_myo /= static_cast<double>(n_myo);
        mean_lv /= static_cast<double>(n_lv);  // overlap non-empty implies LV non-empty

        if (!(std::abs(mean_overlap - mean_myo) < std::abs(mean_overlap - mean_lv))) break;
        for (auto li : overlap)
            if (intensity[li] < threshold) {
                res.labels[li] = myo;
                ++res.voxels_transferred;
            }
    }
    return res;
}

/// Voxels of `id_a` touching `id_b` (per connectivity) and vice versa.
inline BinaryMask adjacency_band(const LabelVolume& labels, LabelId id_a, LabelId id_b,
                                 Connectivity connectivity) {
    const auto& dims = labels.dims();
    const auto& offs = neighbor_offsets_26();
    const std::size_t k = neighbor_count(connectivity);
    BinaryMask band(dims);
    std::int64_t l = 0;
    for (std::int64_t z = 0; z < dims.nz; ++z)
        for (std::int64_t y = 0; y < dims.ny; ++y)
            for (std::int64_t x = 0; x < dims.nx; ++x, ++l) {
                const LabelId id = labels[l];
                if (id != id_a && id != id_b) continue;
                const LabelId other = (id == id_a) ? id_b : id_a;
                for (std::size_t o = 0; o < k; ++o) {
                    const Index3 nb = Index3{z, y, x} + offs[o];
                    if (dims.contains(nb) && labels.at(nb) == other) {
                        band.set(l, true);
                        break;
                    }
                }
            }
    return band;
}

/// Pulmonary artery valve region: the RV/PA adjacency band.
inline BinaryMask extract_pav(const LabelVolume& labels,
                              Connectivity connectivity = Connectivity::FACE6) {
    return adjacency_band(labels, labels.schema().id_of("RV"), labels.schema().id_of("PA"),
                          connectivity);
}

/// Partition one label by a physical plane: source voxels with
/// (center - plane.point) . normal >= 0 become `far_id`, the rest `near_id`.
inline LabelVolume split_by_plane(const LabelVolume& labels, LabelId source_id, const Plane& plane,
                                  LabelId near_id, LabelId far_id) {
    if (!labels.schema().has(near_id) || !labels.schema().has(far_id))
        throw data_error("split_by_plane: near/far id not in schema");
    if (labels.count_of(source_id) == 0)
        throw data_error("split_by_plane: source label absent");

    LabelVolume out = labels;
    const auto& dims = labels.dims();
    std::int64_t l = 0;
    for (std::int64_t z = 0; z < dims.nz; ++z)
        for (std::int64_t y = 0; y < dims.ny; ++y)
            for (std::int64_t x = 0; x < dims.nx; ++x, ++l) {
                if (labels[l] != source_id) continue;
                const Vec3 p = labels.geometry().voxel_center({z, y, x});
                out[l] = (plane.signed_distance(p) >= 0.0) ? far_id : near_id;
            }
    return out;
}

/// Connected-component labeling over mask-true voxels.  Component ids start
/// at 1 and are ordered by decreasing size; ties break toward the component
/// containing the smallest linear voxel index.
struct ComponentLabeling {
    std::vector<std::int32_t> component;  // 0 where mask is false
    std::vector<std::int64_t> sizes;      // sizes[c-1] = voxel count of component c

    std::size_t count() const { return sizes.size(); }
};

inline ComponentLabeling connected_components(const BinaryMask& mask, Connectivity connectivity) {
    const auto& dims = mask.dims();
    const auto& offs = neighbor_offsets_26();
    const std::size_t k = neighbor_count(connectivity);

    ComponentLabeling out;
    out.component.assign(mask.size(), 0);

    struct Raw {
        std::int64_t first = 0;
        std::int64_t size = 0;
    };
    std::vector<Raw> raw;
    std::vector<std::int64_t> stack;

    const std::int64_t total = static_cast<std::int64_t>(mask.size());
    for (std::int64_t seed = 0; seed < total; ++seed) {
        if (!mask.get(seed) || out.component[static_cast<std::size_t>(seed)] != 0) continue;
        const auto comp_id = static_cast<std::int32_t>(raw.size() + 1);
        raw.push_back({seed, 0});
        stack.assign(1, seed);
        out.component[static_cast<std::size_t>(seed)] = comp_id;
        while (!stack.empty()) {
            const std::int64_t cur = stack.back();
            stack.pop_back();
            ++raw.back().size;
            const Index3 ci = dims.unlinear(cur);
            for (std::size_t o = 0; o < k; ++o) {
                const Index3 nb = ci + offs[o];
                if (!dims.contains(nb)) continue;
                const std::int64_t nl = dims.linear(nb);
                if (mask.get(nl) && out.component[static_cast<std::size_t>(nl)] == 0) {
                    out.component[static_cast<std::size_t>(nl)] = comp_id;
                    stack.push_back(nl);
                }
            }
        }
    }

    // order by (size desc, first voxel asc); scan order makes `first` the
    // component's minimum linear index
    std::vector<std::int32_t> order(raw.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) {
        if (raw[a].size != raw[b].size) return raw[a].size > raw[b].size;
        return raw[a].first < raw[b].first;
    });
    std::vector<std::int32_t> renum(raw.size() + 1, 0);
    out.sizes.resize(raw.size());
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        renum[static_cast<std::size_t>(order[rank]) + 1] = static_cast<std::int32_t>(rank + 1);
        out.sizes[rank] = raw[static_cast<std::size_t>(order[rank])].size;
    }
    for (auto& c : out.component) c = renum[static_cast<std::size_t>(c)];
    return out;
}

/// For each listed label, keep only its largest connected component; smaller
/// pieces become background.
inline LabelVolume largest_component_cleanup(const LabelVolume& labels,
                                             const std::vector<LabelId>& ids_to_clean,
                                             Connectivity connectivity = Connectivity::VERTEX26) {
    LabelVolume out = labels;
    for (LabelId id : ids_to_clean) {
        const BinaryMask m = out.mask_of(id);
        if (m.count() == 0) continue;
        const auto cc = connected_components(m, connectivity);
        if (cc.count() <= 1) continue;
        for (std::size_t l = 0; l < out.size(); ++l)
            if (cc.component[l] > 1) out[static_cast<std::int64_t>(l)] = kBackground;
    }
    return out;
}

/// LA parcellation from crop boxes: LA voxels inside a box take the box's
/// sublabel (later boxes win on overlap), the rest become LAbody.  Non-LA
/// voxels carry over by name into the TEN schema.
inline LabelVolume parcellate_la_boxes(const LabelVolume& labels,
                                       const std::vector<CropBox>& boxes) {
    const LabelId la = labels.schema().id_of("LA");
    const auto& ten = LabelSchema::ten();
    const LabelId la_body = ten.id_of("LAbody");
    for (const auto& b : boxes) {
        b.check_within(labels.dims());
        if (b.label != ten.id_of("LPV") && b.label != ten.id_of("RPV") &&
            b.label != ten.id_of("LAA"))
            throw data_error("parcellation box must target LPV, RPV or LAA");
    }
    const auto to_ten = labels.schema().merge_map_to(ten);

    LabelVolume out(labels.geometry(), ten);
    const auto& dims = labels.dims();
    std::int64_t l = 0;
    for (std::int64_t z = 0; z < dims.nz; ++z)
        for (std::int64_t y = 0; y < dims.ny; ++y)
            for (std::int64_t x = 0; x < dims.nx; ++x, ++l) {
                const LabelId id = labels[l];
                if (id != la) {
                    out[l] = to_ten[id];
                    continue;
                }
                LabelId assigned = la_body;
                for (const auto& b : boxes)
                    if (b.contains({z, y, x})) assigned = b.label;
                out[l] = assigned;
            }
    return out;
}

/// Fuse the per-stage predictions into the final 10-label map.
///
/// Starting from `base` (renamed into TEN ids), the extrapolated PA is
/// stamped wherever it claims PA over base RV or background, and base LA
/// voxels take their sublabel from `parcellated` (defaulting to LAbody when
/// the parcellation gives none).
inline LabelVolume fuse_predictions(const LabelVolume& base, const LabelVolume& extrapolated,
                                    const LabelVolume& parcellated) {
    if (base.schema().variant() != SchemaVariant::SIX &&
        base.schema().variant() != SchemaVariant::SIX_NO_PA_REFINED)
        throw data_error("fuse_predictions: base must use a six-label schema");
    if (extrapolated.schema().variant() != SchemaVariant::SEVEN)
        throw data_error("fuse_predictions: extrapolated must use the seven-label schema");
    if (parcellated.schema().variant() != SchemaVariant::TEN)
        throw data_error("fuse_predictions: parcellated must use the ten-label schema");
    require_same_geometry(base, extrapolated, "fuse_predictions");
    require_same_geometry(base, parcellated, "fuse_predictions");

    const auto& ten = LabelSchema::ten();
    const LabelId base_rv = base.schema().id_of("RV");
    const LabelId base_la = base.schema().id_of("LA");
    const LabelId extr_pa = extrapolated.schema().id_of("PA");
    const LabelId ten_pa = ten.id_of("PA");
    const LabelId la_body = ten.id_of("LAbody");
    const LabelId lpv = ten.id_of("LPV"), rpv = ten.id_of("RPV"), laa = ten.id_of("LAA");
    const auto to_ten = base.schema().merge_map_to(ten);

    LabelVolume out(base.geometry(), ten);
    for (std::size_t i = 0; i < base.size(); ++i) {
        const auto l = static_cast<std::int64_t>(i);
        const LabelId b = base[l];
        LabelId v = to_ten[b];
        if (extrapolated[l] == extr_pa && (b == base_rv || b == kBackground)) v = ten_pa;
        if (b == base_la) {
            const LabelId sub = parcellated[l];
            v = (sub == la_body || sub == lpv || sub == rpv || sub == laa) ? sub : la_body;
        }
        out[l] = v;
    }
    return out;
}

}  // namespace cardseg
