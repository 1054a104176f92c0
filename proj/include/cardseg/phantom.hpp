#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "cardseg/annotations.hpp"
#include "cardseg/label_ops.hpp"
#include "cardseg/volume.hpp"

// Procedural synthetic heart: ellipsoidal chambers, a myocardial shell,
// tubular great vessels and pulmonary veins, rasterized into a TEN-schema
// label map with matching noisy intensities.  The valve plane and the LA
// parcellation boxes used during construction are recorded as annotations,
// so the deterministic label operators can rebuild the TEN map from its
// six-label merge.

namespace cardseg {

struct PhantomParams {
    std::uint64_t seed = 0;
    Dims3 dims{48, 56, 56};
    double spacing = 1.0;   // mm, isotropic
    double scale = 1.0;     // global geometric scale
    double jitter = 1.0;    // per-seed shape variation, mm at scale 1
    double noise_sigma = 10.0;

    // per-structure mean intensities; blood pools brighter than myocardium
    std::map<std::string, double> means{
        {"background", 0.0}, {"LV", 300.0},  {"LVMyo", 95.0}, {"RV", 280.0},
        {"RA", 270.0},       {"AA", 310.0},  {"PA", 240.0},   {"LAbody", 260.0},
        {"LPV", 250.0},      {"RPV", 250.0}, {"LAA", 255.0}};

    /// Heart that fits a generous 1 mm field of view without rescaling.
    static PhantomParams compact(std::uint64_t seed) {
        PhantomParams p;
        p.seed = seed;
        return p;
    }

    /// Oversized heart forcing at least one 10% voxel-size increase for the
    /// field-of-view targets the compact preset fits.
    static PhantomParams large(std::uint64_t seed) {
        PhantomParams p;
        p.seed = seed;
        p.scale = 1.3;
        p.dims = {64, 76, 76};
        return p;
    }
};

struct PhantomCase {
    IntensityVolume intensity;
    LabelVolume labels;  // TEN schema
    CaseAnnotations annotations;
};

namespace phantom_detail {

struct Ellipsoid {
    Vec3 c, r;
    bool contains(const Vec3& p) const {
        const double dx = (p.x - c.x) / r.x, dy = (p.y - c.y) / r.y, dz = (p.z - c.z) / r.z;
        return dx * dx + dy * dy + dz * dz <= 1.0;
    }
};

// axis-aligned tube: circular cross-section in the two off-axis coordinates
struct Tube {
    int axis;  // 0=x, 1=y, 2=z
    Vec3 c;    // axis line reference point
    double radius;
    double lo, hi;  // extent along the axis
    bool contains(const Vec3& p) const {
        double a, u, v;
        if (axis == 0) {
            a = p.x;
            u = p.y - c.y;
            v = p.z - c.z;
        } else if (axis == 1) {
            a = p.y;
            u = p.x - c.x;
            v = p.z - c.z;
        } else {
            a = p.z;
            u = p.x - c.x;
            v = p.y - c.y;
        }
        return a >= lo && a <= hi && u * u + v * v <= radius * radius;
    }
};

}  // namespace phantom_detail

/// Deterministic phantom generation.  Rejects parameter sets whose distinct
/// structures rasterize onto the same voxel.
inline PhantomCase generate_phantom(const PhantomParams& params) {
    using phantom_detail::Ellipsoid;
    using phantom_detail::Tube;

    const double s = params.scale;
    if (s <= 0) throw data_error("phantom scale must be positive");
    Rng rng(params.seed * 0x9e3779b97f4a7c15ull + 1);

    auto jc = [&](double v) { return v * s + rng.uniform(-0.5, 0.5) * params.jitter * s; };
    auto jr = [&](double v) {
        return std::max(1.2, v * s + rng.uniform(-0.25, 0.25) * params.jitter * s);
    };

    // canonical layout (mm at scale 1); tuned so jittered structures keep
    // clear margins from one another and from the grid boundary
    const Ellipsoid lv{{jc(38), jc(26), jc(16)}, {jr(7.5), jr(7.5), jr(9.0)}};
    const double shell = 3.5 * s;
    const Ellipsoid myo_outer{lv.c, {lv.r.x + shell, lv.r.y + shell, lv.r.z + shell}};
    const Ellipsoid rv{{jc(17), jc(24), jc(14)}, {jr(8.0), jr(8.0), jr(9.0)}};
    const Tube pa{2, {rv.c.x, rv.c.y, 0}, jr(4.0), rv.c.z - 2.0 * s, jc(42)};
    const Ellipsoid la{{jc(36), jc(41), jc(31)}, {jr(8.0), jr(7.0), jr(6.5)}};
    // two left veins under one label, far enough apart to stay two components
    const Tube lpv_a{0, {0, jc(38) - 3.6 * s, la.c.z}, jr(1.8), la.c.x, jc(54)};
    const Tube lpv_b{0, {0, jc(38) + 3.6 * s, la.c.z}, jr(1.8), la.c.x, jc(54)};
    const Tube rpv{0, {0, la.c.y, la.c.z + 2.0 * s}, jr(1.8), jc(20), la.c.x};
    const Ellipsoid laa{{jc(33), jc(50), jc(32)}, {jr(3.5), jr(4.0), jr(3.0)}};
    const Ellipsoid ra{{jc(15), jc(42), jc(16)}, {jr(6.5), jr(6.5), jr(7.0)}};
    const Tube aa{2, {jc(30), jc(22), 0}, jr(4.5), jc(31), jc(46)};

    // valve plane: near-axial, cutting the PA tube above the RV body
    const Vec3 plane_point{rv.c.x, rv.c.y, (rv.c.z + rv.r.z + 2.0 * s) + 0.5};
    const Vec3 plane_normal_raw{rng.uniform(-0.06, 0.06), rng.uniform(-0.06, 0.06), 1.0};
    const Plane valve_plane(plane_point, plane_normal_raw);

    const auto& ten = LabelSchema::ten();
    const LabelId id_lv = ten.id_of("LV"), id_myo = ten.id_of("LVMyo"), id_rv = ten.id_of("RV");
    const LabelId id_ra = ten.id_of("RA"), id_aa = ten.id_of("AA"), id_pa = ten.id_of("PA");
    const LabelId id_body = ten.id_of("LAbody"), id_lpv = ten.id_of("LPV");
    const LabelId id_rpv = ten.id_of("RPV"), id_laa = ten.id_of("LAA");

    // parcellation boxes: half-spaces past the LA body's extent, so box
    // membership alone reproduces the sublabels
    const Dims3 dims = params.dims;
    const double sp = params.spacing;
    const auto x_cut_l = static_cast<std::int64_t>(std::floor((la.c.x + la.r.x) / sp)) + 1;
    const auto x_cut_r = static_cast<std::int64_t>(std::ceil((la.c.x - la.r.x) / sp)) - 1;
    const auto y_cut = static_cast<std::int64_t>(std::floor((la.c.y + la.r.y) / sp)) + 1;
    CaseAnnotations ann;
    ann.case_id = "phantom" + std::to_string(params.seed);
    ann.plane = valve_plane;
    ann.boxes = {
        CropBox{{0, 0, x_cut_l}, {dims.nz, dims.ny, dims.nx}, id_lpv},
        CropBox{{0, 0, 0}, {dims.nz, dims.ny, x_cut_r}, id_rpv},
        CropBox{{0, y_cut, 0}, {dims.nz, dims.ny, dims.nx}, id_laa},
    };
    for (const auto& b : ann.boxes) b.check_within(dims);

    Geometry geom{dims, {sp, sp, sp}, {0, 0, 0}};
    LabelVolume labels(geom, ten);

    std::int64_t l = 0;
    for (std::int64_t z = 0; z < dims.nz; ++z)
        for (std::int64_t y = 0; y < dims.ny; ++y)
            for (std::int64_t x = 0; x < dims.nx; ++x, ++l) {
                const Vec3 p = geom.voxel_center({z, y, x});
                int families = 0;
                LabelId id = kBackground;
                if (myo_outer.contains(p)) {
                    ++families;
                    id = lv.contains(p) ? id_lv : id_myo;
                }
                if (rv.contains(p) || pa.contains(p)) {
                    ++families;
                    id = valve_plane.signed_distance(p) >= 0.0 ? id_pa : id_rv;
                }
                if (la.contains(p) || lpv_a.contains(p) || lpv_b.contains(p) || rpv.contains(p) ||
                    laa.contains(p)) {
                    ++families;
                    id = id_body;
                    for (const auto& b : ann.boxes)
                        if (b.contains({z, y, x})) id = b.label;
                }
                if (ra.contains(p)) {
                    ++families;
                    id = id_ra;
                }
                if (aa.contains(p)) {
                    ++families;
                    id = id_aa;
                }
                if (families > 1)
                    throw data_error("phantom structures collide at voxel (" + std::to_string(z) +
                                     "," + std::to_string(y) + "," + std::to_string(x) +
                                     "); parameter set rejected");
                labels[l] = id;
            }

    // structural sanity: everything present, PA attached to RV, veins and
    // appendage attached to the LA body, shell enclosing the LV
    for (LabelId id = 1; id <= ten.max_id(); ++id)
        if (labels.count_of(id) == 0)
            throw data_error("phantom missing structure " + ten.name_of(id));
    auto touches = [&](LabelId a, LabelId b) {
        return adjacency_band(labels, a, b, Connectivity::FACE6).count() > 0;
    };
    if (!touches(id_pa, id_rv)) throw data_error("phantom PA does not attach to RV");
    if (!touches(id_lpv, id_body) || !touches(id_rpv, id_body) || !touches(id_laa, id_body))
        throw data_error("phantom LA sublabels do not attach to the LA body");
    {
        const BinaryMask lv_grown = dilate(labels.mask_of(id_lv), Connectivity::FACE6, 1);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const auto li = static_cast<std::int64_t>(i);
            if (lv_grown.get(li) && labels[li] != id_lv && labels[li] != id_myo)
                throw data_error("phantom LVMyo shell does not enclose the LV");
        }
    }

    // intensities: structure mean plus Gaussian noise, one draw per voxel
    IntensityVolume intensity(geom);
    std::vector<double> mean_by_id(ten.max_id() + 1, 0.0);
    mean_by_id[kBackground] = params.means.at("background");
    for (const auto& e : ten.entries()) mean_by_id[e.id] = params.means.at(e.name);
    for (std::size_t i = 0; i < intensity.size(); ++i) {
        const auto li = static_cast<std::int64_t>(i);
        intensity[li] =
            static_cast<float>(mean_by_id[labels[li]] + params.noise_sigma * rng.normal());
    }

    return {std::move(intensity), std::move(labels), std::move(ann)};
}

enum class DegradeMode { LV_OVERSEGMENT, PA_INTO_RV, FOV_CROP };

inline DegradeMode degrade_mode_from_string(const std::string& s) {
    if (s == "lv_oversegment") return DegradeMode::LV_OVERSEGMENT;
    if (s == "pa_into_rv") return DegradeMode::PA_INTO_RV;
    if (s == "fov_crop") return DegradeMode::FOV_CROP;
    throw data_error("unknown degrade mode: " + s);
}

/// Deterministic label corruption used to manufacture training defects.
/// LV_OVERSEGMENT relabels the `magnitude` innermost LVMyo layers as LV;
/// PA_INTO_RV folds PA back into RV (six-label style); FOV_CROP blanks the
/// superior-most `magnitude` fraction of slices.
inline LabelVolume degrade_labels(const LabelVolume& labels, DegradeMode mode, double magnitude,
                                  std::uint64_t /*seed*/ = 0) {
    if (magnitude < 0) throw data_error("degrade magnitude must be non-negative");
    if (magnitude == 0) return labels;

    switch (mode) {
        case DegradeMode::LV_OVERSEGMENT: {
            const int k = static_cast<int>(std::llround(magnitude));
            const LabelId lv = labels.schema().id_of("LV");
            const LabelId myo = labels.schema().id_of("LVMyo");
            const BinaryMask grown = dilate(labels.mask_of(lv), Connectivity::FACE6, k);
            LabelVolume out = labels;
            for (std::size_t i = 0; i < out.size(); ++i) {
                const auto li = static_cast<std::int64_t>(i);
                if (grown.get(li) && out[li] == myo) out[li] = lv;
            }
            // the remaining shell must still seal the enlarged LV
            const BinaryMask rim = dilate(out.mask_of(lv), Connectivity::FACE6, 1);
            for (std::size_t i = 0; i < out.size(); ++i) {
                const auto li = static_cast<std::int64_t>(i);
                if (rim.get(li) && out[li] != lv && out[li] != myo)
                    throw data_error("degrade magnitude exceeds LVMyo shell thickness");
            }
            return out;
        }
        case DegradeMode::PA_INTO_RV: {
            labels.schema().id_of("PA");  // requires a PA-bearing schema
            return labels.merged_to(LabelSchema::six());
        }
        case DegradeMode::FOV_CROP: {
            if (magnitude >= 0.5) throw data_error("fov crop fraction must be below 0.5");
            LabelVolume out = labels;
            const auto n_crop = static_cast<std::int64_t>(
                std::llround(magnitude * static_cast<double>(labels.dims().nz)));
            const auto& d = labels.dims();
            for (std::int64_t z = d.nz - n_crop; z < d.nz; ++z)
                for (std::int64_t y = 0; y < d.ny; ++y)
                    for (std::int64_t x = 0; x < d.nx; ++x) out.at(z, y, x) = kBackground;
            return out;
        }
    }
    throw data_error("unknown degrade mode");
}

}  // namespace cardseg
