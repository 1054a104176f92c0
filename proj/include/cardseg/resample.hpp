#pragma once

#include <cmath>
#include <optional>

#include "cardseg/volume.hpp"

namespace cardseg {

namespace detail {

// Edge-aligned grid mapping: input voxel i covers [i*s, (i+1)*s) measured
// from the shared volume edge, so output index j samples the continuous
// input index u = (j + 0.5) * t / s - 0.5.  A target spacing equal to the
// source spacing reproduces the input grid exactly.
inline double sample_coord(std::int64_t j, double t, double s) {
    return (static_cast<double>(j) + 0.5) * t / s - 0.5;
}

inline std::int64_t nearest_index(double u, std::int64_t n) {
    auto i = static_cast<std::int64_t>(std::floor(u + 0.5));  // round half up
    if (i < 0) i = 0;
    if (i >= n) i = n - 1;
    return i;
}

inline Dims3 resampled_dims(const Geometry& g, double t) {
    auto out = [&](std::int64_t n, double s) {
        auto m = static_cast<std::int64_t>(std::llround(static_cast<double>(n) * s / t));
        return std::max<std::int64_t>(m, 1);
    };
    return {out(g.dims.nz, g.spacing.z), out(g.dims.ny, g.spacing.y), out(g.dims.nx, g.spacing.x)};
}

inline Geometry resampled_geometry(const Geometry& g, double t) {
    Geometry out;
    out.dims = resampled_dims(g, t);
    out.spacing = {t, t, t};
    out.origin = {g.origin.x + 0.5 * (t - g.spacing.x), g.origin.y + 0.5 * (t - g.spacing.y),
                  g.origin.z + 0.5 * (t - g.spacing.z)};
    return out;
}

}  // namespace detail

/// Trilinear resampling of an intensity volume to an isotropic grid.
inline IntensityVolume resample_isotropic(const IntensityVolume& vol, double target_spacing) {
    if (target_spacing <= 0) throw data_error("target spacing must be positive");
    const auto& g = vol.geometry();
    if (g.dims.voxels() == 0) throw data_error("cannot resample a degenerate volume");
    const Geometry og = detail::resampled_geometry(g, target_spacing);
    IntensityVolume out(og);

    const auto nz = g.dims.nz, ny = g.dims.ny, nx = g.dims.nx;
    auto clamp = [](std::int64_t i, std::int64_t n) {
        return i < 0 ? 0 : (i >= n ? n - 1 : i);
    };
    std::int64_t l = 0;
    for (std::int64_t z = 0; z < og.dims.nz; ++z) {
        const double uz = detail::sample_coord(z, target_spacing, g.spacing.z);
        const auto z0 = static_cast<std::int64_t>(std::floor(uz));
        const double fz = uz - static_cast<double>(z0);
        for (std::int64_t y = 0; y < og.dims.ny; ++y) {
            const double uy = detail::sample_coord(y, target_spacing, g.spacing.y);
            const auto y0 = static_cast<std::int64_t>(std::floor(uy));
            const double fy = uy - static_cast<double>(y0);
            for (std::int64_t x = 0; x < og.dims.nx; ++x) {
                const double ux = detail::sample_coord(x, target_spacing, g.spacing.x);
                const auto x0 = static_cast<std::int64_t>(std::floor(ux));
                const double fx = ux - static_cast<double>(x0);
                double acc = 0.0;
                for (int dz = 0; dz <= 1; ++dz) {
                    const double wz = dz ? fz : 1.0 - fz;
                    if (wz == 0.0) continue;
                    for (int dy = 0; dy <= 1; ++dy) {
                        const double wy = dy ? fy : 1.0 - fy;
                        if (wy == 0.0) continue;
                        for (int dx = 0; dx <= 1; ++dx) {
                            const double wx = dx ? fx : 1.0 - fx;
                            if (wx == 0.0) continue;
                            acc += wz * wy * wx *
                                   static_cast<double>(vol.at(clamp(z0 + dz, nz), clamp(y0 + dy, ny),
                                                              clamp(x0 + dx, nx)));
                        }
                    }
                }
                out[l++] = static_cast<float>(acc);
            }
        }
    }
    return out;
}

/// Nearest-neighbor resampling of a label volume; never invents label ids.
inline LabelVolume resample_isotropic(const LabelVolume& vol, double target_spacing) {
    if (target_spacing <= 0) throw data_error("target spacing must be positive");
    const auto& g = vol.geometry();
    if (g.dims.voxels() == 0) throw data_error("cannot resample a degenerate volume");
    const Geometry og = detail::resampled_geometry(g, target_spacing);
    LabelVolume out(og, vol.schema());

    std::int64_t l = 0;
    for (std::int64_t z = 0; z < og.dims.nz; ++z) {
        const auto iz = detail::nearest_index(detail::sample_coord(z, target_spacing, g.spacing.z),
                                              g.dims.nz);
        for (std::int64_t y = 0; y < og.dims.ny; ++y) {
            const auto iy = detail::nearest_index(
                detail::sample_coord(y, target_spacing, g.spacing.y), g.dims.ny);
            for (std::int64_t x = 0; x < og.dims.nx; ++x) {
                const auto ix = detail::nearest_index(
                    detail::sample_coord(x, target_spacing, g.spacing.x), g.dims.nx);
                out[l++] = vol.at(iz, iy, ix);
            }
        }
    }
    return out;
}

/// Axis-aligned bounding box of non-background voxels, inclusive.
struct BoundingBox {
    Index3 lo, hi;
    Dims3 extent() const { return {hi.z - lo.z + 1, hi.y - lo.y + 1, hi.x - lo.x + 1}; }
};

inline std::optional<BoundingBox> foreground_bounds(const LabelVolume& labels) {
    BoundingBox bb{{labels.dims().nz, labels.dims().ny, labels.dims().nx}, {-1, -1, -1}};
    std::int64_t l = 0;
    for (std::int64_t z = 0; z < labels.dims().nz; ++z)
        for (std::int64_t y = 0; y < labels.dims().ny; ++y)
            for (std::int64_t x = 0; x < labels.dims().nx; ++x, ++l)
                if (labels[l] != kBackground) {
                    bb.lo.z = std::min(bb.lo.z, z);
                    bb.lo.y = std::min(bb.lo.y, y);
                    bb.lo.x = std::min(bb.lo.x, x);
                    bb.hi.z = std::max(bb.hi.z, z);
                    bb.hi.y = std::max(bb.hi.y, y);
                    bb.hi.x = std::max(bb.hi.x, x);
                }
    if (bb.hi.z < 0) return std::nullopt;
    return bb;
}

/// Center of the bounding box of all labelled voxels, rounded to the nearest
/// integer voxel.
inline Index3 heart_center(const LabelVolume& labels) {
    const auto bb = foreground_bounds(labels);
    if (!bb) throw data_error("heart_center: label volume has no foreground");
    auto mid = [](std::int64_t lo, std::int64_t hi) {
        return static_cast<std::int64_t>(
            std::floor((static_cast<double>(lo) + static_cast<double>(hi)) / 2.0 + 0.5));
    };
    return {mid(bb->lo.z, bb->hi.z), mid(bb->lo.y, bb->hi.y), mid(bb->lo.x, bb->hi.x)};
}

namespace detail {

template <typename Vol, typename Fill>
Vol crop_or_pad_impl(const Vol& vol, Dims3 target, Index3 center, Fill fill, Vol out) {
    const Index3 out_center{target.nz / 2, target.ny / 2, target.nx / 2};
    const Index3 shift = center - out_center;  // output index + shift = input index
    for (std::int64_t z = 0; z < target.nz; ++z)
        for (std::int64_t y = 0; y < target.ny; ++y)
            for (std::int64_t x = 0; x < target.nx; ++x) {
                const Index3 src = Index3{z, y, x} + shift;
                out.at(z, y, x) = vol.dims().contains(src) ? vol.at(src) : fill;
            }
    Vec3 o = vol.origin();
    o.x += vol.spacing().x * static_cast<double>(shift.x);
    o.y += vol.spacing().y * static_cast<double>(shift.y);
    o.z += vol.spacing().z * static_cast<double>(shift.z);
    out.set_origin(o);
    return out;
}

}  // namespace detail

/// Crop and/or pad to `target` dims so that input voxel `center` lands on the
/// output's geometric center voxel (floor(dim/2)).  Physical positions of
/// retained voxels are preserved through the origin update.
inline IntensityVolume crop_or_pad(const IntensityVolume& vol, Dims3 target, Index3 center,
                                   std::optional<float> pad_value = std::nullopt) {
    if (target.nz <= 0 || target.ny <= 0 || target.nx <= 0)
        throw data_error("crop_or_pad: target dims must be positive");
    const float fill = pad_value ? *pad_value : vol.min_value();
    return detail::crop_or_pad_impl(vol, target, center, fill,
                                    IntensityVolume(Geometry{target, vol.spacing(), vol.origin()}));
}

inline LabelVolume crop_or_pad(const LabelVolume& vol, Dims3 target, Index3 center) {
    if (target.nz <= 0 || target.ny <= 0 || target.nx <= 0)
        throw data_error("crop_or_pad: target dims must be positive");
    return detail::crop_or_pad_impl(
        vol, target, center, kBackground,
        LabelVolume(Geometry{target, vol.spacing(), vol.origin()}, vol.schema()));
}

struct FovResult {
    IntensityVolume intensity;
    LabelVolume labels;
    double final_spacing = 1.0;
    int iterations = 0;  // number of 10% spacing increases applied
};

/// Iterative field-of-view fitting: starting at 1 mm, grow the voxel size by
/// 10% until the bounding box of labelled voxels fits inside `target`, then
/// center-crop/pad both volumes.  Each candidate grid is resampled from the
/// 1 mm input, not from the previous iteration.
inline FovResult fit_field_of_view(const IntensityVolume& intensity, const LabelVolume& labels,
                                   Dims3 target, int max_iterations = 20) {
    require_same_geometry(intensity, labels, "fit_field_of_view");
    if (!labels.geometry().is_isotropic())
        throw data_error("fit_field_of_view expects volumes already resampled to 1 mm");

    const double base = labels.geometry().iso_spacing();
    for (int k = 0; k <= max_iterations; ++k) {
        const double spacing = base * std::pow(1.1, k);
        IntensityVolume ri = (k == 0) ? intensity : resample_isotropic(intensity, spacing);
        LabelVolume rl = (k == 0) ? labels : resample_isotropic(labels, spacing);
        const auto bb = foreground_bounds(rl);
        if (!bb) throw data_error("fit_field_of_view: label volume has no foreground");
        const Dims3 ext = bb->extent();
        if (ext.nz <= target.nz && ext.ny <= target.ny && ext.nx <= target.nx) {
            const Index3 c = heart_center(rl);
            return {crop_or_pad(ri, target, c), crop_or_pad(rl, target, c), spacing, k};
        }
    }
    throw data_error("fit_field_of_view: labelled region does not fit after " +
                     std::to_string(max_iterations) + " spacing increases");
}

}  // namespace cardseg
