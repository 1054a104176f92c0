#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include "cardseg/core.hpp"
#include "cardseg/schema.hpp"

namespace cardseg {

/// Grid placement in physical space.  `spacing` is per-axis (x,y,z) in mm;
/// anisotropic values only appear between load and resample_isotropic.
/// `origin` is the physical position of voxel (0,0,0).
struct Geometry {
    Dims3 dims;
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};

    friend bool operator==(const Geometry&, const Geometry&) = default;

    bool is_isotropic(double tol = 1e-9) const {
        return std::abs(spacing.x - spacing.y) <= tol && std::abs(spacing.x - spacing.z) <= tol;
    }
    double iso_spacing() const {
        if (!is_isotropic()) throw data_error("volume spacing is anisotropic");
        return spacing.x;
    }
    Vec3 voxel_center(const Index3& i) const {
        return {origin.x + spacing.x * static_cast<double>(i.x),
                origin.y + spacing.y * static_cast<double>(i.y),
                origin.z + spacing.z * static_cast<double>(i.z)};
    }
};

namespace detail {
inline void check_geometry(const Geometry& g) {
    if (g.dims.nz < 0 || g.dims.ny < 0 || g.dims.nx < 0)
        throw data_error("negative volume dimension");
    if (g.spacing.x <= 0 || g.spacing.y <= 0 || g.spacing.z <= 0)
        throw data_error("voxel spacing must be strictly positive");
}
}  // namespace detail

template <typename T>
class VolumeGrid {
public:
    VolumeGrid() = default;

    VolumeGrid(Geometry geom, T fill = T{}) : geom_(geom) {
        detail::check_geometry(geom_);
        data_.assign(static_cast<std::size_t>(geom_.dims.voxels()), fill);
    }

    VolumeGrid(Geometry geom, std::vector<T> data) : geom_(geom), data_(std::move(data)) {
        detail::check_geometry(geom_);
        if (static_cast<std::int64_t>(data_.size()) != geom_.dims.voxels())
            throw data_error("data length does not match dims");
    }

    const Geometry& geometry() const { return geom_; }
    const Dims3& dims() const { return geom_.dims; }
    const Vec3& spacing() const { return geom_.spacing; }
    const Vec3& origin() const { return geom_.origin; }
    void set_origin(const Vec3& o) { geom_.origin = o; }
    void set_spacing(const Vec3& s) {
        geom_.spacing = s;
        detail::check_geometry(geom_);
    }

    std::size_t size() const { return data_.size(); }
    const std::vector<T>& data() const { return data_; }
    std::vector<T>& data() { return data_; }

    T& operator[](std::int64_t l) { return data_[static_cast<std::size_t>(l)]; }
    const T& operator[](std::int64_t l) const { return data_[static_cast<std::size_t>(l)]; }

    T& at(const Index3& i) { return data_[static_cast<std::size_t>(geom_.dims.linear(i))]; }
    const T& at(const Index3& i) const {
        return data_[static_cast<std::size_t>(geom_.dims.linear(i))];
    }
    T& at(std::int64_t z, std::int64_t y, std::int64_t x) { return at(Index3{z, y, x}); }
    const T& at(std::int64_t z, std::int64_t y, std::int64_t x) const {
        return at(Index3{z, y, x});
    }

    T min_value() const {
        if (data_.empty()) throw data_error("empty volume has no minimum");
        return *std::min_element(data_.begin(), data_.end());
    }

private:
    Geometry geom_;
    std::vector<T> data_;
};

/// CT attenuation volume.  Values are stored as float32; NIfTI scl slope and
/// intercept are applied at load time.
using IntensityVolume = VolumeGrid<float>;

/// One boolean per voxel, always tied to the dims of the volume it came from.
class BinaryMask {
public:
    BinaryMask() = default;
    explicit BinaryMask(Dims3 dims, bool fill = false)
        : dims_(dims), data_(static_cast<std::size_t>(dims.voxels()), fill ? 1 : 0) {}

    const Dims3& dims() const { return dims_; }
    std::size_t size() const { return data_.size(); }

    bool get(std::int64_t l) const { return data_[static_cast<std::size_t>(l)] != 0; }
    void set(std::int64_t l, bool v) { data_[static_cast<std::size_t>(l)] = v ? 1 : 0; }
    bool get(const Index3& i) const { return get(dims_.linear(i)); }
    void set(const Index3& i, bool v) { set(dims_.linear(i), v); }

    std::int64_t count() const {
        std::int64_t n = 0;
        for (auto v : data_) n += v;
        return n;
    }

    const std::vector<std::uint8_t>& raw() const { return data_; }
    std::vector<std::uint8_t>& raw() { return data_; }

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

private:
    Dims3 dims_;
    std::vector<std::uint8_t> data_;
};

/// Anatomical label map.  Every non-zero value must be declared by `schema`.
class LabelVolume {
public:
    LabelVolume() : schema_(&LabelSchema::six()) {}

    LabelVolume(Geometry geom, const LabelSchema& schema, LabelId fill = kBackground)
        : grid_(geom, fill), schema_(&schema) {}

    LabelVolume(Geometry geom, const LabelSchema& schema, std::vector<LabelId> data)
        : grid_(geom, std::move(data)), schema_(&schema) {
        validate();
    }

    const Geometry& geometry() const { return grid_.geometry(); }
    const Dims3& dims() const { return grid_.dims(); }
    const Vec3& spacing() const { return grid_.spacing(); }
    const Vec3& origin() const { return grid_.origin(); }
    void set_origin(const Vec3& o) { grid_.set_origin(o); }
    void set_spacing(const Vec3& s) { grid_.set_spacing(s); }

    const LabelSchema& schema() const { return *schema_; }

    std::size_t size() const { return grid_.size(); }
    const std::vector<LabelId>& data() const { return grid_.data(); }
    std::vector<LabelId>& data() { return grid_.data(); }

    LabelId& operator[](std::int64_t l) { return grid_[l]; }
    const LabelId& operator[](std::int64_t l) const { return grid_[l]; }
    LabelId& at(const Index3& i) { return grid_.at(i); }
    const LabelId& at(const Index3& i) const { return grid_.at(i); }
    LabelId& at(std::int64_t z, std::int64_t y, std::int64_t x) { return grid_.at(z, y, x); }
    const LabelId& at(std::int64_t z, std::int64_t y, std::int64_t x) const {
        return grid_.at(z, y, x);
    }

    void validate() const {
        const LabelId max = schema_->max_id();
        for (auto v : grid_.data())
            if (v > max)
                throw data_error("label id " + std::to_string(int(v)) +
                                 " not declared by schema " +
                                 std::string(to_string(schema_->variant())));
    }

    /// Same voxels reinterpreted under another schema holding the same ids.
    LabelVolume with_schema(const LabelSchema& schema) const {
        LabelVolume out(geometry(), schema);
        out.data() = data();
        out.validate();
        return out;
    }

    /// Relabel through a merge map into the target schema.
    LabelVolume merged_to(const LabelSchema& target) const {
        const auto map = schema_->merge_map_to(target);
        LabelVolume out(geometry(), target);
        for (std::size_t l = 0; l < size(); ++l) out[static_cast<std::int64_t>(l)] = map[data()[l]];
        return out;
    }

    BinaryMask mask_of(LabelId id) const {
        BinaryMask m(dims());
        for (std::size_t l = 0; l < size(); ++l)
            if (data()[l] == id) m.set(static_cast<std::int64_t>(l), true);
        return m;
    }

    std::int64_t count_of(LabelId id) const {
        std::int64_t n = 0;
        for (auto v : data()) n += (v == id);
        return n;
    }

    std::int64_t foreground_count() const {
        std::int64_t n = 0;
        for (auto v : data()) n += (v != kBackground);
        return n;
    }

private:
    VolumeGrid<LabelId> grid_;
    const LabelSchema* schema_;
};

// Geometry agreement for paired volumes, tolerant only to float round-trip.
inline bool geometry_close(const Geometry& a, const Geometry& b, double tol = 1e-6) {
    return a.dims == b.dims && (a.spacing - b.spacing).norm() <= tol &&
           (a.origin - b.origin).norm() <= tol;
}

template <typename A, typename B>
void require_same_geometry(const A& a, const B& b, const char* what) {
    if (!geometry_close(a.geometry(), b.geometry()))
        throw data_error(std::string(what) + ": paired volumes disagree on geometry");
}

}  // namespace cardseg
