#pragma once

#include <cstdint>
#include <vector>

#include "cardseg/volume.hpp"

namespace cardseg {

/// Dense (batch, channels, nz, ny, nx) tensor.  float for production paths,
/// double when checking gradients.
template <typename T>
class FeatureGrid {
public:
    FeatureGrid() = default;
    FeatureGrid(std::int64_t n, std::int64_t c, Dims3 spatial, T fill = T{})
        : n_(n), c_(c), spatial_(spatial) {
        if (n <= 0 || c <= 0 || spatial.nz <= 0 || spatial.ny <= 0 || spatial.nx <= 0)
            throw data_error("feature grid dims must be positive");
        data_.assign(static_cast<std::size_t>(n * c * spatial.voxels()), fill);
    }

    std::int64_t batch() const { return n_; }
    std::int64_t channels() const { return c_; }
    const Dims3& spatial() const { return spatial_; }
    std::int64_t voxels() const { return spatial_.voxels(); }
    std::size_t size() const { return data_.size(); }

    bool same_shape(const FeatureGrid& o) const {
        return n_ == o.n_ && c_ == o.c_ && spatial_ == o.spatial_;
    }

    T* channel(std::int64_t n, std::int64_t c) {
        return data_.data() + static_cast<std::size_t>((n * c_ + c) * voxels());
    }
    const T* channel(std::int64_t n, std::int64_t c) const {
        return data_.data() + static_cast<std::size_t>((n * c_ + c) * voxels());
    }

    T& at(std::int64_t n, std::int64_t c, std::int64_t z, std::int64_t y, std::int64_t x) {
        return channel(n, c)[spatial_.linear({z, y, x})];
    }
    const T& at(std::int64_t n, std::int64_t c, std::int64_t z, std::int64_t y,
                std::int64_t x) const {
        return channel(n, c)[spatial_.linear({z, y, x})];
    }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    template <typename U>
    FeatureGrid<U> cast() const {
        FeatureGrid<U> out(n_, c_, spatial_);
        for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
        return out;
    }

private:
    std::int64_t n_ = 0, c_ = 0;
    Dims3 spatial_;
    std::vector<T> data_;
};

/// One-hot encoding of a label map: channel c is 1 where label == c,
/// channel 0 marks background.  Output has |schema|+1 channels.
template <typename T = float>
FeatureGrid<T> one_hot_encode(const LabelVolume& labels, const LabelSchema& schema) {
    const LabelId max_id = schema.max_id();
    FeatureGrid<T> grid(1, max_id + 1, labels.dims());
    for (std::size_t l = 0; l < labels.size(); ++l) {
        const LabelId id = labels[static_cast<std::int64_t>(l)];
        if (id > max_id) throw data_error("one_hot_encode: label id outside schema");
        grid.channel(0, id)[l] = T(1);
    }
    return grid;
}

/// Per-voxel argmax over channels; ties resolve to the lowest channel index,
/// so uniform scores decode to background.
template <typename T>
LabelVolume argmax_decode(const FeatureGrid<T>& logits, const LabelSchema& schema,
                          const Geometry& geometry) {
    if (logits.channels() < 1) throw data_error("argmax_decode: no channels");
    if (logits.batch() != 1) throw data_error("argmax_decode: expected batch of one");
    if (!(logits.spatial() == geometry.dims))
        throw data_error("argmax_decode: geometry dims disagree with grid");
    if (logits.channels() > static_cast<std::int64_t>(schema.max_id()) + 1)
        throw data_error("argmax_decode: more channels than schema labels");

    LabelVolume out(geometry, schema);
    const auto vox = logits.voxels();
    for (std::int64_t l = 0; l < vox; ++l) {
        std::int64_t best = 0;
        T best_v = logits.channel(0, 0)[l];
        for (std::int64_t c = 1; c < logits.channels(); ++c) {
            const T v = logits.channel(0, c)[l];
            if (v > best_v) {
                best_v = v;
                best = c;
            }
        }
        out[l] = static_cast<LabelId>(best);
    }
    return out;
}

}  // namespace cardseg
