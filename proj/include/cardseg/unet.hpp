#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cardseg/core.hpp"
#include "cardseg/feature_grid.hpp"
#include "cardseg/volume.hpp"

// From-scratch 3D U-Net: direct convolutions, max pooling, transposed
// convolutions, softmax cross-entropy, Adam, and a flat binary weight
// format.  Everything is templated on the scalar type: float for training
// and inference, double for finite-difference gradient checks.
//
// Parallel sections follow an owner-computes rule (each output element is
// written by exactly one thread with a fixed summation order), so results
// are bit-identical to the sequential path for any thread count.

namespace cardseg {

template <typename T>
struct Tensor {
    std::string name;
    std::vector<std::int64_t> shape;
    std::vector<T> data;

    Tensor() = default;
    Tensor(std::string n, std::vector<std::int64_t> s) : name(std::move(n)), shape(std::move(s)) {
        data.assign(static_cast<std::size_t>(numel()), T{});
    }

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }
};

// ---------------------------------------------------------------------------
// layer primitives
// ---------------------------------------------------------------------------

/// 3x3x3 convolution with same padding.  kernel shape (co, ci, 3, 3, 3),
/// bias shape (co).
template <typename T>
FeatureGrid<T> conv3d(const FeatureGrid<T>& in, const Tensor<T>& kernel, const Tensor<T>& bias) {
    if (kernel.shape.size() != 5 || kernel.shape[2] != 3 || kernel.shape[3] != 3 ||
        kernel.shape[4] != 3)
        throw data_error("conv3d: kernel must be (co, ci, 3, 3, 3)");
    const std::int64_t co = kernel.shape[0], ci = kernel.shape[1];
    if (ci != in.channels()) throw data_error("conv3d: channel mismatch");
    if (bias.numel() != co) throw data_error("conv3d: bias size mismatch");

    const Dims3 sp = in.spatial();
    const std::int64_t nz = sp.nz, ny = sp.ny, nx = sp.nx, plane = ny * nx;
    FeatureGrid<T> out(in.batch(), co, sp);

    const std::int64_t jobs = in.batch() * co;
#pragma omp parallel for schedule(static)
    for (std::int64_t job = 0; job < jobs; ++job) {
        const std::int64_t n = job / co, c = job % co;
        T* dst = out.channel(n, c);
        const T b = bias.data[static_cast<std::size_t>(c)];
        for (std::int64_t v = 0; v < sp.voxels(); ++v) dst[v] = b;
        for (std::int64_t ic = 0; ic < ci; ++ic) {
            const T* src = in.channel(n, ic);
            const T* kt = kernel.data.data() + static_cast<std::size_t>((c * ci + ic) * 27);
            for (int kz = 0; kz < 3; ++kz)
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        const T w = kt[(kz * 3 + ky) * 3 + kx];
                        if (w == T{}) continue;
                        const std::int64_t dz = kz - 1, dy = ky - 1, dx = kx - 1;
                        const std::int64_t z0 = std::max<std::int64_t>(0, -dz);
                        const std::int64_t z1 = std::min<std::int64_t>(nz, nz - dz);
                        const std::int64_t y0 = std::max<std::int64_t>(0, -dy);
                        const std::int64_t y1 = std::min<std::int64_t>(ny, ny - dy);
                        const std::int64_t x0 = std::max<std::int64_t>(0, -dx);
                        const std::int64_t x1 = std::min<std::int64_t>(nx, nx - dx);
                        for (std::int64_t z = z0; z < z1; ++z)
                            for (std::int64_t y = y0; y < y1; ++y) {
                                T* orow = dst + z * plane + y * nx;
                                const T* irow = src + (z + dz) * plane + (y + dy) * nx + dx;
                                for (std::int64_t x = x0; x < x1; ++x) orow[x] += w * irow[x];
                            }
                    }
        }
    }
    return out;
}

template <typename T>
struct ConvGrads {
    FeatureGrid<T> input;
    Tensor<T> kernel;
    Tensor<T> bias;
};

template <typename T>
ConvGrads<T> conv3d_backward(const FeatureGrid<T>& in, const Tensor<T>& kernel,
                             const FeatureGrid<T>& grad_out) {
    const std::int64_t co = kernel.shape[0], ci = kernel.shape[1];
    if (grad_out.channels() != co || !(grad_out.spatial() == in.spatial()))
        throw data_error("conv3d_backward: shape mismatch");
    const Dims3 sp = in.spatial();
    const std::int64_t nz = sp.nz, ny = sp.ny, nx = sp.nx, plane = ny * nx;

    ConvGrads<T> g{FeatureGrid<T>(in.batch(), ci, sp), Tensor<T>("", kernel.shape),
                   Tensor<T>("", {co})};

    // bias and kernel gradients, one (co[, ci]) owner per thread
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < co; ++c) {
        T bsum{};
        for (std::int64_t n = 0; n < in.batch(); ++n) {
            const T* go = grad_out.channel(n, c);
            for (std::int64_t v = 0; v < sp.voxels(); ++v) bsum += go[v];
        }
        g.bias.data[static_cast<std::size_t>(c)] = bsum;
        for (std::int64_t ic = 0; ic < ci; ++ic) {
            T* kg = g.kernel.data.data() + static_cast<std::size_t>((c * ci + ic) * 27);
            for (int kz = 0; kz < 3; ++kz)
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        const std::int64_t dz = kz - 1, dy = ky - 1, dx = kx - 1;
                        const std::int64_t z0 = std::max<std::int64_t>(0, -dz);
                        const std::int64_t z1 = std::min<std::int64_t>(nz, nz - dz);
                        const std::int64_t y0 = std::max<std::int64_t>(0, -dy);
                        const std::int64_t y1 = std::min<std::int64_t>(ny, ny - dy);
                        const std::int64_t x0 = std::max<std::int64_t>(0, -dx);
                        const std::int64_t x1 = std::min<std::int64_t>(nx, nx - dx);
                        T acc{};
                        for (std::int64_t n = 0; n < in.batch(); ++n) {
                            const T* go = grad_out.channel(n, c);
                            const T* src = in.channel(n, ic);
                            for (std::int64_t z = z0; z < z1; ++z)
                                for (std::int64_t y = y0; y < y1; ++y) {
                                    const T* grow = go + z * plane + y * nx;
                                    const T* irow = src + (z + dz) * plane + (y + dy) * nx + dx;
                                    for (std::int64_t x = x0; x < x1; ++x)
                                        acc += grow[x] * irow[x];
                                }
                        }
                        kg[(kz * 3 + ky) * 3 + kx] = acc;
                    }
        }
    }

    // input gradient: correlation of grad_out with the flipped kernel
    const std::int64_t jobs = in.batch() * ci;
#pragma omp parallel for schedule(static)
    for (std::int64_t job = 0; job < jobs; ++job) {
        const std::int64_t n = job / ci, ic = job % ci;
        T* dst = g.input.channel(n, ic);
        for (std::int64_t c = 0; c < co; ++c) {
            const T* go = grad_out.channel(n, c);
            const T* kt = kernel.data.data() + static_cast<std::size_t>((c * ci + ic) * 27);
            for (int kz = 0; kz < 3; ++kz)
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        const T w = kt[(kz * 3 + ky) * 3 + kx];
                        if (w == T{}) continue;
                        // in index = out index + (k - 1)  =>  gin[i] += w * gout[i - d]
                        const std::int64_t dz = kz - 1, dy = ky - 1, dx = kx - 1;
                        const std::int64_t z0 = std::max<std::int64_t>(0, dz);
                        const std::int64_t z1 = std::min<std::int64_t>(nz, nz + dz);
                        const std::int64_t y0 = std::max<std::int64_t>(0, dy);
                        const std::int64_t y1 = std::min<std::int64_t>(ny, ny + dy);
                        const std::int64_t x0 = std::max<std::int64_t>(0, dx);
                        const std::int64_t x1 = std::min<std::int64_t>(nx, nx + dx);
                        for (std::int64_t z = z0; z < z1; ++z)
                            for (std::int64_t y = y0; y < y1; ++y) {
                                T* drow = dst + z * plane + y * nx;
                                const T* grow = go + (z - dz) * plane + (y - dy) * nx - dx;
                                for (std::int64_t x = x0; x < x1; ++x) drow[x] += w * grow[x];
                            }
                    }
        }
    }
    return g;
}

template <typename T>
struct PoolResult {
    FeatureGrid<T> output;
    std::vector<std::int64_t> argmax;  // input spatial linear index per output element
};

/// 2x2x2 max pooling, stride 2.  Ties keep the first voxel in block scan
/// order, which is where the gradient routes.
template <typename T>
PoolResult<T> maxpool3d(const FeatureGrid<T>& in) {
    const Dims3 sp = in.spatial();
    if (sp.nz % 2 || sp.ny % 2 || sp.nx % 2)
        throw data_error("maxpool3d: spatial dims must be even, got " + sp.str());
    const Dims3 osp{sp.nz / 2, sp.ny / 2, sp.nx / 2};
    PoolResult<T> res{FeatureGrid<T>(in.batch(), in.channels(), osp), {}};
    res.argmax.resize(static_cast<std::size_t>(in.batch() * in.channels() * osp.voxels()));

    const std::int64_t jobs = in.batch() * in.channels();
#pragma omp parallel for schedule(static)
    for (std::int64_t job = 0; job < jobs; ++job) {
        const std::int64_t n = job / in.channels(), c = job % in.channels();
        const T* src = in.channel(n, c);
        T* dst = res.output.channel(n, c);
        std::int64_t* am = res.argmax.data() + job * osp.voxels();
        std::int64_t o = 0;
        for (std::int64_t z = 0; z < osp.nz; ++z)
            for (std::int64_t y = 0; y < osp.ny; ++y)
                for (std::int64_t x = 0; x < osp.nx; ++x, ++o) {
                    T best{};
                    std::int64_t best_idx = -1;
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const std::int64_t idx =
                                    ((2 * z + dz) * sp.ny + (2 * y + dy)) * sp.nx + (2 * x + dx);
                                if (best_idx < 0 || src[idx] > best) {
                                    best = src[idx];
                                    best_idx = idx;
                                }
                            }
                    dst[o] = best;
                    am[o] = best_idx;
                }
    }
    return res;
}

template <typename T>
FeatureGrid<T> maxpool3d_backward(const PoolResult<T>& pooled, Dims3 in_spatial,
                                  const FeatureGrid<T>& grad_out) {
    FeatureGrid<T> gin(grad_out.batch(), grad_out.channels(), in_spatial);
    const std::int64_t jobs = grad_out.batch() * grad_out.channels();
#pragma omp parallel for schedule(static)
    for (std::int64_t job = 0; job < jobs; ++job) {
        const std::int64_t n = job / grad_out.channels(), c = job % grad_out.channels();
        const T* go = grad_out.channel(n, c);
        T* gi = gin.channel(n, c);
        const std::int64_t* am = pooled.argmax.data() + job * grad_out.voxels();
        for (std::int64_t o = 0; o < grad_out.voxels(); ++o) gi[am[o]] += go[o];
    }
    return gin;
}

/// Transposed convolution, kernel 2x2x2, stride 2: exact 2x upsampling.
/// kernel shape (ci, co, 2, 2, 2), bias (co).
template <typename T>
FeatureGrid<T> deconv3d(const FeatureGrid<T>& in, const Tensor<T>& kernel, const Tensor<T>& bias) {
    if (kernel.shape.size() != 5 || kernel.shape[2] != 2 || kernel.shape[3] != 2 ||
        kernel.shape[4] != 2)
        throw data_error("deconv3d: kernel must be (ci, co, 2, 2, 2)");
    const std::int64_t ci = kernel.shape[0], co = kernel.shape[1];
    if (ci != in.channels()) throw data_error("deconv3d: channel mismatch");
    if (bias.numel() != co) throw data_error("deconv3d: bias size mismatch");

    const Dims3 sp = in.spatial();
    const Dims3 osp{sp.nz * 2, sp.ny * 2, sp.nx * 2};
    FeatureGrid<T> out(in.batch(), co, osp);

    const std::int64_t jobs = in.batch() * co;
#pragma omp parallel for schedule(static)
    for (std::int64_t job = 0; job < jobs; ++job) {
        const std::int64_t n = job / co, c = job % co;
        T* dst = out.channel(n, c);
        const T b = bias.data[static_cast<std::size_t>(c)];
        std::int64_t o = 0;
        for (std::int64_t z = 0; z < osp.nz; ++z)
            for (std::int64_t y = 0; y < osp.ny; ++y)
                for (std::int64_t x = 0; x < osp.nx; ++x, ++o) {
                    // stride 2 with kernel 2: each output voxel has exactly one source
                    const std::int64_t iz = z / 2, iy = y / 2, ix = x / 2;
                    const int k = static_cast<int>(((z & 1) * 2 + (y & 1)) * 2 + (x & 1));
                    T acc = b;
                    const std::int64_t ii = (iz * sp.ny + iy) * sp.nx + ix;
                    for (std::int64_t ic = 0; ic < ci; ++ic)
                        acc += in.channel(n, ic)[ii] *
                               kernel.data[static_cast<std::size_t>((ic * co + c) * 8 + k)];
                    dst[o] = acc;
                }
    }
    return out;
}

template <typename T>
ConvGrads<T> deconv3d_backward(const FeatureGrid<T>& in, const Tensor<T>& kernel,
                               const FeatureGrid<T>& grad_out) {
    const std::int64_t ci = kernel.shape[0], co = kernel.shape[1];
    const Dims3 sp = in.spatial();
    const Dims3 osp{sp.nz * 2, sp.ny * 2, sp.nx * 2};
    if (grad_out.channels() != co || !(grad_out.spatial() == osp))
        throw data_error("deconv3d_backward: shape mismatch");

    ConvGrads<T> g{FeatureGrid<T>(in.batch(), ci, sp), Tensor<T>("", kernel.shape),
                   Tensor<T>("", {co})};

#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < co; ++c) {
        T bsum{};
        for (std::int64_t n = 0; n < in.batch(); ++n) {
            const T* go = grad_out.channel(n, c);
            for (std::int64_t v = 0; v < osp.voxels(); ++v) bsum += go[v];
        }
        g.bias.data[static_cast<std::size_t>(c)] = bsum;
    }

    const std::int64_t jobs = in.batch() * ci;
#pragma omp parallel for schedule(static)
    for (std::int64_t job = 0; job < jobs; ++job) {
        const std::int64_t n = job / ci, ic = job % ci;
        const T* src = in.channel(n, ic);
        T* gi = g.input.channel(n, ic);
        for (std::int64_t c = 0; c < co; ++c) {
            const T* go = grad_out.channel(n, c);
            for (int kz = 0; kz < 2; ++kz)
                for (int ky = 0; ky < 2; ++ky)
                    for (int kx = 0; kx < 2; ++kx) {
                        const int k = (kz * 2 + ky) * 2 + kx;
                        const T w = kernel.data[static_cast<std::size_t>((ic * co + c) * 8 + k)];
                        T acc{};
                        std::int64_t i = 0;
                        for (std::int64_t z = 0; z < sp.nz; ++z)
                            for (std::int64_t y = 0; y < sp.ny; ++y) {
                                const T* grow =
                                    go + (2 * z + kz) * osp.ny * osp.nx + (2 * y + ky) * osp.nx + kx;
                                const T* irow = src + (z * sp.ny + y) * sp.nx;
                                T* girow = gi + (z * sp.ny + y) * sp.nx;
                                for (std::int64_t x = 0; x < sp.nx; ++x, ++i) {
                                    acc += grow[2 * x] * irow[x];
                                    girow[x] += w * grow[2 * x];
                                }
                            }
                        // kernel gradient accumulated per (ic, co, k) owner below
                        if (n == 0)
                            g.kernel.data[static_cast<std::size_t>((ic * co + c) * 8 + k)] = acc;
                        else
                            g.kernel.data[static_cast<std::size_t>((ic * co + c) * 8 + k)] += acc;
                    }
        }
    }
    return g;
}

template <typename T>
FeatureGrid<T> relu(const FeatureGrid<T>& in) {
    FeatureGrid<T> out = in;
    for (auto& v : out.data())
        if (v < T{}) v = T{};
    return out;
}

template <typename T>
FeatureGrid<T> relu_backward(const FeatureGrid<T>& out, const FeatureGrid<T>& grad_out) {
    FeatureGrid<T> g = grad_out;
    for (std::size_t i = 0; i < g.data().size(); ++i)
        if (out.data()[i] <= T{}) g.data()[i] = T{};
    return g;
}

template <typename T>
struct LossResult {
    T loss{};
    FeatureGrid<T> grad;
};

/// Voxel-wise softmax cross-entropy against an integer label map.
/// loss = weighted mean of -log softmax(logits)[target];
/// grad = weight * (softmax - onehot) / (sum of weights).
template <typename T>
LossResult<T> softmax_cross_entropy(const FeatureGrid<T>& logits, const LabelVolume& target,
                                    const std::vector<T>& class_weights = {}) {
    if (logits.batch() != 1) throw data_error("softmax_cross_entropy: expected batch of one");
    if (!(logits.spatial() == target.dims()))
        throw data_error("softmax_cross_entropy: spatial dims disagree with target");
    const std::int64_t C = logits.channels();
    for (auto t : target.data())
        if (t >= C) throw data_error("softmax_cross_entropy: target label out of channel range");
    if (!class_weights.empty() && static_cast<std::int64_t>(class_weights.size()) != C)
        throw data_error("softmax_cross_entropy: class_weights size mismatch");

    LossResult<T> res{T{}, FeatureGrid<T>(1, C, logits.spatial())};
    const std::int64_t vox = logits.voxels();
    double loss_acc = 0.0, weight_acc = 0.0;
    std::vector<double> p(static_cast<std::size_t>(C));
    for (std::int64_t v = 0; v < vox; ++v) {
        double mx = logits.channel(0, 0)[v];
        for (std::int64_t c = 1; c < C; ++c)
            mx = std::max(mx, static_cast<double>(logits.channel(0, c)[v]));
        double denom = 0.0;
        for (std::int64_t c = 0; c < C; ++c) {
            p[static_cast<std::size_t>(c)] = std::exp(static_cast<double>(logits.channel(0, c)[v]) - mx);
            denom += p[static_cast<std::size_t>(c)];
        }
        const auto t = static_cast<std::int64_t>(target[v]);
        const double w =
            class_weights.empty() ? 1.0 : static_cast<double>(class_weights[static_cast<std::size_t>(t)]);
        weight_acc += w;
        loss_acc -= w * (std::log(p[static_cast<std::size_t>(t)]) - std::log(denom));
        for (std::int64_t c = 0; c < C; ++c) {
            double grad = p[static_cast<std::size_t>(c)] / denom;
            if (c == t) grad -= 1.0;
            res.grad.channel(0, c)[v] = static_cast<T>(w * grad);
        }
    }
    if (weight_acc <= 0.0) throw data_error("softmax_cross_entropy: zero total weight");
    res.loss = static_cast<T>(loss_acc / weight_acc);
    const T inv = static_cast<T>(1.0 / weight_acc);
    for (auto& gv : res.grad.data()) gv *= inv;
    return res;
}

// ---------------------------------------------------------------------------
// weight store and persistence
// ---------------------------------------------------------------------------

template <typename T>
class WeightStore {
public:
    Tensor<T>& add(const std::string& name, std::vector<std::int64_t> shape) {
        if (index_.count(name)) throw data_error("duplicate weight tensor: " + name);
        index_[name] = tensors_.size();
        tensors_.emplace_back(name, std::move(shape));
        return tensors_.back();
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor<T>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw data_error("unknown weight tensor: " + name);
        return tensors_[it->second];
    }
    const Tensor<T>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw data_error("unknown weight tensor: " + name);
        return tensors_[it->second];
    }

    std::vector<Tensor<T>>& tensors() { return tensors_; }
    const std::vector<Tensor<T>>& tensors() const { return tensors_; }

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& t : tensors_) n += t.numel();
        return n;
    }

    WeightStore zeros_like() const {
        WeightStore z;
        for (const auto& t : tensors_) z.add(t.name, t.shape);
        return z;
    }

private:
    std::vector<Tensor<T>> tensors_;
    std::map<std::string, std::size_t> index_;
};

namespace detail {
template <typename T>
const char* dtype_tag();
template <>
inline const char* dtype_tag<float>() {
    return "f32";
}
template <>
inline const char* dtype_tag<double>() {
    return "f64";
}
}  // namespace detail

/// .w3u layout: "W3U1" magic, little-endian u64 manifest length, manifest
/// JSON, then the raw tensor blob at the recorded offsets.
template <typename T>
void save_weights(const WeightStore<T>& store, const std::string& path,
                  const nlohmann::json& meta = {}) {
    nlohmann::json manifest;
    manifest["format"] = "w3u";
    manifest["dtype"] = detail::dtype_tag<T>();
    if (!meta.is_null() && !meta.empty()) manifest["meta"] = meta;
    std::int64_t offset = 0;
    for (const auto& t : store.tensors()) {
        manifest["tensors"].push_back({{"name", t.name},
                                       {"shape", t.shape},
                                       {"dtype", detail::dtype_tag<T>()},
                                       {"offset", offset}});
        offset += t.numel() * static_cast<std::int64_t>(sizeof(T));
    }
    const std::string mtext = manifest.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot write weights: " + path);
    f.write("W3U1", 4);
    const std::uint64_t mlen = mtext.size();
    f.write(reinterpret_cast<const char*>(&mlen), 8);
    f.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
    for (const auto& t : store.tensors())
        f.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(T)));
    if (!f) throw io_error("write failed: " + path);
}

template <typename T>
WeightStore<T> load_weights(const std::string& path, nlohmann::json* meta_out = nullptr) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open weights: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "W3U1", 4) != 0)
        throw io_error("not a w3u weight file: " + path);
    std::uint64_t mlen = 0;
    f.read(reinterpret_cast<char*>(&mlen), 8);
    std::string mtext(mlen, '\0');
    f.read(mtext.data(), static_cast<std::streamsize>(mlen));
    if (!f) throw io_error("truncated weight manifest: " + path);
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(mtext);
    } catch (const nlohmann::json::exception&) {
        throw io_error("corrupt weight manifest: " + path);
    }
    if (manifest.value("dtype", "") != detail::dtype_tag<T>())
        throw io_error("weight dtype is " + manifest.value("dtype", "?") + ", expected " +
                       detail::dtype_tag<T>() + ": " + path);
    if (meta_out) *meta_out = manifest.value("meta", nlohmann::json::object());

    WeightStore<T> store;
    for (const auto& jt : manifest.at("tensors")) {
        auto& t = store.add(jt.at("name").get<std::string>(),
                            jt.at("shape").get<std::vector<std::int64_t>>());
        f.seekg(static_cast<std::streamoff>(4 + 8 + mlen + jt.at("offset").get<std::int64_t>()));
        f.read(reinterpret_cast<char*>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * sizeof(T)));
        if (!f) throw io_error("truncated weight data for tensor '" + t.name + "': " + path);
    }
    return store;
}

// ---------------------------------------------------------------------------
// the U-Net
// ---------------------------------------------------------------------------

/// Widths are scaled by an exact rational so desk-scale configurations stay
/// reproducible; the output width N is never scaled.
struct WidthScale {
    int num = 1;
    int den = 1;

    int apply(int width) const {
        if (num <= 0 || den <= 0) throw data_error("width_scale must be positive");
        const int scaled = static_cast<int>((2LL * width * num + den) / (2LL * den));  // round nearest
        if (scaled < 1)
            throw data_error("width_scale makes layer width " + std::to_string(width) +
                             " vanish");
        return scaled;
    }

    static WidthScale parse(const std::string& s) {
        const auto slash = s.find('/');
        if (slash == std::string::npos) {
            const double v = std::stod(s);
            // small-denominator rational from the decimal form
            for (int den = 1; den <= 64; ++den) {
                const double num = v * den;
                if (std::abs(num - std::llround(num)) < 1e-9)
                    return {static_cast<int>(std::llround(num)), den};
            }
            throw data_error("width_scale must be a small rational, got " + s);
        }
        return {std::stoi(s.substr(0, slash)), std::stoi(s.substr(slash + 1))};
    }

    std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }
};

/// Architecture constants: three contraction stages with conv widths
/// (16,32), (32,64), (64,128), bottleneck (128,256), and an expansion path
/// whose (deconv, conv) widths are (128,128), (64,64), (32,N).  Kernels are
/// 3x3x3 (convs) and 2x2x2 stride 2 (pool / deconv).
struct UNetConfig {
    int in_channels = 1;
    int out_channels = 7;
    WidthScale width_scale{};

    static constexpr std::array<std::array<int, 2>, 3> kContraction{{{16, 32}, {32, 64}, {64, 128}}};
    static constexpr std::array<int, 2> kBottleneck{128, 256};

    struct LayerSpec {
        std::string name;
        enum Kind { CONV, DECONV } kind;
        int ci, co;
        bool relu;
    };

    /// The full ordered parameter-layer list with resolved channel counts.
    std::vector<LayerSpec> layer_walk() const {
        auto s = [&](int w) { return width_scale.apply(w); };
        std::vector<LayerSpec> L;
        int ch = in_channels;
        for (int stage = 0; stage < 3; ++stage) {
            const int a = s(kContraction[static_cast<std::size_t>(stage)][0]);
            const int b = s(kContraction[static_cast<std::size_t>(stage)][1]);
            L.push_back({"enc" + std::to_string(stage + 1) + ".conv1", LayerSpec::CONV, ch, a, true});
            L.push_back({"enc" + std::to_string(stage + 1) + ".conv2", LayerSpec::CONV, a, b, true});
            ch = b;
        }
        L.push_back({"bottleneck.conv1", LayerSpec::CONV, ch, s(kBottleneck[0]), true});
        L.push_back({"bottleneck.conv2", LayerSpec::CONV, s(kBottleneck[0]), s(kBottleneck[1]), true});
        ch = s(kBottleneck[1]);
        const std::array<int, 3> up_w{128, 64, 32};
        for (int stage = 2; stage >= 0; --stage) {
            const int up = s(up_w[static_cast<std::size_t>(2 - stage)]);
            const int skip = s(kContraction[static_cast<std::size_t>(stage)][1]);
            const bool final_layer = (stage == 0);
            const int conv_out = final_layer ? out_channels
                                             : s(kContraction[static_cast<std::size_t>(stage)][1]);
            L.push_back({"dec" + std::to_string(stage + 1) + ".up", LayerSpec::DECONV, ch, up, true});
            L.push_back({"dec" + std::to_string(stage + 1) + ".conv", LayerSpec::CONV, up + skip,
                         conv_out, !final_layer});
            ch = conv_out;
        }
        return L;
    }

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& l : layer_walk()) {
            const std::int64_t taps = (l.kind == LayerSpec::CONV) ? 27 : 8;
            n += static_cast<std::int64_t>(l.co) * taps * l.ci + l.co;
        }
        return n;
    }

    nlohmann::json to_json() const {
        return {{"in_channels", in_channels},
                {"out_channels", out_channels},
                {"width_scale", width_scale.str()}};
    }
    static UNetConfig from_json(const nlohmann::json& j) {
        UNetConfig c;
        c.in_channels = j.at("in_channels").get<int>();
        c.out_channels = j.at("out_channels").get<int>();
        c.width_scale = WidthScale::parse(j.at("width_scale").get<std::string>());
        return c;
    }
};

template <typename T>
class UNet {
public:
    explicit UNet(UNetConfig config) : config_(config), layers_(config.layer_walk()) {
        for (const auto& l : layers_) {
            if (l.kind == UNetConfig::LayerSpec::CONV)
                weights_.add(l.name + ".kernel", {l.co, l.ci, 3, 3, 3});
            else
                weights_.add(l.name + ".kernel", {l.ci, l.co, 2, 2, 2});
            weights_.add(l.name + ".bias", {l.co});
        }
    }

    const UNetConfig& config() const { return config_; }
    WeightStore<T>& weights() { return weights_; }
    const WeightStore<T>& weights() const { return weights_; }

    /// He-style normal initialization, deterministic in the seed.
    void init_weights(std::uint64_t seed) {
        Rng rng(seed);
        for (const auto& l : layers_) {
            auto& k = weights_.get(l.name + ".kernel");
            const double taps = (l.kind == UNetConfig::LayerSpec::CONV) ? 27.0 : 8.0;
            const double stddev = std::sqrt(2.0 / (taps * l.ci));
            for (auto& v : k.data) v = static_cast<T>(rng.normal() * stddev);
            for (auto& v : weights_.get(l.name + ".bias").data) v = T{};
        }
    }

    /// Adopt weights loaded from disk; shapes must match the manifest.
    void set_weights(const WeightStore<T>& loaded) {
        for (auto& t : weights_.tensors()) {
            if (!loaded.has(t.name))
                throw data_error("weight file is missing tensor '" + t.name + "'");
            const auto& src = loaded.get(t.name);
            if (src.shape != t.shape)
                throw data_error("weight shape mismatch for layer '" + t.name + "'");
            t.data = src.data;
        }
    }

    struct Trace {
        std::vector<FeatureGrid<T>> conv_in;   // per parameter layer
        std::vector<FeatureGrid<T>> conv_out;  // post-activation output
        std::array<PoolResult<T>, 3> pools;
        std::array<Dims3, 3> pool_in_dims;
    };

    FeatureGrid<T> forward(const FeatureGrid<T>& input, Trace* trace = nullptr) const {
        check_input(input);
        std::vector<FeatureGrid<T>> skips;
        std::size_t li = 0;
        FeatureGrid<T> x = input;
        for (int stage = 0; stage < 3; ++stage) {
            x = run_layer(li++, x, trace);
            x = run_layer(li++, x, trace);
            skips.push_back(x);
            auto pooled = maxpool3d(x);
            if (trace) {
                trace->pool_in_dims[static_cast<std::size_t>(stage)] = x.spatial();
                trace->pools[static_cast<std::size_t>(stage)] = pooled;
            }
            x = std::move(pooled.output);
        }
        x = run_layer(li++, x, trace);
        x = run_layer(li++, x, trace);
        for (int stage = 2; stage >= 0; --stage) {
            x = run_layer(li++, x, trace);  // deconv
            x = concat_channels(x, skips[static_cast<std::size_t>(stage)]);
            x = run_layer(li++, x, trace);  // conv (final one without relu)
        }
        return x;
    }

    /// Gradients for every parameter given dLoss/dlogits; `input_grad_out`
    /// optionally receives dLoss/dinput.
    WeightStore<T> backward(const Trace& trace, const FeatureGrid<T>& grad_logits,
                            FeatureGrid<T>* input_grad_out = nullptr) const {
        if (trace.conv_in.size() != layers_.size())
            throw data_error("unet: trace does not match a traced forward pass");
        WeightStore<T> grads = weights_.zeros_like();
        std::size_t li = layers_.size();
        FeatureGrid<T> g = grad_logits;

        std::array<FeatureGrid<T>, 3> skip_grads;  // indexed by encoder stage
        for (int stage = 0; stage < 3; ++stage) {   // dec1, dec2, dec3
            g = layer_backward(trace, --li, g, grads);  // dec conv, input is the concat
            const std::int64_t up_channels = layers_[li - 1].co;
            auto [g_up, g_skip] = split_channels(g, up_channels);
            skip_grads[static_cast<std::size_t>(stage)] = std::move(g_skip);
            g = layer_backward(trace, --li, std::move(g_up), grads);  // deconv
        }
        g = layer_backward(trace, --li, g, grads);  // bottleneck.conv2
        g = layer_backward(trace, --li, g, grads);  // bottleneck.conv1
        for (int stage = 2; stage >= 0; --stage) {  // enc3, enc2, enc1
            g = maxpool3d_backward(trace.pools[static_cast<std::size_t>(stage)],
                                   trace.pool_in_dims[static_cast<std::size_t>(stage)], g);
            add_into(g, skip_grads[static_cast<std::size_t>(stage)]);
            g = layer_backward(trace, --li, g, grads);
            g = layer_backward(trace, --li, g, grads);
        }
        if (input_grad_out) *input_grad_out = std::move(g);
        return grads;
    }

private:
    void check_input(const FeatureGrid<T>& input) const {
        if (input.channels() != config_.in_channels)
            throw data_error("unet: input has " + std::to_string(input.channels()) +
                             " channels, config expects " + std::to_string(config_.in_channels));
        const Dims3 sp = input.spatial();
        if (sp.nz % 8 || sp.ny % 8 || sp.nx % 8)
            throw data_error("unet: spatial dims must be divisible by 8, got " + sp.str());
    }

    FeatureGrid<T> run_layer(std::size_t li, const FeatureGrid<T>& x, Trace* trace) const {
        const auto& l = layers_[li];
        const auto& k = weights_.get(l.name + ".kernel");
        const auto& b = weights_.get(l.name + ".bias");
        FeatureGrid<T> out = (l.kind == UNetConfig::LayerSpec::CONV) ? conv3d(x, k, b)
                                                                     : deconv3d(x, k, b);
        if (l.relu)
            for (auto& v : out.data())
                if (v < T{}) v = T{};
        if (trace) {
            if (trace->conv_in.size() != li) throw data_error("unet: trace out of step");
            trace->conv_in.push_back(x);
            trace->conv_out.push_back(out);
        }
        return out;
    }

    FeatureGrid<T> layer_backward(const Trace& trace, std::size_t li, FeatureGrid<T> grad_out,
                                  WeightStore<T>& grads) const {
        const auto& l = layers_[li];
        if (l.relu) grad_out = relu_backward(trace.conv_out[li], grad_out);
        const auto& k = weights_.get(l.name + ".kernel");
        ConvGrads<T> cg = (l.kind == UNetConfig::LayerSpec::CONV)
                              ? conv3d_backward(trace.conv_in[li], k, grad_out)
                              : deconv3d_backward(trace.conv_in[li], k, grad_out);
        grads.get(l.name + ".kernel").data = std::move(cg.kernel.data);
        grads.get(l.name + ".bias").data = std::move(cg.bias.data);
        return std::move(cg.input);
    }

    // the concat puts the deconv output first, the skip second
    static FeatureGrid<T> concat_channels(const FeatureGrid<T>& a, const FeatureGrid<T>& b) {
        if (!(a.spatial() == b.spatial()) || a.batch() != b.batch())
            throw data_error("unet: concat shape mismatch");
        FeatureGrid<T> out(a.batch(), a.channels() + b.channels(), a.spatial());
        for (std::int64_t n = 0; n < a.batch(); ++n) {
            std::memcpy(out.channel(n, 0), a.channel(n, 0),
                        static_cast<std::size_t>(a.channels() * a.voxels()) * sizeof(T));
            std::memcpy(out.channel(n, a.channels()), b.channel(n, 0),
                        static_cast<std::size_t>(b.channels() * b.voxels()) * sizeof(T));
        }
        return out;
    }

    static std::pair<FeatureGrid<T>, FeatureGrid<T>> split_channels(const FeatureGrid<T>& g,
                                                                    std::int64_t first_channels) {
        FeatureGrid<T> a(g.batch(), first_channels, g.spatial());
        FeatureGrid<T> b(g.batch(), g.channels() - first_channels, g.spatial());
        for (std::int64_t n = 0; n < g.batch(); ++n) {
            std::memcpy(a.channel(n, 0), g.channel(n, 0),
                        static_cast<std::size_t>(a.channels() * a.voxels()) * sizeof(T));
            std::memcpy(b.channel(n, 0), g.channel(n, first_channels),
                        static_cast<std::size_t>(b.channels() * b.voxels()) * sizeof(T));
        }
        return {std::move(a), std::move(b)};
    }

    static void add_into(FeatureGrid<T>& dst, const FeatureGrid<T>& src) {
        if (!dst.same_shape(src)) throw data_error("unet: gradient shape mismatch");
        for (std::size_t i = 0; i < dst.data().size(); ++i) dst.data()[i] += src.data()[i];
    }

    UNetConfig config_;
    std::vector<UNetConfig::LayerSpec> layers_;
    WeightStore<T> weights_;
};

// ---------------------------------------------------------------------------
// optimizer and training loop
// ---------------------------------------------------------------------------

template <typename T>
class AdamOptimizer {
public:
    AdamOptimizer(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(WeightStore<T>& weights, const WeightStore<T>& grads) {
        if (m_.tensors().empty()) {
            m_ = weights.zeros_like();
            v_ = weights.zeros_like();
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t ti = 0; ti < weights.tensors().size(); ++ti) {
            auto& w = weights.tensors()[ti].data;
            const auto& g = grads.tensors()[ti].data;
            auto& m = m_.tensors()[ti].data;
            auto& v = v_.tensors()[ti].data;
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double gi = g[i];
                const double mi = beta1_ * m[i] + (1.0 - beta1_) * gi;
                const double vi = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                w[i] -= static_cast<T>(lr_ * (mi / bc1) / (std::sqrt(vi / bc2) + eps_));
            }
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    WeightStore<T> m_, v_;
};

template <typename T>
struct TrainSample {
    FeatureGrid<T> input;   // batch 1
    LabelVolume target;
};

struct TrainHyperparams {
    double lr = 1e-3;
    int steps = 100;
    int batch = 1;
    std::uint64_t seed = 0;
    int val_interval = 25;          // steps between validation-loss probes
    std::vector<double> class_weights;  // empty = uniform

    nlohmann::json to_json() const {
        return {{"lr", lr}, {"steps", steps}, {"batch", batch}, {"seed", seed}};
    }
};

template <typename T>
struct TrainResult {
    WeightStore<T> weights;          // best validation weights (final if no val set)
    std::vector<double> loss_history;
    double best_val_loss = std::numeric_limits<double>::infinity();
};

template <typename T>
double evaluate_loss(const UNet<T>& net, const std::vector<TrainSample<T>>& samples,
                     const std::vector<T>& class_weights = {}) {
    double total = 0.0;
    for (const auto& s : samples) {
        auto logits = net.forward(s.input);
        total += static_cast<double>(softmax_cross_entropy(logits, s.target, class_weights).loss);
    }
    return samples.empty() ? 0.0 : total / static_cast<double>(samples.size());
}

/// Minibatch Adam training, deterministic in the seed.  Samples are drawn
/// uniformly per step; when a validation set is given, the weights with the
/// best validation loss are returned.
template <typename T>
TrainResult<T> train(UNet<T>& net, const std::vector<TrainSample<T>>& dataset,
                     const TrainHyperparams& hp,
                     const std::vector<TrainSample<T>>& validation = {}) {
    if (dataset.empty()) throw data_error("train: empty dataset");
    if (hp.batch < 1) throw data_error("train: batch must be >= 1");
    std::vector<T> cw(hp.class_weights.begin(), hp.class_weights.end());

    AdamOptimizer<T> opt(hp.lr);
    Rng rng(hp.seed ^ 0x7261696e75ull);
    TrainResult<T> res;

    for (int step = 0; step < hp.steps; ++step) {
        WeightStore<T> grads = net.weights().zeros_like();
        double loss = 0.0;
        for (int b = 0; b < hp.batch; ++b) {
            const auto& s = dataset[rng.below(dataset.size())];
            typename UNet<T>::Trace trace;
            auto logits = net.forward(s.input, &trace);
            auto lr = softmax_cross_entropy(logits, s.target, cw);
            loss += static_cast<double>(lr.loss);
            auto g = net.backward(trace, lr.grad);
            for (std::size_t ti = 0; ti < grads.tensors().size(); ++ti) {
                auto& acc = grads.tensors()[ti].data;
                const auto& gg = g.tensors()[ti].data;
                for (std::size_t i = 0; i < acc.size(); ++i)
                    acc[i] += gg[i] / static_cast<T>(hp.batch);
            }
        }
        loss /= hp.batch;
        if (!std::isfinite(loss)) throw data_error("train: loss diverged (non-finite)");
        res.loss_history.push_back(loss);
        opt.step(net.weights(), grads);

        if (!validation.empty() &&
            ((step + 1) % hp.val_interval == 0 || step + 1 == hp.steps)) {
            const double vl = evaluate_loss(net, validation, cw);
            if (vl < res.best_val_loss) {
                res.best_val_loss = vl;
                res.weights = net.weights();
            }
        }
    }
    if (validation.empty() || res.weights.tensors().empty()) res.weights = net.weights();
    return res;
}

}  // namespace cardseg
