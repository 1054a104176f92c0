#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace cardseg {

// Thrown for malformed or unreadable inputs (files, headers, label values).
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown when data violates an operation's contract (geometry mismatch,
// missing labels, degenerate statistics).
struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Voxel index triple in (z, y, x) order; x is the fastest-varying axis.
struct Index3 {
    std::int64_t z = 0, y = 0, x = 0;

    friend bool operator==(const Index3&, const Index3&) = default;
    Index3 operator+(const Index3& o) const { return {z + o.z, y + o.y, x + o.x}; }
    Index3 operator-(const Index3& o) const { return {z - o.z, y - o.y, x - o.x}; }
};

/// Grid dimensions in (nz, ny, nx) order.
struct Dims3 {
    std::int64_t nz = 0, ny = 0, nx = 0;

    friend bool operator==(const Dims3&, const Dims3&) = default;
    std::int64_t voxels() const { return nz * ny * nx; }
    bool contains(const Index3& i) const {
        return i.z >= 0 && i.z < nz && i.y >= 0 && i.y < ny && i.x >= 0 && i.x < nx;
    }
    std::int64_t linear(const Index3& i) const { return (i.z * ny + i.y) * nx + i.x; }
    Index3 unlinear(std::int64_t l) const {
        return {l / (ny * nx), (l / nx) % ny, l % nx};
    }
    std::string str() const {
        return std::to_string(nz) + "x" + std::to_string(ny) + "x" + std::to_string(nx);
    }
};

/// Physical vector in millimetres, (x, y, z) order as in the NIfTI affine.
struct Vec3 {
    double x = 0, y = 0, z = 0;

    friend bool operator==(const Vec3&, const Vec3&) = default;
    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const { return std::sqrt(dot(*this)); }
};

/// Voxel neighborhood used by morphology and connected components.
enum class Connectivity { FACE6, EDGE18, VERTEX26 };

inline const char* to_string(Connectivity c) {
    switch (c) {
        case Connectivity::FACE6: return "face6";
        case Connectivity::EDGE18: return "edge18";
        case Connectivity::VERTEX26: return "vertex26";
    }
    return "?";
}

inline Connectivity connectivity_from_string(const std::string& s) {
    if (s == "face6" || s == "6") return Connectivity::FACE6;
    if (s == "edge18" || s == "18") return Connectivity::EDGE18;
    if (s == "vertex26" || s == "26") return Connectivity::VERTEX26;
    throw data_error("unknown connectivity: " + s);
}

// Neighbor offsets for a connectivity, (z,y,x) steps excluding the origin.
inline const std::array<Index3, 26>& neighbor_offsets_26() {
    static const std::array<Index3, 26> offs = [] {
        std::array<Index3, 26> a{};
        std::size_t n = 0;
        // faces first, then edges, then vertices, so a prefix covers each class
        for (std::int64_t dz = -1; dz <= 1; ++dz)
            for (std::int64_t dy = -1; dy <= 1; ++dy)
                for (std::int64_t dx = -1; dx <= 1; ++dx) {
                    int order = std::abs(static_cast<int>(dz)) + std::abs(static_cast<int>(dy)) +
                                std::abs(static_cast<int>(dx));
                    if (order == 0) continue;
                    a[n++] = {dz, dy, dx};
                }
        // stable partition by taxicab order
        std::array<Index3, 26> sorted{};
        std::size_t k = 0;
        for (int want = 1; want <= 3; ++want)
            for (const auto& o : a) {
                int order = std::abs(static_cast<int>(o.z)) + std::abs(static_cast<int>(o.y)) +
                            std::abs(static_cast<int>(o.x));
                if (order == want) sorted[k++] = o;
            }
        return sorted;
    }();
    return offs;
}

inline std::size_t neighbor_count(Connectivity c) {
    switch (c) {
        case Connectivity::FACE6: return 6;
        case Connectivity::EDGE18: return 18;
        case Connectivity::VERTEX26: return 26;
    }
    return 0;
}

/// Deterministic RNG: xoshiro-free, just mt19937_64 plus hand-rolled
/// distributions so results do not depend on the standard library build.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    std::uint64_t next_u64() {
        // splitmix64: tiny, well-mixed, reproducible everywhere
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) { return n ? next_u64() % n : 0; }

    // standard normal via Box-Muller, one value per call
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// FNV-1a over a byte buffer; used for provenance hashes of model files.
inline std::uint64_t fnv1a64(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace cardseg
