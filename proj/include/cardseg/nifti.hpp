#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include <nlohmann/json.hpp>

#include "cardseg/volume.hpp"

// NIfTI-1 single-file (.nii / .nii.gz) reader and writer, little-endian,
// scalar datatypes uint8 / int16 / float32.  Affines are reduced to
// spacing + origin; rotation or axis-flip components are rejected.
// Also implements the repo's raw + JSON sidecar format (<stem>.raw with
// <stem>.raw.json holding {dims, spacing, origin, kind, dtype}).

namespace cardseg {

namespace nifti {

constexpr std::int16_t DT_UINT8 = 2;
constexpr std::int16_t DT_INT16 = 4;
constexpr std::int16_t DT_FLOAT32 = 16;

#pragma pack(push, 1)
struct Header {
    std::int32_t sizeof_hdr;     // 348
    char data_type[10];
    char db_name[18];
    std::int32_t extents;
    std::int16_t session_error;
    char regular;
    char dim_info;
    std::int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    std::int16_t intent_code;
    std::int16_t datatype;
    std::int16_t bitpix;
    std::int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    std::int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    std::int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    std::int16_t qform_code;
    std::int16_t sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4];
    float srow_y[4];
    float srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Header) == 348, "NIfTI-1 header must be 348 bytes");

inline bool looks_gzipped(const std::vector<std::uint8_t>& bytes) {
    return bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b;
}

inline std::vector<std::uint8_t> gzip_decompress(const std::vector<std::uint8_t>& in) {
    z_stream zs{};
    if (inflateInit2(&zs, 15 + 16) != Z_OK) throw io_error("zlib inflateInit failed");
    std::vector<std::uint8_t> out;
    out.resize(std::max<std::size_t>(in.size() * 4, 1 << 16));
    zs.next_in = const_cast<Bytef*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    std::size_t written = 0;
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        if (written == out.size()) out.resize(out.size() * 2);
        zs.next_out = out.data() + written;
        zs.avail_out = static_cast<uInt>(out.size() - written);
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw io_error("corrupt gzip stream");
        }
        written = out.size() - zs.avail_out;
    }
    inflateEnd(&zs);
    out.resize(written);
    return out;
}

inline std::vector<std::uint8_t> gzip_compress(const std::vector<std::uint8_t>& in) {
    z_stream zs{};
    if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8,
                     Z_DEFAULT_STRATEGY) != Z_OK)
        throw io_error("zlib deflateInit failed");
    gz_header gzh{};
    gzh.time = 0;  // fixed mtime keeps outputs byte-reproducible
    gzh.os = 255;
    deflateSetHeader(&zs, &gzh);
    std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(in.size())));
    zs.next_in = const_cast<Bytef*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    if (deflate(&zs, Z_FINISH) != Z_STREAM_END) {
        deflateEnd(&zs);
        throw io_error("gzip compression failed");
    }
    out.resize(out.size() - zs.avail_out);
    deflateEnd(&zs);
    return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open file: " + path);
    f.seekg(0, std::ios::end);
    const auto n = f.tellg();
    f.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(n));
    if (n > 0) f.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!f) throw io_error("short read: " + path);
    return bytes;
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open file for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw io_error("write failed: " + path);
}

// Decoded header: geometry plus the raw voxel payload view.
struct Parsed {
    Geometry geom;
    std::int16_t datatype = 0;
    float scl_slope = 1.0f;
    float scl_inter = 0.0f;
    std::size_t data_offset = 0;
    std::vector<std::uint8_t> bytes;  // whole (decompressed) file
};

inline Parsed parse(const std::string& path) {
    Parsed p;
    p.bytes = read_file_bytes(path);
    if (looks_gzipped(p.bytes)) p.bytes = gzip_decompress(p.bytes);
    if (p.bytes.size() < sizeof(Header)) throw io_error("file too small for NIfTI header: " + path);

    Header h;
    std::memcpy(&h, p.bytes.data(), sizeof(Header));
    if (h.sizeof_hdr != 348) {
        if (h.sizeof_hdr == 1543569408)  // 348 byte-swapped
            throw io_error("big-endian NIfTI is not supported: " + path);
        throw io_error("not a NIfTI-1 file (bad sizeof_hdr): " + path);
    }
    if (std::strncmp(h.magic, "n+1", 3) != 0 && std::strncmp(h.magic, "ni1", 3) != 0)
        throw io_error("not a NIfTI-1 file (bad magic): " + path);
    if (std::strncmp(h.magic, "ni1", 3) == 0)
        throw io_error("two-file NIfTI (.hdr/.img) is not supported: " + path);

    const int ndim = h.dim[0];
    if (ndim < 3 || ndim > 7) throw io_error("expected a 3-D volume: " + path);
    for (int d = 4; d <= ndim; ++d)
        if (h.dim[d] > 1) throw io_error("expected a 3-D volume, got 4-D or higher: " + path);
    const std::int64_t nx = h.dim[1], ny = h.dim[2], nz = h.dim[3];
    if (nx <= 0 || ny <= 0 || nz <= 0) throw io_error("non-positive dimensions: " + path);

    p.geom.dims = {nz, ny, nx};
    p.geom.spacing = {h.pixdim[1], h.pixdim[2], h.pixdim[3]};

    // sform preferred, then qform; both must be rotation-free
    auto check_row = [&](const float* row, int axis, double pix) {
        for (int c = 0; c < 3; ++c) {
            const double v = row[c];
            if (c == axis) {
                if (std::abs(v - pix) > 1e-3 * std::max(1.0, pix))
                    throw io_error("affine scale disagrees with pixdim (flips/rotations "
                                   "are not supported): " + path);
            } else if (std::abs(v) > 1e-4 * std::max(1.0, pix)) {
                throw io_error("rotated or oblique affine is not supported: " + path);
            }
        }
    };
    if (h.sform_code > 0) {
        check_row(h.srow_x, 0, h.pixdim[1]);
        check_row(h.srow_y, 1, h.pixdim[2]);
        check_row(h.srow_z, 2, h.pixdim[3]);
        p.geom.origin = {h.srow_x[3], h.srow_y[3], h.srow_z[3]};
    } else if (h.qform_code > 0) {
        if (std::abs(h.quatern_b) > 1e-6 || std::abs(h.quatern_c) > 1e-6 ||
            std::abs(h.quatern_d) > 1e-6)
            throw io_error("rotated qform is not supported: " + path);
        if (h.pixdim[0] < 0)
            throw io_error("left-handed qform (qfac=-1) is not supported: " + path);
        p.geom.origin = {h.qoffset_x, h.qoffset_y, h.qoffset_z};
    }
    if (p.geom.spacing.x <= 0 || p.geom.spacing.y <= 0 || p.geom.spacing.z <= 0)
        throw io_error("non-positive pixdim: " + path);

    p.datatype = h.datatype;
    p.scl_slope = h.scl_slope;
    p.scl_inter = h.scl_inter;
    p.data_offset = static_cast<std::size_t>(h.vox_offset);
    if (p.data_offset < sizeof(Header)) p.data_offset = 352;

    std::size_t elem = 0;
    switch (h.datatype) {
        case DT_UINT8: elem = 1; break;
        case DT_INT16: elem = 2; break;
        case DT_FLOAT32: elem = 4; break;
        default:
            throw io_error("unsupported NIfTI datatype " + std::to_string(h.datatype) + ": " +
                           path);
    }
    const std::size_t need = p.data_offset + elem * static_cast<std::size_t>(p.geom.dims.voxels());
    if (p.bytes.size() < need) throw io_error("truncated NIfTI data section: " + path);
    return p;
}

template <typename Out, typename In>
void copy_voxels(const Parsed& p, std::vector<Out>& out, float slope, float inter) {
    const auto n = static_cast<std::size_t>(p.geom.dims.voxels());
    out.resize(n);
    const In* src = reinterpret_cast<const In*>(p.bytes.data() + p.data_offset);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = static_cast<Out>(static_cast<float>(src[i]) * slope + inter);
}

inline Header make_header(const Geometry& g, std::int16_t datatype, std::int16_t bitpix) {
    Header h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    h.dim[1] = static_cast<std::int16_t>(g.dims.nx);
    h.dim[2] = static_cast<std::int16_t>(g.dims.ny);
    h.dim[3] = static_cast<std::int16_t>(g.dims.nz);
    for (int d = 4; d < 8; ++d) h.dim[d] = 1;
    h.datatype = datatype;
    h.bitpix = bitpix;
    h.pixdim[0] = 1.0f;
    h.pixdim[1] = static_cast<float>(g.spacing.x);
    h.pixdim[2] = static_cast<float>(g.spacing.y);
    h.pixdim[3] = static_cast<float>(g.spacing.z);
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.xyzt_units = 2;  // millimetres
    std::strncpy(h.descrip, "cardseg", sizeof(h.descrip) - 1);
    h.sform_code = 1;
    h.srow_x[0] = static_cast<float>(g.spacing.x);
    h.srow_x[3] = static_cast<float>(g.origin.x);
    h.srow_y[1] = static_cast<float>(g.spacing.y);
    h.srow_y[3] = static_cast<float>(g.origin.y);
    h.srow_z[2] = static_cast<float>(g.spacing.z);
    h.srow_z[3] = static_cast<float>(g.origin.z);
    std::memcpy(h.magic, "n+1\0", 4);
    return h;
}

template <typename T>
std::vector<std::uint8_t> serialize(const Geometry& g, const std::vector<T>& voxels,
                                    std::int16_t datatype) {
    if (g.dims.nx > 32767 || g.dims.ny > 32767 || g.dims.nz > 32767)
        throw io_error("dimension exceeds NIfTI-1 int16 limit");
    Header h = make_header(g, datatype, static_cast<std::int16_t>(sizeof(T) * 8));
    std::vector<std::uint8_t> bytes(352 + voxels.size() * sizeof(T), 0);
    std::memcpy(bytes.data(), &h, sizeof(Header));
    std::memcpy(bytes.data() + 352, voxels.data(), voxels.size() * sizeof(T));
    return bytes;
}

}  // namespace nifti

inline bool has_suffix(const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

// ---- raw + JSON sidecar format ----

namespace rawvol {

inline std::string sidecar_path(const std::string& raw_path) { return raw_path + ".json"; }

struct SidecarInfo {
    Geometry geom;
    std::string kind;   // "intensity" | "label"
    std::string dtype;  // "float32" | "uint8"
};

inline SidecarInfo read_sidecar(const std::string& raw_path) {
    std::ifstream f(sidecar_path(raw_path));
    if (!f) throw io_error("missing sidecar header: " + sidecar_path(raw_path));
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw io_error("bad sidecar JSON: " + std::string(e.what()));
    }
    SidecarInfo info;
    const auto d = j.at("dims");
    info.geom.dims = {d.at(0).get<std::int64_t>(), d.at(1).get<std::int64_t>(),
                      d.at(2).get<std::int64_t>()};
    const auto s = j.at("spacing");
    info.geom.spacing = {s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>()};
    const auto o = j.at("origin");
    info.geom.origin = {o.at(0).get<double>(), o.at(1).get<double>(), o.at(2).get<double>()};
    info.kind = j.at("kind").get<std::string>();
    info.dtype = j.value("dtype", info.kind == "label" ? "uint8" : "float32");
    return info;
}

template <typename T>
void write(const std::string& raw_path, const Geometry& g, const std::vector<T>& voxels,
           const std::string& kind, const std::string& dtype) {
    nlohmann::json j{{"dims", {g.dims.nz, g.dims.ny, g.dims.nx}},
                     {"spacing", {g.spacing.x, g.spacing.y, g.spacing.z}},
                     {"origin", {g.origin.x, g.origin.y, g.origin.z}},
                     {"kind", kind},
                     {"dtype", dtype}};
    std::ofstream side(sidecar_path(raw_path), std::ios::trunc);
    if (!side) throw io_error("cannot write sidecar: " + sidecar_path(raw_path));
    side << j.dump(2) << "\n";
    std::vector<std::uint8_t> bytes(voxels.size() * sizeof(T));
    std::memcpy(bytes.data(), voxels.data(), bytes.size());
    nifti::write_file_bytes(raw_path, bytes);
}

}  // namespace rawvol

// ---- public load/save ----

inline bool is_raw_path(const std::string& path) { return has_suffix(path, ".raw"); }

inline IntensityVolume load_intensity(const std::string& path) {
    if (is_raw_path(path)) {
        const auto info = rawvol::read_sidecar(path);
        if (info.kind != "intensity")
            throw io_error("sidecar kind is '" + info.kind + "', expected intensity: " + path);
        auto bytes = nifti::read_file_bytes(path);
        const auto n = static_cast<std::size_t>(info.geom.dims.voxels());
        std::vector<float> vox(n);
        if (info.dtype == "float32") {
            if (bytes.size() != n * 4) throw io_error("raw payload size mismatch: " + path);
            std::memcpy(vox.data(), bytes.data(), bytes.size());
        } else if (info.dtype == "uint8") {
            if (bytes.size() != n) throw io_error("raw payload size mismatch: " + path);
            for (std::size_t i = 0; i < n; ++i) vox[i] = static_cast<float>(bytes[i]);
        } else {
            throw io_error("unsupported raw dtype: " + info.dtype);
        }
        return IntensityVolume(info.geom, std::move(vox));
    }
    const auto p = nifti::parse(path);
    const float slope = (p.scl_slope == 0.0f) ? 1.0f : p.scl_slope;
    std::vector<float> vox;
    switch (p.datatype) {
        case nifti::DT_UINT8: nifti::copy_voxels<float, std::uint8_t>(p, vox, slope, p.scl_inter); break;
        case nifti::DT_INT16: nifti::copy_voxels<float, std::int16_t>(p, vox, slope, p.scl_inter); break;
        case nifti::DT_FLOAT32: nifti::copy_voxels<float, float>(p, vox, slope, p.scl_inter); break;
    }
    return IntensityVolume(p.geom, std::move(vox));
}

inline LabelVolume load_labels(const std::string& path, const LabelSchema& schema) {
    auto to_label = [&](double v, const std::string& where) {
        if (v < 0.0) throw io_error("label file contains negative value: " + where);
        if (v != std::floor(v)) throw io_error("label file contains fractional value: " + where);
        if (v > 255.0) throw io_error("label id exceeds 255: " + where);
        return static_cast<LabelId>(v);
    };
    Geometry geom;
    std::vector<LabelId> vox;
    if (is_raw_path(path)) {
        const auto info = rawvol::read_sidecar(path);
        if (info.kind != "label")
            throw io_error("sidecar kind is '" + info.kind + "', expected label: " + path);
        if (info.dtype != "uint8") throw io_error("label raw files must be uint8: " + path);
        auto bytes = nifti::read_file_bytes(path);
        const auto n = static_cast<std::size_t>(info.geom.dims.voxels());
        if (bytes.size() != n) throw io_error("raw payload size mismatch: " + path);
        geom = info.geom;
        vox.assign(bytes.begin(), bytes.end());
    } else {
        const auto p = nifti::parse(path);
        if (p.scl_slope != 0.0f && p.scl_slope != 1.0f)
            throw io_error("label file with non-unit scl_slope: " + path);
        if (p.scl_inter != 0.0f) throw io_error("label file with non-zero scl_inter: " + path);
        geom = p.geom;
        const auto n = static_cast<std::size_t>(p.geom.dims.voxels());
        vox.resize(n);
        if (p.datatype == nifti::DT_UINT8) {
            const auto* src = p.bytes.data() + p.data_offset;
            vox.assign(src, src + n);
        } else if (p.datatype == nifti::DT_INT16) {
            const auto* src = reinterpret_cast<const std::int16_t*>(p.bytes.data() + p.data_offset);
            for (std::size_t i = 0; i < n; ++i) vox[i] = to_label(src[i], path);
        } else {
            const auto* src = reinterpret_cast<const float*>(p.bytes.data() + p.data_offset);
            for (std::size_t i = 0; i < n; ++i) vox[i] = to_label(src[i], path);
        }
    }
    LabelVolume out(geom, schema);
    out.data() = std::move(vox);
    out.validate();
    return out;
}

inline void save_volume(const IntensityVolume& vol, const std::string& path) {
    if (is_raw_path(path)) {
        rawvol::write(path, vol.geometry(), vol.data(), "intensity", "float32");
        return;
    }
    auto bytes = nifti::serialize(vol.geometry(), vol.data(), nifti::DT_FLOAT32);
    if (has_suffix(path, ".gz")) bytes = nifti::gzip_compress(bytes);
    nifti::write_file_bytes(path, bytes);
}

inline void save_volume(const LabelVolume& vol, const std::string& path) {
    if (is_raw_path(path)) {
        rawvol::write(path, vol.geometry(), vol.data(), "label", "uint8");
        return;
    }
    auto bytes = nifti::serialize(vol.geometry(), vol.data(), nifti::DT_UINT8);
    if (has_suffix(path, ".gz")) bytes = nifti::gzip_compress(bytes);
    nifti::write_file_bytes(path, bytes);
}

}  // namespace cardseg
