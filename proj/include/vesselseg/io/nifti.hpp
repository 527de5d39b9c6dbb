#pragma once

// NIfTI-1 single-file (.nii / .nii.gz) volumes and label masks.
//
// Written files carry identity orientation: sform = qform = diag(spacing)
// plus the origin as translation. Reading accepts any axis-aligned
// orientation; negative axes are flipped into the positive frame. Rotated
// or sheared frames are refused.

#include <zlib.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vesselseg/core/errors.hpp"
#include "vesselseg/core/image.hpp"

namespace vesselseg::io {

inline constexpr std::size_t kNiftiHeaderSize = 348;
inline constexpr std::size_t kNiftiVoxOffset = 352;

enum NiftiType : std::int16_t {
    kNiftiUint8 = 2,
    kNiftiInt16 = 4,
    kNiftiInt32 = 8,
    kNiftiFloat32 = 16,
    kNiftiFloat64 = 64,
    kNiftiInt8 = 256,
    kNiftiUint16 = 512,
};

inline int nifti_type_bytes(std::int16_t t) {
    switch (t) {
    case kNiftiUint8:
    case kNiftiInt8: return 1;
    case kNiftiInt16:
    case kNiftiUint16: return 2;
    case kNiftiInt32:
    case kNiftiFloat32: return 4;
    case kNiftiFloat64: return 8;
    default: return 0;
    }
}

inline bool is_gz_path(const std::string& path) {
    return path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
}

/// "dir/case.nii.gz" -> "dir/case"
inline std::string nifti_stem(const std::string& path) {
    std::string s = path;
    if (is_gz_path(s)) s.resize(s.size() - 3);
    if (s.size() > 4 && s.compare(s.size() - 4, 4, ".nii") == 0) s.resize(s.size() - 4);
    return s;
}

inline std::string label_sidecar_path(const std::string& mask_path) { return nifti_stem(mask_path) + ".labels.json"; }

namespace detail {

template <typename T>
void put(std::vector<char>& buf, std::size_t off, T v) {
    std::memcpy(buf.data() + off, &v, sizeof(T));
}

template <typename T>
T get(const std::vector<char>& buf, std::size_t off) {
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    return v;
}

inline std::vector<char> read_file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("nifti: cannot open '" + path + "'");
    std::vector<char> raw((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (raw.size() >= 2 && static_cast<unsigned char>(raw[0]) == 0x1f && static_cast<unsigned char>(raw[1]) == 0x8b) {
        gzFile f = gzopen(path.c_str(), "rb");
        if (!f) throw FormatError("nifti: cannot open gzip stream '" + path + "'");
        std::vector<char> out;
        char chunk[1 << 16];
        int n;
        while ((n = gzread(f, chunk, sizeof chunk)) > 0) out.insert(out.end(), chunk, chunk + n);
        int err = 0;
        const char* msg = gzerror(f, &err);
        const bool bad = n < 0 || (err != Z_OK && err != Z_BUF_ERROR);
        const std::string why = msg ? msg : "";
        gzclose(f);
        if (bad) throw FormatError("nifti: corrupt gzip stream in '" + path + "': " + why);
        return out;
    }
    return raw;
}

inline void write_file_bytes(const std::string& path, const std::vector<char>& bytes) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    if (is_gz_path(path)) {
        // mtime and name are not stored by gzwrite, so output is reproducible
        gzFile f = gzopen(path.c_str(), "wb6");
        if (!f) throw FormatError("nifti: cannot create '" + path + "'");
        const bool ok = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size())) == static_cast<int>(bytes.size());
        if (gzclose(f) != Z_OK || !ok) throw FormatError("nifti: write failed for '" + path + "'");
        return;
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("nifti: cannot create '" + path + "'");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw FormatError("nifti: write failed for '" + path + "'");
}

inline std::vector<char> make_header(const Grid& g, std::int16_t datatype) {
    std::vector<char> h(kNiftiVoxOffset, 0);
    put<std::int32_t>(h, 0, 348);
    put<std::int16_t>(h, 40, 3);
    for (int a = 0; a < 3; ++a) put<std::int16_t>(h, 42 + 2 * a, static_cast<std::int16_t>(g.dims[a]));
    for (int a = 3; a < 7; ++a) put<std::int16_t>(h, 42 + 2 * a, 1);
    put<std::int16_t>(h, 70, datatype);
    put<std::int16_t>(h, 72, static_cast<std::int16_t>(8 * nifti_type_bytes(datatype)));
    put<float>(h, 76, 1.0f); // qfac
    for (int a = 0; a < 3; ++a) put<float>(h, 80 + 4 * a, static_cast<float>(g.spacing[a]));
    put<float>(h, 108, static_cast<float>(kNiftiVoxOffset));
    put<float>(h, 112, 0.0f); // scl_slope 0 = no scaling
    h[123] = 2;                 // xyzt_units: mm
    put<std::int16_t>(h, 252, 1);
    put<std::int16_t>(h, 254, 1);
    for (int a = 0; a < 3; ++a) put<float>(h, 268 + 4 * a, static_cast<float>(g.origin[a]));
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) put<float>(h, 280 + 16 * r + 4 * c, r == c ? static_cast<float>(g.spacing[r]) : 0.0f);
        put<float>(h, 280 + 16 * r + 12, static_cast<float>(g.origin[r]));
    }
    std::memcpy(h.data() + 344, "n+1\0", 4);
    return h;
}

struct ParsedNifti {
    Grid grid;                   ///< after flipping to positive axes
    std::array<bool, 3> flip{};  ///< axes stored in negative direction
    std::int16_t datatype = 0;
    double slope = 0.0, inter = 0.0;
    std::size_t offset = 0;
};

inline ParsedNifti parse_header(const std::vector<char>& b, const std::string& path) {
    if (b.size() < kNiftiHeaderSize)
        throw FormatError("nifti: '" + path + "' truncated: missing header bytes " + std::to_string(b.size()) + "-" +
                          std::to_string(kNiftiHeaderSize - 1));
    if (get<std::int32_t>(b, 0) != 348) throw FormatError("nifti: '" + path + "' field sizeof_hdr is not 348");
    if (std::memcmp(b.data() + 344, "n+1", 4) != 0)
        throw FormatError("nifti: '" + path + "' field magic is not \"n+1\" (only single-file NIfTI-1 is supported)");
    ParsedNifti p;
    const auto ndim = get<std::int16_t>(b, 40);
    if (ndim < 1 || ndim > 7) throw FormatError("nifti: '" + path + "' field dim[0] out of range");
    for (int a = 0; a < 7; ++a) {
        const std::int64_t d = a < ndim ? get<std::int16_t>(b, 42 + 2 * a) : 1;
        if (d < 1) throw FormatError("nifti: '" + path + "' field dim[" + std::to_string(a + 1) + "] must be >= 1");
        if (a < 3) p.grid.dims[a] = d;
        else if (d != 1) throw FormatError("nifti: '" + path + "' has more than 3 non-trivial dimensions");
    }
    p.datatype = get<std::int16_t>(b, 70);
    if (nifti_type_bytes(p.datatype) == 0)
        throw FormatError("nifti: '" + path + "' field datatype " + std::to_string(p.datatype) + " is unsupported");
    const float vox_offset = get<float>(b, 108);
    if (!(vox_offset >= static_cast<float>(kNiftiHeaderSize)))
        throw FormatError("nifti: '" + path + "' field vox_offset is invalid");
    p.offset = static_cast<std::size_t>(vox_offset);
    p.slope = get<float>(b, 112);
    p.inter = get<float>(b, 116);
    const double unit = (b[123] & 7) == 1 ? 1000.0 : (b[123] & 7) == 3 ? 0.001 : 1.0; // metres / microns -> mm

    std::array<std::array<double, 4>, 3> M{};
    const auto sform = get<std::int16_t>(b, 254), qform = get<std::int16_t>(b, 252);
    if (sform > 0) {
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 4; ++c) M[r][c] = get<float>(b, 280 + 16 * r + 4 * c);
    } else if (qform > 0) {
        const double qb = get<float>(b, 256), qc = get<float>(b, 260), qd = get<float>(b, 264);
        const double qa = std::sqrt(std::max(0.0, 1.0 - (qb * qb + qc * qc + qd * qd)));
        const double R[3][3] = {{qa * qa + qb * qb - qc * qc - qd * qd, 2 * (qb * qc - qa * qd), 2 * (qb * qd + qa * qc)},
                                {2 * (qb * qc + qa * qd), qa * qa + qc * qc - qb * qb - qd * qd, 2 * (qc * qd - qa * qb)},
                                {2 * (qb * qd - qa * qc), 2 * (qc * qd + qa * qb), qa * qa + qd * qd - qb * qb - qc * qc}};
        const double qfac = get<float>(b, 76) < 0.0f ? -1.0 : 1.0;
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c)
                M[r][c] = R[r][c] * static_cast<double>(get<float>(b, 80 + 4 * c)) * (c == 2 ? qfac : 1.0);
            M[r][3] = get<float>(b, 268 + 4 * r);
        }
    } else {
        for (int a = 0; a < 3; ++a) M[a][a] = get<float>(b, 80 + 4 * a);
    }
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) M[r][c] *= unit;
    for (int c = 0; c < 3; ++c) {
        double maxv = 0.0;
        int arg = -1;
        for (int r = 0; r < 3; ++r)
            if (std::fabs(M[r][c]) > maxv) maxv = std::fabs(M[r][c]), arg = r;
        if (arg != c) throw FormatError("nifti: '" + path + "' orientation is not axis-aligned (permuted or rotated axes)");
        for (int r = 0; r < 3; ++r)
            if (r != c && std::fabs(M[r][c]) > 1e-4 * maxv)
                throw FormatError("nifti: '" + path + "' orientation is rotated or sheared; only axis-aligned frames are supported");
    }
    for (int a = 0; a < 3; ++a) {
        const double s = M[a][a];
        if (!(std::fabs(s) > 0.0) || !std::isfinite(s))
            throw FormatError("nifti: '" + path + "' field pixdim[" + std::to_string(a + 1) + "] must be non-zero");
        p.flip[a] = s < 0.0;
        p.grid.spacing[a] = std::fabs(s);
        p.grid.origin[a] = M[a][3] + (p.flip[a] ? s * static_cast<double>(p.grid.dims[a] - 1) : 0.0);
    }
    const std::size_t need = p.offset + static_cast<std::size_t>(p.grid.voxel_count()) *
                                            static_cast<std::size_t>(nifti_type_bytes(p.datatype));
    if (b.size() < need)
        throw FormatError("nifti: '" + path + "' truncated: missing voxel bytes " + std::to_string(b.size()) + "-" +
                          std::to_string(need - 1) + " (file has " + std::to_string(b.size()) + " bytes, needs " +
                          std::to_string(need) + ")");
    return p;
}

template <typename Out>
std::vector<Out> decode_voxels(const std::vector<char>& b, const ParsedNifti& p) {
    const auto n = static_cast<std::size_t>(p.grid.voxel_count());
    std::vector<Out> raw(n);
    const char* src = b.data() + p.offset;
    auto conv = [&](auto tag) {
        using S = decltype(tag);
        for (std::size_t i = 0; i < n; ++i) {
            S v;
            std::memcpy(&v, src + i * sizeof(S), sizeof(S));
            raw[i] = static_cast<Out>(v);
        }
    };
    switch (p.datatype) {
    case kNiftiUint8: conv(std::uint8_t{}); break;
    case kNiftiInt8: conv(std::int8_t{}); break;
    case kNiftiInt16: conv(std::int16_t{}); break;
    case kNiftiUint16: conv(std::uint16_t{}); break;
    case kNiftiInt32: conv(std::int32_t{}); break;
    case kNiftiFloat32: conv(float{}); break;
    case kNiftiFloat64: conv(double{}); break;
    default: throw FormatError("nifti: unsupported datatype");
    }
    if (!(p.flip[0] || p.flip[1] || p.flip[2])) return raw;
    std::vector<Out> out(n);
    const auto& d = p.grid.dims;
    std::size_t s = 0;
    for (std::int64_t k = 0; k < d[2]; ++k)
        for (std::int64_t j = 0; j < d[1]; ++j)
            for (std::int64_t i = 0; i < d[0]; ++i, ++s) {
                const auto ti = p.flip[0] ? d[0] - 1 - i : i, tj = p.flip[1] ? d[1] - 1 - j : j,
                           tk = p.flip[2] ? d[2] - 1 - k : k;
                out[static_cast<std::size_t>((tk * d[1] + tj) * d[0] + ti)] = raw[s];
            }
    return out;
}

template <typename T>
std::vector<char> encode(const Grid& g, std::int16_t datatype, const std::vector<T>& data) {
    auto bytes = make_header(g, datatype);
    const auto* p = reinterpret_cast<const char*>(data.data());
    bytes.insert(bytes.end(), p, p + data.size() * sizeof(T));
    return bytes;
}

inline void check_grid_fits(const Grid& g) {
    g.validate();
    for (int a = 0; a < 3; ++a)
        if (g.dims[a] > 32767) throw InvalidArgument("nifti: dimension exceeds the NIfTI-1 int16 limit");
}

} // namespace detail

/// float32 voxels, bit-exact round trip.
inline void write_volume(const std::string& path, const Volume3D& vol) {
    detail::check_grid_fits(vol.grid);
    detail::write_file_bytes(path, detail::encode(vol.grid, kNiftiFloat32, vol.data));
}

/// Any supported scalar type; scl_slope/scl_inter applied when slope != 0.
inline Volume3D read_volume(const std::string& path) {
    const auto bytes = detail::read_file_bytes(path);
    const auto p = detail::parse_header(bytes, path);
    Volume3D v(p.grid);
    if (p.datatype == kNiftiFloat64) {
        const auto d = detail::decode_voxels<double>(bytes, p);
        v.data.assign(d.begin(), d.end());
    } else {
        v.data = detail::decode_voxels<float>(bytes, p);
    }
    if (p.slope != 0.0 && !(p.slope == 1.0 && p.inter == 0.0))
        for (auto& x : v.data) x = static_cast<float>(static_cast<double>(x) * p.slope + p.inter);
    return v;
}

/// uint8 labels plus a "<stem>.labels.json" sidecar carrying the class set.
inline void write_mask(const std::string& path, const LabelMask& mask) {
    mask.validate();
    detail::check_grid_fits(mask.grid());
    detail::write_file_bytes(path, detail::encode(mask.grid(), kNiftiUint8, mask.data()));
    nlohmann::json j;
    j["class_set"] = mask.class_set;
    nlohmann::json names = nlohmann::json::object();
    for (auto c : mask.class_set)
        names[std::to_string(c)] = c == kBackground ? "background"
                                   : mask.is_binary() ? "aorta"
                                   : c == kLumen      ? "inner_lumen"
                                   : c == kWallIlt    ? "wall_ilt"
                                                      : "label_" + std::to_string(c);
    j["names"] = names;
    std::ofstream os(label_sidecar_path(path));
    if (!os) throw FormatError("nifti: cannot write label sidecar for '" + path + "'");
    os << j.dump(2) << '\n';
}

/// Integer datatypes only. Without a sidecar the class set is {0,1} or {0,1,2}
/// depending on the largest label present.
inline LabelMask read_mask(const std::string& path) {
    const auto bytes = detail::read_file_bytes(path);
    const auto p = detail::parse_header(bytes, path);
    if (p.datatype == kNiftiFloat32 || p.datatype == kNiftiFloat64)
        throw FormatError("nifti: '" + path + "' field datatype is floating point; masks need integer labels");
    const auto wide = detail::decode_voxels<std::int64_t>(bytes, p);
    LabelMask m(p.grid, binary_classes());
    std::int64_t maxv = 0;
    for (std::size_t i = 0; i < wide.size(); ++i) {
        if (wide[i] < 0 || wide[i] > 255) throw FormatError("nifti: '" + path + "' has a label outside 0-255");
        m.data()[i] = static_cast<std::uint8_t>(wide[i]);
        maxv = std::max(maxv, wide[i]);
    }
    const auto sidecar = label_sidecar_path(path);
    if (std::filesystem::exists(sidecar)) {
        std::ifstream is(sidecar);
        try {
            m.class_set = nlohmann::json::parse(is).at("class_set").get<std::vector<std::uint8_t>>();
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("nifti: bad label sidecar '" + sidecar + "': " + e.what());
        }
    } else {
        m.class_set = maxv <= 1 ? binary_classes() : aorta_classes();
    }
    try {
        m.validate();
    } catch (const InvalidArgument& e) {
        throw FormatError("nifti: '" + path + "': " + e.what());
    }
    return m;
}

} // namespace vesselseg::io
