#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <zlib.h>

#include "cartseg/types.hpp"

namespace cartseg {

static_assert(std::endian::native == std::endian::little, "little-endian platform required");

namespace detail {

#pragma pack(push, 1)
    struct NiftiHeader {
        std::int32_t sizeof_hdr;
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
    static_assert(sizeof(NiftiHeader) == 348, "NIfTI-1 header must be 348 bytes");

    constexpr std::int16_t kDtUint8 = 2;
    constexpr std::int16_t kDtFloat32 = 16;

    struct GzFile {
        gzFile f = nullptr;
        explicit GzFile(const std::filesystem::path& p, const char* mode)
            : f(gzopen(p.string().c_str(), mode))
        {
        }
        ~GzFile()
        {
            if (f)
                gzclose(f);
        }
        GzFile(const GzFile&) = delete;
        GzFile& operator=(const GzFile&) = delete;
    };

    inline bool wants_gzip(const std::filesystem::path& p)
    {
        return p.extension() == ".gz";
    }

    // affine column i -> (world axis, sign, spacing); rejects oblique affines
    inline void decode_affine(const double m[3][3], Geometry& g, const std::string& where)
    {
        std::array<std::int8_t, 3> axes {}, signs {};
        char code[4] = "???";
        static constexpr char pos[3] = { 'R', 'A', 'S' };
        static constexpr char neg[3] = { 'L', 'P', 'I' };
        for (int col = 0; col < 3; ++col) {
            int best_row = 0;
            double best = 0.0, norm = 0.0;
            for (int row = 0; row < 3; ++row) {
                norm += m[row][col] * m[row][col];
                if (std::abs(m[row][col]) > std::abs(best)) {
                    best = m[row][col];
                    best_row = row;
                }
            }
            norm = std::sqrt(norm);
            if (!(norm > 0.0))
                throw DataError(where + ": zero spacing column in affine");
            if (std::abs(best) < norm * (1.0 - 1e-4))
                throw DataError(where + ": oblique affine unsupported (axis-aligned volumes only)");
            g.spacing[col] = norm;
            axes[col] = static_cast<std::int8_t>(best_row);
            signs[col] = static_cast<std::int8_t>(best > 0 ? 1 : -1);
            code[col] = best > 0 ? pos[best_row] : neg[best_row];
        }
        g.orientation = Orientation::from_code(code);
        (void)axes;
        (void)signs;
    }

} // namespace detail

// Single-file NIfTI-1 (.nii or .nii.gz). Volumes are float32, masks uint8.
// Orientation metadata travels in the sform; oblique affines are rejected.
template <typename T>
void write_nifti(const Grid3<T>& img, const std::filesystem::path& path)
{
    img.geometry.validate();

    detail::NiftiHeader h {};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    for (int i = 0; i < 3; ++i)
        h.dim[1 + i] = static_cast<std::int16_t>(img.geometry.size[i]);
    h.dim[4] = h.dim[5] = h.dim[6] = h.dim[7] = 1;
    if constexpr (std::is_same_v<T, float>) {
        h.datatype = detail::kDtFloat32;
        h.bitpix = 32;
    } else {
        static_assert(std::is_same_v<T, std::uint8_t>);
        h.datatype = detail::kDtUint8;
        h.bitpix = 8;
    }
    h.pixdim[0] = 1.0f;
    for (int i = 0; i < 3; ++i)
        h.pixdim[1 + i] = static_cast<float>(img.geometry.spacing[i]);
    h.pixdim[4] = h.pixdim[5] = h.pixdim[6] = h.pixdim[7] = 1.0f;
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.xyzt_units = 2; // mm
    std::strncpy(h.descrip, "cartseg", sizeof(h.descrip) - 1);
    h.sform_code = 1;
    h.qform_code = 0;
    float* rows[3] = { h.srow_x, h.srow_y, h.srow_z };
    for (int col = 0; col < 3; ++col) {
        const int w = img.geometry.orientation.world_axis(col);
        rows[w][col] = static_cast<float>(img.geometry.orientation.sign(col) * img.geometry.spacing[col]);
    }
    for (int w = 0; w < 3; ++w)
        rows[w][3] = static_cast<float>(img.geometry.origin[w]);
    std::memcpy(h.magic, "n+1", 4);

    const char ext[4] = { 0, 0, 0, 0 };
    const auto nbytes = img.data.size() * sizeof(T);

    detail::GzFile gz(path, detail::wants_gzip(path) ? "wb6" : "wbT"); // T = transparent (plain bytes)
    if (!gz.f)
        throw DataError("cannot open for writing: " + path.string());
    if (gzwrite(gz.f, &h, sizeof(h)) != static_cast<int>(sizeof(h))
        || gzwrite(gz.f, ext, 4) != 4
        || gzwrite(gz.f, img.data.data(), static_cast<unsigned>(nbytes)) != static_cast<int>(nbytes))
        throw DataError("write failed: " + path.string());
}

namespace detail {
    inline std::vector<char> read_all(const std::filesystem::path& path)
    {
        if (!std::filesystem::exists(path))
            throw DataError("file not found: " + path.string());
        GzFile gz(path, "rb"); // zlib reads plain files transparently
        if (!gz.f)
            throw DataError("cannot open: " + path.string());
        std::vector<char> buf;
        char chunk[1 << 16];
        int n;
        while ((n = gzread(gz.f, chunk, sizeof(chunk))) > 0)
            buf.insert(buf.end(), chunk, chunk + n);
        if (n < 0)
            throw DataError("decompression failed: " + path.string());
        return buf;
    }

    inline Geometry parse_header(const NiftiHeader& h, const std::string& where)
    {
        if (std::memcmp(h.magic, "n+1", 3) != 0)
            throw DataError(where + ": not a single-file NIfTI-1 (bad magic)");
        if (h.dim[0] < 3)
            throw DataError(where + ": expected a 3D volume");
        for (int i = 4; i <= h.dim[0]; ++i)
            if (h.dim[i] > 1)
                throw DataError(where + ": 4D+ volumes unsupported");
        Geometry g;
        for (int i = 0; i < 3; ++i)
            g.size[i] = h.dim[1 + i];
        if (h.sform_code > 0) {
            double m[3][3];
            const float* rows[3] = { h.srow_x, h.srow_y, h.srow_z };
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c)
                    m[r][c] = rows[r][c];
            decode_affine(m, g, where);
            for (int w = 0; w < 3; ++w)
                g.origin[w] = rows[w][3];
        } else {
            for (int i = 0; i < 3; ++i)
                g.spacing[i] = h.pixdim[1 + i];
            g.orientation = Orientation::from_code("RAS");
        }
        g.validate(); // rejects zero/negative spacing with a diagnostic
        return g;
    }
} // namespace detail

inline Volume read_volume(const std::filesystem::path& path)
{
    const auto buf = detail::read_all(path);
    if (buf.size() < sizeof(detail::NiftiHeader))
        throw DataError("truncated NIfTI header: " + path.string());
    detail::NiftiHeader h;
    std::memcpy(&h, buf.data(), sizeof(h));
    if (h.sizeof_hdr != 348)
        throw DataError("malformed NIfTI header (sizeof_hdr != 348): " + path.string());
    Geometry g = detail::parse_header(h, path.string());

    const auto offset = static_cast<std::size_t>(h.vox_offset);
    const auto n = static_cast<std::size_t>(g.voxel_count());
    Volume v(g);
    const double slope = h.scl_slope == 0.0f ? 1.0 : h.scl_slope;
    const double inter = h.scl_inter;
    if (h.datatype == detail::kDtFloat32) {
        if (buf.size() < offset + n * 4)
            throw DataError("truncated voxel data: " + path.string());
        std::memcpy(v.data.data(), buf.data() + offset, n * 4);
        if (slope != 1.0 || inter != 0.0)
            for (auto& x : v.data)
                x = static_cast<float>(x * slope + inter);
    } else if (h.datatype == detail::kDtUint8) {
        if (buf.size() < offset + n)
            throw DataError("truncated voxel data: " + path.string());
        for (std::size_t i = 0; i < n; ++i)
            v.data[i] = static_cast<float>(static_cast<std::uint8_t>(buf[offset + i]) * slope + inter);
    } else {
        throw DataError("unsupported NIfTI datatype " + std::to_string(h.datatype) + ": " + path.string());
    }
    v.validate(); // rejects non-finite voxels
    return v;
}

inline Mask read_mask(const std::filesystem::path& path)
{
    Volume v = read_volume(path);
    Mask m(v.geometry);
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        const float x = v.data[i];
        if (x != 0.0f && x != 1.0f)
            throw DataError("mask voxels must be 0 or 1: " + path.string());
        m.data[i] = static_cast<std::uint8_t>(x);
    }
    return m;
}

inline void write_volume(const Volume& v, const std::filesystem::path& path)
{
    v.validate();
    write_nifti(v, path);
}

inline void write_mask(const Mask& m, const std::filesystem::path& path)
{
    m.validate();
    write_nifti(m, path);
}

} // namespace cartseg
