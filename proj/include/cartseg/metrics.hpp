#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cartseg/types.hpp"

namespace cartseg {

inline void require_same_grid(const Mask& p, const Mask& g)
{
    if (!p.geometry.same_grid(g.geometry))
        throw DataError("mask geometries differ; metrics are undefined");
}

// Dice similarity coefficient 2|P∩G| / (|P|+|G|). Both-empty pairs score 1.0,
// one-empty pairs score 0.0.
inline double dsc(const Mask& p, const Mask& g)
{
    require_same_grid(p, g);
    std::int64_t inter = 0, np = 0, ng = 0;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
        np += p.data[i];
        ng += g.data[i];
        inter += p.data[i] & g.data[i];
    }
    if (np + ng == 0)
        return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

// Boundary voxels: foreground with at least one of the 6 face neighbors being
// background; voxels on the grid border count as boundary.
inline std::vector<Index3> boundary_voxels(const Mask& m)
{
    const auto& s = m.geometry.size;
    std::vector<Index3> out;
    for (std::int64_t k = 0; k < s[2]; ++k)
        for (std::int64_t j = 0; j < s[1]; ++j)
            for (std::int64_t i = 0; i < s[0]; ++i) {
                if (!m.at(i, j, k))
                    continue;
                const bool edge = i == 0 || i + 1 == s[0] || j == 0 || j + 1 == s[1]
                    || k == 0 || k + 1 == s[2];
                if (edge
                    || !m.at(i - 1, j, k) || !m.at(i + 1, j, k)
                    || !m.at(i, j - 1, k) || !m.at(i, j + 1, k)
                    || !m.at(i, j, k - 1) || !m.at(i, j, k + 1))
                    out.push_back({ i, j, k });
            }
    return out;
}

namespace detail {

    // Felzenszwalb-Huttenlocher 1D squared distance transform with sample
    // spacing h; operates in place on a strided line.
    inline void edt_1d(double* f, std::int64_t n, std::int64_t stride, double h,
        std::vector<double>& d, std::vector<std::int64_t>& v, std::vector<double>& z)
    {
        d.resize(static_cast<std::size_t>(n));
        v.resize(static_cast<std::size_t>(n));
        z.resize(static_cast<std::size_t>(n) + 1);
        const double h2 = h * h;
        std::int64_t k = 0;
        v[0] = 0;
        z[0] = -std::numeric_limits<double>::infinity();
        z[1] = std::numeric_limits<double>::infinity();
        auto fi = [&](std::int64_t i) { return f[i * stride]; };
        for (std::int64_t q = 1; q < n; ++q) {
            double s;
            while (true) {
                const auto p = v[static_cast<std::size_t>(k)];
                s = ((fi(q) + h2 * q * q) - (fi(p) + h2 * p * p)) / (2.0 * h2 * (q - p));
                if (s > z[static_cast<std::size_t>(k)])
                    break;
                --k;
            }
            ++k;
            v[static_cast<std::size_t>(k)] = q;
            z[static_cast<std::size_t>(k)] = s;
            z[static_cast<std::size_t>(k) + 1] = std::numeric_limits<double>::infinity();
        }
        k = 0;
        for (std::int64_t q = 0; q < n; ++q) {
            while (z[static_cast<std::size_t>(k) + 1] < static_cast<double>(q))
                ++k;
            const auto p = v[static_cast<std::size_t>(k)];
            d[static_cast<std::size_t>(q)] = h2 * (q - p) * (q - p) + fi(p);
        }
        for (std::int64_t q = 0; q < n; ++q)
            f[q * stride] = d[static_cast<std::size_t>(q)];
    }

} // namespace detail

// Exact squared Euclidean distance (mm^2) from every voxel center to the
// nearest seed voxel center, anisotropic spacing included.
inline std::vector<double> squared_distance_transform(const Geometry& g, const std::vector<Index3>& seeds)
{
    const auto n = static_cast<std::size_t>(g.voxel_count());
    std::vector<double> f(n, 1e30);
    const auto sx = g.size[0], sy = g.size[1], sz = g.size[2];
    for (const auto& s : seeds)
        f[static_cast<std::size_t>(s[0] + sx * (s[1] + sy * s[2]))] = 0.0;

    std::vector<double> d;
    std::vector<std::int64_t> v;
    std::vector<double> z;
    // axis 0 (stride 1)
    for (std::int64_t k = 0; k < sz; ++k)
        for (std::int64_t j = 0; j < sy; ++j)
            detail::edt_1d(f.data() + sx * (j + sy * k), sx, 1, g.spacing[0], d, v, z);
    // axis 1 (stride sx)
    for (std::int64_t k = 0; k < sz; ++k)
        for (std::int64_t i = 0; i < sx; ++i)
            detail::edt_1d(f.data() + i + sx * sy * k, sy, sx, g.spacing[1], d, v, z);
    // axis 2 (stride sx*sy)
    for (std::int64_t j = 0; j < sy; ++j)
        for (std::int64_t i = 0; i < sx; ++i)
            detail::edt_1d(f.data() + i + sx * j, sz, sx * sy, g.spacing[2], d, v, z);
    return f;
}

// Average surface distance in mm: symmetric mean over the union of both
// directed boundary-to-boundary distance lists. Undefined when either mask is
// empty (returned as nullopt, to be excluded from aggregation with a count).
inline std::optional<double> asd(const Mask& p, const Mask& g)
{
    require_same_grid(p, g);
    const auto bp = boundary_voxels(p);
    const auto bg = boundary_voxels(g);
    if (bp.empty() || bg.empty())
        return std::nullopt;

    const auto to_g = squared_distance_transform(g.geometry, bg);
    const auto to_p = squared_distance_transform(p.geometry, bp);
    const auto sx = p.geometry.size[0], sy = p.geometry.size[1];
    double sum = 0.0;
    for (const auto& v : bp)
        sum += std::sqrt(to_g[static_cast<std::size_t>(v[0] + sx * (v[1] + sy * v[2]))]);
    for (const auto& v : bg)
        sum += std::sqrt(to_p[static_cast<std::size_t>(v[0] + sx * (v[1] + sy * v[2]))]);
    return sum / static_cast<double>(bp.size() + bg.size());
}

struct MetricResult {
    std::string subject_id;
    std::string experiment; // e.g. "same_sequence", "cube_like_to_dess_like"
    Sequence sequence = Sequence::dess_like;
    bool lesioned = false;
    double dsc = 0.0;
    std::optional<double> asd_mm;
};

inline void write_metrics_csv(const std::vector<MetricResult>& rows, const std::filesystem::path& path)
{
    std::ofstream f(path);
    if (!f)
        throw DataError("cannot write " + path.string());
    f << "subject_id,experiment,sequence,lesioned,dsc,asd_mm\n";
    for (const auto& r : rows) {
        f << r.subject_id << ',' << r.experiment << ',' << to_string(r.sequence) << ','
          << (r.lesioned ? 1 : 0) << ',' << r.dsc << ',';
        if (r.asd_mm)
            f << *r.asd_mm;
        f << '\n';
    }
}

inline std::vector<MetricResult> read_metrics_csv(const std::filesystem::path& path)
{
    std::ifstream f(path);
    if (!f)
        throw DataError("cannot read " + path.string());
    std::vector<MetricResult> rows;
    std::string line;
    std::getline(f, line); // header
    while (std::getline(f, line)) {
        if (line.empty())
            continue;
        MetricResult r;
        std::vector<std::string> cells;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            auto comma = line.find(',', pos);
            if (comma == std::string::npos) {
                cells.push_back(line.substr(pos));
                break;
            }
            cells.push_back(line.substr(pos, comma - pos));
            pos = comma + 1;
        }
        if (cells.size() != 6)
            throw DataError("malformed metrics row in " + path.string() + ": " + line);
        r.subject_id = cells[0];
        r.experiment = cells[1];
        r.sequence = sequence_from_string(cells[2]);
        r.lesioned = cells[3] == "1";
        r.dsc = std::stod(cells[4]);
        if (!cells[5].empty())
            r.asd_mm = std::stod(cells[5]);
        rows.push_back(std::move(r));
    }
    return rows;
}

} // namespace cartseg
