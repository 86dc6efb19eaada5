#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cartseg/common.hpp"

namespace cartseg {

using json = nlohmann::json;

// Anatomical orientation of a voxel grid: one letter per voxel axis naming the
// anatomical direction of increasing index (R/L, A/P, S/I), world frame RAS+.
// Three distinct world axes with independent signs give the 48 valid codes.
class Orientation {
public:
    Orientation() = default; // member defaults encode RAS

    static Orientation from_code(std::string_view code)
    {
        if (code.size() != 3)
            throw DataError("orientation code must have 3 letters, got '" + std::string(code) + "'");
        Orientation o;
        bool seen[3] = { false, false, false };
        for (int i = 0; i < 3; ++i) {
            int axis = -1;
            int sign = 0;
            switch (code[i]) {
            case 'R': axis = 0; sign = +1; break;
            case 'L': axis = 0; sign = -1; break;
            case 'A': axis = 1; sign = +1; break;
            case 'P': axis = 1; sign = -1; break;
            case 'S': axis = 2; sign = +1; break;
            case 'I': axis = 2; sign = -1; break;
            default:
                throw DataError("invalid orientation letter '" + std::string(1, code[i]) + "'");
            }
            if (seen[axis])
                throw DataError("orientation code '" + std::string(code) + "' repeats a world axis");
            seen[axis] = true;
            o.axis_[i] = static_cast<std::int8_t>(axis);
            o.sign_[i] = static_cast<std::int8_t>(sign);
        }
        return o;
    }

    std::string code() const
    {
        static constexpr char pos[3] = { 'R', 'A', 'S' };
        static constexpr char neg[3] = { 'L', 'P', 'I' };
        std::string c(3, '?');
        for (int i = 0; i < 3; ++i)
            c[i] = sign_[i] > 0 ? pos[axis_[i]] : neg[axis_[i]];
        return c;
    }

    // world axis index (0=LR, 1=PA, 2=IS) served by voxel axis i
    int world_axis(int i) const { return axis_[i]; }
    int sign(int i) const { return sign_[i]; }

    // voxel axis that runs along a given world axis
    int voxel_axis_for(int world_axis) const
    {
        for (int i = 0; i < 3; ++i)
            if (axis_[i] == world_axis)
                return i;
        return -1; // unreachable for a valid code
    }

    bool operator==(const Orientation& o) const
    {
        return axis_ == o.axis_ && sign_ == o.sign_;
    }
    bool operator!=(const Orientation& o) const { return !(*this == o); }

private:
    std::array<std::int8_t, 3> axis_ { 0, 1, 2 };
    std::array<std::int8_t, 3> sign_ { 1, 1, 1 };
};

struct Geometry {
    Vec3 spacing { 1.0, 1.0, 1.0 }; // mm per voxel
    Vec3 origin { 0.0, 0.0, 0.0 };  // mm, world position of voxel (0,0,0)
    Orientation orientation;
    Index3 size { 0, 0, 0 }; // voxels

    void validate() const
    {
        for (int i = 0; i < 3; ++i) {
            if (!(spacing[i] > 0.0) || !std::isfinite(spacing[i]))
                throw DataError("geometry spacing must be positive and finite");
            if (size[i] <= 0)
                throw DataError("geometry size must be positive");
            if (!std::isfinite(origin[i]))
                throw DataError("geometry origin must be finite");
        }
    }

    std::int64_t voxel_count() const { return size[0] * size[1] * size[2]; }

    double voxel_volume_mm3() const { return spacing[0] * spacing[1] * spacing[2]; }

    // world position of a voxel index (voxel-center convention)
    Vec3 world(double i, double j, double k) const
    {
        const double idx[3] = { i, j, k };
        Vec3 w = origin;
        for (int a = 0; a < 3; ++a) {
            const int wa = orientation.world_axis(a);
            w[wa] += orientation.sign(a) * spacing[a] * idx[a];
        }
        return w;
    }

    bool same_grid(const Geometry& g, double tol_mm = 1e-6) const
    {
        if (size != g.size || orientation != g.orientation)
            return false;
        for (int i = 0; i < 3; ++i)
            if (std::abs(spacing[i] - g.spacing[i]) > tol_mm || std::abs(origin[i] - g.origin[i]) > tol_mm)
                return false;
        return true;
    }
};

inline void to_json(json& j, const Geometry& g)
{
    j = json { { "spacing", g.spacing }, { "origin", g.origin },
        { "orientation", g.orientation.code() }, { "size", g.size } };
}

inline void from_json(const json& j, Geometry& g)
{
    j.at("spacing").get_to(g.spacing);
    j.at("origin").get_to(g.origin);
    g.orientation = Orientation::from_code(j.at("orientation").get<std::string>());
    j.at("size").get_to(g.size);
    g.validate();
}

// 3D scalar grid; index order data[i + size0*(j + size1*k)] (axis 0 fastest).
template <typename T>
struct Grid3 {
    std::vector<T> data;
    Geometry geometry;

    Grid3() = default;
    explicit Grid3(const Geometry& g, T fill = T {})
        : data(static_cast<std::size_t>(g.voxel_count()), fill)
        , geometry(g)
    {
        g.validate();
    }

    T& at(std::int64_t i, std::int64_t j, std::int64_t k)
    {
        return data[static_cast<std::size_t>(i + geometry.size[0] * (j + geometry.size[1] * k))];
    }
    const T& at(std::int64_t i, std::int64_t j, std::int64_t k) const
    {
        return data[static_cast<std::size_t>(i + geometry.size[0] * (j + geometry.size[1] * k))];
    }

    std::size_t size() const { return data.size(); }
};

struct Volume : Grid3<float> {
    using Grid3<float>::Grid3;
    Volume() = default;
    Volume(Grid3<float> g)
        : Grid3<float>(std::move(g))
    {
    }

    void validate() const
    {
        geometry.validate();
        if (static_cast<std::int64_t>(data.size()) != geometry.voxel_count())
            throw DataError("volume data size does not match geometry");
        for (float v : data)
            if (!std::isfinite(v))
                throw DataError("volume contains non-finite voxels");
    }
};

struct Mask : Grid3<std::uint8_t> {
    using Grid3<std::uint8_t>::Grid3;
    Mask() = default;
    Mask(Grid3<std::uint8_t> g)
        : Grid3<std::uint8_t>(std::move(g))
    {
    }

    void validate() const
    {
        geometry.validate();
        if (static_cast<std::int64_t>(data.size()) != geometry.voxel_count())
            throw DataError("mask data size does not match geometry");
        for (auto v : data)
            if (v > 1)
                throw DataError("mask values must be 0 or 1");
    }

    std::int64_t foreground_count() const
    {
        std::int64_t n = 0;
        for (auto v : data)
            n += v;
        return n;
    }
};

enum class Sex { male, female };
enum class Laterality { left, right };
enum class Sequence { dess_like, cube_like };

inline std::string to_string(Sex s) { return s == Sex::male ? "M" : "F"; }
inline std::string to_string(Laterality l) { return l == Laterality::left ? "L" : "R"; }
inline std::string to_string(Sequence s) { return s == Sequence::dess_like ? "dess_like" : "cube_like"; }

inline Sex sex_from_string(std::string_view s)
{
    if (s == "M") return Sex::male;
    if (s == "F") return Sex::female;
    throw DataError("invalid sex '" + std::string(s) + "'");
}

inline Laterality laterality_from_string(std::string_view s)
{
    if (s == "L") return Laterality::left;
    if (s == "R") return Laterality::right;
    throw DataError("invalid laterality '" + std::string(s) + "'");
}

inline Sequence sequence_from_string(std::string_view s)
{
    if (s == "dess_like") return Sequence::dess_like;
    if (s == "cube_like") return Sequence::cube_like;
    throw DataError("invalid sequence tag '" + std::string(s) + "'");
}

struct SubjectRecord {
    std::string id;
    double age_years = 0.0;
    Sex sex = Sex::male;
    double bmi = 0.0; // kg/m^2
    Laterality laterality = Laterality::left;
    int klg = 0; // Kellgren-Lawrence grade
    bool lesioned = false;
    Sequence sequence = Sequence::dess_like;

    void validate() const
    {
        if (id.empty())
            throw DataError("subject id must be non-empty");
        if (!(age_years > 0.0))
            throw DataError("subject age must be positive");
        if (!(bmi > 0.0))
            throw DataError("subject bmi must be positive");
        if (klg < 0 || klg > 4)
            throw DataError("KLG must be in [0, 4]");
    }
};

inline void to_json(json& j, const SubjectRecord& r)
{
    j = json { { "id", r.id }, { "age", r.age_years }, { "sex", to_string(r.sex) },
        { "bmi", r.bmi }, { "laterality", to_string(r.laterality) }, { "klg", r.klg },
        { "lesioned", r.lesioned }, { "sequence", to_string(r.sequence) } };
}

inline void from_json(const json& j, SubjectRecord& r)
{
    r.id = j.at("id").get<std::string>();
    r.age_years = j.at("age").get<double>();
    r.sex = sex_from_string(j.at("sex").get<std::string>());
    r.bmi = j.at("bmi").get<double>();
    r.laterality = laterality_from_string(j.at("laterality").get<std::string>());
    r.klg = j.at("klg").get<int>();
    r.lesioned = j.at("lesioned").get<bool>();
    r.sequence = sequence_from_string(j.at("sequence").get<std::string>());
    r.validate();
}

} // namespace cartseg
