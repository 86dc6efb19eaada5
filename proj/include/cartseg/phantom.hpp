#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cartseg/rng.hpp"
#include "cartseg/types.hpp"

namespace cartseg {

// Synthetic knee-like subject: a crescent band (sector of a spherical shell,
// approximating femoral cartilage curvature) over a piecewise-constant tissue
// model, degraded by a smooth multiplicative log-quadratic bias field and
// additive Gaussian noise. The cube_like regime gets lower band contrast,
// 1.5x the noise sigma and a stronger bias field.
struct PhantomSpec {
    Index3 size { 96, 96, 48 };
    Vec3 spacing { 0.5, 0.5, 0.5 };
    Sequence regime = Sequence::dess_like;
    int lesion_count = 0;
    double lesion_radius_mm = 2.0;
    double noise_sigma = 4.0; // base; regime multiplier applied on top
    std::uint64_t seed = 0;

    // band geometry; radii are anatomy-scale and do not scale with FOV
    double band_inner_radius_mm = 12.0;
    double band_thickness_mm = 3.0;
    double band_half_angle_deg = 60.0; // 120 degree angular extent
    double band_axis_tilt_deg = 15.0;  // tilt toward +x so laterality flips are observable
    Vec3 center_fraction { 0.5, 0.5, 0.18 };
    std::string orientation = "LPS";

    void validate() const
    {
        Geometry g;
        g.size = size;
        g.spacing = spacing;
        g.validate();
        if (lesion_count < 0)
            throw ConfigError("phantom: lesion_count must be >= 0");
        if (!(lesion_radius_mm > 0.0))
            throw ConfigError("phantom: lesion_radius_mm must be positive");
        if (lesion_radius_mm > band_thickness_mm)
            throw DataError("phantom: lesion radius exceeds band thickness; lesion would erase the band");
        if (!(noise_sigma >= 0.0))
            throw ConfigError("phantom: noise_sigma must be >= 0");
        if (!(band_inner_radius_mm > 0.0) || !(band_thickness_mm > 0.0))
            throw ConfigError("phantom: band radii must be positive");
        if (!(band_half_angle_deg > 0.0 && band_half_angle_deg < 90.0))
            throw ConfigError("phantom: band_half_angle_deg must be in (0, 90)");
    }

    double effective_noise_sigma() const
    {
        return regime == Sequence::cube_like ? 1.5 * noise_sigma : noise_sigma;
    }
    double band_intensity() const { return regime == Sequence::cube_like ? 45.0 : 70.0; }
    static constexpr double background_intensity() { return 20.0; }
    static constexpr double bone_intensity() { return 35.0; }
    double bias_amplitude() const { return regime == Sequence::cube_like ? 0.16 : 0.08; }

    // analytic volume of the shell sector, used by tests against voxel counts
    double band_volume_mm3() const
    {
        const double alpha = band_half_angle_deg * 3.14159265358979323846 / 180.0;
        const double omega = 2.0 * 3.14159265358979323846 * (1.0 - std::cos(alpha));
        const double r0 = band_inner_radius_mm;
        const double r1 = band_inner_radius_mm + band_thickness_mm;
        return omega / 3.0 * (r1 * r1 * r1 - r0 * r0 * r0);
    }
};

// Table-style full-size presets and the desk-scale default.
inline PhantomSpec phantom_preset_desk() { return PhantomSpec {}; }

inline PhantomSpec phantom_preset_dess_fullsize()
{
    PhantomSpec s;
    s.size = { 384, 384, 160 };
    s.spacing = { 0.3646, 0.3646, 0.7 };
    s.regime = Sequence::dess_like;
    return s;
}

inline PhantomSpec phantom_preset_cube_fullsize()
{
    PhantomSpec s;
    s.size = { 512, 512, 296 };
    s.spacing = { 0.4121, 0.4121, 0.4 };
    s.regime = Sequence::cube_like;
    return s;
}

namespace detail {

    struct Vec3d {
        double x, y, z;
        Vec3d operator-(const Vec3d& o) const { return { x - o.x, y - o.y, z - o.z }; }
        Vec3d operator+(const Vec3d& o) const { return { x + o.x, y + o.y, z + o.z }; }
        Vec3d operator*(double s) const { return { x * s, y * s, z * s }; }
        double dot(const Vec3d& o) const { return x * o.x + y * o.y + z * o.z; }
        double norm() const { return std::sqrt(dot(*this)); }
        Vec3d normalized() const
        {
            const double n = norm();
            return { x / n, y / n, z / n };
        }
        Vec3d cross(const Vec3d& o) const
        {
            return { y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x };
        }
    };

} // namespace detail

// Deterministic given (spec, record): all randomness flows from spec.seed
// through labeled substreams, so changing lesion_count never perturbs the
// noise or bias draws (the lesioned mask stays a strict subset).
inline std::pair<Volume, Mask> generate_subject(const PhantomSpec& spec, const SubjectRecord& record)
{
    spec.validate();
    record.validate();
    if (record.lesioned != (spec.lesion_count > 0))
        throw DataError("phantom: record.lesioned must match lesion_count > 0 for subject " + record.id);

    Geometry g;
    g.size = spec.size;
    g.spacing = spec.spacing;
    g.orientation = Orientation::from_code(spec.orientation);
    g.origin = { 0, 0, 0 };

    const double pi = 3.14159265358979323846;
    const detail::Vec3d extent { spec.spacing[0] * double(spec.size[0]),
        spec.spacing[1] * double(spec.size[1]), spec.spacing[2] * double(spec.size[2]) };
    const detail::Vec3d center { spec.center_fraction[0] * extent.x,
        spec.center_fraction[1] * extent.y, spec.center_fraction[2] * extent.z };
    const double tilt = spec.band_axis_tilt_deg * pi / 180.0;
    const detail::Vec3d axis { std::sin(tilt), 0.0, std::cos(tilt) };
    const double cos_half = std::cos(spec.band_half_angle_deg * pi / 180.0);
    const double cos_bone = std::cos(std::min(89.0, spec.band_half_angle_deg + 15.0) * pi / 180.0);
    const double r0 = spec.band_inner_radius_mm;
    const double r1 = spec.band_inner_radius_mm + spec.band_thickness_mm;

    Rng root(spec.seed, "phantom/" + record.id);

    // bias field: exp of an order-2 polynomial in normalized coordinates
    Rng bias_rng = root.substream("bias");
    double cb[9];
    for (auto& c : cb)
        c = bias_rng.uniform(-spec.bias_amplitude(), spec.bias_amplitude());

    // lesion notches centered on the band mid-surface
    Rng lesion_rng = root.substream("lesions");
    std::vector<detail::Vec3d> lesion_centers;
    {
        const detail::Vec3d h = std::abs(axis.x) < 0.9 ? detail::Vec3d { 1, 0, 0 } : detail::Vec3d { 0, 1, 0 };
        const detail::Vec3d e1 = axis.cross(h).normalized();
        const detail::Vec3d e2 = axis.cross(e1);
        const double r_mid = 0.5 * (r0 + r1);
        for (int l = 0; l < spec.lesion_count; ++l) {
            const double theta = lesion_rng.uniform(0.15, 0.85) * spec.band_half_angle_deg * pi / 180.0;
            const double phi = lesion_rng.uniform(0.0, 2.0 * pi);
            const detail::Vec3d dir = (e1 * (std::sin(theta) * std::cos(phi))
                                          + e2 * (std::sin(theta) * std::sin(phi))
                                          + axis * std::cos(theta))
                                          .normalized();
            lesion_centers.push_back(center + dir * r_mid);
        }
    }

    Volume vol(g);
    Mask mask(g);
    Rng noise_rng = root.substream("noise");
    const double sigma = spec.effective_noise_sigma();
    const double lesion_r2 = spec.lesion_radius_mm * spec.lesion_radius_mm;

    std::size_t idx = 0;
    for (std::int64_t k = 0; k < spec.size[2]; ++k)
        for (std::int64_t j = 0; j < spec.size[1]; ++j)
            for (std::int64_t i = 0; i < spec.size[0]; ++i, ++idx) {
                const detail::Vec3d p { (double(i) + 0.5) * spec.spacing[0],
                    (double(j) + 0.5) * spec.spacing[1], (double(k) + 0.5) * spec.spacing[2] };
                const detail::Vec3d v = p - center;
                const double r = v.norm();
                const double cos_theta = r > 1e-12 ? v.dot(axis) / r : 1.0;

                double tissue = PhantomSpec::background_intensity();
                bool in_band = false;
                if (r >= r0 && r <= r1 && cos_theta >= cos_half) {
                    tissue = spec.band_intensity();
                    in_band = true;
                } else if (r < r0 - 0.5 && cos_theta >= cos_bone) {
                    tissue = PhantomSpec::bone_intensity();
                }

                if (in_band) {
                    for (const auto& lc : lesion_centers) {
                        const detail::Vec3d d = p - lc;
                        if (d.dot(d) <= lesion_r2) {
                            tissue = PhantomSpec::background_intensity();
                            in_band = false;
                            break;
                        }
                    }
                }

                const double nx = 2.0 * p.x / extent.x - 1.0;
                const double ny = 2.0 * p.y / extent.y - 1.0;
                const double nz = 2.0 * p.z / extent.z - 1.0;
                const double field = cb[0] * nx + cb[1] * ny + cb[2] * nz
                    + cb[3] * nx * nx + cb[4] * ny * ny + cb[5] * nz * nz
                    + cb[6] * nx * ny + cb[7] * nx * nz + cb[8] * ny * nz;

                const double value = tissue * std::exp(field) + sigma * noise_rng.normal();
                vol.data[idx] = static_cast<float>(value);
                mask.data[idx] = in_band ? 1 : 0;
            }

    // right knees are generated mirrored along the L-R axis so the
    // laterality-correction step has real work to do
    if (record.laterality == Laterality::right) {
        const int lr_axis = g.orientation.voxel_axis_for(0);
        auto flip = [&](auto& grid) {
            auto copy = grid;
            for (std::int64_t k = 0; k < spec.size[2]; ++k)
                for (std::int64_t j = 0; j < spec.size[1]; ++j)
                    for (std::int64_t i = 0; i < spec.size[0]; ++i) {
                        Index3 src { i, j, k };
                        src[static_cast<std::size_t>(lr_axis)] = spec.size[static_cast<std::size_t>(lr_axis)] - 1 - src[static_cast<std::size_t>(lr_axis)];
                        grid.at(i, j, k) = copy.at(src[0], src[1], src[2]);
                    }
        };
        flip(vol);
        flip(mask);
    }

    return { std::move(vol), std::move(mask) };
}

struct PhantomSubject {
    SubjectRecord record;
    Volume volume;
    Mask mask;
};

// Cohort with plausible demographics (age 40-75, BMI 20-35, KLG 2-3, mixed
// sex and laterality). Subject volumes get a small per-subject origin jitter
// so the origin-harmonization step is exercised.
inline std::vector<PhantomSubject> generate_cohort(int n_nonlesioned, int n_lesioned,
    Sequence regime, std::uint64_t seed, PhantomSpec base = phantom_preset_desk())
{
    if (n_nonlesioned < 0 || n_lesioned < 0)
        throw ConfigError("phantom: cohort counts must be >= 0");
    base.regime = regime;

    Rng cohort_rng(seed, "cohort/" + to_string(regime));
    std::vector<PhantomSubject> out;
    out.reserve(static_cast<std::size_t>(n_nonlesioned + n_lesioned));

    const int total = n_nonlesioned + n_lesioned;
    for (int n = 0; n < total; ++n) {
        const bool lesioned = n >= n_nonlesioned;
        Rng demo = cohort_rng.substream("subject", static_cast<std::uint64_t>(n));

        SubjectRecord rec;
        char buf[64];
        std::snprintf(buf, sizeof(buf), "PH-%s-%s-%03d", regime == Sequence::dess_like ? "DESS" : "CUBE",
            lesioned ? "L" : "N", n);
        rec.id = buf;
        rec.age_years = std::round(demo.uniform(40.0, 75.0) * 10.0) / 10.0;
        rec.sex = demo.bernoulli(0.5) ? Sex::male : Sex::female;
        rec.bmi = std::round(demo.uniform(20.0, 35.0) * 10.0) / 10.0;
        rec.laterality = demo.bernoulli(0.5) ? Laterality::left : Laterality::right;
        rec.klg = static_cast<int>(demo.uniform_int(2, 3));
        rec.lesioned = lesioned;
        rec.sequence = regime;

        PhantomSpec spec = base;
        spec.lesion_count = lesioned ? static_cast<int>(demo.uniform_int(1, 3)) : 0;
        spec.seed = demo.substream("phantom_seed").key();

        auto [vol, mask] = generate_subject(spec, rec);
        for (int a = 0; a < 3; ++a) {
            const double jitter = demo.uniform(-5.0, 5.0);
            vol.geometry.origin[a] = jitter;
            mask.geometry.origin[a] = jitter;
        }
        out.push_back({ std::move(rec), std::move(vol), std::move(mask) });
    }
    return out;
}

inline void write_cohort_manifest(const std::vector<SubjectRecord>& records,
    const std::filesystem::path& path)
{
    std::ofstream f(path);
    if (!f)
        throw DataError("cannot write cohort manifest " + path.string());
    for (const auto& r : records) {
        json j = r;
        f << j.dump() << '\n';
    }
}

inline std::vector<SubjectRecord> read_cohort_manifest(const std::filesystem::path& path)
{
    std::ifstream f(path);
    if (!f)
        throw DataError("cannot read cohort manifest " + path.string());
    std::vector<SubjectRecord> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty())
            continue;
        out.push_back(json::parse(line).get<SubjectRecord>());
    }
    return out;
}

} // namespace cartseg
