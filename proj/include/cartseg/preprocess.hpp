#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "cartseg/filters.hpp"
#include "cartseg/npy.hpp"
#include "cartseg/types.hpp"

namespace cartseg {

// One applied transform. Spatial steps carry everything needed for an exact
// inverse (prior geometry is stored verbatim); intensity steps are
// descriptive only and never touch masks.
struct PreprocessStep {
    std::string kind;
    json params;
};

struct PreprocessRecord {
    Geometry original_geometry;
    std::vector<PreprocessStep> steps;
};

inline void to_json(json& j, const PreprocessStep& s)
{
    j = json { { "kind", s.kind }, { "params", s.params } };
}
inline void from_json(const json& j, PreprocessStep& s)
{
    j.at("kind").get_to(s.kind);
    s.params = j.at("params");
}
inline void to_json(json& j, const PreprocessRecord& r)
{
    j = json { { "original_geometry", r.original_geometry }, { "steps", r.steps } };
}
inline void from_json(const json& j, PreprocessRecord& r)
{
    j.at("original_geometry").get_to(r.original_geometry);
    j.at("steps").get_to(r.steps);
}

// ---------------------------------------------------------------------------
// orientation alignment

namespace detail {

    struct AxisMap {
        // target voxel axis j reads source voxel axis src[j], reversed if flip[j]
        std::array<int, 3> src;
        std::array<bool, 3> flip;
    };

    inline AxisMap orientation_map(const Orientation& from, const Orientation& to)
    {
        AxisMap map {};
        for (int j = 0; j < 3; ++j) {
            const int w = to.world_axis(j);
            const int i = from.voxel_axis_for(w);
            map.src[static_cast<std::size_t>(j)] = i;
            map.flip[static_cast<std::size_t>(j)] = from.sign(i) != to.sign(j);
        }
        return map;
    }

    template <typename T>
    Grid3<T> relabel_grid(const Grid3<T>& in, const Orientation& target, const AxisMap& map)
    {
        Geometry g;
        g.orientation = target;
        for (int j = 0; j < 3; ++j) {
            g.size[static_cast<std::size_t>(j)] = in.geometry.size[static_cast<std::size_t>(map.src[static_cast<std::size_t>(j)])];
            g.spacing[static_cast<std::size_t>(j)] = in.geometry.spacing[static_cast<std::size_t>(map.src[static_cast<std::size_t>(j)])];
        }
        // origin = world position of the source voxel that becomes index (0,0,0)
        double idx0[3] = { 0, 0, 0 };
        for (int j = 0; j < 3; ++j)
            if (map.flip[static_cast<std::size_t>(j)])
                idx0[map.src[static_cast<std::size_t>(j)]] = double(in.geometry.size[static_cast<std::size_t>(map.src[static_cast<std::size_t>(j)])] - 1);
        const Vec3 o = in.geometry.world(idx0[0], idx0[1], idx0[2]);
        g.origin = o;

        Grid3<T> out(g);
        Index3 src {};
        for (std::int64_t c = 0; c < g.size[2]; ++c)
            for (std::int64_t b = 0; b < g.size[1]; ++b)
                for (std::int64_t a = 0; a < g.size[0]; ++a) {
                    const std::int64_t dst_idx[3] = { a, b, c };
                    for (int j = 0; j < 3; ++j) {
                        const auto i = static_cast<std::size_t>(map.src[static_cast<std::size_t>(j)]);
                        src[i] = map.flip[static_cast<std::size_t>(j)]
                            ? in.geometry.size[i] - 1 - dst_idx[j]
                            : dst_idx[j];
                    }
                    out.at(a, b, c) = in.at(src[0], src[1], src[2]);
                }
        return out;
    }

} // namespace detail

// Pure relabel+flip: the voxel multiset is preserved and the step is exactly
// invertible (the prior geometry is restored verbatim on inversion).
template <typename T>
std::pair<Grid3<T>, PreprocessStep> align_orientation(const Grid3<T>& in, const Orientation& target)
{
    PreprocessStep step;
    step.kind = "align_orientation";
    step.params = json { { "from", in.geometry.orientation.code() }, { "to", target.code() },
        { "prior_geometry", in.geometry } };
    if (in.geometry.orientation == target)
        return { in, step };
    const auto map = detail::orientation_map(in.geometry.orientation, target);
    return { detail::relabel_grid(in, target, map), step };
}

template <typename T>
Grid3<T> invert_align_orientation(const Grid3<T>& in, const PreprocessStep& step)
{
    const Geometry prior = step.params.at("prior_geometry").get<Geometry>();
    if (in.geometry.orientation == prior.orientation) {
        Grid3<T> out = in;
        out.geometry = prior;
        return out;
    }
    const auto map = detail::orientation_map(in.geometry.orientation, prior.orientation);
    Grid3<T> out = detail::relabel_grid(in, prior.orientation, map);
    out.geometry = prior; // restore stored metadata bit-exactly
    return out;
}

// ---------------------------------------------------------------------------
// laterality correction (content mirror along the anatomical L-R axis)

template <typename T>
void flip_along_axis(Grid3<T>& g, int axis)
{
    const auto& s = g.geometry.size;
    auto copy = g.data;
    Index3 src {};
    std::size_t idx = 0;
    for (std::int64_t k = 0; k < s[2]; ++k)
        for (std::int64_t j = 0; j < s[1]; ++j)
            for (std::int64_t i = 0; i < s[0]; ++i, ++idx) {
                src = { i, j, k };
                src[static_cast<std::size_t>(axis)] = s[static_cast<std::size_t>(axis)] - 1 - src[static_cast<std::size_t>(axis)];
                g.data[idx] = copy[static_cast<std::size_t>(src[0] + s[0] * (src[1] + s[1] * src[2]))];
            }
}

struct FlipResult {
    Volume volume;
    Mask mask;
    SubjectRecord record;
    PreprocessStep step;
};

// Right knees are mirrored to left; left knees pass through unchanged.
inline FlipResult flip_laterality(Volume v, Mask m, SubjectRecord record)
{
    const int axis = v.geometry.orientation.voxel_axis_for(0);
    PreprocessStep step;
    const bool flipped = record.laterality == Laterality::right;
    step.kind = "flip_laterality";
    step.params = json { { "applied", flipped }, { "axis", axis },
        { "prior_laterality", to_string(record.laterality) } };
    if (flipped) {
        flip_along_axis(v, axis);
        flip_along_axis(m, axis);
        record.laterality = Laterality::left;
    }
    return { std::move(v), std::move(m), std::move(record), std::move(step) };
}

template <typename T>
void invert_flip_laterality(Grid3<T>& g, const PreprocessStep& step)
{
    if (step.params.at("applied").get<bool>())
        flip_along_axis(g, step.params.at("axis").get<int>()); // involution
}

// ---------------------------------------------------------------------------
// origin harmonization (header change only)

template <typename T>
PreprocessStep set_common_origin(Grid3<T>& g)
{
    PreprocessStep step;
    step.kind = "set_origin";
    step.params = json { { "prior_origin", g.geometry.origin } };
    g.geometry.origin = { 0.0, 0.0, 0.0 };
    return step;
}

template <typename T>
void invert_set_origin(Grid3<T>& g, const PreprocessStep& step)
{
    g.geometry.origin = step.params.at("prior_origin").get<Vec3>();
}

// ---------------------------------------------------------------------------
// 2D dataset construction and its exact inverse

struct Slice2D {
    std::int64_t h = 0, w = 0;
    std::vector<float> image;       // h*w, row-major
    std::vector<std::uint8_t> mask; // paired, same dims

    float& img_at(std::int64_t r, std::int64_t c) { return image[static_cast<std::size_t>(r * w + c)]; }
    float img_at(std::int64_t r, std::int64_t c) const { return image[static_cast<std::size_t>(r * w + c)]; }
    std::uint8_t& msk_at(std::int64_t r, std::int64_t c) { return mask[static_cast<std::size_t>(r * w + c)]; }
    std::uint8_t msk_at(std::int64_t r, std::int64_t c) const { return mask[static_cast<std::size_t>(r * w + c)]; }
};

// Slices a volume/mask pair along slice_axis (sagittal = axis 0 by
// convention). Optional target dims are reached by symmetric zero pad or
// centered crop; cropping that would cut mask content is an error. No
// interpolation happens here, so mask slices stay binary.
inline std::pair<std::vector<Slice2D>, PreprocessStep> to_slices(const Volume& v, const Mask& m,
    int slice_axis, std::optional<std::pair<std::int64_t, std::int64_t>> target_size = std::nullopt)
{
    if (!v.geometry.same_grid(m.geometry))
        throw DataError("to_slices: volume and mask geometries differ");
    if (slice_axis < 0 || slice_axis > 2)
        throw DataError("to_slices: slice_axis must be 0, 1, or 2");

    const int a1 = slice_axis == 0 ? 1 : 0;
    const int a2 = slice_axis == 2 ? 1 : 2;
    const auto n = v.geometry.size[static_cast<std::size_t>(slice_axis)];
    const auto in_h = v.geometry.size[static_cast<std::size_t>(a1)];
    const auto in_w = v.geometry.size[static_cast<std::size_t>(a2)];
    const auto out_h = target_size ? target_size->first : in_h;
    const auto out_w = target_size ? target_size->second : in_w;
    const std::int64_t off_h = (out_h - in_h) / 2; // negative when cropping
    const std::int64_t off_w = (out_w - in_w) / 2;

    if (out_h < in_h || out_w < in_w) {
        // centered crop must keep every mask voxel
        std::int64_t rmin = in_h, rmax = -1, cmin = in_w, cmax = -1;
        Index3 idx {};
        for (std::int64_t s = 0; s < n; ++s)
            for (std::int64_t r = 0; r < in_h; ++r)
                for (std::int64_t c = 0; c < in_w; ++c) {
                    idx[static_cast<std::size_t>(slice_axis)] = s;
                    idx[static_cast<std::size_t>(a1)] = r;
                    idx[static_cast<std::size_t>(a2)] = c;
                    if (m.at(idx[0], idx[1], idx[2])) {
                        rmin = std::min(rmin, r);
                        rmax = std::max(rmax, r);
                        cmin = std::min(cmin, c);
                        cmax = std::max(cmax, c);
                    }
                }
        if (rmax >= 0 && (rmin + off_h < 0 || rmax + off_h >= out_h || cmin + off_w < 0 || cmax + off_w >= out_w))
            throw DataError("to_slices: target size smaller than the mask content bounding box");
    }

    std::vector<Slice2D> slices(static_cast<std::size_t>(n));
    Index3 idx {};
    for (std::int64_t s = 0; s < n; ++s) {
        auto& sl = slices[static_cast<std::size_t>(s)];
        sl.h = out_h;
        sl.w = out_w;
        sl.image.assign(static_cast<std::size_t>(out_h * out_w), 0.0f);
        sl.mask.assign(static_cast<std::size_t>(out_h * out_w), 0);
        idx[static_cast<std::size_t>(slice_axis)] = s;
        for (std::int64_t r = 0; r < in_h; ++r) {
            const auto ro = r + off_h;
            if (ro < 0 || ro >= out_h)
                continue;
            for (std::int64_t c = 0; c < in_w; ++c) {
                const auto co = c + off_w;
                if (co < 0 || co >= out_w)
                    continue;
                idx[static_cast<std::size_t>(a1)] = r;
                idx[static_cast<std::size_t>(a2)] = c;
                sl.img_at(ro, co) = v.at(idx[0], idx[1], idx[2]);
                sl.msk_at(ro, co) = m.at(idx[0], idx[1], idx[2]);
            }
        }
    }

    PreprocessStep step;
    step.kind = "to_slices";
    step.params = json { { "slice_axis", slice_axis }, { "n_slices", n },
        { "in_h", in_h }, { "in_w", in_w }, { "out_h", out_h }, { "out_w", out_w },
        { "off_h", off_h }, { "off_w", off_w }, { "sliced_geometry", v.geometry } };
    return { std::move(slices), std::move(step) };
}

// Rebuilds a 3D mask from per-slice predictions by reversing every recorded
// spatial step in reverse order, restoring the original metadata exactly.
inline Mask reconstruct(const std::vector<std::vector<std::uint8_t>>& predictions,
    const PreprocessRecord& record, const Geometry& reference_geometry)
{
    const PreprocessStep* slice_step = nullptr;
    for (const auto& s : record.steps)
        if (s.kind == "to_slices")
            slice_step = &s;
    if (!slice_step)
        throw DataError("reconstruct: record has no to_slices step");

    const auto& p = slice_step->params;
    const auto n = p.at("n_slices").get<std::int64_t>();
    if (static_cast<std::int64_t>(predictions.size()) != n)
        throw DataError("reconstruct: got " + std::to_string(predictions.size()) + " slices, expected "
            + std::to_string(n));
    const int slice_axis = p.at("slice_axis").get<int>();
    const auto in_h = p.at("in_h").get<std::int64_t>();
    const auto in_w = p.at("in_w").get<std::int64_t>();
    const auto out_h = p.at("out_h").get<std::int64_t>();
    const auto out_w = p.at("out_w").get<std::int64_t>();
    const auto off_h = p.at("off_h").get<std::int64_t>();
    const auto off_w = p.at("off_w").get<std::int64_t>();
    const Geometry sliced_geometry = p.at("sliced_geometry").get<Geometry>();

    const int a1 = slice_axis == 0 ? 1 : 0;
    const int a2 = slice_axis == 2 ? 1 : 2;
    Mask stacked(sliced_geometry);
    Index3 idx {};
    for (std::int64_t s = 0; s < n; ++s) {
        const auto& plane = predictions[static_cast<std::size_t>(s)];
        if (static_cast<std::int64_t>(plane.size()) != out_h * out_w)
            throw DataError("reconstruct: slice " + std::to_string(s) + " has unexpected size");
        idx[static_cast<std::size_t>(slice_axis)] = s;
        for (std::int64_t r = 0; r < in_h; ++r) {
            const auto ro = r + off_h;
            for (std::int64_t c = 0; c < in_w; ++c) {
                const auto co = c + off_w;
                std::uint8_t val = 0;
                if (ro >= 0 && ro < out_h && co >= 0 && co < out_w)
                    val = plane[static_cast<std::size_t>(ro * out_w + co)] ? 1 : 0;
                idx[static_cast<std::size_t>(a1)] = r;
                idx[static_cast<std::size_t>(a2)] = c;
                stacked.at(idx[0], idx[1], idx[2]) = val;
            }
        }
    }

    // undo the remaining spatial steps in reverse order
    for (auto it = record.steps.rbegin(); it != record.steps.rend(); ++it) {
        if (it->kind == "to_slices")
            continue; // handled above
        if (it->kind == "set_origin")
            invert_set_origin(stacked, *it);
        else if (it->kind == "flip_laterality")
            invert_flip_laterality(stacked, *it);
        else if (it->kind == "align_orientation")
            stacked = invert_align_orientation(stacked, *it);
        // intensity steps (bias/rescale/diffuse) never touch masks
    }

    if (!stacked.geometry.same_grid(reference_geometry, 1e-9))
        throw DataError("reconstruct: restored geometry does not match the reference geometry");
    stacked.geometry = reference_geometry;
    return stacked;
}

// ---------------------------------------------------------------------------
// full per-subject chain

struct PreprocessParams {
    Orientation target_orientation = Orientation::from_code("RAS");
    int slice_axis = 0; // sagittal by convention
    std::optional<std::pair<std::int64_t, std::int64_t>> target_size;
    bool bias_correction = true;
    EnhanceParams enhance;
    DiffusionParams diffusion;
};

struct PreprocessedSubject {
    SubjectRecord record; // laterality relabeled if flipped
    PreprocessRecord prep;
    std::vector<Slice2D> slices;
};

// The full chain: orientation alignment, laterality correction, origin
// harmonization, bias correction, contour-enhancing rescale, diffusion
// filtering, then 2D slicing.
inline PreprocessedSubject preprocess_subject(const Volume& volume, const Mask& mask,
    const SubjectRecord& record, const PreprocessParams& params)
{
    if (!volume.geometry.same_grid(mask.geometry))
        throw DataError("preprocess: volume and mask geometries differ for " + record.id);

    PreprocessedSubject out;
    out.prep.original_geometry = volume.geometry;

    auto [v1, orient_step] = align_orientation(volume, params.target_orientation);
    auto [m1, orient_step_m] = align_orientation(mask, params.target_orientation);
    out.prep.steps.push_back(orient_step);

    auto flip = flip_laterality(std::move(v1), std::move(m1), record);
    out.prep.steps.push_back(flip.step);
    out.record = flip.record;

    auto origin_step = set_common_origin(flip.volume);
    set_common_origin(flip.mask);
    out.prep.steps.push_back(origin_step);

    Volume v = std::move(flip.volume);
    if (params.bias_correction) {
        v = correct_bias_field(v);
        out.prep.steps.push_back({ "correct_bias_field", json { { "model", "log_poly2" } } });
    }
    v = rescale_enhance(v, params.enhance);
    out.prep.steps.push_back({ "rescale_enhance",
        json { { "lambda", params.enhance.unsharp_lambda }, { "sigma", params.enhance.unsharp_sigma } } });
    v = diffuse(v, params.diffusion);
    out.prep.steps.push_back({ "diffuse",
        json { { "iterations", params.diffusion.iterations }, { "kappa", params.diffusion.kappa },
            { "dt", params.diffusion.dt } } });

    auto [slices, slice_step] = to_slices(v, flip.mask, params.slice_axis, params.target_size);
    out.prep.steps.push_back(slice_step);
    out.slices = std::move(slices);
    return out;
}

// ---------------------------------------------------------------------------
// slice dataset persistence: paired per-subject .npy stacks + a JSON index

struct SliceDatasetEntry {
    SubjectRecord record;
    PreprocessRecord prep;
    Geometry original_geometry; // of the raw subject, pre-chain
    std::vector<Slice2D> slices;
    std::filesystem::path original_mask_path; // ground truth in original space
};

struct SliceDataset {
    int slice_axis = 0;
    std::vector<SliceDatasetEntry> subjects;
};

inline void save_slice_dataset(const SliceDataset& ds, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    json index;
    index["slice_axis"] = ds.slice_axis;
    index["subjects"] = json::array();
    for (const auto& sub : ds.subjects) {
        if (sub.slices.empty())
            throw DataError("slice dataset entry without slices: " + sub.record.id);
        const auto n = static_cast<std::int64_t>(sub.slices.size());
        const auto h = sub.slices.front().h, w = sub.slices.front().w;
        std::vector<float> images(static_cast<std::size_t>(n * h * w));
        std::vector<std::uint8_t> masks(static_cast<std::size_t>(n * h * w));
        for (std::int64_t s = 0; s < n; ++s) {
            const auto& sl = sub.slices[static_cast<std::size_t>(s)];
            if (sl.h != h || sl.w != w)
                throw DataError("slice dims differ within subject " + sub.record.id);
            std::copy(sl.image.begin(), sl.image.end(), images.begin() + s * h * w);
            std::copy(sl.mask.begin(), sl.mask.end(), masks.begin() + s * h * w);
        }
        npy::save(dir / (sub.record.id + "_images.npy"), images, { n, h, w });
        npy::save(dir / (sub.record.id + "_masks.npy"), masks, { n, h, w });
        index["subjects"].push_back(json { { "record", sub.record }, { "prep", sub.prep },
            { "original_geometry", sub.original_geometry },
            { "original_mask", sub.original_mask_path.string() },
            { "n_slices", n }, { "h", h }, { "w", w },
            { "images", sub.record.id + "_images.npy" }, { "masks", sub.record.id + "_masks.npy" } });
    }
    std::ofstream f(dir / "index.json");
    if (!f)
        throw DataError("cannot write slice dataset index in " + dir.string());
    f << index.dump(2) << '\n';
}

inline SliceDataset load_slice_dataset(const std::filesystem::path& dir)
{
    std::ifstream f(dir / "index.json");
    if (!f)
        throw DataError("slice dataset index not found in " + dir.string());
    const json index = json::parse(f);

    SliceDataset ds;
    ds.slice_axis = index.at("slice_axis").get<int>();
    for (const auto& j : index.at("subjects")) {
        SliceDatasetEntry sub;
        sub.record = j.at("record").get<SubjectRecord>();
        sub.prep = j.at("prep").get<PreprocessRecord>();
        sub.original_geometry = j.at("original_geometry").get<Geometry>();
        sub.original_mask_path = j.at("original_mask").get<std::string>();
        const auto n = j.at("n_slices").get<std::int64_t>();
        const auto h = j.at("h").get<std::int64_t>();
        const auto w = j.at("w").get<std::int64_t>();

        std::vector<std::int64_t> shape;
        auto images = npy::load<float>(dir / j.at("images").get<std::string>(), shape);
        auto masks = npy::load<std::uint8_t>(dir / j.at("masks").get<std::string>(), shape);
        sub.slices.resize(static_cast<std::size_t>(n));
        for (std::int64_t s = 0; s < n; ++s) {
            auto& sl = sub.slices[static_cast<std::size_t>(s)];
            sl.h = h;
            sl.w = w;
            sl.image.assign(images.begin() + s * h * w, images.begin() + (s + 1) * h * w);
            sl.mask.assign(masks.begin() + s * h * w, masks.begin() + (s + 1) * h * w);
        }
        ds.subjects.push_back(std::move(sub));
    }
    return ds;
}

} // namespace cartseg
