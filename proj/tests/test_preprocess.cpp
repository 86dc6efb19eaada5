#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <numeric>

#include "cartseg/phantom.hpp"
#include "cartseg/preprocess.hpp"
#include "cartseg/rng.hpp"

using namespace cartseg;

namespace {

Volume make_volume(Index3 size, const std::string& code = "RAS", Vec3 spacing = { 1, 1, 1 },
    Vec3 origin = { 0, 0, 0 })
{
    Geometry g;
    g.size = size;
    g.spacing = spacing;
    g.origin = origin;
    g.orientation = Orientation::from_code(code);
    return Volume(g);
}

// small phantom that fits a 48x48x32 grid at 0.5 mm
PhantomSpec small_spec(std::uint64_t seed, Sequence regime = Sequence::dess_like)
{
    PhantomSpec s;
    s.size = { 48, 48, 32 };
    s.regime = regime;
    s.band_inner_radius_mm = 6.0;
    s.band_thickness_mm = 2.0;
    s.band_half_angle_deg = 50.0;
    s.center_fraction = { 0.5, 0.5, 0.2 };
    s.lesion_radius_mm = 1.5;
    s.seed = seed;
    return s;
}

SubjectRecord small_record(const std::string& id, Laterality lat, bool lesioned = false)
{
    SubjectRecord r;
    r.id = id;
    r.age_years = 60;
    r.sex = Sex::male;
    r.bmi = 25;
    r.laterality = lat;
    r.klg = 2;
    r.lesioned = lesioned;
    r.sequence = Sequence::dess_like;
    return r;
}

} // namespace

TEST_CASE("align_orientation")
{
    SECTION("already aligned volume is unchanged")
    {
        Volume v = make_volume({ 3, 4, 5 });
        Rng rng(1, "fill");
        for (auto& x : v.data)
            x = float(rng.uniform());
        auto [out, step] = align_orientation(v, Orientation::from_code("RAS"));
        CHECK(out.data == v.data);
        CHECK(out.geometry.orientation.code() == "RAS");
    }

    SECTION("pure permutation: RAS -> ASR moves a marker to the permuted index")
    {
        Volume v = make_volume({ 4, 5, 6 });
        v.at(1, 2, 3) = 1.0f;
        auto [out, step] = align_orientation(v, Orientation::from_code("ASR"));
        // target axis 0 reads source axis 1, axis 1 reads source 2, axis 2 reads source 0
        CHECK(out.geometry.size == Index3 { 5, 6, 4 });
        CHECK(out.at(2, 3, 1) == 1.0f);
        std::int64_t nonzero = 0;
        for (auto x : out.data)
            nonzero += x != 0.0f;
        CHECK(nonzero == 1);
    }

    SECTION("flip: RAS -> LAS reflects the first axis")
    {
        Volume v = make_volume({ 4, 5, 6 });
        v.at(1, 2, 3) = 1.0f;
        auto [out, step] = align_orientation(v, Orientation::from_code("LAS"));
        CHECK(out.geometry.size == Index3 { 4, 5, 6 });
        CHECK(out.at(2, 2, 3) == 1.0f);
    }

    SECTION("voxel multiset and world positions are preserved")
    {
        Volume v = make_volume({ 3, 4, 5 }, "LPS", { 0.5, 0.7, 1.1 }, { 3.0, -2.0, 1.0 });
        Rng rng(2, "fill");
        for (auto& x : v.data)
            x = float(rng.uniform());
        v.at(2, 1, 4) = 77.0f;
        auto [out, step] = align_orientation(v, Orientation::from_code("SAR"));

        auto sorted_in = v.data;
        auto sorted_out = out.data;
        std::sort(sorted_in.begin(), sorted_in.end());
        std::sort(sorted_out.begin(), sorted_out.end());
        CHECK(sorted_in == sorted_out);

        // locate the marker and compare world coordinates
        const auto& s = out.geometry.size;
        for (std::int64_t k = 0; k < s[2]; ++k)
            for (std::int64_t j = 0; j < s[1]; ++j)
                for (std::int64_t i = 0; i < s[0]; ++i)
                    if (out.at(i, j, k) == 77.0f) {
                        const auto w_in = v.geometry.world(2, 1, 4);
                        const auto w_out = out.geometry.world(double(i), double(j), double(k));
                        for (int a = 0; a < 3; ++a)
                            CHECK(w_out[a] == Catch::Approx(w_in[a]).margin(1e-9));
                    }
    }

    SECTION("apply then invert restores the volume bit-exactly")
    {
        Rng rng(7, "orient");
        const char* codes[] = { "RAS", "LPI", "ASR", "PIL", "SLA", "IRP" };
        for (const char* from : codes)
            for (const char* to : codes) {
                Volume v = make_volume({ 3, 4, 5 }, from, { 0.4, 0.9, 1.3 }, { rng.uniform(-9, 9), 2.5, -1.0 });
                for (auto& x : v.data)
                    x = float(rng.uniform());
                auto [fwd, step] = align_orientation(v, Orientation::from_code(to));
                Volume back = invert_align_orientation(fwd, step);
                REQUIRE(back.data == v.data);
                REQUIRE(back.geometry.orientation.code() == v.geometry.orientation.code());
                REQUIRE(back.geometry.origin == v.geometry.origin);   // restored verbatim
                REQUIRE(back.geometry.spacing == v.geometry.spacing);
            }
    }
}

TEST_CASE("flip_laterality")
{
    auto make_pair = [](Laterality lat) {
        Volume v = make_volume({ 6, 4, 3 });
        Mask m(v.geometry);
        v.at(1, 2, 0) = 5.0f; // asymmetric marker
        m.at(1, 2, 0) = 1;
        return std::tuple { v, m, small_record("F-1", lat) };
    };

    SECTION("left knee passes through unchanged")
    {
        auto [v, m, r] = make_pair(Laterality::left);
        auto res = flip_laterality(v, m, r);
        CHECK(res.volume.data == v.data);
        CHECK(res.mask.data == m.data);
        CHECK(res.record.laterality == Laterality::left);
    }

    SECTION("right knee is mirrored across the L-R axis and relabeled")
    {
        auto [v, m, r] = make_pair(Laterality::right);
        auto res = flip_laterality(v, m, r);
        CHECK(res.record.laterality == Laterality::left);
        CHECK(res.volume.at(4, 2, 0) == 5.0f); // 6-1-1 = 4
        CHECK(res.mask.at(4, 2, 0) == 1);
        CHECK(res.volume.at(1, 2, 0) == 0.0f);
    }

    SECTION("flipping twice restores the original")
    {
        auto [v, m, r] = make_pair(Laterality::right);
        auto res = flip_laterality(v, m, r);
        invert_flip_laterality(res.volume, res.step);
        invert_flip_laterality(res.mask, res.step);
        CHECK(res.volume.data == v.data);
        CHECK(res.mask.data == m.data);
    }
}

TEST_CASE("set_common_origin is exactly invertible")
{
    Volume v = make_volume({ 2, 2, 2 }, "RAS", { 1, 1, 1 }, { 3.25, -1.5, 9.0 });
    auto step = set_common_origin(v);
    CHECK(v.geometry.origin == Vec3 { 0, 0, 0 });
    invert_set_origin(v, step);
    CHECK(v.geometry.origin == Vec3 { 3.25, -1.5, 9.0 });
}

TEST_CASE("correct_bias_field")
{
    SECTION("constant image passes through unchanged")
    {
        Volume v = make_volume({ 8, 8, 8 });
        std::fill(v.data.begin(), v.data.end(), 42.0f);
        Volume out = correct_bias_field(v);
        CHECK(out.data == v.data);
    }

    SECTION("known log-quadratic bias: CV in a homogeneous region drops by >= 50%")
    {
        // piecewise tissue (background + bright ball) times a known bias field
        Volume v = make_volume({ 32, 32, 32 });
        for (std::int64_t k = 0; k < 32; ++k)
            for (std::int64_t j = 0; j < 32; ++j)
                for (std::int64_t i = 0; i < 32; ++i) {
                    const double x = i / 31.0 * 2 - 1, y = j / 31.0 * 2 - 1, z = k / 31.0 * 2 - 1;
                    const double tissue = (x * x + y * y + z * z < 0.16) ? 80.0 : 30.0;
                    const double bias = std::exp(0.3 * x - 0.2 * y + 0.25 * z * z - 0.15 * x * y);
                    v.at(i, j, k) = float(tissue * bias);
                }
        Volume out = correct_bias_field(v);

        auto cv_in_corner = [](const Volume& vol) {
            double sum = 0, sum2 = 0;
            std::int64_t n = 0;
            for (std::int64_t k = 0; k < 10; ++k)
                for (std::int64_t j = 0; j < 10; ++j)
                    for (std::int64_t i = 0; i < 10; ++i) {
                        sum += vol.at(i, j, k);
                        sum2 += double(vol.at(i, j, k)) * vol.at(i, j, k);
                        ++n;
                    }
            const double mean = sum / double(n);
            return std::sqrt(std::max(0.0, sum2 / double(n) - mean * mean)) / mean;
        };
        CHECK(cv_in_corner(out) < 0.5 * cv_in_corner(v));

        // mean intensity is preserved
        const double mean_in = std::accumulate(v.data.begin(), v.data.end(), 0.0) / double(v.data.size());
        const double mean_out = std::accumulate(out.data.begin(), out.data.end(), 0.0) / double(out.data.size());
        CHECK(mean_out == Catch::Approx(mean_in).epsilon(1e-4));
    }
}

TEST_CASE("rescale_enhance")
{
    SECTION("output range is exactly [0, 100] for non-constant input")
    {
        Volume v = make_volume({ 6, 6, 6 });
        Rng rng(3, "fill");
        for (auto& x : v.data)
            x = float(rng.uniform(-40.0, 250.0));
        Volume out = rescale_enhance(v);
        const auto [mn, mx] = std::minmax_element(out.data.begin(), out.data.end());
        CHECK(*mn == 0.0f);
        CHECK(*mx == 100.0f);
    }

    SECTION("constant image maps to all zeros")
    {
        Volume v = make_volume({ 4, 4, 4 });
        std::fill(v.data.begin(), v.data.end(), 7.0f);
        Volume out = rescale_enhance(v);
        for (auto x : out.data)
            REQUIRE(x == 0.0f);
    }

    SECTION("edge gradient strictly exceeds a plain linear rescale's")
    {
        // step 40 -> 60 at i=8, with far-away pins at 0 and 100 so both paths
        // share the same rescale window
        Volume v = make_volume({ 16, 8, 8 });
        for (std::int64_t k = 0; k < 8; ++k)
            for (std::int64_t j = 0; j < 8; ++j)
                for (std::int64_t i = 0; i < 16; ++i)
                    v.at(i, j, k) = i < 8 ? 40.0f : 60.0f;
        v.at(0, 0, 0) = 0.0f;
        v.at(15, 7, 7) = 100.0f;

        Volume enhanced = rescale_enhance(v);
        // plain rescale of the same image (min 0, max 100 -> identity)
        const double plain_gradient = 60.0 - 40.0;
        const double enhanced_gradient = enhanced.at(8, 4, 4) - enhanced.at(7, 4, 4);
        CHECK(enhanced_gradient > plain_gradient);
    }
}

TEST_CASE("diffuse")
{
    SECTION("zero iterations is the identity")
    {
        Volume v = make_volume({ 5, 5, 5 });
        Rng rng(1, "n");
        for (auto& x : v.data)
            x = float(rng.uniform(0, 100));
        DiffusionParams p;
        p.iterations = 0;
        CHECK(diffuse(v, p).data == v.data);
    }

    SECTION("uniform image is unchanged")
    {
        Volume v = make_volume({ 6, 5, 4 });
        std::fill(v.data.begin(), v.data.end(), 55.0f);
        Volume out = diffuse(v);
        CHECK(out.data == v.data);
    }

    SECTION("unstable or invalid dt is rejected")
    {
        Volume v = make_volume({ 4, 4, 4 });
        DiffusionParams p;
        p.dt = 0.2; // above the 1/6 bound
        CHECK_THROWS_AS(diffuse(v, p), ConfigError);
        p.dt = -0.01;
        CHECK_THROWS_AS(diffuse(v, p), ConfigError);
    }

    SECTION("conserves total intensity and never amplifies the max")
    {
        Volume v = make_volume({ 24, 20, 16 });
        Rng rng(9, "noise");
        for (auto& x : v.data)
            x = float(rng.uniform(0.0, 100.0));
        const double before = std::accumulate(v.data.begin(), v.data.end(), 0.0);
        const float max_before = *std::max_element(v.data.begin(), v.data.end());
        Volume out = diffuse(v);
        const double after = std::accumulate(out.data.begin(), out.data.end(), 0.0);
        CHECK(std::abs(after - before) / std::abs(before) < 1e-3);
        CHECK(*std::max_element(out.data.begin(), out.data.end()) <= max_before + 1e-4f);
    }

    SECTION("noisy step: flat-region variance drops, edge width grows < 2 voxels")
    {
        Volume v = make_volume({ 32, 16, 16 });
        Rng rng(13, "step");
        for (std::int64_t k = 0; k < 16; ++k)
            for (std::int64_t j = 0; j < 16; ++j)
                for (std::int64_t i = 0; i < 32; ++i)
                    v.at(i, j, k) = float((i < 16 ? 20.0 : 80.0) + 4.0 * rng.normal());

        auto flat_variance = [](const Volume& vol, std::int64_t i_lo, std::int64_t i_hi) {
            double s = 0, s2 = 0;
            std::int64_t n = 0;
            for (std::int64_t k = 0; k < 16; ++k)
                for (std::int64_t j = 0; j < 16; ++j)
                    for (std::int64_t i = i_lo; i < i_hi; ++i) {
                        s += vol.at(i, j, k);
                        s2 += double(vol.at(i, j, k)) * vol.at(i, j, k);
                        ++n;
                    }
            const double mean = s / double(n);
            return s2 / double(n) - mean * mean;
        };
        auto edge_width = [](const Volume& vol) {
            // mean profile along axis 0; 10-90% crossing distance
            std::vector<double> prof(32, 0.0);
            for (std::int64_t i = 0; i < 32; ++i) {
                for (std::int64_t k = 0; k < 16; ++k)
                    for (std::int64_t j = 0; j < 16; ++j)
                        prof[std::size_t(i)] += vol.at(i, j, k);
                prof[std::size_t(i)] /= 256.0;
            }
            const double lo = 20.0 + 0.1 * 60.0, hi = 20.0 + 0.9 * 60.0;
            double x_lo = 0, x_hi = 31;
            for (std::int64_t i = 0; i + 1 < 32; ++i) {
                if (prof[std::size_t(i)] < lo && prof[std::size_t(i + 1)] >= lo)
                    x_lo = double(i) + (lo - prof[std::size_t(i)]) / (prof[std::size_t(i + 1)] - prof[std::size_t(i)]);
                if (prof[std::size_t(i)] < hi && prof[std::size_t(i + 1)] >= hi)
                    x_hi = double(i) + (hi - prof[std::size_t(i)]) / (prof[std::size_t(i + 1)] - prof[std::size_t(i)]);
            }
            return x_hi - x_lo;
        };

        Volume out = diffuse(v); // 5 iterations by default
        CHECK(flat_variance(out, 2, 12) < flat_variance(v, 2, 12));
        CHECK(flat_variance(out, 20, 30) < flat_variance(v, 20, 30));
        CHECK(edge_width(out) - edge_width(v) < 2.0);
    }
}

TEST_CASE("to_slices")
{
    SECTION("96x96x48 volume sliced sagittally gives 96 slice pairs")
    {
        Volume v = make_volume({ 96, 96, 48 });
        Mask m(v.geometry);
        auto [slices, step] = to_slices(v, m, 0);
        CHECK(slices.size() == 96);
        CHECK(slices.front().h == 96);
        CHECK(slices.front().w == 48);
    }

    SECTION("native-size slices equal the volume planes bit-exactly")
    {
        Volume v = make_volume({ 5, 4, 3 });
        Mask m(v.geometry);
        Rng rng(4, "fill");
        for (auto& x : v.data)
            x = float(rng.uniform());
        m.at(2, 1, 2) = 1;
        auto [slices, step] = to_slices(v, m, 0);
        for (std::int64_t s = 0; s < 5; ++s)
            for (std::int64_t r = 0; r < 4; ++r)
                for (std::int64_t c = 0; c < 3; ++c) {
                    REQUIRE(slices[std::size_t(s)].img_at(r, c) == v.at(s, r, c));
                    REQUIRE(slices[std::size_t(s)].msk_at(r, c) == m.at(s, r, c));
                }
    }

    SECTION("padding to 192x192 is recorded and inverts to the original planes")
    {
        Volume v = make_volume({ 4, 96, 96 });
        Mask m(v.geometry);
        Rng rng(5, "fill");
        for (auto& x : v.data)
            x = float(rng.uniform());
        for (std::int64_t i = 0; i < 4; ++i)
            m.at(i, 30, 40) = 1;
        auto [slices, step] = to_slices(v, m, 0, std::pair<std::int64_t, std::int64_t> { 192, 192 });
        CHECK(slices.front().h == 192);
        CHECK(slices.front().w == 192);
        CHECK(step.params.at("off_h").get<std::int64_t>() == 48);
        // content sits centered
        CHECK(slices[1].msk_at(30 + 48, 40 + 48) == 1);

        PreprocessRecord rec;
        rec.original_geometry = v.geometry;
        rec.steps.push_back(step);
        std::vector<std::vector<std::uint8_t>> preds;
        for (const auto& sl : slices)
            preds.push_back(sl.mask);
        Mask back = reconstruct(preds, rec, v.geometry);
        CHECK(back.data == m.data);
    }

    SECTION("cropping below the mask bounding box is an error")
    {
        Volume v = make_volume({ 3, 32, 32 });
        Mask m(v.geometry);
        m.at(1, 2, 16) = 1; // near the top edge: centered crop to 16 loses it
        CHECK_THROWS_AS(to_slices(v, m, 0, std::pair<std::int64_t, std::int64_t> { 16, 16 }), DataError);
        // a crop that keeps the content is fine
        m.at(1, 2, 16) = 0;
        m.at(1, 16, 16) = 1;
        CHECK_NOTHROW(to_slices(v, m, 0, std::pair<std::int64_t, std::int64_t> { 16, 16 }));
    }
}

TEST_CASE("reconstruct")
{
    SECTION("full chain round trip on phantom masks, including flips and reorientation")
    {
        PreprocessParams params;
        params.diffusion.iterations = 2;
        for (int t = 0; t < 4; ++t) {
            auto spec = small_spec(100 + std::uint64_t(t));
            auto rec = small_record("R-" + std::to_string(t), t % 2 ? Laterality::right : Laterality::left,
                t >= 2);
            spec.lesion_count = t >= 2 ? 1 : 0;
            auto [vol, mask] = generate_subject(spec, rec);
            vol.geometry.origin = { 2.0 + t, -3.0, 1.5 };
            mask.geometry.origin = vol.geometry.origin;

            auto pre = preprocess_subject(vol, mask, rec, params);
            std::vector<std::vector<std::uint8_t>> preds;
            for (const auto& sl : pre.slices)
                preds.push_back(sl.mask);
            Mask back = reconstruct(preds, pre.prep, mask.geometry);
            REQUIRE(back.data == mask.data);
            REQUIRE(back.geometry.origin == mask.geometry.origin);
            REQUIRE(back.geometry.orientation.code() == mask.geometry.orientation.code());
        }
    }

    SECTION("all-empty predictions give an all-zero mask with the reference geometry")
    {
        auto spec = small_spec(7);
        auto rec = small_record("R-e", Laterality::left);
        auto [vol, mask] = generate_subject(spec, rec);
        PreprocessParams params;
        params.diffusion.iterations = 1;
        auto pre = preprocess_subject(vol, mask, rec, params);
        std::vector<std::vector<std::uint8_t>> preds(pre.slices.size(),
            std::vector<std::uint8_t>(std::size_t(pre.slices[0].h * pre.slices[0].w), 0));
        Mask back = reconstruct(preds, pre.prep, mask.geometry);
        CHECK(back.foreground_count() == 0);
        CHECK(back.geometry.same_grid(mask.geometry));
    }

    SECTION("slice count mismatch is an error")
    {
        auto spec = small_spec(8);
        auto rec = small_record("R-c", Laterality::left);
        auto [vol, mask] = generate_subject(spec, rec);
        PreprocessParams params;
        params.diffusion.iterations = 0;
        auto pre = preprocess_subject(vol, mask, rec, params);
        std::vector<std::vector<std::uint8_t>> preds(pre.slices.size() - 1,
            std::vector<std::uint8_t>(std::size_t(pre.slices[0].h * pre.slices[0].w), 0));
        CHECK_THROWS_AS(reconstruct(preds, pre.prep, mask.geometry), DataError);
    }
}

TEST_CASE("slice dataset persistence round trip")
{
    auto spec = small_spec(21);
    auto rec = small_record("D-0", Laterality::right);
    auto [vol, mask] = generate_subject(spec, rec);
    PreprocessParams params;
    params.diffusion.iterations = 1;
    auto pre = preprocess_subject(vol, mask, rec, params);

    SliceDataset ds;
    ds.slice_axis = params.slice_axis;
    SliceDatasetEntry entry;
    entry.record = pre.record;
    entry.prep = pre.prep;
    entry.original_geometry = mask.geometry;
    entry.original_mask_path = "phantom/D-0_mask.nii.gz";
    entry.slices = pre.slices;
    ds.subjects.push_back(entry);

    auto dir = std::filesystem::temp_directory_path() / "cartseg_slices_test";
    std::filesystem::remove_all(dir);
    save_slice_dataset(ds, dir);
    auto back = load_slice_dataset(dir);
    REQUIRE(back.subjects.size() == 1);
    const auto& b = back.subjects[0];
    CHECK(b.record.id == "D-0");
    CHECK(b.record.laterality == Laterality::left); // relabeled by the flip
    REQUIRE(b.slices.size() == pre.slices.size());
    for (std::size_t i = 0; i < b.slices.size(); ++i) {
        REQUIRE(b.slices[i].image == pre.slices[i].image);
        REQUIRE(b.slices[i].mask == pre.slices[i].mask);
    }
    // the persisted prep record still drives reconstruction
    std::vector<std::vector<std::uint8_t>> preds;
    for (const auto& sl : b.slices)
        preds.push_back(sl.mask);
    Mask rebuilt = reconstruct(preds, b.prep, mask.geometry);
    CHECK(rebuilt.data == mask.data);
    std::filesystem::remove_all(dir);
}
