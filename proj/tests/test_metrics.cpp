#include <catch2/catch_amalgamated.hpp>

#include "cartseg/metrics.hpp"
#include "cartseg/rng.hpp"

using namespace cartseg;

namespace {

Geometry make_geom(Index3 size, Vec3 spacing = { 1, 1, 1 })
{
    Geometry g;
    g.size = size;
    g.spacing = spacing;
    return g;
}

Mask random_mask(const Geometry& g, double density, Rng& rng)
{
    Mask m(g);
    for (auto& v : m.data)
        v = rng.bernoulli(density) ? 1 : 0;
    return m;
}

// independent oracle: plain voxel counting
double dsc_oracle(const Mask& p, const Mask& g)
{
    std::int64_t np = 0, ng = 0, inter = 0;
    for (std::int64_t k = 0; k < p.geometry.size[2]; ++k)
        for (std::int64_t j = 0; j < p.geometry.size[1]; ++j)
            for (std::int64_t i = 0; i < p.geometry.size[0]; ++i) {
                if (p.at(i, j, k))
                    ++np;
                if (g.at(i, j, k))
                    ++ng;
                if (p.at(i, j, k) && g.at(i, j, k))
                    ++inter;
            }
    if (np + ng == 0)
        return 1.0;
    return 2.0 * double(inter) / double(np + ng);
}

// independent oracle: boundary extraction + O(B1*B2) pairwise minimum
std::vector<Index3> boundary_oracle(const Mask& m)
{
    std::vector<Index3> out;
    const auto& s = m.geometry.size;
    auto bg = [&](std::int64_t i, std::int64_t j, std::int64_t k) {
        if (i < 0 || j < 0 || k < 0 || i >= s[0] || j >= s[1] || k >= s[2])
            return true;
        return m.at(i, j, k) == 0;
    };
    for (std::int64_t k = 0; k < s[2]; ++k)
        for (std::int64_t j = 0; j < s[1]; ++j)
            for (std::int64_t i = 0; i < s[0]; ++i)
                if (m.at(i, j, k)
                    && (bg(i - 1, j, k) || bg(i + 1, j, k) || bg(i, j - 1, k) || bg(i, j + 1, k)
                        || bg(i, j, k - 1) || bg(i, j, k + 1)))
                    out.push_back({ i, j, k });
    return out;
}

std::optional<double> asd_oracle(const Mask& p, const Mask& g)
{
    const auto bp = boundary_oracle(p);
    const auto bg = boundary_oracle(g);
    if (bp.empty() || bg.empty())
        return std::nullopt;
    const auto& sp = p.geometry.spacing;
    auto min_dist = [&](const Index3& v, const std::vector<Index3>& other) {
        double best = 1e300;
        for (const auto& w : other) {
            const double dx = sp[0] * double(v[0] - w[0]);
            const double dy = sp[1] * double(v[1] - w[1]);
            const double dz = sp[2] * double(v[2] - w[2]);
            const double d = dx * dx + dy * dy + dz * dz;
            if (d < best)
                best = d;
        }
        return std::sqrt(best);
    };
    double sum = 0.0;
    for (const auto& v : bp)
        sum += min_dist(v, bg);
    for (const auto& v : bg)
        sum += min_dist(v, bp);
    return sum / double(bp.size() + bg.size());
}

} // namespace

TEST_CASE("dsc basics")
{
    auto g = make_geom({ 4, 4, 4 });

    SECTION("identical nonempty masks score 1")
    {
        Mask a(g);
        a.at(1, 2, 3) = 1;
        a.at(0, 0, 0) = 1;
        CHECK(dsc(a, a) == 1.0);
    }

    SECTION("hand-counted overlap: |P|=4, |G|=6, |P∩G|=3")
    {
        Mask p(g), q(g);
        // P: 4 voxels, G: 6 voxels, 3 shared
        p.at(0, 0, 0) = p.at(1, 0, 0) = p.at(2, 0, 0) = p.at(3, 3, 3) = 1;
        q.at(0, 0, 0) = q.at(1, 0, 0) = q.at(2, 0, 0) = 1;
        q.at(0, 1, 0) = q.at(0, 2, 0) = q.at(0, 3, 0) = 1;
        CHECK(dsc(p, q) == Catch::Approx(0.6).epsilon(0));
    }

    SECTION("disjoint nonempty masks score 0")
    {
        Mask p(g), q(g);
        p.at(0, 0, 0) = 1;
        q.at(3, 3, 3) = 1;
        CHECK(dsc(p, q) == 0.0);
    }

    SECTION("both empty scores 1, one empty scores 0")
    {
        Mask p(g), q(g);
        CHECK(dsc(p, q) == 1.0);
        q.at(1, 1, 1) = 1;
        CHECK(dsc(p, q) == 0.0);
    }

    SECTION("geometry mismatch is an error")
    {
        Mask p(g), q(make_geom({ 4, 4, 5 }));
        CHECK_THROWS_AS(dsc(p, q), DataError);
    }
}

TEST_CASE("dsc matches brute-force counting and is symmetric on random masks")
{
    Rng rng(101, "dsc_prop");
    auto g = make_geom({ 16, 16, 16 });
    for (int t = 0; t < 40; ++t) {
        Mask p = random_mask(g, rng.uniform(0.0, 0.4), rng);
        Mask q = random_mask(g, rng.uniform(0.0, 0.4), rng);
        const double d = dsc(p, q);
        REQUIRE(d == dsc_oracle(p, q));
        REQUIRE(d == dsc(q, p));
        REQUIRE(d >= 0.0);
        REQUIRE(d <= 1.0);
    }
}

TEST_CASE("asd closed-form cases")
{
    SECTION("identical masks have zero distance")
    {
        auto g = make_geom({ 8, 8, 8 });
        Mask a(g);
        for (int i = 2; i < 5; ++i)
            for (int j = 2; j < 5; ++j)
                a.at(i, j, 3) = 1;
        REQUIRE(asd(a, a).has_value());
        CHECK(*asd(a, a) == Catch::Approx(0.0).margin(1e-12));
    }

    SECTION("single voxels offset by (3,4,0) at 1 mm spacing: 5 mm")
    {
        auto g = make_geom({ 10, 10, 4 });
        Mask p(g), q(g);
        p.at(1, 1, 1) = 1;
        q.at(4, 5, 1) = 1;
        CHECK(*asd(p, q) == Catch::Approx(5.0).margin(1e-12));
    }

    SECTION("parallel plates one voxel apart at 0.5 mm axial spacing: 0.5 mm")
    {
        auto g = make_geom({ 8, 8, 6 }, { 1.0, 1.0, 0.5 });
        Mask p(g), q(g);
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) {
                p.at(i, j, 2) = 1;
                q.at(i, j, 3) = 1;
            }
        const auto got = asd(p, q);
        const auto want = asd_oracle(p, q);
        REQUIRE(got.has_value());
        CHECK(*got == Catch::Approx(0.5).margin(1e-12));
        CHECK(*got == Catch::Approx(*want).margin(1e-12));
    }

    SECTION("empty mask yields undefined")
    {
        auto g = make_geom({ 4, 4, 4 });
        Mask p(g), q(g);
        q.at(0, 0, 0) = 1;
        CHECK_FALSE(asd(p, q).has_value());
        CHECK_FALSE(asd(q, p).has_value());
        CHECK_FALSE(asd(p, p).has_value());
    }
}

TEST_CASE("asd matches the O(B1*B2) brute force on random masks")
{
    Rng rng(77, "asd_prop");
    for (int t = 0; t < 25; ++t) {
        auto g = make_geom({ 9, 8, 7 },
            { rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.5) });
        Mask p = random_mask(g, 0.15, rng);
        Mask q = random_mask(g, 0.15, rng);
        auto got = asd(p, q);
        auto want = asd_oracle(p, q);
        REQUIRE(got.has_value() == want.has_value());
        if (got) {
            REQUIRE(*got == Catch::Approx(*want).margin(1e-9));
            auto rev = asd(q, p);
            REQUIRE(*rev == Catch::Approx(*got).margin(1e-12)); // symmetric definition
        }
    }
}

TEST_CASE("asd is invariant under an identical axis relabeling of both masks")
{
    Rng rng(5, "asd_relabel");
    auto g = make_geom({ 6, 7, 8 }, { 0.5, 0.8, 1.1 });
    Mask p = random_mask(g, 0.2, rng);
    Mask q = random_mask(g, 0.2, rng);

    // transpose axes (0,1,2) -> (2,0,1) on both masks and their geometry
    auto relabel = [](const Mask& m) {
        Geometry g2;
        g2.size = { m.geometry.size[2], m.geometry.size[0], m.geometry.size[1] };
        g2.spacing = { m.geometry.spacing[2], m.geometry.spacing[0], m.geometry.spacing[1] };
        Mask out(g2);
        for (std::int64_t k = 0; k < m.geometry.size[2]; ++k)
            for (std::int64_t j = 0; j < m.geometry.size[1]; ++j)
                for (std::int64_t i = 0; i < m.geometry.size[0]; ++i)
                    out.at(k, i, j) = m.at(i, j, k);
        return out;
    };
    auto a0 = asd(p, q);
    auto a1 = asd(relabel(p), relabel(q));
    REQUIRE(a0.has_value());
    REQUIRE(a1.has_value());
    CHECK(*a0 == Catch::Approx(*a1).margin(1e-12));
}

TEST_CASE("metric csv round trip")
{
    std::vector<MetricResult> rows;
    rows.push_back({ "s1", "same_sequence", Sequence::dess_like, false, 0.91, 0.45 });
    rows.push_back({ "s2", "cube_like_to_dess_like", Sequence::cube_like, true, 0.82, std::nullopt });
    auto path = std::filesystem::temp_directory_path() / "cartseg_metrics_test.csv";
    write_metrics_csv(rows, path);
    auto back = read_metrics_csv(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].subject_id == "s1");
    CHECK(back[0].dsc == Catch::Approx(0.91));
    CHECK(back[0].asd_mm.has_value());
    CHECK(back[1].lesioned);
    CHECK_FALSE(back[1].asd_mm.has_value());
    std::filesystem::remove(path);
}
