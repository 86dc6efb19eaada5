#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>

#include "cartseg/rng.hpp"
#include "cartseg/stats.hpp"

using namespace cartseg;

namespace {

// Exhaustive permutation oracle: enumerate every assignment of n pooled values
// to group a, compute U by pair counting, and accumulate the two-sided tail.
double mwu_exact_oracle(const std::vector<double>& a, const std::vector<double>& b)
{
    const auto n = a.size();
    std::vector<double> pooled(a);
    pooled.insert(pooled.end(), b.begin(), b.end());

    auto u_of = [&](const std::vector<std::size_t>& idx_a) {
        double u = 0.0;
        std::vector<bool> in_a(pooled.size(), false);
        for (auto i : idx_a)
            in_a[i] = true;
        for (std::size_t i = 0; i < pooled.size(); ++i)
            for (std::size_t j = 0; j < pooled.size(); ++j)
                if (in_a[i] && !in_a[j] && pooled[i] > pooled[j])
                    u += 1.0;
        return u;
    };

    std::vector<std::size_t> obs_idx(n);
    std::iota(obs_idx.begin(), obs_idx.end(), 0);
    const double u_obs = u_of(obs_idx);
    const double nm = double(n) * double(pooled.size() - n);
    const double u_lo = std::min(u_obs, nm - u_obs);
    const double u_hi = std::max(u_obs, nm - u_obs);

    std::vector<bool> pick(pooled.size(), false);
    std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(n), true);
    std::sort(pick.begin(), pick.end()); // prepare for next_permutation over all combos
    double total = 0.0, tail = 0.0;
    do {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < pick.size(); ++i)
            if (pick[i])
                idx.push_back(i);
        if (idx.size() != n)
            continue;
        const double u = u_of(idx);
        total += 1.0;
        if (u <= u_lo || u >= u_hi)
            tail += 1.0;
    } while (std::next_permutation(pick.begin(), pick.end()));
    return tail / total;
}

} // namespace

TEST_CASE("mann-whitney exact small cases")
{
    SECTION("fully separated samples: U=0, p=2/20")
    {
        auto res = mann_whitney_u({ 1, 2, 3 }, { 4, 5, 6 });
        CHECK(res.exact);
        CHECK(res.u == 0.0);
        CHECK(res.p == Catch::Approx(0.1).epsilon(0));
    }

    SECTION("interleaved samples match the permutation oracle exactly")
    {
        std::vector<double> a { 1, 3, 5, 7 }, b { 2, 4, 6, 8 };
        auto res = mann_whitney_u(a, b);
        CHECK(res.exact);
        CHECK(res.p == Catch::Approx(mwu_exact_oracle(a, b)).epsilon(0));
    }

    SECTION("identical samples under the tie-corrected approximation: p=1")
    {
        std::vector<double> a { 2, 2, 2, 2 }, b { 2, 2, 2, 2 };
        auto res = mann_whitney_u(a, b);
        CHECK_FALSE(res.exact);
        CHECK(res.p == 1.0);
    }

    SECTION("empty sample is an error")
    {
        CHECK_THROWS_AS(mann_whitney_u({}, { 1.0 }), DataError);
        CHECK_THROWS_AS(mann_whitney_u({ 1.0 }, {}), DataError);
    }

    SECTION("explicit exact mode with ties is an error")
    {
        CHECK_THROWS_AS(mann_whitney_u({ 1, 2 }, { 2, 3 }, MwuMode::exact), DataError);
    }
}

TEST_CASE("mann-whitney exact p matches the permutation oracle for all n,m <= 6")
{
    Rng rng(2024, "mwu_prop");
    int cases = 0;
    while (cases < 100) {
        const auto n = static_cast<std::size_t>(rng.uniform_int(1, 6));
        const auto m = static_cast<std::size_t>(rng.uniform_int(1, 6));
        std::vector<double> a(n), b(m);
        for (auto& x : a)
            x = rng.uniform(0.0, 10.0);
        for (auto& x : b)
            x = rng.uniform(0.0, 10.0);
        // continuous draws are tie-free with probability 1; guard anyway
        std::vector<double> pooled(a);
        pooled.insert(pooled.end(), b.begin(), b.end());
        std::sort(pooled.begin(), pooled.end());
        if (std::adjacent_find(pooled.begin(), pooled.end()) != pooled.end())
            continue;

        auto res = mann_whitney_u(a, b);
        REQUIRE(res.exact);
        REQUIRE(res.p == Catch::Approx(mwu_exact_oracle(a, b)).margin(1e-12));

        // U_a + U_b = n*m
        auto res_b = mann_whitney_u(b, a);
        REQUIRE(res.u + res_b.u == Catch::Approx(double(n) * double(m)).epsilon(0));
        ++cases;
    }
}

TEST_CASE("convergence detector")
{
    auto curve = [](std::vector<double> vals) {
        std::vector<CurvePoint> pts;
        for (std::size_t i = 0; i < vals.size(); ++i)
            pts.push_back({ static_cast<std::int64_t>(i + 1), vals[i], 0.0 });
        return pts;
    };

    SECTION("hand-derived plateau at the 3rd train size")
    {
        auto pts = curve({ 0.50, 0.70, 0.80, 0.800, 0.801, 0.8015, 0.802, 0.8022 });
        auto plateau = detect_convergence(pts, 0.003, 4);
        REQUIRE(plateau.has_value());
        CHECK(*plateau == 3);
    }

    SECTION("strictly improving curve has no plateau")
    {
        std::vector<double> vals;
        for (int i = 0; i < 10; ++i)
            vals.push_back(0.5 + 0.01 * i);
        CHECK_FALSE(detect_convergence(curve(vals), 0.003, 4).has_value());
    }

    SECTION("perfectly flat curve plateaus at the first train size")
    {
        auto plateau = detect_convergence(curve({ 0.8, 0.8, 0.8, 0.8, 0.8, 0.8 }), 0.003, 4);
        REQUIRE(plateau.has_value());
        CHECK(*plateau == 1);
    }

    SECTION("too few points is an error")
    {
        CHECK_THROWS_AS(detect_convergence(curve({ 0.1, 0.2, 0.3, 0.4 }), 0.003, 4), DataError);
    }

    SECTION("translation invariance")
    {
        std::vector<double> vals { 0.50, 0.70, 0.80, 0.800, 0.801, 0.8015, 0.802, 0.8022 };
        auto p0 = detect_convergence(curve(vals), 0.003, 4);
        for (auto& v : vals)
            v += 0.1;
        auto p1 = detect_convergence(curve(vals), 0.003, 4);
        REQUIRE(p0.has_value());
        REQUIRE(p1.has_value());
        CHECK(*p0 == *p1);
    }
}

TEST_CASE("lesion effect analysis")
{
    auto make_results = [](Sequence seq, bool lesioned, int n, double mean, double sd, Rng& rng) {
        std::vector<MetricResult> out;
        for (int i = 0; i < n; ++i) {
            MetricResult r;
            r.subject_id = to_string(seq) + (lesioned ? "_L" : "_N") + std::to_string(i);
            r.experiment = "same_sequence";
            r.sequence = seq;
            r.lesioned = lesioned;
            r.dsc = mean + sd * rng.normal();
            r.asd_mm = std::max(0.05, 0.8 - 5.0 * (r.dsc - mean) + 0.05 * rng.normal());
            out.push_back(r);
        }
        return out;
    };

    SECTION("alpha and significance flags")
    {
        Rng rng(7, "stats");
        // lesioned DSC shifted down by 0.05 against sigma 0.02: strongly significant
        auto res = make_results(Sequence::cube_like, false, 22, 0.86, 0.02, rng);
        auto les = make_results(Sequence::cube_like, true, 22, 0.81, 0.02, rng);
        res.insert(res.end(), les.begin(), les.end());

        auto report = lesion_effect_analysis(res);
        CHECK(report.alpha_corrected == 0.025);
        bool found = false;
        for (const auto& c : report.comparisons)
            if (c.groups == "cube_like: lesioned vs non-lesioned" && c.metric == "dsc") {
                found = true;
                CHECK(c.significant);
                CHECK(c.p_unadjusted < 0.001);
            }
        CHECK(found);
    }

    SECTION("identical strata are non-significant")
    {
        Rng rng(9, "stats2");
        auto a = make_results(Sequence::dess_like, false, 12, 0.9, 0.02, rng);
        auto b = a;
        for (auto& r : b)
            r.lesioned = true;
        a.insert(a.end(), b.begin(), b.end());
        auto report = lesion_effect_analysis(a);
        for (const auto& c : report.comparisons)
            if (c.groups.find("dess_like") == 0)
                CHECK_FALSE(c.significant);
    }

    SECTION("empty stratum is skipped with a note")
    {
        Rng rng(11, "stats3");
        auto a = make_results(Sequence::dess_like, false, 8, 0.9, 0.02, rng);
        auto report = lesion_effect_analysis(a);
        REQUIRE_FALSE(report.skipped.empty());
        CHECK(report.skipped.front().find("dess_like") != std::string::npos);
    }

    SECTION("undefined ASD rows are excluded with a count")
    {
        Rng rng(13, "stats4");
        auto a = make_results(Sequence::cube_like, false, 10, 0.9, 0.02, rng);
        auto b = make_results(Sequence::cube_like, true, 10, 0.85, 0.02, rng);
        a[0].asd_mm.reset();
        b[1].asd_mm.reset();
        a.insert(a.end(), b.begin(), b.end());
        auto report = lesion_effect_analysis(a);
        for (const auto& c : report.comparisons)
            if (c.metric == "asd_mm" && c.groups.find("cube_like") == 0) {
                CHECK(c.excluded_undefined == 2);
                CHECK(c.n_a + c.n_b == 18);
            }
    }

    SECTION("significance is a pure function of p and alpha")
    {
        Rng rng(15, "stats5");
        auto a = make_results(Sequence::dess_like, false, 10, 0.9, 0.03, rng);
        auto b = make_results(Sequence::dess_like, true, 10, 0.88, 0.03, rng);
        a.insert(a.end(), b.begin(), b.end());
        auto report = lesion_effect_analysis(a);
        for (const auto& c : report.comparisons)
            CHECK(c.significant == (c.p_unadjusted < report.alpha_corrected));
    }
}
