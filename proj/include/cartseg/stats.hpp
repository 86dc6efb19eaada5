#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cartseg/metrics.hpp"

namespace cartseg {

enum class MwuMode { exact, normal_approx, auto_select };

struct MwuResult {
    double u = 0.0; // U statistic of sample a (U_a + U_b = n*m)
    double p = 1.0; // two-sided
    bool exact = false;
};

namespace detail {

    // midranks over the pooled sample; also returns tie-group sizes
    inline std::vector<double> midranks(const std::vector<double>& pooled_sorted, std::vector<std::int64_t>& ties)
    {
        const auto n = pooled_sorted.size();
        std::vector<double> rank(n);
        ties.clear();
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && pooled_sorted[j + 1] == pooled_sorted[i])
                ++j;
            const double r = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
            for (std::size_t k = i; k <= j; ++k)
                rank[k] = r;
            ties.push_back(static_cast<std::int64_t>(j - i + 1));
            i = j + 1;
        }
        return rank;
    }

    // Exact null distribution of U for tie-free samples: number of label
    // assignments with statistic u, via the classic recurrence
    // N(u; n, m) = N(u - m; n - 1, m) + N(u; n, m - 1).
    // Counts stay below 2^53 for n*m <= 400, so doubles hold them exactly.
    inline std::vector<double> exact_u_counts(std::int64_t n, std::int64_t m)
    {
        const auto umax = n * m;
        std::vector<std::vector<double>> cur(static_cast<std::size_t>(n) + 1,
            std::vector<double>(static_cast<std::size_t>(umax) + 1, 0.0));
        // mm = 0: U must be 0 for any n
        for (std::int64_t i = 0; i <= n; ++i)
            cur[static_cast<std::size_t>(i)][0] = 1.0;
        for (std::int64_t mm = 1; mm <= m; ++mm) {
            std::vector<std::vector<double>> next(static_cast<std::size_t>(n) + 1,
                std::vector<double>(static_cast<std::size_t>(umax) + 1, 0.0));
            next[0][0] = 1.0;
            for (std::int64_t nn = 1; nn <= n; ++nn)
                for (std::int64_t u = 0; u <= nn * mm; ++u) {
                    double c = cur[static_cast<std::size_t>(nn)][static_cast<std::size_t>(u)];
                    if (u >= mm)
                        c += next[static_cast<std::size_t>(nn) - 1][static_cast<std::size_t>(u - mm)];
                    next[static_cast<std::size_t>(nn)][static_cast<std::size_t>(u)] = c;
                }
            cur = std::move(next);
        }
        return cur[static_cast<std::size_t>(n)];
    }

    inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

} // namespace detail

// Two-sided Mann-Whitney U test. Exact p comes from the full null distribution
// of label assignments (tie-free samples, n*m <= 400 in auto mode); otherwise
// the normal approximation with tie and continuity corrections is used.
inline MwuResult mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b,
    MwuMode mode = MwuMode::auto_select)
{
    if (a.empty() || b.empty())
        throw DataError("mann_whitney_u: both samples must be non-empty");
    const auto n = static_cast<std::int64_t>(a.size());
    const auto m = static_cast<std::int64_t>(b.size());

    std::vector<double> pooled;
    pooled.reserve(a.size() + b.size());
    pooled.insert(pooled.end(), a.begin(), a.end());
    pooled.insert(pooled.end(), b.begin(), b.end());
    std::vector<std::size_t> order(pooled.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto x, auto y) { return pooled[x] < pooled[y]; });
    std::vector<double> sorted(pooled.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        sorted[i] = pooled[order[i]];

    std::vector<std::int64_t> ties;
    const auto ranks_sorted = detail::midranks(sorted, ties);
    double rank_sum_a = 0.0;
    for (std::size_t i = 0; i < order.size(); ++i)
        if (order[i] < a.size())
            rank_sum_a += ranks_sorted[i];

    const double u_a = rank_sum_a - 0.5 * static_cast<double>(n) * (static_cast<double>(n) + 1.0);
    const bool has_ties = ties.size() != pooled.size();

    MwuResult res;
    res.u = u_a;

    const bool want_exact = mode == MwuMode::exact
        || (mode == MwuMode::auto_select && !has_ties && n * m <= 400);
    if (want_exact) {
        if (has_ties)
            throw DataError("mann_whitney_u: exact mode requires tie-free samples");
        const auto counts = detail::exact_u_counts(n, m);
        double total = 0.0;
        for (double c : counts)
            total += c;
        const auto u_obs = static_cast<std::int64_t>(std::llround(u_a));
        const auto u_lo = std::min(u_obs, n * m - u_obs);
        const auto u_hi = std::max(u_obs, n * m - u_obs);
        double tail = 0.0;
        for (std::int64_t u = 0; u <= u_lo; ++u)
            tail += counts[static_cast<std::size_t>(u)];
        for (std::int64_t u = u_hi; u <= n * m; ++u)
            tail += counts[static_cast<std::size_t>(u)];
        res.p = std::min(1.0, tail / total);
        res.exact = true;
        return res;
    }

    // tie-corrected variance
    const double nm = static_cast<double>(n) * static_cast<double>(m);
    const double big_n = static_cast<double>(n + m);
    double tie_term = 0.0;
    for (auto t : ties) {
        const double td = static_cast<double>(t);
        tie_term += td * td * td - td;
    }
    const double var = nm / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
    if (var <= 0.0) { // fully tied data carries no ordering information
        res.p = 1.0;
        return res;
    }
    const double num = std::max(0.0, std::abs(u_a - nm / 2.0) - 0.5); // continuity correction
    res.p = std::min(1.0, 2.0 * detail::normal_sf(num / std::sqrt(var)));
    return res;
}

struct CurvePoint {
    std::int64_t train_size = 0;
    double mean_dsc = 0.0;
    double std_dsc = 0.0;
};

struct ConvergenceCurve {
    std::vector<CurvePoint> points; // train sizes strictly increasing
    double threshold = 0.003;
    int window = 4;
    std::optional<std::int64_t> plateau_at;
};

// Plateau: first train size t where all `window` consecutive absolute DSC
// differences starting at t stay below `threshold`.
inline std::optional<std::int64_t> detect_convergence(const std::vector<CurvePoint>& points,
    double threshold = 0.003, int window = 4)
{
    if (static_cast<int>(points.size()) < window + 1)
        throw DataError("detect_convergence: need at least window+1 points");
    for (std::size_t i = 1; i < points.size(); ++i)
        if (points[i].train_size <= points[i - 1].train_size)
            throw DataError("detect_convergence: train sizes must be strictly increasing");
    for (std::size_t j = 0; j + static_cast<std::size_t>(window) < points.size(); ++j) {
        bool flat = true;
        for (int i = 0; i < window && flat; ++i)
            flat = std::abs(points[j + static_cast<std::size_t>(i) + 1].mean_dsc
                       - points[j + static_cast<std::size_t>(i)].mean_dsc)
                < threshold;
        if (flat)
            return points[j].train_size;
    }
    return std::nullopt;
}

struct Comparison {
    std::string groups; // e.g. "dess_like: lesioned vs non-lesioned"
    std::string metric; // "dsc" or "asd_mm"
    std::int64_t n_a = 0;
    std::int64_t n_b = 0;
    std::int64_t excluded_undefined = 0; // ASD rows without a defined value
    double u = 0.0;
    double p_unadjusted = 1.0;
    bool significant = false;
    std::string note;
};

struct StatsReport {
    double alpha_corrected = 0.025; // Bonferroni over the two metrics
    std::vector<Comparison> comparisons;
    std::vector<std::string> skipped; // comparisons dropped for empty strata
};

inline void to_json(nlohmann::json& j, const Comparison& c)
{
    j = nlohmann::json { { "groups", c.groups }, { "metric", c.metric },
        { "n_a", c.n_a }, { "n_b", c.n_b }, { "excluded_undefined", c.excluded_undefined },
        { "U", c.u }, { "p_unadjusted", c.p_unadjusted }, { "significant", c.significant },
        { "note", c.note } };
}

inline void to_json(nlohmann::json& j, const StatsReport& r)
{
    j = nlohmann::json { { "alpha_corrected", r.alpha_corrected },
        { "comparisons", r.comparisons }, { "skipped", r.skipped } };
}

namespace detail {

    inline void add_comparison(StatsReport& report, const std::string& groups,
        const std::vector<MetricResult>& ga, const std::vector<MetricResult>& gb)
    {
        if (ga.empty() || gb.empty()) {
            report.skipped.push_back(groups + " (a stratum is empty)");
            return;
        }
        // DSC
        {
            Comparison c;
            c.groups = groups;
            c.metric = "dsc";
            std::vector<double> a, b;
            for (const auto& r : ga)
                a.push_back(r.dsc);
            for (const auto& r : gb)
                b.push_back(r.dsc);
            c.n_a = static_cast<std::int64_t>(a.size());
            c.n_b = static_cast<std::int64_t>(b.size());
            const auto res = mann_whitney_u(a, b);
            c.u = res.u;
            c.p_unadjusted = res.p;
            c.significant = res.p < report.alpha_corrected;
            c.note = res.exact ? "exact" : "normal_approx";
            report.comparisons.push_back(std::move(c));
        }
        // ASD, undefined values excluded with a count
        {
            Comparison c;
            c.groups = groups;
            c.metric = "asd_mm";
            std::vector<double> a, b;
            for (const auto& r : ga)
                if (r.asd_mm)
                    a.push_back(*r.asd_mm);
                else
                    ++c.excluded_undefined;
            for (const auto& r : gb)
                if (r.asd_mm)
                    b.push_back(*r.asd_mm);
                else
                    ++c.excluded_undefined;
            c.n_a = static_cast<std::int64_t>(a.size());
            c.n_b = static_cast<std::int64_t>(b.size());
            if (a.empty() || b.empty()) {
                report.skipped.push_back(groups + " on asd_mm (no defined values in a stratum)");
                return;
            }
            const auto res = mann_whitney_u(a, b);
            c.u = res.u;
            c.p_unadjusted = res.p;
            c.significant = res.p < report.alpha_corrected;
            c.note = res.exact ? "exact" : "normal_approx";
            report.comparisons.push_back(std::move(c));
        }
    }

} // namespace detail

// Lesion-effect analysis on combined-cohort per-subject results: within each
// sequence, lesioned vs non-lesioned on DSC and ASD; plus the cross-sequence
// comparison on the full combined cohort. Bonferroni across the two metrics
// (alpha_corr = 0.05 / 2 = 0.025); unadjusted p values are reported.
inline StatsReport lesion_effect_analysis(const std::vector<MetricResult>& results)
{
    StatsReport report;
    for (Sequence seq : { Sequence::dess_like, Sequence::cube_like }) {
        std::vector<MetricResult> les, non;
        for (const auto& r : results)
            if (r.sequence == seq)
                (r.lesioned ? les : non).push_back(r);
        if (les.empty() && non.empty())
            continue; // sequence absent entirely
        detail::add_comparison(report, to_string(seq) + ": lesioned vs non-lesioned", les, non);
    }
    std::vector<MetricResult> dess, cube;
    for (const auto& r : results)
        (r.sequence == Sequence::dess_like ? dess : cube).push_back(r);
    detail::add_comparison(report, "combined: dess_like vs cube_like", dess, cube);
    return report;
}

} // namespace cartseg
