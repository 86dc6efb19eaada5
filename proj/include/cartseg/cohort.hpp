#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cartseg/rng.hpp"
#include "cartseg/types.hpp"

namespace cartseg {

struct MatchPair {
    std::string source_id;
    std::string target_id;
    double distance = 0.0;
};

struct FeatureScaling {
    // order: age, sex(0/1), bmi, laterality(0/1), klg
    std::array<double, 5> mean {};
    std::array<double, 5> sd {};
};

struct MatchPlan {
    std::vector<MatchPair> pairs; // one-to-one on both sides
    FeatureScaling scaling;
    double total_distance = 0.0;
};

namespace detail {

    inline std::array<double, 5> match_features(const SubjectRecord& r)
    {
        return { r.age_years, r.sex == Sex::male ? 0.0 : 1.0, r.bmi,
            r.laterality == Laterality::left ? 0.0 : 1.0, static_cast<double>(r.klg) };
    }

} // namespace detail

// Nearest-neighbor cohort matching on z-scored (age, sex, BMI, laterality,
// KLG), greedy in ascending pair distance without replacement, performed
// within lesion strata. Distance ties break on lexicographic subject ids so
// the plan is deterministic.
inline MatchPlan match_cohorts(const std::vector<SubjectRecord>& source,
    const std::vector<SubjectRecord>& target)
{
    if (source.empty() || target.empty())
        throw DataError("match_cohorts: cohorts must be non-empty");
    for (bool lesioned : { false, true }) {
        std::int64_t ns = 0, nt = 0;
        for (const auto& r : source)
            ns += r.lesioned == lesioned;
        for (const auto& r : target)
            nt += r.lesioned == lesioned;
        if (ns > nt)
            throw DataError("match_cohorts: not enough " + std::string(lesioned ? "lesioned" : "non-lesioned")
                + " target candidates for one-to-one matching");
    }

    MatchPlan plan;
    // z-score over the union of both cohorts
    {
        std::array<double, 5> sum {}, sum2 {};
        std::int64_t n = 0;
        auto accumulate = [&](const std::vector<SubjectRecord>& recs) {
            for (const auto& r : recs) {
                const auto f = detail::match_features(r);
                for (int i = 0; i < 5; ++i) {
                    sum[static_cast<std::size_t>(i)] += f[static_cast<std::size_t>(i)];
                    sum2[static_cast<std::size_t>(i)] += f[static_cast<std::size_t>(i)] * f[static_cast<std::size_t>(i)];
                }
                ++n;
            }
        };
        accumulate(source);
        accumulate(target);
        for (int i = 0; i < 5; ++i) {
            plan.scaling.mean[static_cast<std::size_t>(i)] = sum[static_cast<std::size_t>(i)] / double(n);
            const double var = sum2[static_cast<std::size_t>(i)] / double(n)
                - plan.scaling.mean[static_cast<std::size_t>(i)] * plan.scaling.mean[static_cast<std::size_t>(i)];
            plan.scaling.sd[static_cast<std::size_t>(i)] = var > 1e-12 ? std::sqrt(var) : 1.0; // constant feature carries no distance
        }
    }

    auto z = [&](const SubjectRecord& r) {
        auto f = detail::match_features(r);
        for (int i = 0; i < 5; ++i)
            f[static_cast<std::size_t>(i)] = (f[static_cast<std::size_t>(i)] - plan.scaling.mean[static_cast<std::size_t>(i)])
                / plan.scaling.sd[static_cast<std::size_t>(i)];
        return f;
    };

    for (bool lesioned : { false, true }) {
        struct Cand {
            double dist;
            std::string sid, tid;
            std::size_t si, ti;
        };
        std::vector<Cand> cands;
        std::vector<std::size_t> src_idx, tgt_idx;
        for (std::size_t i = 0; i < source.size(); ++i)
            if (source[i].lesioned == lesioned)
                src_idx.push_back(i);
        for (std::size_t i = 0; i < target.size(); ++i)
            if (target[i].lesioned == lesioned)
                tgt_idx.push_back(i);
        for (auto si : src_idx) {
            const auto fs = z(source[si]);
            for (auto ti : tgt_idx) {
                const auto ft = z(target[ti]);
                double d2 = 0.0;
                for (int k = 0; k < 5; ++k) {
                    const double d = fs[static_cast<std::size_t>(k)] - ft[static_cast<std::size_t>(k)];
                    d2 += d * d;
                }
                cands.push_back({ std::sqrt(d2), source[si].id, target[ti].id, si, ti });
            }
        }
        std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            if (a.dist != b.dist)
                return a.dist < b.dist;
            if (a.sid != b.sid)
                return a.sid < b.sid;
            return a.tid < b.tid;
        });
        std::set<std::size_t> used_s, used_t;
        for (const auto& c : cands) {
            if (used_s.count(c.si) || used_t.count(c.ti))
                continue;
            used_s.insert(c.si);
            used_t.insert(c.ti);
            plan.pairs.push_back({ c.sid, c.tid, c.dist });
            plan.total_distance += c.dist;
        }
    }
    return plan;
}

inline void to_json(json& j, const MatchPair& p)
{
    j = json { { "source_id", p.source_id }, { "target_id", p.target_id }, { "distance", p.distance } };
}
inline void from_json(const json& j, MatchPair& p)
{
    j.at("source_id").get_to(p.source_id);
    j.at("target_id").get_to(p.target_id);
    j.at("distance").get_to(p.distance);
}
inline void to_json(json& j, const MatchPlan& p)
{
    j = json { { "pairs", p.pairs }, { "total_distance", p.total_distance },
        { "feature_mean", p.scaling.mean }, { "feature_sd", p.scaling.sd } };
}
inline void from_json(const json& j, MatchPlan& p)
{
    j.at("pairs").get_to(p.pairs);
    j.at("total_distance").get_to(p.total_distance);
    j.at("feature_mean").get_to(p.scaling.mean);
    j.at("feature_sd").get_to(p.scaling.sd);
}

// ---------------------------------------------------------------------------
// split plans

enum class SplitKind { cross_validation, convergence };

struct SplitFold {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    std::vector<std::string> test_ids;
};

struct SplitPlan {
    SplitKind kind = SplitKind::cross_validation;
    std::vector<SplitFold> folds; // for convergence plans: one fold per train-size increment

    void validate_disjoint() const
    {
        for (const auto& f : folds) {
            std::set<std::string> seen;
            for (const auto* ids : { &f.train_ids, &f.val_ids, &f.test_ids })
                for (const auto& id : *ids)
                    if (!seen.insert(id).second)
                        throw DataError("split plan: subject '" + id + "' appears in two roles within a fold");
        }
    }
};

inline void to_json(json& j, const SplitFold& f)
{
    j = json { { "train", f.train_ids }, { "val", f.val_ids }, { "test", f.test_ids } };
}
inline void from_json(const json& j, SplitFold& f)
{
    j.at("train").get_to(f.train_ids);
    j.at("val").get_to(f.val_ids);
    j.at("test").get_to(f.test_ids);
}
inline void to_json(json& j, const SplitPlan& p)
{
    j = json { { "kind", p.kind == SplitKind::cross_validation ? "cross_validation" : "convergence" },
        { "folds", p.folds } };
}
inline void from_json(const json& j, SplitPlan& p)
{
    const auto k = j.at("kind").get<std::string>();
    if (k == "cross_validation")
        p.kind = SplitKind::cross_validation;
    else if (k == "convergence")
        p.kind = SplitKind::convergence;
    else
        throw DataError("unknown split plan kind '" + k + "'");
    j.at("folds").get_to(p.folds);
}

namespace detail {

    // subjects per stratum, seeded shuffle within each stratum
    inline std::vector<std::vector<std::string>> shuffled_strata(const std::vector<SubjectRecord>& cohort,
        Rng& rng)
    {
        std::vector<std::string> non, les;
        for (const auto& r : cohort)
            (r.lesioned ? les : non).push_back(r.id);
        std::sort(non.begin(), non.end());
        std::sort(les.begin(), les.end()); // stable base order before shuffling
        rng.shuffle(non);
        rng.shuffle(les);
        std::vector<std::vector<std::string>> out;
        if (!non.empty())
            out.push_back(std::move(non));
        if (!les.empty())
            out.push_back(std::move(les));
        return out;
    }

} // namespace detail

struct CvFractions {
    double train = 0.70;
    double val = 0.20;
    double test = 0.10;
};

// Subject-level cross-validation: ceil(1/test) folds whose test sets exactly
// partition the cohort (sizes differ by at most one), remaining subjects split
// train:val by the train/val ratio; stratified by lesion status when mixed.
inline SplitPlan make_cv_splits(const std::vector<SubjectRecord>& cohort,
    const CvFractions& fractions, std::uint64_t seed)
{
    if (std::abs(fractions.train + fractions.val + fractions.test - 1.0) > 1e-9)
        throw ConfigError("make_cv_splits: fractions must sum to 1");
    if (!(fractions.test > 0.0) || !(fractions.val >= 0.0) || !(fractions.train > 0.0))
        throw ConfigError("make_cv_splits: fractions must be positive");
    if (cohort.size() < 10)
        throw DataError("make_cv_splits: cohort size must be >= 10");

    const int n_folds = static_cast<int>(std::ceil(1.0 / fractions.test));
    Rng rng(seed, "cv_splits");
    auto strata = detail::shuffled_strata(cohort, rng);

    // deal each stratum round-robin, continuing at the next fold so totals stay balanced
    std::vector<std::vector<std::string>> test_sets(static_cast<std::size_t>(n_folds));
    int cursor = 0;
    for (auto& stratum : strata)
        for (auto& id : stratum) {
            test_sets[static_cast<std::size_t>(cursor % n_folds)].push_back(id);
            ++cursor;
        }

    SplitPlan plan;
    plan.kind = SplitKind::cross_validation;
    for (int f = 0; f < n_folds; ++f) {
        SplitFold fold;
        fold.test_ids = test_sets[static_cast<std::size_t>(f)];
        std::set<std::string> in_test(fold.test_ids.begin(), fold.test_ids.end());

        std::vector<SubjectRecord> rest;
        for (const auto& r : cohort)
            if (!in_test.count(r.id))
                rest.push_back(r);
        Rng fold_rng = rng.substream("fold", static_cast<std::uint64_t>(f));
        auto rest_strata = detail::shuffled_strata(rest, fold_rng);
        const double val_share = fractions.val / (fractions.train + fractions.val);
        for (auto& stratum : rest_strata) {
            const auto n_val = static_cast<std::size_t>(std::llround(val_share * double(stratum.size())));
            for (std::size_t i = 0; i < stratum.size(); ++i)
                (i < n_val ? fold.val_ids : fold.train_ids).push_back(stratum[i]);
        }
        if (fold.train_ids.empty() || fold.val_ids.empty() || fold.test_ids.empty())
            throw DataError("make_cv_splits: a fold ended up with an empty role");
        plan.folds.push_back(std::move(fold));
    }
    plan.validate_disjoint();
    return plan;
}

// Convergence plan: one fixed validation set and one fixed test set, then
// nested train sets of sizes 1..(n - val_n - test_n). Mixed cohorts draw
// val/test proportionally per stratum and alternate strata while extending
// the train pool so the lesion mix stays balanced across increments.
inline SplitPlan make_convergence_splits(const std::vector<SubjectRecord>& cohort,
    int val_n, int test_n, std::uint64_t seed)
{
    if (val_n < 1 || test_n < 1)
        throw ConfigError("make_convergence_splits: val_n and test_n must be >= 1");
    const auto n = static_cast<int>(cohort.size());
    if (n <= val_n + test_n)
        throw DataError("make_convergence_splits: cohort too small for the requested val/test sizes");

    Rng rng(seed, "convergence_splits");
    auto strata = detail::shuffled_strata(cohort, rng);

    // draw val/test per stratum, proportional with largest-remainder rounding
    std::vector<std::string> val_ids, test_ids;
    auto draw = [&](int want, std::vector<std::string>& out) {
        // proportional share per stratum
        std::vector<int> take(strata.size(), 0);
        int assigned = 0;
        for (std::size_t s = 0; s < strata.size(); ++s) {
            take[s] = static_cast<int>(std::floor(double(want) * double(strata[s].size()) / double(n)));
            assigned += take[s];
        }
        std::size_t s = 0;
        while (assigned < want) { // distribute the remainder round-robin
            ++take[s % strata.size()];
            ++assigned;
            ++s;
        }
        for (std::size_t i = 0; i < strata.size(); ++i)
            for (int k = 0; k < take[i]; ++k) {
                if (strata[i].empty())
                    throw DataError("make_convergence_splits: stratum exhausted while drawing fixed sets");
                out.push_back(strata[i].back());
                strata[i].pop_back();
            }
    };
    draw(val_n, val_ids);
    draw(test_n, test_ids);

    // remaining subjects form the nested train pool, strata alternating
    std::vector<std::string> pool;
    {
        std::size_t remaining = 0;
        for (const auto& s : strata)
            remaining += s.size();
        std::vector<std::size_t> cursors(strata.size(), 0);
        std::size_t s = 0;
        while (pool.size() < remaining) {
            const auto idx = s % strata.size();
            if (cursors[idx] < strata[idx].size())
                pool.push_back(strata[idx][cursors[idx]++]);
            ++s;
        }
    }

    SplitPlan plan;
    plan.kind = SplitKind::convergence;
    for (std::size_t k = 1; k <= pool.size(); ++k) {
        SplitFold fold;
        fold.train_ids.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
        fold.val_ids = val_ids;
        fold.test_ids = test_ids;
        plan.folds.push_back(std::move(fold));
    }
    plan.validate_disjoint();
    return plan;
}

inline void save_split_plan(const SplitPlan& plan, const std::filesystem::path& path)
{
    std::ofstream f(path);
    if (!f)
        throw DataError("cannot write split plan " + path.string());
    json j = plan;
    f << j.dump(2) << '\n';
}

inline SplitPlan load_split_plan(const std::filesystem::path& path)
{
    std::ifstream f(path);
    if (!f)
        throw DataError("cannot read split plan " + path.string());
    return json::parse(f).get<SplitPlan>();
}

} // namespace cartseg
