#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "cartseg/common.hpp"

namespace cartseg {

// Deterministic random stream, identical across platforms for a given
// (seed, label) pair. xoshiro256** state is derived from the seed and an
// FNV-1a hash of the label via splitmix64, so adding a new labeled consumer
// never perturbs existing streams. Distributions are implemented here rather
// than with <random> because libstdc++/libc++ distribution outputs differ.
class Rng {
public:
    Rng(std::uint64_t seed, std::string_view label)
        : Rng(mix_key(seed, label))
    {
    }

    // Independent stream derived from this stream's identity (not its state).
    Rng substream(std::string_view label) const
    {
        return Rng(mix_key(key_, label));
    }
    Rng substream(std::string_view label, std::uint64_t a, std::uint64_t b = 0) const
    {
        std::uint64_t k = mix_key(key_, label);
        std::uint64_t x = k ^ (a * 0x9e3779b97f4a7c15ull) ^ (b * 0xc2b2ae3d27d4eb4full);
        return Rng(x);
    }

    std::uint64_t next()
    {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi)
    {
        const double span = static_cast<double>(hi - lo) + 1.0;
        auto v = lo + static_cast<std::int64_t>(uniform() * span);
        return v > hi ? hi : v;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; the paired draw is cached for the next call.
    double normal()
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) // avoid log(0)
            u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    template <class Seq>
    void shuffle(Seq& v)
    {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::uint64_t key() const { return key_; }

private:
    explicit Rng(std::uint64_t key)
        : key_(key)
    {
        std::uint64_t x = key;
        for (auto& w : s_)
            w = splitmix64(x);
        if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0)
            s_[0] = 0x9e3779b97f4a7c15ull;
    }

    static std::uint64_t mix_key(std::uint64_t seed, std::string_view label)
    {
        std::uint64_t h = fnv1a64(label);
        std::uint64_t x = seed ^ (h + 0x9e3779b97f4a7c15ull + (seed << 6) + (seed >> 2));
        return splitmix64(x);
    }

    static constexpr std::uint64_t rotl(std::uint64_t x, int k)
    {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t key_ = 0;
    std::uint64_t s_[4] = {};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace cartseg
