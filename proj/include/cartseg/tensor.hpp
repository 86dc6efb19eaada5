#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <numeric>
#include <vector>

#include <cblas.h>

#include "cartseg/common.hpp"

namespace cartseg {

// Dense row-major tensor, rank <= 4. Shapes follow NCHW for image batches.
template <typename T>
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> s, T fill = T {})
        : shape(std::move(s))
    {
        data.assign(static_cast<std::size_t>(numel(shape)), fill);
    }

    static std::int64_t numel(const std::vector<std::int64_t>& s)
    {
        std::int64_t n = 1;
        for (auto d : s)
            n *= d;
        return n;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

    void resize(std::vector<std::int64_t> s)
    {
        shape = std::move(s);
        data.resize(static_cast<std::size_t>(numel(shape)));
    }

    void zero() { std::fill(data.begin(), data.end(), T {}); }

    // NCHW accessors
    T& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w)
    {
        return data[static_cast<std::size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    const T& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const
    {
        return data[static_cast<std::size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }

    template <typename U>
    Tensor<U> cast() const
    {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i)
            out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// C = alpha * op(A) * op(B) + beta * C, row-major
inline void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
    float alpha, const float* a, std::int64_t lda, const float* b, std::int64_t ldb,
    float beta, float* c, std::int64_t ldc)
{
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
        static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(lda),
        b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

inline void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
    double alpha, const double* a, std::int64_t lda, const double* b, std::int64_t ldb,
    double beta, double* c, std::int64_t ldc)
{
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
        static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(lda),
        b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

// IEEE half-precision round trip, used to emulate mixed-precision storage of
// activations and gradients on hardware without native fp16.
inline float round_to_half(float x)
{
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(x);
    const std::uint32_t sign = bits & 0x80000000u;
    std::int32_t exp = static_cast<std::int32_t>((bits >> 23) & 0xff) - 127;
    std::uint32_t mant = bits & 0x7fffffu;

    std::uint16_t h;
    if (exp == 128) { // inf/nan
        h = static_cast<std::uint16_t>((sign >> 16) | 0x7c00 | (mant ? 0x200 : 0));
    } else if (exp > 15) { // overflow -> inf
        h = static_cast<std::uint16_t>((sign >> 16) | 0x7c00);
    } else if (exp >= -14) { // normal
        // round mantissa to 10 bits, ties to even
        std::uint32_t m = mant + 0xfffu + ((mant >> 13) & 1u);
        if (m & 0x800000u) { // mantissa overflow bumps exponent
            m = 0;
            ++exp;
            if (exp > 15)
                return std::bit_cast<float>(sign | 0x7f800000u);
        }
        h = static_cast<std::uint16_t>((sign >> 16) | (static_cast<std::uint32_t>(exp + 15) << 10) | (m >> 13));
    } else if (exp >= -24) { // subnormal
        mant |= 0x800000u;
        const int shift = -exp - 14 + 13;
        std::uint32_t m = mant >> shift;
        if ((mant >> (shift - 1)) & 1u) // round half up (subnormal tail)
            ++m;
        h = static_cast<std::uint16_t>((sign >> 16) | m);
    } else { // underflow -> zero
        h = static_cast<std::uint16_t>(sign >> 16);
    }

    // decode back to float
    const std::uint32_t hs = (h & 0x8000u) << 16;
    const std::uint32_t he = (h >> 10) & 0x1f;
    const std::uint32_t hm = h & 0x3ffu;
    std::uint32_t out;
    if (he == 0) {
        if (hm == 0) {
            out = hs;
        } else {
            int e = -1;
            std::uint32_t m = hm;
            while (!(m & 0x400u)) {
                m <<= 1;
                --e;
            }
            out = hs | (static_cast<std::uint32_t>(e - 14 + 127) << 23) | ((m & 0x3ffu) << 13);
        }
    } else if (he == 31) {
        out = hs | 0x7f800000u | (hm << 13);
    } else {
        out = hs | ((he - 15 + 127) << 23) | (hm << 13);
    }
    return std::bit_cast<float>(out);
}

inline double round_to_half(double x) { return x; } // double path is the reference path

template <typename T>
void round_tensor_to_half(Tensor<T>& t)
{
    for (auto& v : t.data)
        v = round_to_half(v);
}

} // namespace cartseg
