#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "cartseg/types.hpp"

namespace cartseg {

namespace detail {

    inline std::vector<double> gaussian_kernel(double sigma)
    {
        const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
        std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
        double sum = 0.0;
        for (int i = -radius; i <= radius; ++i) {
            const double v = std::exp(-0.5 * (i / sigma) * (i / sigma));
            k[static_cast<std::size_t>(i + radius)] = v;
            sum += v;
        }
        for (auto& v : k)
            v /= sum;
        return k;
    }

    // 1D convolution along a strided line, reflect boundary
    inline void convolve_line(const float* src, float* dst, std::int64_t n, std::int64_t stride,
        const std::vector<double>& kernel)
    {
        const int radius = static_cast<int>(kernel.size() / 2);
        for (std::int64_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (int t = -radius; t <= radius; ++t) {
                std::int64_t j = i + t;
                if (j < 0)
                    j = -j - 1;
                if (j >= n)
                    j = 2 * n - 1 - j;
                acc += kernel[static_cast<std::size_t>(t + radius)] * src[j * stride];
            }
            dst[i * stride] = static_cast<float>(acc);
        }
    }

} // namespace detail

// separable Gaussian smoothing, sigma in voxels, reflect boundary
inline Volume gaussian_smooth(const Volume& v, double sigma)
{
    if (sigma <= 0.0)
        return v;
    const auto kernel = detail::gaussian_kernel(sigma);
    const auto sx = v.geometry.size[0], sy = v.geometry.size[1], sz = v.geometry.size[2];
    Volume a = v, b(v.geometry);
    for (std::int64_t k = 0; k < sz; ++k)
        for (std::int64_t j = 0; j < sy; ++j)
            detail::convolve_line(a.data.data() + sx * (j + sy * k), b.data.data() + sx * (j + sy * k), sx, 1, kernel);
    for (std::int64_t k = 0; k < sz; ++k)
        for (std::int64_t i = 0; i < sx; ++i)
            detail::convolve_line(b.data.data() + i + sx * sy * k, a.data.data() + i + sx * sy * k, sy, sx, kernel);
    for (std::int64_t j = 0; j < sy; ++j)
        for (std::int64_t i = 0; i < sx; ++i)
            detail::convolve_line(a.data.data() + i + sx * j, b.data.data() + i + sx * j, sz, sx * sy, kernel);
    return b;
}

// Multiplicative inhomogeneity correction: least-squares fit of an order-2
// polynomial to the log image (10 coefficients), divided out and renormalized
// so the output mean equals the input mean. Constant images pass through.
inline Volume correct_bias_field(const Volume& v)
{
    const auto [mn_it, mx_it] = std::minmax_element(v.data.begin(), v.data.end());
    const double mn = *mn_it, mx = *mx_it;
    if (mx - mn <= 1e-12 * std::max(1.0, std::abs(mx)))
        return v; // degenerate constant image

    const double eps = std::max(1e-6, 1e-3 * (mx - mn));
    const double shift = mn <= 0.0 ? -mn + eps : 0.0;

    const auto sx = v.geometry.size[0], sy = v.geometry.size[1], sz = v.geometry.size[2];
    // stride so that no more than ~2M voxels enter the normal equations
    std::int64_t step = 1;
    while (v.geometry.voxel_count() / (step * step * step) > 2'000'000)
        ++step;

    auto basis = [&](std::int64_t i, std::int64_t j, std::int64_t k, double* t) {
        const double x = sx > 1 ? 2.0 * double(i) / double(sx - 1) - 1.0 : 0.0;
        const double y = sy > 1 ? 2.0 * double(j) / double(sy - 1) - 1.0 : 0.0;
        const double z = sz > 1 ? 2.0 * double(k) / double(sz - 1) - 1.0 : 0.0;
        t[0] = 1.0;
        t[1] = x;
        t[2] = y;
        t[3] = z;
        t[4] = x * x;
        t[5] = y * y;
        t[6] = z * z;
        t[7] = x * y;
        t[8] = x * z;
        t[9] = y * z;
    };

    Eigen::Matrix<double, 10, 10> ata = Eigen::Matrix<double, 10, 10>::Zero();
    Eigen::Matrix<double, 10, 1> atb = Eigen::Matrix<double, 10, 1>::Zero();
    double t[10];
    for (std::int64_t k = 0; k < sz; k += step)
        for (std::int64_t j = 0; j < sy; j += step)
            for (std::int64_t i = 0; i < sx; i += step) {
                basis(i, j, k, t);
                const double b = std::log(double(v.at(i, j, k)) + shift);
                for (int r = 0; r < 10; ++r) {
                    atb(r) += t[r] * b;
                    for (int c = r; c < 10; ++c)
                        ata(r, c) += t[r] * t[c];
                }
            }
    for (int r = 0; r < 10; ++r)
        for (int c = 0; c < r; ++c)
            ata(r, c) = ata(c, r);
    const Eigen::Matrix<double, 10, 1> coeff = ata.ldlt().solve(atb);

    Volume out(v.geometry);
    double in_sum = 0.0, out_sum = 0.0;
    std::size_t idx = 0;
    for (std::int64_t k = 0; k < sz; ++k)
        for (std::int64_t j = 0; j < sy; ++j)
            for (std::int64_t i = 0; i < sx; ++i, ++idx) {
                basis(i, j, k, t);
                double field = 0.0;
                for (int r = 1; r < 10; ++r) // constant term stays in the image
                    field += coeff(r) * t[r];
                const double corrected = (double(v.data[idx]) + shift) / std::exp(field);
                out.data[idx] = static_cast<float>(corrected);
                in_sum += v.data[idx];
                out_sum += corrected;
            }
    const double scale = out_sum != 0.0 ? in_sum / out_sum : 1.0;
    for (auto& x : out.data)
        x = static_cast<float>(x * scale);
    return out;
}

struct EnhanceParams {
    double unsharp_lambda = 0.5;
    double unsharp_sigma = 1.0; // voxels
};

// Contour-enhancing intensity rescale: unsharp masking on the smoothed image
// followed by an exact linear map onto [0, 100]. Constant images map to zero.
inline Volume rescale_enhance(const Volume& v, const EnhanceParams& params = {})
{
    const auto [mn_it, mx_it] = std::minmax_element(v.data.begin(), v.data.end());
    if (*mx_it - *mn_it <= 0.0f) {
        Volume out(v.geometry);
        return out; // all zeros
    }
    Volume smoothed = gaussian_smooth(v, params.unsharp_sigma);
    Volume sharp(v.geometry);
    for (std::size_t i = 0; i < v.data.size(); ++i)
        sharp.data[i] = static_cast<float>(
            v.data[i] + params.unsharp_lambda * (double(v.data[i]) - double(smoothed.data[i])));

    const auto [smn_it, smx_it] = std::minmax_element(sharp.data.begin(), sharp.data.end());
    const double smn = *smn_it, smx = *smx_it;
    for (auto& x : sharp.data)
        x = static_cast<float>(100.0 * (double(x) - smn) / (smx - smn));
    return sharp;
}

struct DiffusionParams {
    int iterations = 5;
    double kappa = 10.0; // conductance scale on the [0,100] intensity range
    double dt = 0.0625;  // explicit scheme; must stay below 1/6 in 3D
};

// Perona-Malik diffusion, 6-neighborhood explicit scheme with zero-flux
// boundaries. The pairwise flux formulation conserves total intensity exactly
// up to float rounding; g(d) = exp(-(d/kappa)^2).
inline Volume diffuse(const Volume& v, const DiffusionParams& params = {})
{
    if (params.iterations < 0)
        throw ConfigError("diffuse: iterations must be >= 0");
    if (!(params.dt > 0.0) || params.dt > 1.0 / 6.0)
        throw ConfigError("diffuse: dt must lie in (0, 1/6] for the 3D explicit scheme");
    if (!(params.kappa > 0.0))
        throw ConfigError("diffuse: kappa must be positive");

    const auto sx = v.geometry.size[0], sy = v.geometry.size[1], sz = v.geometry.size[2];
    Volume cur = v;
    std::vector<float> update(cur.data.size());
    const double inv_k2 = 1.0 / (params.kappa * params.kappa);

    const std::int64_t strides[3] = { 1, sx, sx * sy };
    for (int it = 0; it < params.iterations; ++it) {
        std::fill(update.begin(), update.end(), 0.0f);
        for (int axis = 0; axis < 3; ++axis) {
            const auto stride = strides[axis];
            const auto n_axis = v.geometry.size[axis];
            if (n_axis < 2)
                continue;
            std::size_t idx = 0;
            for (std::int64_t k = 0; k < sz; ++k)
                for (std::int64_t j = 0; j < sy; ++j)
                    for (std::int64_t i = 0; i < sx; ++i, ++idx) {
                        const std::int64_t pos = axis == 0 ? i : axis == 1 ? j : k;
                        if (pos + 1 >= n_axis)
                            continue;
                        const float d = cur.data[idx + static_cast<std::size_t>(stride)] - cur.data[idx];
                        const float flux = static_cast<float>(std::exp(-double(d) * double(d) * inv_k2) * d);
                        update[idx] += flux;
                        update[idx + static_cast<std::size_t>(stride)] -= flux;
                    }
        }
        for (std::size_t i = 0; i < cur.data.size(); ++i)
            cur.data[i] += static_cast<float>(params.dt) * update[i];
    }
    return cur;
}

} // namespace cartseg
