#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cartseg/preprocess.hpp"
#include "cartseg/rng.hpp"

namespace cartseg {

struct AugmentationConfig {
    struct Rotation {
        double max_degrees = 16.0;
        double prob = 0.5;
    } rotation;
    struct Elastic {
        double alpha = 23.59; // displacement scale
        double sigma = 5.62;  // smoothing scale, pixels
        double prob = 0.5;
    } elastic;
    struct BrightnessContrast {
        double limit = 0.2;
        double prob = 0.128;
    } brightness_contrast;
    struct GaussianBlur {
        int kernel_min = 7; // pixels, odd
        int kernel_max = 11;
        double prob = 0.1;
    } gaussian_blur;

    void validate() const
    {
        for (double p : { rotation.prob, elastic.prob, brightness_contrast.prob, gaussian_blur.prob })
            if (!(p >= 0.0 && p <= 1.0))
                throw ConfigError("augmentation probabilities must lie in [0, 1]");
        if (gaussian_blur.kernel_min % 2 == 0 || gaussian_blur.kernel_max % 2 == 0)
            throw ConfigError("gaussian blur kernel sizes must be odd");
        if (gaussian_blur.kernel_min < 3 || gaussian_blur.kernel_max < gaussian_blur.kernel_min)
            throw ConfigError("gaussian blur kernel range is invalid");
        if (!(rotation.max_degrees >= 0.0) || !(elastic.alpha > 0.0) || !(elastic.sigma > 0.0))
            throw ConfigError("augmentation magnitudes must be non-negative");
    }
};

namespace detail {

    inline float bilinear(const std::vector<float>& img, std::int64_t h, std::int64_t w,
        double r, double c)
    {
        if (r < 0.0 || c < 0.0 || r > double(h - 1) || c > double(w - 1))
            return 0.0f;
        const auto r0 = static_cast<std::int64_t>(std::floor(r));
        const auto c0 = static_cast<std::int64_t>(std::floor(c));
        const auto r1 = std::min(r0 + 1, h - 1);
        const auto c1 = std::min(c0 + 1, w - 1);
        const double fr = r - double(r0), fc = c - double(c0);
        const double v00 = img[std::size_t(r0 * w + c0)], v01 = img[std::size_t(r0 * w + c1)];
        const double v10 = img[std::size_t(r1 * w + c0)], v11 = img[std::size_t(r1 * w + c1)];
        return static_cast<float>((1 - fr) * ((1 - fc) * v00 + fc * v01) + fr * ((1 - fc) * v10 + fc * v11));
    }

    inline std::uint8_t nearest_mask(const std::vector<std::uint8_t>& msk, std::int64_t h,
        std::int64_t w, double r, double c)
    {
        const auto ri = static_cast<std::int64_t>(std::llround(r));
        const auto ci = static_cast<std::int64_t>(std::llround(c));
        if (ri < 0 || ci < 0 || ri >= h || ci >= w)
            return 0;
        return msk[std::size_t(ri * w + ci)];
    }

    // geometric warp shared by image (bilinear) and mask (nearest)
    template <typename MapFn>
    void warp(Slice2D& s, MapFn&& source_of)
    {
        const auto h = s.h, w = s.w;
        std::vector<float> img(std::size_t(h * w));
        std::vector<std::uint8_t> msk(std::size_t(h * w));
        for (std::int64_t r = 0; r < h; ++r)
            for (std::int64_t c = 0; c < w; ++c) {
                const auto [sr, sc] = source_of(r, c);
                img[std::size_t(r * w + c)] = bilinear(s.image, h, w, sr, sc);
                msk[std::size_t(r * w + c)] = nearest_mask(s.mask, h, w, sr, sc);
            }
        s.image = std::move(img);
        s.mask = std::move(msk);
    }

    inline void smooth_field(std::vector<double>& f, std::int64_t h, std::int64_t w, double sigma)
    {
        const int radius = std::max(1, int(std::ceil(3.0 * sigma)));
        std::vector<double> kernel(std::size_t(2 * radius + 1));
        double sum = 0.0;
        for (int i = -radius; i <= radius; ++i) {
            kernel[std::size_t(i + radius)] = std::exp(-0.5 * (i / sigma) * (i / sigma));
            sum += kernel[std::size_t(i + radius)];
        }
        for (auto& k : kernel)
            k /= sum;
        std::vector<double> tmp(f.size());
        for (std::int64_t r = 0; r < h; ++r)
            for (std::int64_t c = 0; c < w; ++c) {
                double acc = 0.0;
                for (int t = -radius; t <= radius; ++t) {
                    auto cc = std::clamp<std::int64_t>(c + t, 0, w - 1);
                    acc += kernel[std::size_t(t + radius)] * f[std::size_t(r * w + cc)];
                }
                tmp[std::size_t(r * w + c)] = acc;
            }
        for (std::int64_t r = 0; r < h; ++r)
            for (std::int64_t c = 0; c < w; ++c) {
                double acc = 0.0;
                for (int t = -radius; t <= radius; ++t) {
                    auto rr = std::clamp<std::int64_t>(r + t, 0, h - 1);
                    acc += kernel[std::size_t(t + radius)] * tmp[std::size_t(rr * w + c)];
                }
                f[std::size_t(r * w + c)] = acc;
            }
    }

} // namespace detail

// rotation about the image center; image bilinear, mask nearest
inline void rotate_slice(Slice2D& s, double degrees)
{
    const double theta = degrees * 3.14159265358979323846 / 180.0;
    const double cr = 0.5 * double(s.h - 1), cc = 0.5 * double(s.w - 1);
    const double ct = std::cos(theta), st = std::sin(theta);
    detail::warp(s, [&](std::int64_t r, std::int64_t c) {
        const double dr = double(r) - cr, dc = double(c) - cc;
        return std::pair { cr + ct * dr - st * dc, cc + st * dr + ct * dc };
    });
}

// Applies each transform independently with its probability. Geometric
// transforms (rotation, elastic) warp image and mask identically, the mask
// via nearest neighbor so it stays binary; photometric transforms
// (brightness/contrast, blur) touch the image only.
inline void augment(Slice2D& s, const AugmentationConfig& cfg, Rng& rng)
{
    cfg.validate();
    const auto h = s.h, w = s.w;

    if (rng.bernoulli(cfg.rotation.prob))
        rotate_slice(s, rng.uniform(-cfg.rotation.max_degrees, cfg.rotation.max_degrees));

    if (rng.bernoulli(cfg.elastic.prob)) {
        std::vector<double> dr(std::size_t(h * w)), dc(std::size_t(h * w));
        for (auto& d : dr)
            d = rng.uniform(-1.0, 1.0);
        for (auto& d : dc)
            d = rng.uniform(-1.0, 1.0);
        detail::smooth_field(dr, h, w, cfg.elastic.sigma);
        detail::smooth_field(dc, h, w, cfg.elastic.sigma);
        detail::warp(s, [&](std::int64_t r, std::int64_t c) {
            const auto i = std::size_t(r * w + c);
            return std::pair { double(r) + cfg.elastic.alpha * dr[i],
                double(c) + cfg.elastic.alpha * dc[i] };
        });
    }

    if (rng.bernoulli(cfg.brightness_contrast.prob)) {
        const double contrast = rng.uniform(-cfg.brightness_contrast.limit, cfg.brightness_contrast.limit);
        const double brightness = rng.uniform(-cfg.brightness_contrast.limit, cfg.brightness_contrast.limit);
        // intensities live on the [0,100] preprocessed scale
        for (auto& x : s.image)
            x = static_cast<float>(x * (1.0 + contrast) + brightness * 50.0);
    }

    if (rng.bernoulli(cfg.gaussian_blur.prob)) {
        const auto k = cfg.gaussian_blur.kernel_min
            + 2 * rng.uniform_int(0, (cfg.gaussian_blur.kernel_max - cfg.gaussian_blur.kernel_min) / 2);
        const double sigma = 0.3 * ((double(k) - 1.0) * 0.5 - 1.0) + 0.8;
        std::vector<double> img(s.image.begin(), s.image.end());
        detail::smooth_field(img, h, w, sigma);
        for (std::size_t i = 0; i < img.size(); ++i)
            s.image[i] = static_cast<float>(img[i]);
    }
}

} // namespace cartseg
