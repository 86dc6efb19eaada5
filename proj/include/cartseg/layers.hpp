#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cartseg/rng.hpp"
#include "cartseg/tensor.hpp"

namespace cartseg::nn {

using cartseg::Rng;
using cartseg::Tensor;

template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;

    void init_shape(std::vector<std::int64_t> shape)
    {
        value.resize(shape);
        grad.resize(shape);
        grad.zero();
    }
};

template <typename T>
struct Buffer { // non-learnable state (batch-norm running statistics)
    std::string name;
    Tensor<T> value;
};

// ---------------------------------------------------------------------------
// Conv2d: stride 1, same padding for k=3 (pad 1), none for k=1

template <typename T>
struct Conv2d {
    Param<T> weight; // [cout, cin, k, k]
    Param<T> bias;   // [cout]
    int cin = 0, cout = 0, k = 3, pad = 1;

    // cached per forward for backward
    std::vector<Tensor<T>> cols; // per sample [cin*k*k, h*w]
    std::vector<std::int64_t> in_shape;

    void init(const std::string& prefix, int cin_, int cout_, int k_, Rng& rng)
    {
        cin = cin_;
        cout = cout_;
        k = k_;
        pad = k_ == 3 ? 1 : 0;
        weight.name = prefix + ".weight";
        weight.init_shape({ cout, cin, k, k });
        bias.name = prefix + ".bias";
        bias.init_shape({ cout });
        // fan-in scaled uniform init
        const T bound = static_cast<T>(1.0 / std::sqrt(double(cin) * k * k));
        for (auto& w : weight.value.data)
            w = static_cast<T>(rng.uniform(-double(bound), double(bound)));
        for (auto& b : bias.value.data)
            b = static_cast<T>(rng.uniform(-double(bound), double(bound)));
    }

    void im2col(const T* x, std::int64_t h, std::int64_t w, Tensor<T>& col) const
    {
        col.resize({ std::int64_t(cin) * k * k, h * w });
        T* c = col.data.data();
        for (int ch = 0; ch < cin; ++ch) {
            const T* xc = x + std::int64_t(ch) * h * w;
            for (int ki = 0; ki < k; ++ki)
                for (int kj = 0; kj < k; ++kj) {
                    for (std::int64_t r = 0; r < h; ++r) {
                        const std::int64_t sr = r + ki - pad;
                        if (sr < 0 || sr >= h) {
                            for (std::int64_t cc = 0; cc < w; ++cc)
                                *c++ = T {};
                            continue;
                        }
                        const T* row = xc + sr * w;
                        for (std::int64_t cc = 0; cc < w; ++cc) {
                            const std::int64_t sc = cc + kj - pad;
                            *c++ = (sc < 0 || sc >= w) ? T {} : row[sc];
                        }
                    }
                }
        }
    }

    void col2im(const Tensor<T>& col, std::int64_t h, std::int64_t w, T* dx) const
    {
        const T* c = col.data.data();
        for (int ch = 0; ch < cin; ++ch) {
            T* xc = dx + std::int64_t(ch) * h * w;
            for (int ki = 0; ki < k; ++ki)
                for (int kj = 0; kj < k; ++kj) {
                    for (std::int64_t r = 0; r < h; ++r) {
                        const std::int64_t sr = r + ki - pad;
                        if (sr < 0 || sr >= h) {
                            c += w;
                            continue;
                        }
                        T* row = xc + sr * w;
                        for (std::int64_t cc = 0; cc < w; ++cc) {
                            const std::int64_t sc = cc + kj - pad;
                            if (sc >= 0 && sc < w)
                                row[sc] += c[cc];
                        }
                        c += w;
                    }
                }
        }
    }

    Tensor<T> forward(const Tensor<T>& x, bool keep_cache)
    {
        const auto n = x.shape[0], h = x.shape[2], w = x.shape[3];
        in_shape = x.shape;
        Tensor<T> y({ n, cout, h, w });
        if (keep_cache)
            cols.resize(static_cast<std::size_t>(n));
        Tensor<T> scratch;
        for (std::int64_t i = 0; i < n; ++i) {
            Tensor<T>& col = keep_cache ? cols[static_cast<std::size_t>(i)] : scratch;
            const T* xi = x.data.data() + i * cin * h * w;
            T* yi = y.data.data() + i * cout * h * w;
            if (k == 1) {
                gemm(false, false, cout, h * w, cin, T(1), weight.value.data.data(), cin,
                    xi, h * w, T(0), yi, h * w);
            } else {
                im2col(xi, h, w, col);
                gemm(false, false, cout, h * w, std::int64_t(cin) * k * k, T(1),
                    weight.value.data.data(), std::int64_t(cin) * k * k,
                    col.data.data(), h * w, T(0), yi, h * w);
            }
            for (int ch = 0; ch < cout; ++ch) {
                const T b = bias.value.data[static_cast<std::size_t>(ch)];
                T* yc = yi + std::int64_t(ch) * h * w;
                for (std::int64_t p = 0; p < h * w; ++p)
                    yc[p] += b;
            }
        }
        if (k == 1 && keep_cache)
            cache_x = x; // 1x1 path reuses the input directly
        return y;
    }

    // uses the caches stored by forward(x, keep_cache=true)
    Tensor<T> backward(const Tensor<T>& dy, bool want_dx = true)
    {
        const auto n = in_shape[0], h = in_shape[2], w = in_shape[3];
        Tensor<T> dx;
        if (want_dx) {
            dx.resize(in_shape);
            dx.zero();
        }
        Tensor<T> dcol({ std::int64_t(cin) * k * k, h * w });
        for (std::int64_t i = 0; i < n; ++i) {
            const T* dyi = dy.data.data() + i * cout * h * w;
            // bias grad
            for (int ch = 0; ch < cout; ++ch) {
                T acc {};
                const T* dyc = dyi + std::int64_t(ch) * h * w;
                for (std::int64_t p = 0; p < h * w; ++p)
                    acc += dyc[p];
                bias.grad.data[static_cast<std::size_t>(ch)] += acc;
            }
            if (k == 1) {
                const T* xi = cache_x.data.data() + i * cin * h * w;
                gemm(false, true, cout, cin, h * w, T(1), dyi, h * w, xi, h * w, T(1),
                    weight.grad.data.data(), cin);
                if (want_dx)
                    gemm(true, false, cin, h * w, cout, T(1), weight.value.data.data(), cin,
                        dyi, h * w, T(1), dx.data.data() + i * cin * h * w, h * w);
            } else {
                const Tensor<T>& col = cols[static_cast<std::size_t>(i)];
                gemm(false, true, cout, std::int64_t(cin) * k * k, h * w, T(1), dyi, h * w,
                    col.data.data(), h * w, T(1), weight.grad.data.data(), std::int64_t(cin) * k * k);
                if (want_dx) {
                    gemm(true, false, std::int64_t(cin) * k * k, h * w, cout, T(1),
                        weight.value.data.data(), std::int64_t(cin) * k * k, dyi, h * w, T(0),
                        dcol.data.data(), h * w);
                    col2im(dcol, h, w, dx.data.data() + i * cin * h * w);
                }
            }
        }
        return dx;
    }

    void drop_cache()
    {
        cols.clear();
        cache_x = Tensor<T> {};
    }

    Tensor<T> cache_x; // only used by the 1x1 path
};

// ---------------------------------------------------------------------------
// ConvTranspose2d: kernel 2, stride 2 (non-overlapping upsampling)

template <typename T>
struct ConvTranspose2d {
    Param<T> weight; // [cin, cout, 2, 2]
    Param<T> bias;   // [cout]
    int cin = 0, cout = 0;

    void init(const std::string& prefix, int cin_, int cout_, Rng& rng)
    {
        cin = cin_;
        cout = cout_;
        weight.name = prefix + ".weight";
        weight.init_shape({ cin, cout, 2, 2 });
        bias.name = prefix + ".bias";
        bias.init_shape({ cout });
        const T bound = static_cast<T>(1.0 / std::sqrt(double(cin) * 4.0));
        for (auto& w : weight.value.data)
            w = static_cast<T>(rng.uniform(-double(bound), double(bound)));
        for (auto& b : bias.value.data)
            b = static_cast<T>(rng.uniform(-double(bound), double(bound)));
    }

    // weight sub-matrix [cin, cout] for tap (di, dj), packed contiguously
    void pack_w(int di, int dj, Tensor<T>& out) const
    {
        out.resize({ cin, cout });
        for (int a = 0; a < cin; ++a)
            for (int b = 0; b < cout; ++b)
                out.data[static_cast<std::size_t>(a * cout + b)] = weight.value.data[static_cast<std::size_t>(((a * cout + b) * 2 + di) * 2 + dj)];
    }

    Tensor<T> forward(const Tensor<T>& x, bool keep_cache)
    {
        if (keep_cache)
            cache_x = x;
        const auto n = x.shape[0], h = x.shape[2], w = x.shape[3];
        Tensor<T> y({ n, cout, 2 * h, 2 * w });
        Tensor<T> wsub, ysub({ cout, h * w });
        for (int di = 0; di < 2; ++di)
            for (int dj = 0; dj < 2; ++dj) {
                pack_w(di, dj, wsub);
                for (std::int64_t i = 0; i < n; ++i) {
                    const T* xi = x.data.data() + i * cin * h * w;
                    gemm(true, false, cout, h * w, cin, T(1), wsub.data.data(), cout, xi, h * w,
                        T(0), ysub.data.data(), h * w);
                    T* yi = y.data.data() + i * cout * (4 * h * w);
                    for (int ch = 0; ch < cout; ++ch) {
                        const T* src = ysub.data.data() + std::int64_t(ch) * h * w;
                        T* dst = yi + std::int64_t(ch) * 4 * h * w;
                        for (std::int64_t r = 0; r < h; ++r)
                            for (std::int64_t c = 0; c < w; ++c)
                                dst[(2 * r + di) * 2 * w + (2 * c + dj)] = src[r * w + c];
                    }
                }
            }
        // bias
        for (std::int64_t i = 0; i < n; ++i)
            for (int ch = 0; ch < cout; ++ch) {
                T* dst = y.data.data() + (i * cout + ch) * 4 * h * w;
                const T b = bias.value.data[static_cast<std::size_t>(ch)];
                for (std::int64_t p = 0; p < 4 * h * w; ++p)
                    dst[p] += b;
            }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy, bool want_dx = true)
    {
        const Tensor<T>& x = cache_x;
        const auto n = x.shape[0], h = x.shape[2], w = x.shape[3];
        Tensor<T> dx;
        if (want_dx) {
            dx.resize(x.shape);
            dx.zero();
        }
        Tensor<T> wsub, dwsub({ cin, cout }), dysub({ cout, h * w });
        for (std::int64_t i = 0; i < n; ++i)
            for (int ch = 0; ch < cout; ++ch) {
                const T* dyc = dy.data.data() + (i * cout + ch) * 4 * h * w;
                T acc {};
                for (std::int64_t p = 0; p < 4 * h * w; ++p)
                    acc += dyc[p];
                bias.grad.data[static_cast<std::size_t>(ch)] += acc;
            }
        for (int di = 0; di < 2; ++di)
            for (int dj = 0; dj < 2; ++dj) {
                pack_w(di, dj, wsub);
                dwsub.zero();
                for (std::int64_t i = 0; i < n; ++i) {
                    const T* dyi = dy.data.data() + i * cout * 4 * h * w;
                    for (int ch = 0; ch < cout; ++ch) {
                        const T* src = dyi + std::int64_t(ch) * 4 * h * w;
                        T* dst = dysub.data.data() + std::int64_t(ch) * h * w;
                        for (std::int64_t r = 0; r < h; ++r)
                            for (std::int64_t c = 0; c < w; ++c)
                                dst[r * w + c] = src[(2 * r + di) * 2 * w + (2 * c + dj)];
                    }
                    const T* xi = x.data.data() + i * cin * h * w;
                    gemm(false, true, cin, cout, h * w, T(1), xi, h * w, dysub.data.data(), h * w,
                        T(1), dwsub.data.data(), cout);
                    if (want_dx)
                        gemm(false, false, cin, h * w, cout, T(1), wsub.data.data(), cout,
                            dysub.data.data(), h * w, T(1), dx.data.data() + i * cin * h * w, h * w);
                }
                for (int a = 0; a < cin; ++a)
                    for (int b = 0; b < cout; ++b)
                        weight.grad.data[static_cast<std::size_t>(((a * cout + b) * 2 + di) * 2 + dj)] += dwsub.data[static_cast<std::size_t>(a * cout + b)];
            }
        return dx;
    }

    Tensor<T> cache_x;
};

// ---------------------------------------------------------------------------
// BatchNorm2d

template <typename T>
struct BatchNorm2d {
    Param<T> gamma; // scale
    Param<T> beta;  // shift
    Buffer<T> running_mean;
    Buffer<T> running_var;
    int channels = 0;
    double momentum = 0.1;
    double eps = 1e-5;
    bool frozen = false; // frozen layers normalize by running stats and never update them

    // caches
    Tensor<T> xhat;
    std::vector<T> inv_std, batch_mean;
    bool used_batch_stats = false;

    void init(const std::string& prefix, int c)
    {
        channels = c;
        gamma.name = prefix + ".weight";
        gamma.init_shape({ c });
        beta.name = prefix + ".bias";
        beta.init_shape({ c });
        std::fill(gamma.value.data.begin(), gamma.value.data.end(), T(1));
        std::fill(beta.value.data.begin(), beta.value.data.end(), T(0));
        running_mean.name = prefix + ".running_mean";
        running_mean.value.resize({ c });
        running_mean.value.zero();
        running_var.name = prefix + ".running_var";
        running_var.value.resize({ c });
        std::fill(running_var.value.data.begin(), running_var.value.data.end(), T(1));
    }

    Tensor<T> forward(const Tensor<T>& x, bool training)
    {
        const auto n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
        const auto m = n * h * w;
        Tensor<T> y(x.shape);
        xhat.resize(x.shape);
        inv_std.assign(static_cast<std::size_t>(c), T {});
        batch_mean.assign(static_cast<std::size_t>(c), T {});
        used_batch_stats = training && !frozen;

        for (std::int64_t ch = 0; ch < c; ++ch) {
            T mean, var;
            if (used_batch_stats) {
                double sum = 0.0;
                for (std::int64_t i = 0; i < n; ++i) {
                    const T* xc = x.data.data() + (i * c + ch) * h * w;
                    for (std::int64_t p = 0; p < h * w; ++p)
                        sum += double(xc[p]);
                }
                mean = static_cast<T>(sum / double(m));
                double sq = 0.0;
                for (std::int64_t i = 0; i < n; ++i) {
                    const T* xc = x.data.data() + (i * c + ch) * h * w;
                    for (std::int64_t p = 0; p < h * w; ++p) {
                        const double d = double(xc[p]) - double(mean);
                        sq += d * d;
                    }
                }
                var = static_cast<T>(sq / double(m)); // biased, consistent with normalization
                auto& rm = running_mean.value.data[static_cast<std::size_t>(ch)];
                auto& rv = running_var.value.data[static_cast<std::size_t>(ch)];
                rm = static_cast<T>((1.0 - momentum) * double(rm) + momentum * double(mean));
                rv = static_cast<T>((1.0 - momentum) * double(rv) + momentum * double(var));
            } else {
                mean = running_mean.value.data[static_cast<std::size_t>(ch)];
                var = running_var.value.data[static_cast<std::size_t>(ch)];
            }
            const T istd = static_cast<T>(1.0 / std::sqrt(double(var) + eps));
            inv_std[static_cast<std::size_t>(ch)] = istd;
            batch_mean[static_cast<std::size_t>(ch)] = mean;
            const T g = gamma.value.data[static_cast<std::size_t>(ch)];
            const T b = beta.value.data[static_cast<std::size_t>(ch)];
            for (std::int64_t i = 0; i < n; ++i) {
                const T* xc = x.data.data() + (i * c + ch) * h * w;
                T* xh = xhat.data.data() + (i * c + ch) * h * w;
                T* yc = y.data.data() + (i * c + ch) * h * w;
                for (std::int64_t p = 0; p < h * w; ++p) {
                    xh[p] = (xc[p] - mean) * istd;
                    yc[p] = g * xh[p] + b;
                }
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy)
    {
        const auto n = dy.shape[0], c = dy.shape[1], h = dy.shape[2], w = dy.shape[3];
        const auto m = n * h * w;
        Tensor<T> dx(dy.shape);
        for (std::int64_t ch = 0; ch < c; ++ch) {
            double dg = 0.0, db = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
                const T* dyc = dy.data.data() + (i * c + ch) * h * w;
                const T* xh = xhat.data.data() + (i * c + ch) * h * w;
                for (std::int64_t p = 0; p < h * w; ++p) {
                    dg += double(dyc[p]) * double(xh[p]);
                    db += double(dyc[p]);
                }
            }
            gamma.grad.data[static_cast<std::size_t>(ch)] += static_cast<T>(dg);
            beta.grad.data[static_cast<std::size_t>(ch)] += static_cast<T>(db);

            const T g = gamma.value.data[static_cast<std::size_t>(ch)];
            const T istd = inv_std[static_cast<std::size_t>(ch)];
            if (used_batch_stats) {
                const T k1 = static_cast<T>(double(g) * double(istd) / double(m));
                for (std::int64_t i = 0; i < n; ++i) {
                    const T* dyc = dy.data.data() + (i * c + ch) * h * w;
                    const T* xh = xhat.data.data() + (i * c + ch) * h * w;
                    T* dxc = dx.data.data() + (i * c + ch) * h * w;
                    for (std::int64_t p = 0; p < h * w; ++p)
                        dxc[p] = k1 * (static_cast<T>(m) * dyc[p] - static_cast<T>(db) - xh[p] * static_cast<T>(dg));
                }
            } else { // running-stat normalization is an affine map
                const T k = g * istd;
                for (std::int64_t i = 0; i < n; ++i) {
                    const T* dyc = dy.data.data() + (i * c + ch) * h * w;
                    T* dxc = dx.data.data() + (i * c + ch) * h * w;
                    for (std::int64_t p = 0; p < h * w; ++p)
                        dxc[p] = k * dyc[p];
                }
            }
        }
        return dx;
    }
};

// ---------------------------------------------------------------------------
// ReLU, Dropout, MaxPool2d

template <typename T>
struct ReLU {
    Tensor<T> mask;

    Tensor<T> forward(const Tensor<T>& x)
    {
        Tensor<T> y(x.shape);
        mask.resize(x.shape);
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            const bool pos = x.data[i] > T(0);
            mask.data[i] = pos ? T(1) : T(0);
            y.data[i] = pos ? x.data[i] : T(0);
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy)
    {
        Tensor<T> dx(dy.shape);
        for (std::size_t i = 0; i < dy.data.size(); ++i)
            dx.data[i] = dy.data[i] * mask.data[i];
        return dx;
    }
};

template <typename T>
struct Dropout {
    double rate = 0.0;
    Tensor<T> mask;
    bool active = false;

    Tensor<T> forward(const Tensor<T>& x, bool training, Rng* rng)
    {
        active = training && rate > 0.0 && rng != nullptr;
        if (!active)
            return x;
        const T scale = static_cast<T>(1.0 / (1.0 - rate));
        mask.resize(x.shape);
        Tensor<T> y(x.shape);
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            mask.data[i] = rng->uniform() < rate ? T(0) : scale;
            y.data[i] = x.data[i] * mask.data[i];
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy)
    {
        if (!active)
            return dy;
        Tensor<T> dx(dy.shape);
        for (std::size_t i = 0; i < dy.data.size(); ++i)
            dx.data[i] = dy.data[i] * mask.data[i];
        return dx;
    }
};

template <typename T>
struct MaxPool2d { // 2x2, stride 2
    std::vector<std::int32_t> argmax; // flat input offset per output element
    std::vector<std::int64_t> in_shape;

    Tensor<T> forward(const Tensor<T>& x)
    {
        const auto n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
        in_shape = x.shape;
        Tensor<T> y({ n, c, h / 2, w / 2 });
        argmax.resize(y.data.size());
        std::size_t o = 0;
        for (std::int64_t i = 0; i < n * c; ++i) {
            const T* xc = x.data.data() + i * h * w;
            for (std::int64_t r = 0; r < h / 2; ++r)
                for (std::int64_t cc = 0; cc < w / 2; ++cc, ++o) {
                    const std::int64_t base = 2 * r * w + 2 * cc;
                    std::int64_t best = base;
                    if (xc[base + 1] > xc[best])
                        best = base + 1;
                    if (xc[base + w] > xc[best])
                        best = base + w;
                    if (xc[base + w + 1] > xc[best])
                        best = base + w + 1;
                    y.data[o] = xc[best];
                    argmax[o] = static_cast<std::int32_t>(best);
                }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy)
    {
        const auto n = in_shape[0], c = in_shape[1], h = in_shape[2], w = in_shape[3];
        Tensor<T> dx(in_shape);
        dx.zero();
        std::size_t o = 0;
        for (std::int64_t i = 0; i < n * c; ++i) {
            T* dxc = dx.data.data() + i * h * w;
            const auto out_sz = (h / 2) * (w / 2);
            for (std::int64_t p = 0; p < out_sz; ++p, ++o)
                dxc[argmax[o]] += dy.data[o];
        }
        return dx;
    }
};

// channel concatenation [a | b]
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b)
{
    const auto n = a.shape[0], ca = a.shape[1], cb = b.shape[1], h = a.shape[2], w = a.shape[3];
    Tensor<T> y({ n, ca + cb, h, w });
    for (std::int64_t i = 0; i < n; ++i) {
        std::copy(a.data.begin() + i * ca * h * w, a.data.begin() + (i + 1) * ca * h * w,
            y.data.begin() + i * (ca + cb) * h * w);
        std::copy(b.data.begin() + i * cb * h * w, b.data.begin() + (i + 1) * cb * h * w,
            y.data.begin() + (i * (ca + cb) + ca) * h * w);
    }
    return y;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& dy, std::int64_t ca)
{
    const auto n = dy.shape[0], c = dy.shape[1], h = dy.shape[2], w = dy.shape[3];
    const auto cb = c - ca;
    Tensor<T> da({ n, ca, h, w }), db({ n, cb, h, w });
    for (std::int64_t i = 0; i < n; ++i) {
        std::copy(dy.data.begin() + i * c * h * w, dy.data.begin() + (i * c + ca) * h * w,
            da.data.begin() + i * ca * h * w);
        std::copy(dy.data.begin() + (i * c + ca) * h * w, dy.data.begin() + (i + 1) * c * h * w,
            db.data.begin() + i * cb * h * w);
    }
    return { std::move(da), std::move(db) };
}

// ---------------------------------------------------------------------------
// Adam

template <typename T>
struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t t = 0;
    std::vector<Tensor<T>> m, v;
    std::vector<Param<T>*> params;

    void attach(const std::vector<Param<T>*>& trainable, double lr_)
    {
        params = trainable;
        lr = lr_;
        m.clear();
        v.clear();
        for (auto* p : params) {
            m.emplace_back(p->value.shape);
            v.emplace_back(p->value.shape);
        }
        t = 0;
    }

    void zero_grad()
    {
        for (auto* p : params)
            p->grad.zero();
    }

    void step()
    {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, double(t));
        const double bc2 = 1.0 - std::pow(beta2, double(t));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = *params[i];
            if (!p.trainable)
                continue;
            for (std::size_t j = 0; j < p.value.data.size(); ++j) {
                const double g = double(p.grad.data[j]);
                const double mj = beta1 * double(m[i].data[j]) + (1.0 - beta1) * g;
                const double vj = beta2 * double(v[i].data[j]) + (1.0 - beta2) * g * g;
                m[i].data[j] = static_cast<T>(mj);
                v[i].data[j] = static_cast<T>(vj);
                p.value.data[j] -= static_cast<T>(lr * (mj / bc1) / (std::sqrt(vj / bc2) + eps));
            }
        }
    }
};

} // namespace cartseg::nn
