#pragma once

#include <cmath>
#include <type_traits>
#include <cstdint>
#include <string>

#include "cartseg/tensor.hpp"

namespace cartseg {

enum class LossKind { bce_with_logits, dice, generalized_dice, focal };

inline std::string to_string(LossKind k)
{
    switch (k) {
    case LossKind::bce_with_logits: return "bce_with_logits";
    case LossKind::dice: return "dice";
    case LossKind::generalized_dice: return "generalized_dice";
    case LossKind::focal: return "focal";
    }
    return "?";
}

inline LossKind loss_from_string(const std::string& s)
{
    if (s == "bce_with_logits") return LossKind::bce_with_logits;
    if (s == "dice") return LossKind::dice;
    if (s == "generalized_dice") return LossKind::generalized_dice;
    if (s == "focal") return LossKind::focal;
    throw ConfigError("unknown loss '" + s + "'");
}

struct LossParams {
    double epsilon = 1.0; // overlap-loss smoothing, on the pixel-count scale
    double focal_gamma = 2.0;
    double focal_alpha = 0.25;
};

namespace detail {

    template <typename T>
    T softplus(T x) // log(1 + e^x), overflow-safe
    {
        return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
    }

    template <typename T>
    T sigmoid(T x)
    {
        return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
    }

} // namespace detail

// Loss over one 2D grid of logits against a binary target; the mean-over-pixel
// gradient w.r.t. logits lands in `grad` when non-null. All four losses are
// non-negative and differentiable everywhere they are evaluated.
template <typename T>
T loss_and_grad(LossKind kind, const T* logits, const std::uint8_t* target, std::int64_t n,
    const LossParams& params, std::type_identity_t<T>* grad)
{
    using detail::sigmoid;
    using detail::softplus;
    const T invn = T(1) / static_cast<T>(n);

    switch (kind) {
    case LossKind::bce_with_logits: {
        // softplus form: max(z,0) - z*g + log1p(exp(-|z|)); never sigmoid-then-log
        T total {};
        for (std::int64_t i = 0; i < n; ++i) {
            const T z = logits[i];
            const T g = static_cast<T>(target[i]);
            total += std::max(z, T(0)) - z * g + std::log1p(std::exp(-std::abs(z)));
            if (grad)
                grad[i] = (sigmoid(z) - g) * invn;
        }
        return total * invn;
    }
    case LossKind::dice: {
        const T eps = static_cast<T>(params.epsilon);
        T inter {}, sum_p {}, sum_g {};
        for (std::int64_t i = 0; i < n; ++i) {
            const T p = sigmoid(logits[i]);
            inter += p * static_cast<T>(target[i]);
            sum_p += p;
            sum_g += static_cast<T>(target[i]);
        }
        const T denom = sum_p + sum_g + eps;
        const T loss = T(1) - (T(2) * inter + eps) / denom;
        if (grad)
            for (std::int64_t i = 0; i < n; ++i) {
                const T p = sigmoid(logits[i]);
                const T g = static_cast<T>(target[i]);
                const T dldp = -(T(2) * g * denom - (T(2) * inter + eps)) / (denom * denom);
                grad[i] = dldp * p * (T(1) - p);
            }
        return loss;
    }
    case LossKind::generalized_dice: {
        // two classes (foreground/background) weighted by 1/(class volume)^2;
        // epsilon inside the weight keeps empty classes finite
        const T eps = static_cast<T>(params.epsilon);
        T sum_p {}, sum_g {}, inter_f {}, inter_b {};
        for (std::int64_t i = 0; i < n; ++i) {
            const T p = sigmoid(logits[i]);
            const T g = static_cast<T>(target[i]);
            sum_p += p;
            sum_g += g;
            inter_f += p * g;
            inter_b += (T(1) - p) * (T(1) - g);
        }
        const T nf = sum_g, nb = static_cast<T>(n) - sum_g;
        const T wf = T(1) / (nf * nf + eps);
        const T wb = T(1) / (nb * nb + eps);
        const T num = wf * inter_f + wb * inter_b;
        const T den = wf * (sum_p + sum_g) + wb * (T(2) * static_cast<T>(n) - sum_p - sum_g);
        const T loss = T(1) - (T(2) * num + eps) / (den + eps);
        if (grad)
            for (std::int64_t i = 0; i < n; ++i) {
                const T p = sigmoid(logits[i]);
                const T g = static_cast<T>(target[i]);
                const T dnum = wf * g - wb * (T(1) - g);
                const T dden = wf - wb;
                const T dldp = -(T(2) * dnum * (den + eps) - (T(2) * num + eps) * dden)
                    / ((den + eps) * (den + eps));
                grad[i] = dldp * p * (T(1) - p);
            }
        return loss;
    }
    case LossKind::focal: {
        const T gamma = static_cast<T>(params.focal_gamma);
        const T alpha = static_cast<T>(params.focal_alpha);
        T total {};
        for (std::int64_t i = 0; i < n; ++i) {
            const T z = logits[i];
            const T g = static_cast<T>(target[i]);
            // log p_t computed without forming sigma(z) first
            const T log_pt = g > T(0.5) ? -softplus(-z) : -softplus(z);
            const T pt = std::exp(log_pt);
            const T one_minus_pt = -std::expm1(log_pt); // accurate 1 - p_t
            const T at = g > T(0.5) ? alpha : T(1) - alpha;
            total += -at * std::pow(one_minus_pt, gamma) * log_pt;
            if (grad) {
                const T sign = T(2) * g - T(1);
                grad[i] = at * sign
                    * (gamma * std::pow(one_minus_pt, gamma) * pt * log_pt
                        - std::pow(one_minus_pt, gamma + T(1)))
                    * invn;
            }
        }
        return total * invn;
    }
    }
    throw ConfigError("unreachable loss kind");
}

// batch mean of per-sample losses; logits [n, 1, h, w], targets in the same layout
template <typename T>
T batch_loss(LossKind kind, const Tensor<T>& logits, const std::vector<std::uint8_t>& targets,
    const LossParams& params, Tensor<T>* grad)
{
    const auto n = logits.shape[0];
    const auto px = logits.shape[2] * logits.shape[3];
    if (static_cast<std::int64_t>(targets.size()) != n * px)
        throw DataError("batch_loss: logits/target dimension mismatch");
    if (grad)
        grad->resize(logits.shape);
    T total {};
    for (std::int64_t i = 0; i < n; ++i)
        total += loss_and_grad(kind, logits.data.data() + i * px, targets.data() + i * px, px,
            params, grad ? grad->data.data() + i * px : nullptr);
    if (grad) {
        const T scale = T(1) / static_cast<T>(n);
        for (auto& g : grad->data)
            g *= scale;
    }
    return total / static_cast<T>(n);
}

} // namespace cartseg
