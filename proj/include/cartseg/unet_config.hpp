#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cartseg/common.hpp"

namespace cartseg {

// Encoder-decoder with same-padded 3x3 convolutions, 2x2 max pooling, 2x2
// transposed-convolution upsampling with channel-concat skips, batch
// normalization after every convolution, dropout after every ReLU in the
// bottleneck and decoder, and a 1x1 single-channel head.
struct UNetConfig {
    int in_channels = 1;
    std::vector<int> encoder_channels { 64, 128, 256, 512 };
    int bottleneck_channels = 1024;
    double dropout_rate = 0.228;
    bool batch_norm = true;
    int depth_scale = 1; // divides all channel counts for desk-scale runs

    void validate() const
    {
        if (in_channels < 1)
            throw ConfigError("unet: in_channels must be >= 1");
        if (encoder_channels.empty())
            throw ConfigError("unet: encoder_channels must be non-empty");
        for (std::size_t i = 1; i < encoder_channels.size(); ++i)
            if (encoder_channels[i] <= encoder_channels[i - 1])
                throw ConfigError("unet: encoder_channels must be strictly increasing");
        if (encoder_channels.front() < 1)
            throw ConfigError("unet: channel counts must be positive");
        if (bottleneck_channels <= encoder_channels.back())
            throw ConfigError("unet: bottleneck must widen beyond the last encoder level");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
            throw ConfigError("unet: dropout_rate must be in [0, 1)");
        if (depth_scale < 1)
            throw ConfigError("unet: depth_scale must be >= 1");
    }

    int channels_at(std::size_t level) const
    {
        return std::max(1, encoder_channels[level] / depth_scale);
    }
    int bottleneck() const { return std::max(1, bottleneck_channels / depth_scale); }
    int levels() const { return static_cast<int>(encoder_channels.size()); }
    int pool_multiple() const { return 1 << levels(); } // input dims must divide this
};

inline void to_json(nlohmann::json& j, const UNetConfig& c)
{
    j = nlohmann::json { { "in_channels", c.in_channels },
        { "encoder_channels", c.encoder_channels },
        { "bottleneck_channels", c.bottleneck_channels },
        { "dropout_rate", c.dropout_rate }, { "batch_norm", c.batch_norm },
        { "depth_scale", c.depth_scale } };
}

inline void from_json(const nlohmann::json& j, UNetConfig& c)
{
    j.at("in_channels").get_to(c.in_channels);
    j.at("encoder_channels").get_to(c.encoder_channels);
    j.at("bottleneck_channels").get_to(c.bottleneck_channels);
    j.at("dropout_rate").get_to(c.dropout_rate);
    j.at("batch_norm").get_to(c.batch_norm);
    j.at("depth_scale").get_to(c.depth_scale);
    c.validate();
}

struct ParamSpec {
    std::string name;
    std::vector<std::int64_t> shape;

    std::int64_t numel() const
    {
        std::int64_t n = 1;
        for (auto d : shape)
            n *= d;
        return n;
    }
};

// The declared parameter set of an architecture; checkpoints must match it
// exactly in both directions.
inline std::vector<ParamSpec> declared_parameters(const UNetConfig& cfg)
{
    cfg.validate();
    std::vector<ParamSpec> out;
    // conv block i of `block`: 3x3 conv (+ optional batch norm), bias always on
    auto conv_block = [&out, &cfg](const std::string& block, int idx, int cin, int cout) {
        const std::string s = std::to_string(idx);
        out.push_back({ block + ".conv" + s + ".weight", { cout, cin, 3, 3 } });
        out.push_back({ block + ".conv" + s + ".bias", { cout } });
        if (cfg.batch_norm) {
            out.push_back({ block + ".bn" + s + ".weight", { cout } });
            out.push_back({ block + ".bn" + s + ".bias", { cout } });
        }
    };

    int prev = cfg.in_channels;
    for (int l = 0; l < cfg.levels(); ++l) {
        const int c = cfg.channels_at(static_cast<std::size_t>(l));
        const std::string p = "enc" + std::to_string(l + 1);
        conv_block(p, 1, prev, c);
        conv_block(p, 2, c, c);
        prev = c;
    }
    const int cb = cfg.bottleneck();
    conv_block("bottleneck", 1, prev, cb);
    conv_block("bottleneck", 2, cb, cb);

    int above = cb;
    for (int l = cfg.levels() - 1; l >= 0; --l) {
        const int c = cfg.channels_at(static_cast<std::size_t>(l));
        const std::string p = "dec" + std::to_string(l + 1);
        out.push_back({ p + ".up.weight", { above, c, 2, 2 } });
        out.push_back({ p + ".up.bias", { c } });
        conv_block(p, 1, 2 * c, c);
        conv_block(p, 2, c, c);
        above = c;
    }
    out.push_back({ "head.weight", { 1, cfg.channels_at(0), 1, 1 } });
    out.push_back({ "head.bias", { 1 } });
    return out;
}

// Batch-norm running statistics travel with checkpoints but are not counted
// as learnable parameters.
inline std::vector<ParamSpec> declared_buffers(const UNetConfig& cfg)
{
    std::vector<ParamSpec> out;
    if (!cfg.batch_norm)
        return out;
    auto bn = [&out](const std::string& prefix, int c) {
        out.push_back({ prefix + ".running_mean", { c } });
        out.push_back({ prefix + ".running_var", { c } });
    };
    for (int l = 0; l < cfg.levels(); ++l) {
        const int c = cfg.channels_at(static_cast<std::size_t>(l));
        bn("enc" + std::to_string(l + 1) + ".bn1", c);
        bn("enc" + std::to_string(l + 1) + ".bn2", c);
    }
    bn("bottleneck.bn1", cfg.bottleneck());
    bn("bottleneck.bn2", cfg.bottleneck());
    for (int l = cfg.levels() - 1; l >= 0; --l) {
        const int c = cfg.channels_at(static_cast<std::size_t>(l));
        bn("dec" + std::to_string(l + 1) + ".bn1", c);
        bn("dec" + std::to_string(l + 1) + ".bn2", c);
    }
    return out;
}

inline std::int64_t declared_parameter_count(const UNetConfig& cfg)
{
    std::int64_t n = 0;
    for (const auto& p : declared_parameters(cfg))
        n += p.numel();
    return n;
}

} // namespace cartseg
