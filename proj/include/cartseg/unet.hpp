#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cartseg/checkpoint.hpp"
#include "cartseg/layers.hpp"
#include "cartseg/unet_config.hpp"

namespace cartseg {

// conv -> batch norm -> ReLU -> optional dropout
template <typename T>
struct ConvBlock {
    nn::Conv2d<T> conv;
    nn::BatchNorm2d<T> bn;
    nn::ReLU<T> relu;
    nn::Dropout<T> dropout;
    bool use_bn = true;

    void init(const std::string& block, int idx, int cin, int cout, bool batch_norm,
        double dropout_rate, Rng& rng)
    {
        const std::string s = std::to_string(idx);
        conv.init(block + ".conv" + s, cin, cout, 3, rng);
        use_bn = batch_norm;
        if (use_bn)
            bn.init(block + ".bn" + s, cout);
        dropout.rate = dropout_rate;
    }

    nn::Tensor<T> forward(const nn::Tensor<T>& x, bool training, Rng* rng)
    {
        auto y = conv.forward(x, training);
        if (use_bn)
            y = bn.forward(y, training);
        y = relu.forward(y);
        return dropout.forward(y, training, rng);
    }

    nn::Tensor<T> backward(const nn::Tensor<T>& dy, bool want_dx = true)
    {
        auto d = dropout.backward(dy);
        d = relu.backward(d);
        if (use_bn)
            d = bn.backward(d);
        return conv.backward(d, want_dx);
    }

    void collect(std::vector<nn::Param<T>*>& params, std::vector<nn::Buffer<T>*>& buffers)
    {
        params.push_back(&conv.weight);
        params.push_back(&conv.bias);
        if (use_bn) {
            params.push_back(&bn.gamma);
            params.push_back(&bn.beta);
            buffers.push_back(&bn.running_mean);
            buffers.push_back(&bn.running_var);
        }
    }
};

// The segmentation network: encoder levels of two conv blocks with 2x2 max
// pooling, a two-block bottleneck, transposed-conv upsampling with channel
// concat skips, two conv blocks per decoder level (dropout after every ReLU
// in bottleneck and decoder), and a 1x1 single-logit head. All convolutions
// are same-padded, so logits keep the input's spatial dims.
template <typename T>
class UNet {
public:
    UNet(const UNetConfig& cfg, std::uint64_t seed)
        : cfg_(cfg)
    {
        cfg.validate();
        Rng rng(seed, "unet_init");
        const int levels = cfg.levels();
        enc_.resize(static_cast<std::size_t>(levels));
        dec_.resize(static_cast<std::size_t>(levels));
        int prev = cfg.in_channels;
        for (int l = 0; l < levels; ++l) {
            const int c = cfg.channels_at(static_cast<std::size_t>(l));
            const std::string p = "enc" + std::to_string(l + 1);
            enc_[std::size_t(l)].conv1.init(p, 1, prev, c, cfg.batch_norm, 0.0, rng);
            enc_[std::size_t(l)].conv2.init(p, 2, c, c, cfg.batch_norm, 0.0, rng);
            prev = c;
        }
        const int cb = cfg.bottleneck();
        bott1_.init("bottleneck", 1, prev, cb, cfg.batch_norm, cfg.dropout_rate, rng);
        bott2_.init("bottleneck", 2, cb, cb, cfg.batch_norm, cfg.dropout_rate, rng);
        int above = cb;
        for (int l = levels - 1; l >= 0; --l) {
            const int c = cfg.channels_at(static_cast<std::size_t>(l));
            const std::string p = "dec" + std::to_string(l + 1);
            dec_[std::size_t(l)].up.init(p + ".up", above, c, rng);
            dec_[std::size_t(l)].conv1.init(p, 1, 2 * c, c, cfg.batch_norm, cfg.dropout_rate, rng);
            dec_[std::size_t(l)].conv2.init(p, 2, c, c, cfg.batch_norm, cfg.dropout_rate, rng);
            above = c;
        }
        head_.init("head", cfg.channels_at(0), 1, 1, rng);

        collect_();
    }

    // params_ points into this object's layers, so copies and moves re-collect
    UNet(const UNet& o)
        : cfg_(o.cfg_)
        , enc_(o.enc_)
        , bott1_(o.bott1_)
        , bott2_(o.bott2_)
        , dec_(o.dec_)
        , head_(o.head_)
        , encoder_frozen_(o.encoder_frozen_)
        , mixed_precision_(o.mixed_precision_)
    {
        collect_();
    }
    UNet(UNet&& o) noexcept
        : cfg_(std::move(o.cfg_))
        , enc_(std::move(o.enc_))
        , bott1_(std::move(o.bott1_))
        , bott2_(std::move(o.bott2_))
        , dec_(std::move(o.dec_))
        , head_(std::move(o.head_))
        , encoder_frozen_(o.encoder_frozen_)
        , mixed_precision_(o.mixed_precision_)
    {
        collect_();
    }
    UNet& operator=(const UNet& o)
    {
        if (this != &o) {
            cfg_ = o.cfg_;
            enc_ = o.enc_;
            bott1_ = o.bott1_;
            bott2_ = o.bott2_;
            dec_ = o.dec_;
            head_ = o.head_;
            encoder_frozen_ = o.encoder_frozen_;
            mixed_precision_ = o.mixed_precision_;
            collect_();
        }
        return *this;
    }
    UNet& operator=(UNet&& o) noexcept
    {
        cfg_ = std::move(o.cfg_);
        enc_ = std::move(o.enc_);
        bott1_ = std::move(o.bott1_);
        bott2_ = std::move(o.bott2_);
        dec_ = std::move(o.dec_);
        head_ = std::move(o.head_);
        encoder_frozen_ = o.encoder_frozen_;
        mixed_precision_ = o.mixed_precision_;
        collect_();
        return *this;
    }

    const UNetConfig& config() const { return cfg_; }

    int required_multiple() const { return cfg_.pool_multiple(); }

    void check_dims(std::int64_t h, std::int64_t w) const
    {
        const int mult = required_multiple();
        if (h % mult != 0 || w % mult != 0)
            throw DataError("unet: input dims " + std::to_string(h) + "x" + std::to_string(w)
                + " must be divisible by " + std::to_string(mult));
    }

    // x: [n, in_channels, h, w] -> logits [n, 1, h, w]
    nn::Tensor<T> forward(const nn::Tensor<T>& x, bool training, Rng* dropout_rng = nullptr)
    {
        check_dims(x.shape[2], x.shape[3]);
        const bool mixed = mixed_precision_ && training;
        auto maybe_round = [&](nn::Tensor<T>& t) {
            if (mixed)
                round_tensor_to_half(t);
        };

        nn::Tensor<T> y = x;
        for (auto& level : enc_) {
            y = level.conv1.forward(y, training, nullptr);
            y = level.conv2.forward(y, training, nullptr);
            maybe_round(y);
            level.skip = y;
            y = level.pool.forward(y);
        }
        y = bott1_.forward(y, training, dropout_rng);
        y = bott2_.forward(y, training, dropout_rng);
        maybe_round(y);
        for (int l = cfg_.levels() - 1; l >= 0; --l) {
            auto& level = dec_[std::size_t(l)];
            auto u = level.up.forward(y, training);
            y = nn::concat_channels(enc_[std::size_t(l)].skip, u);
            y = level.conv1.forward(y, training, dropout_rng);
            y = level.conv2.forward(y, training, dropout_rng);
            maybe_round(y);
        }
        return head_.forward(y, training);
    }

    // gradients accumulate into each parameter's grad tensor
    void backward(const nn::Tensor<T>& dlogits)
    {
        const bool mixed = mixed_precision_;
        auto maybe_round = [&](nn::Tensor<T>& t) {
            if (mixed)
                round_tensor_to_half(t);
        };

        auto dy = head_.backward(dlogits, true);
        std::vector<nn::Tensor<T>> dskip(enc_.size());
        for (int l = 0; l < cfg_.levels(); ++l) {
            auto& level = dec_[std::size_t(l)];
            auto d = level.conv2.backward(dy, true);
            d = level.conv1.backward(d, true);
            maybe_round(d);
            const auto c = std::int64_t(cfg_.channels_at(std::size_t(l)));
            auto [dsk, dup] = nn::split_channels(d, c);
            dskip[std::size_t(l)] = std::move(dsk);
            dy = level.up.backward(dup, true);
        }
        dy = bott2_.backward(dy, true);
        dy = bott1_.backward(dy, !encoder_frozen_);
        if (encoder_frozen_)
            return; // nothing upstream needs gradients
        maybe_round(dy);
        for (int l = cfg_.levels() - 1; l >= 0; --l) {
            auto& level = enc_[std::size_t(l)];
            auto d = level.pool.backward(dy);
            for (std::size_t i = 0; i < d.data.size(); ++i) // skip path joins here
                d.data[i] += dskip[std::size_t(l)].data[i];
            d = level.conv2.backward(d, true);
            dy = level.conv1.backward(d, l > 0);
            maybe_round(dy);
        }
    }

    // single 2D image in, logits out; inference is deterministic
    std::vector<T> forward_image(std::int64_t h, std::int64_t w, const float* image, bool training,
        Rng* dropout_rng = nullptr)
    {
        nn::Tensor<T> x({ 1, cfg_.in_channels, h, w });
        for (std::size_t i = 0; i < x.data.size(); ++i)
            x.data[i] = static_cast<T>(image[i]);
        auto y = forward(x, training, dropout_rng);
        return std::move(y.data);
    }

    // Freezes encoder weights, norm scale/shift, and norm running statistics.
    // Bottleneck, decoder, and head stay trainable. Idempotent.
    void freeze_encoder()
    {
        for (auto& level : enc_) {
            for (auto* p : { &level.conv1.conv.weight, &level.conv1.conv.bias,
                     &level.conv2.conv.weight, &level.conv2.conv.bias })
                p->trainable = false;
            if (cfg_.batch_norm) {
                level.conv1.bn.gamma.trainable = false;
                level.conv1.bn.beta.trainable = false;
                level.conv2.bn.gamma.trainable = false;
                level.conv2.bn.beta.trainable = false;
                level.conv1.bn.frozen = true;
                level.conv2.bn.frozen = true;
            }
        }
        encoder_frozen_ = true;
    }

    bool encoder_frozen() const { return encoder_frozen_; }

    void set_mixed_precision(bool on) { mixed_precision_ = on; }

    std::vector<nn::Param<T>*>& parameters() { return params_; }
    std::vector<nn::Buffer<T>*>& buffers() { return buffers_; }

    std::vector<nn::Param<T>*> trainable_parameters()
    {
        std::vector<nn::Param<T>*> out;
        for (auto* p : params_)
            if (p->trainable)
                out.push_back(p);
        return out;
    }

    std::int64_t parameter_count() const
    {
        std::int64_t n = 0;
        for (const auto* p : params_)
            n += p->value.numel();
        return n;
    }

    std::int64_t trainable_parameter_count()
    {
        std::int64_t n = 0;
        for (const auto* p : params_)
            if (p->trainable)
                n += p->value.numel();
        return n;
    }

    // spatial dims at every module boundary, from architecture arithmetic alone
    struct StageShape {
        std::string name;
        std::int64_t h, w;
    };
    std::vector<StageShape> trace_shapes(std::int64_t h, std::int64_t w) const
    {
        std::vector<StageShape> out;
        for (int l = 0; l < cfg_.levels(); ++l) {
            out.push_back({ "enc" + std::to_string(l + 1), h, w });
            h /= 2;
            w /= 2;
        }
        out.push_back({ "bottleneck", h, w });
        for (int l = cfg_.levels() - 1; l >= 0; --l) {
            h *= 2;
            w *= 2;
            out.push_back({ "dec" + std::to_string(l + 1), h, w });
        }
        out.push_back({ "head", h, w });
        return out;
    }

    ModelCheckpoint to_checkpoint(const CheckpointProvenance& provenance) const
    {
        ModelCheckpoint cp;
        cp.arch = cfg_;
        cp.provenance = provenance;
        for (const auto* p : params_) {
            TensorF t;
            t.shape = p->value.shape;
            t.data.resize(p->value.data.size());
            for (std::size_t i = 0; i < t.data.size(); ++i)
                t.data[i] = static_cast<float>(p->value.data[i]);
            cp.params.emplace(p->name, std::move(t));
        }
        for (const auto* b : buffers_) {
            TensorF t;
            t.shape = b->value.shape;
            t.data.resize(b->value.data.size());
            for (std::size_t i = 0; i < t.data.size(); ++i)
                t.data[i] = static_cast<float>(b->value.data[i]);
            cp.buffers.emplace(b->name, std::move(t));
        }
        cp.validate();
        return cp;
    }

    void load_weights(const ModelCheckpoint& cp)
    {
        if (nlohmann::json(cp.arch) != nlohmann::json(cfg_))
            throw DataError("unet: checkpoint architecture does not match this model's config");
        cp.validate();
        for (auto* p : params_) {
            const auto& src = cp.params.at(p->name);
            for (std::size_t i = 0; i < src.data.size(); ++i)
                p->value.data[i] = static_cast<T>(src.data[i]);
        }
        for (auto* b : buffers_) {
            const auto& src = cp.buffers.at(b->name);
            for (std::size_t i = 0; i < src.data.size(); ++i)
                b->value.data[i] = static_cast<T>(src.data[i]);
        }
    }

    static UNet from_checkpoint(const ModelCheckpoint& cp)
    {
        UNet net(cp.arch, cp.provenance.rng_seed);
        net.load_weights(cp);
        return net;
    }

    // encoder parameter + buffer names, for freeze-contract checks
    std::vector<std::string> encoder_entry_names() const
    {
        std::vector<std::string> names;
        for (const auto* p : params_)
            if (p->name.rfind("enc", 0) == 0)
                names.push_back(p->name);
        for (const auto* b : buffers_)
            if (b->name.rfind("enc", 0) == 0)
                names.push_back(b->name);
        return names;
    }

private:
    struct EncLevel {
        ConvBlock<T> conv1, conv2;
        nn::MaxPool2d<T> pool;
        nn::Tensor<T> skip;
    };
    struct DecLevel {
        nn::ConvTranspose2d<T> up;
        ConvBlock<T> conv1, conv2;
    };

    void collect_()
    {
        params_.clear();
        buffers_.clear();
        for (auto& level : enc_) {
            level.conv1.collect(params_, buffers_);
            level.conv2.collect(params_, buffers_);
        }
        bott1_.collect(params_, buffers_);
        bott2_.collect(params_, buffers_);
        for (int l = cfg_.levels() - 1; l >= 0; --l) {
            auto& level = dec_[std::size_t(l)];
            params_.push_back(&level.up.weight);
            params_.push_back(&level.up.bias);
            level.conv1.collect(params_, buffers_);
            level.conv2.collect(params_, buffers_);
        }
        params_.push_back(&head_.weight);
        params_.push_back(&head_.bias);
    }

    UNetConfig cfg_;
    std::vector<EncLevel> enc_;
    ConvBlock<T> bott1_, bott2_;
    std::vector<DecLevel> dec_;
    nn::Conv2d<T> head_;
    std::vector<nn::Param<T>*> params_;
    std::vector<nn::Buffer<T>*> buffers_;
    bool encoder_frozen_ = false;
    bool mixed_precision_ = false;
};

using UNetF = UNet<float>;
using UNetD = UNet<double>;

} // namespace cartseg
