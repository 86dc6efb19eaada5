#include <catch2/catch_amalgamated.hpp>

#include "cartseg/losses.hpp"
#include "cartseg/unet.hpp"

using namespace cartseg;

namespace {

// analytic parameter count, assembled layer by layer in the test itself
std::int64_t analytic_param_count(const UNetConfig& cfg)
{
    auto conv = [](std::int64_t cin, std::int64_t cout, std::int64_t k) { return k * k * cin * cout + cout; };
    auto bn = [&](std::int64_t c) { return cfg.batch_norm ? 2 * c : 0; };
    std::int64_t total = 0;
    std::int64_t prev = cfg.in_channels;
    std::vector<std::int64_t> ch;
    for (std::size_t l = 0; l < cfg.encoder_channels.size(); ++l)
        ch.push_back(cfg.channels_at(l));
    for (auto c : ch) {
        total += conv(prev, c, 3) + bn(c) + conv(c, c, 3) + bn(c);
        prev = c;
    }
    const std::int64_t cb = cfg.bottleneck();
    total += conv(prev, cb, 3) + bn(cb) + conv(cb, cb, 3) + bn(cb);
    std::int64_t above = cb;
    for (auto it = ch.rbegin(); it != ch.rend(); ++it) {
        const std::int64_t c = *it;
        total += 2 * 2 * above * c + c; // transposed conv
        total += conv(2 * c, c, 3) + bn(c) + conv(c, c, 3) + bn(c);
        above = c;
    }
    total += conv(ch.front(), 1, 1); // head
    return total;
}

// encoder-only analytic count (conv + norm parameters of the encoder levels)
std::int64_t analytic_encoder_count(const UNetConfig& cfg)
{
    auto conv = [](std::int64_t cin, std::int64_t cout) { return 9 * cin * cout + cout; };
    auto bn = [&](std::int64_t c) { return cfg.batch_norm ? 2 * c : 0; };
    std::int64_t total = 0, prev = cfg.in_channels;
    for (std::size_t l = 0; l < cfg.encoder_channels.size(); ++l) {
        const std::int64_t c = cfg.channels_at(l);
        total += conv(prev, c) + bn(c) + conv(c, c) + bn(c);
        prev = c;
    }
    return total;
}

UNetConfig tiny_config()
{
    UNetConfig cfg;
    cfg.encoder_channels = { 2, 4 };
    cfg.bottleneck_channels = 8;
    cfg.dropout_rate = 0.0;
    return cfg;
}

nn::Tensor<float> random_input(std::int64_t n, std::int64_t h, std::int64_t w, std::uint64_t seed)
{
    nn::Tensor<float> x({ n, 1, h, w });
    Rng rng(seed, "input");
    for (auto& v : x.data)
        v = float(rng.uniform(0.0, 1.0));
    return x;
}

} // namespace

TEST_CASE("default architecture parameter count equals the analytic per-layer sum")
{
    UNetConfig cfg; // 64/128/256/512, bottleneck 1024
    CHECK(declared_parameter_count(cfg) == analytic_param_count(cfg));

    UNetConfig desk = cfg;
    desk.depth_scale = 8;
    CHECK(declared_parameter_count(desk) == analytic_param_count(desk));

    UNetConfig tiny = tiny_config();
    UNet<float> net(tiny, 1);
    CHECK(net.parameter_count() == analytic_param_count(tiny));

    // model parameter registry matches the declared table exactly, in order
    const auto declared = declared_parameters(tiny);
    REQUIRE(net.parameters().size() == declared.size());
    for (std::size_t i = 0; i < declared.size(); ++i) {
        CHECK(net.parameters()[i]->name == declared[i].name);
        CHECK(net.parameters()[i]->value.shape == declared[i].shape);
    }
}

TEST_CASE("forward preserves spatial dims and validates divisibility")
{
    UNetConfig cfg;
    cfg.depth_scale = 16;
    UNet<float> net(cfg, 3);

    for (auto [h, w] : std::vector<std::pair<std::int64_t, std::int64_t>> { { 192, 192 }, { 64, 64 }, { 96, 48 } }) {
        auto x = random_input(1, h, w, 7);
        auto y = net.forward(x, false);
        REQUIRE(y.shape == std::vector<std::int64_t> { 1, 1, h, w });
    }

    nn::Tensor<float> bad({ 1, 1, 100, 100 });
    CHECK_THROWS_WITH(net.forward(bad, false), Catch::Matchers::ContainsSubstring("divisible by 16"));

    // architecture arithmetic: pools halve, transposed convs double, head matches input
    auto shapes = net.trace_shapes(192, 192);
    CHECK(shapes.front().h == 192);
    CHECK(shapes[cfg.encoder_channels.size()].name == "bottleneck");
    CHECK(shapes[cfg.encoder_channels.size()].h == 192 / 16);
    CHECK(shapes.back().name == "head");
    CHECK(shapes.back().h == 192);
    CHECK(shapes.back().w == 192);
}

TEST_CASE("build and inference determinism")
{
    UNetConfig cfg = tiny_config();
    UNet<float> a(cfg, 42), b(cfg, 42), c(cfg, 43);
    REQUIRE(a.parameters().size() == b.parameters().size());
    for (std::size_t i = 0; i < a.parameters().size(); ++i)
        REQUIRE(a.parameters()[i]->value.data == b.parameters()[i]->value.data);
    bool differ = false;
    for (std::size_t i = 0; i < a.parameters().size() && !differ; ++i)
        differ = a.parameters()[i]->value.data != c.parameters()[i]->value.data;
    CHECK(differ);

    auto x = random_input(2, 16, 16, 9);
    auto y1 = a.forward(x, false);
    auto y2 = a.forward(x, false);
    CHECK(y1.data == y2.data); // inference is bit-deterministic
}

TEST_CASE("checkpoint round trip preserves behavior")
{
    UNetConfig cfg = tiny_config();
    UNet<float> net(cfg, 11);
    auto x = random_input(1, 16, 16, 13);
    auto y = net.forward(x, false);

    auto cp = net.to_checkpoint({ "dess_like", 5, 0.9, 11 });
    auto net2 = UNet<float>::from_checkpoint(cp);
    auto y2 = net2.forward(x, false);
    CHECK(y.data == y2.data);

    UNetConfig other = cfg;
    other.encoder_channels = { 2, 5 };
    UNet<float> wrong(other, 1);
    CHECK_THROWS_AS(wrong.load_weights(cp), DataError);
}

TEST_CASE("freeze_encoder")
{
    UNetConfig cfg = tiny_config();
    cfg.dropout_rate = 0.1;
    UNet<float> net(cfg, 21);
    const auto total = net.parameter_count();

    net.freeze_encoder();
    CHECK(net.trainable_parameter_count() == total - analytic_encoder_count(cfg));
    net.freeze_encoder(); // idempotent
    CHECK(net.trainable_parameter_count() == total - analytic_encoder_count(cfg));

    // snapshot encoder params and buffers
    auto cp_before = net.to_checkpoint({ "x", 0, 0, 21 });

    nn::Adam<float> opt;
    opt.attach(net.trainable_parameters(), 1e-2);
    Rng drop(3, "dropout");
    for (int step = 0; step < 3; ++step) {
        auto x = random_input(2, 16, 16, 31 + std::uint64_t(step));
        std::vector<std::uint8_t> target(x.data.size());
        Rng trng(5 + std::uint64_t(step), "t");
        for (auto& t : target)
            t = trng.bernoulli(0.3);
        opt.zero_grad();
        auto logits = net.forward(x, true, &drop);
        nn::Tensor<float> grad;
        batch_loss(LossKind::bce_with_logits, logits, target, {}, &grad);
        net.backward(grad);

        // gradient flow: encoder gets none, bottleneck/decoder/head get some
        for (auto* p : net.parameters()) {
            const bool enc = p->name.rfind("enc", 0) == 0;
            bool any_nonzero = false;
            for (auto g : p->grad.data)
                any_nonzero |= g != 0.0f;
            if (enc)
                REQUIRE_FALSE(p->trainable);
            else
                REQUIRE(any_nonzero);
        }
        opt.step();
    }

    auto cp_after = net.to_checkpoint({ "x", 0, 0, 21 });
    std::int64_t changed_bottleneck = 0, changed_decoder = 0;
    for (const auto& [name, t] : cp_after.params) {
        if (name.rfind("enc", 0) == 0) {
            REQUIRE(t.data == cp_before.params.at(name).data); // bit-identical
        } else if (name.rfind("bottleneck", 0) == 0) {
            changed_bottleneck += t.data != cp_before.params.at(name).data;
        } else if (name.rfind("dec", 0) == 0) {
            changed_decoder += t.data != cp_before.params.at(name).data;
        }
    }
    CHECK(changed_bottleneck > 0);
    CHECK(changed_decoder > 0);
    for (const auto& [name, t] : cp_after.buffers)
        if (name.rfind("enc", 0) == 0)
            REQUIRE(t.data == cp_before.buffers.at(name).data); // running stats frozen too
}

TEST_CASE("network gradients match finite differences (double precision)")
{
    UNetConfig cfg = tiny_config();
    UNet<double> net(cfg, 5);

    auto make_x = [] {
        nn::Tensor<double> x({ 2, 1, 8, 8 });
        Rng rng(17, "gx");
        for (auto& v : x.data)
            v = rng.uniform(-1.0, 1.0);
        return x;
    };
    // linear probe loss L = sum(c .* logits) has exact analytic dL/dlogits = c
    nn::Tensor<double> probe({ 2, 1, 8, 8 });
    Rng prng(19, "probe");
    for (auto& v : probe.data)
        v = prng.uniform(-1.0, 1.0);

    auto loss_of = [&]() {
        auto x = make_x();
        auto y = net.forward(x, true, nullptr); // batch-stats BN path, no dropout
        double acc = 0;
        for (std::size_t i = 0; i < y.data.size(); ++i)
            acc += probe.data[i] * y.data[i];
        return acc;
    };

    // analytic gradients
    for (auto* p : net.parameters())
        p->grad.zero();
    {
        auto x = make_x();
        auto y = net.forward(x, true, nullptr);
        net.backward(probe);
    }

    // finite differences on a deterministic sample of parameters
    Rng pick(23, "pick");
    int checked = 0;
    for (auto* p : net.parameters()) {
        const auto idx = std::size_t(pick.uniform_int(0, std::int64_t(p->value.data.size()) - 1));
        const double h = 1e-5 * std::max(1.0, std::abs(p->value.data[idx]));
        const double saved = p->value.data[idx];
        p->value.data[idx] = saved + h;
        const double lp = loss_of();
        p->value.data[idx] = saved - h;
        const double lm = loss_of();
        p->value.data[idx] = saved;
        const double fd = (lp - lm) / (2 * h);
        const double an = p->grad.data[idx];
        // conv biases directly under batch norm have a true-zero gradient;
        // an absolute floor above the FD noise level covers that case
        const double denom = std::max({ std::abs(fd), std::abs(an), 1e-6 });
        INFO(p->name << "[" << idx << "]: analytic " << an << " vs fd " << fd);
        REQUIRE((std::abs(an - fd) / denom < 1e-4 || std::abs(an - fd) < 1e-7));
        ++checked;
    }
    CHECK(checked == int(net.parameters().size()));
}

TEST_CASE("mixed precision emulation stays close to the standard path")
{
    UNetConfig cfg = tiny_config();
    UNet<float> a(cfg, 33), b(cfg, 33);
    b.set_mixed_precision(true);
    auto x = random_input(2, 16, 16, 35);

    auto ya = a.forward(x, true, nullptr);
    auto yb = b.forward(x, true, nullptr);
    double max_diff = 0, max_abs = 0;
    for (std::size_t i = 0; i < ya.data.size(); ++i) {
        max_diff = std::max(max_diff, std::abs(double(ya.data[i]) - double(yb.data[i])));
        max_abs = std::max(max_abs, std::abs(double(ya.data[i])));
    }
    CHECK(max_diff < 0.01 * std::max(1.0, max_abs));
    CHECK(max_diff > 0.0); // the rounding is real
}

TEST_CASE("half-precision round trip helper")
{
    CHECK(round_to_half(0.0f) == 0.0f);
    CHECK(round_to_half(1.0f) == 1.0f);
    CHECK(round_to_half(-2.5f) == -2.5f);
    CHECK(round_to_half(65504.0f) == 65504.0f); // fp16 max
    CHECK(std::isinf(round_to_half(1e6f)));
    CHECK(std::abs(round_to_half(0.1f) - 0.1f) < 1e-4f);
    CHECK(round_to_half(1.0009765625f) == 1.0009765625f); // 1 + 2^-10, exactly representable
}
