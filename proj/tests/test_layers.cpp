// Building blocks: patch embedding, the two token mixers, channel mixers and
// normalization — hand cases, causality at the bit level, scan-form agreement
// against an independent reference, and the linear-vs-quadratic cost split.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "cim/bench.hpp"
#include "cim/layers.hpp"
#include "cim/oracles.hpp"
#include "helpers.hpp"

using namespace cim;
using test_util::tensor;

namespace {

template <class T>
std::vector<double> to_doubles(const BasicTensor<T>& t) {
    return std::vector<double>(t.values().begin(), t.values().end());
}

AttnParams<float> random_attn(int64_t d, int64_t heads, uint64_t seed) {
    SplitRng rng(seed);
    AttnParams<float> p;
    p.heads = heads;
    p.mask = MaskMode::causal;
    p.wq = Tensor::uniform({d, d}, rng, -0.3, 0.3);
    p.wk = Tensor::uniform({d, d}, rng, -0.3, 0.3);
    p.wv = Tensor::uniform({d, d}, rng, -0.3, 0.3);
    p.wo = Tensor::uniform({d, d}, rng, -0.3, 0.3);
    p.bq = Tensor::uniform({d}, rng, -0.1, 0.1);
    p.bk = Tensor::uniform({d}, rng, -0.1, 0.1);
    p.bv = Tensor::uniform({d}, rng, -0.1, 0.1);
    p.bo = Tensor::uniform({d}, rng, -0.1, 0.1);
    return p;
}

template <class T>
SsdParams<T> random_ssd(int64_t d, uint64_t seed) {
    SplitRng rng(seed);
    SsdParams<T> p;
    p.dims = SsdDims::make(d, 4, 4);
    p.in_w = BasicTensor<T>::uniform({d, p.dims.proj_width()}, rng, -0.3, 0.3);
    p.dt_bias = BasicTensor<T>::uniform({p.dims.n_heads}, rng, -1.0, 0.5);
    p.a_log = BasicTensor<T>::uniform({p.dims.n_heads}, rng, -1.0, 0.0);
    p.skip = BasicTensor<T>::uniform({p.dims.d_inner}, rng, -0.5, 0.5);
    p.out_w = BasicTensor<T>::uniform({p.dims.d_inner, d}, rng, -0.3, 0.3);
    return p;
}

}  // namespace

TEST_CASE("patchify: 224px at patch 16 yields 196 patch tokens") {
    Graph g;
    PatchEmbedParams<float> pe{16, Tensor::zeros({3 * 16 * 16, 8}), Tensor::zeros({8})};
    auto seq = patchify(g, Tensor::zeros({3, 224, 224}), pe);
    CHECK(seq.len() == 196);
    CHECK(seq.dim() == 8);
    CHECK(seq.count(Role::patch) == 196);
    for (float v : seq.data.values()) CHECK(v == 0.0f);  // zero image, zero bias
}

TEST_CASE("patchify: 448px at patch 8 yields 3136 patch tokens") {
    Graph g;
    PatchEmbedParams<float> pe{8, Tensor::zeros({3 * 8 * 8, 4}), Tensor::zeros({4})};
    auto seq = patchify(g, Tensor::zeros({3, 448, 448}), pe);
    CHECK(seq.len() == 3136);
}

TEST_CASE("patchify rejects images not divisible by the patch size") {
    Graph g;
    PatchEmbedParams<float> pe{16, Tensor::zeros({3 * 16 * 16, 4}), Tensor::zeros({4})};
    CHECK_THROWS_AS(patchify(g, Tensor::zeros({3, 30, 30}), pe), DimError);
}

TEST_CASE("attention on a single token reduces to the value and output projections") {
    const int64_t d = 4;
    auto p = random_attn(d, 2, 1);
    SplitRng rng(2);
    Graph g;
    TokenSeq seq{Tensor::uniform({1, d}, rng, -1, 1), {Role::cls}};
    auto out = causal_attention(g, seq, p);
    REQUIRE(out.data.shape() == Shape{1, d});
    // softmax over one visible position is 1, so only wv and wo act
    std::vector<double> v(d, 0.0), y(d, 0.0);
    for (int64_t j = 0; j < d; ++j) {
        v[j] = p.bv.values()[j];
        for (int64_t i = 0; i < d; ++i)
            v[j] += double(seq.data.values()[i]) * p.wv.values()[i * d + j];
    }
    for (int64_t j = 0; j < d; ++j) {
        y[j] = p.bo.values()[j];
        for (int64_t i = 0; i < d; ++i) y[j] += v[i] * p.wo.values()[i * d + j];
    }
    CHECK(test_util::rel_gap(out.data.values(), y) <= 1e-5);
}

TEST_CASE("causal attention is bitwise invariant to future-token edits") {
    const int64_t d = 8, L = 6, cut = 3;
    auto p = random_attn(d, 2, 3);
    SplitRng rng(4);
    auto base = Tensor::uniform({L, d}, rng, -1, 1);
    std::vector<float> edited(base.values().begin(), base.values().end());
    for (int64_t i = cut * d; i < L * d; ++i) edited[size_t(i)] += 0.7f;
    Graph g1, g2;
    auto y1 = causal_attention(g1, {base, patch_cls_roles(L - 1)}, p);
    auto y2 = causal_attention(g2, {tensor<float>({L, d}, edited), patch_cls_roles(L - 1)}, p);
    for (int64_t i = 0; i < cut * d; ++i)
        CHECK(y1.data.values()[size_t(i)] == y2.data.values()[size_t(i)]);

    // the full mask must leak the same edit into position 0
    p.mask = MaskMode::full;
    Graph g3, g4;
    auto z1 = causal_attention(g3, {base, patch_cls_roles(L - 1)}, p);
    auto z2 = causal_attention(g4, {tensor<float>({L, d}, edited), patch_cls_roles(L - 1)}, p);
    double gap0 = 0;
    for (int64_t j = 0; j < d; ++j)
        gap0 = std::max(gap0, std::abs(double(z1.data.at({0, j})) - double(z2.data.at({0, j}))));
    CHECK(gap0 > 0.0);
}

TEST_CASE("causal attention agrees with an explicitly masked reference") {
    const int64_t d = 8, L = 6;
    auto p = random_attn(d, 2, 5);
    SplitRng rng(6);
    auto x = Tensor::uniform({L, d}, rng, -1, 1);
    Graph g;
    auto y = causal_attention(g, {x, patch_cls_roles(L - 1)}, p);
    auto ref = oracle::masked_attention(L, d, 2, true, to_doubles(x), to_doubles(p.wq),
                                        to_doubles(p.bq), to_doubles(p.wk), to_doubles(p.bk),
                                        to_doubles(p.wv), to_doubles(p.bv), to_doubles(p.wo),
                                        to_doubles(p.bo));
    CHECK(test_util::max_abs_gap(y.data.values(), ref) <= 1e-5);
}

TEST_CASE("scan with fully decayed state is memoryless") {
    // exp(dt*a) underflows to zero, so y_t = dt_t*x_t + skip*x_t exactly
    Graph g;
    auto x = tensor<float>({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    auto dt = tensor<float>({4, 1}, {0.5f, 1.0f, 1.5f, 2.0f});
    auto b = Tensor::full({4, 1, 1}, 1.0f);
    auto c = Tensor::full({4, 1, 1}, 1.0f);
    auto a = tensor<float>({1}, {-1e9f});
    auto skip = tensor<float>({2}, {0.25f, 0.5f});
    auto y = ssd_scan_recurrent(g, x, dt, b, c, a, skip);
    for (int64_t t = 0; t < 4; ++t)
        for (int64_t ch = 0; ch < 2; ++ch) {
            double want = (double(dt.at({t, 0})) + double(skip.at({ch}))) * double(x.at({t, ch}));
            CHECK(y.at({t, ch}) == doctest::Approx(want).epsilon(1e-6));
        }
}

TEST_CASE("scan with unit decay forced degenerates to a prefix sum") {
    ScanHooks hooks;
    hooks.force_unit_decay = true;
    auto x = tensor<float>({6, 1}, {1, 2, 3, 4, 5, 6});
    auto dt = Tensor::full({6, 1}, 1.0f);
    auto b = Tensor::full({6, 1, 1}, 1.0f);
    auto c = Tensor::full({6, 1, 1}, 1.0f);
    auto a = tensor<float>({1}, {-1.0f});  // must stay valid; ignored under the hook
    auto skip = Tensor::zeros({1});
    const float want[6] = {1, 3, 6, 10, 15, 21};
    Graph g;
    auto yr = ssd_scan_recurrent(g, x, dt, b, c, a, skip, hooks);
    auto yc = ssd_scan_chunked(g, x, dt, b, c, a, skip, 2, hooks);
    for (int64_t t = 0; t < 6; ++t) {
        CHECK(yr.at({t, 0}) == want[t]);
        CHECK(yc.at({t, 0}) == want[t]);
    }
}

TEST_CASE("chunked scan matches the recurrent scan and a 64-bit reference loop") {
    const int64_t L = 64, di = 8, H = 2, N = 4;
    SplitRng rng(9);
    Graph g;
    auto x = Tensor::uniform({L, di}, rng, -1, 1);
    auto dt = Tensor::uniform({L, H}, rng, 0.05, 1.0);
    auto b = Tensor::uniform({L, H, N}, rng, -1, 1);
    auto c = Tensor::uniform({L, H, N}, rng, -1, 1);
    auto a = Tensor::uniform({H}, rng, -1.5, -0.2);
    auto skip = Tensor::uniform({di}, rng, -0.5, 0.5);
    auto yr = ssd_scan_recurrent(g, x, dt, b, c, a, skip);
    for (int64_t chunk : {int64_t(1), int64_t(16), int64_t(64)}) {
        CAPTURE(chunk);
        auto yc = ssd_scan_chunked(g, x, dt, b, c, a, skip, chunk);
        CHECK(test_util::rel_gap(yc.values(), yr.values()) <= 1e-4);
    }
    auto ref = oracle::ssd_reference(L, H, N, di / H, to_doubles(x), to_doubles(dt), to_doubles(b),
                                     to_doubles(c), to_doubles(a), to_doubles(skip));
    CHECK(test_util::rel_gap(yr.values(), ref) <= 1e-4);
}

TEST_CASE("scan preconditions: positive step sizes, negative decay, sane chunking") {
    Graph g;
    auto x = Tensor::full({4, 2}, 1.0f);
    auto dt = Tensor::full({4, 1}, 0.5f);
    auto b = Tensor::full({4, 1, 1}, 1.0f);
    auto c = Tensor::full({4, 1, 1}, 1.0f);
    auto a = tensor<float>({1}, {-1.0f});
    auto skip = Tensor::zeros({2});
    CHECK_THROWS_AS(ssd_scan_recurrent(g, x, Tensor::zeros({4, 1}), b, c, a, skip), ContractError);
    CHECK_THROWS_AS(ssd_scan_recurrent(g, x, dt, b, c, tensor<float>({1}, {0.5f}), skip),
                    ContractError);
    CHECK_THROWS_AS(ssd_scan_chunked(g, x, dt, b, c, a, skip, 0), ContractError);
}

TEST_CASE("mixer with all-zero weights emits exactly zero") {
    const int64_t d = 8, L = 5;
    SsdParams<float> p;
    p.dims = SsdDims::make(d, 4, 4);
    p.in_w = Tensor::zeros({d, p.dims.proj_width()});
    p.dt_bias = Tensor::zeros({p.dims.n_heads});  // dt = softplus(0) = ln 2, still positive
    p.a_log = Tensor::zeros({p.dims.n_heads});    // decay -exp(0) = -1, still negative
    p.skip = Tensor::zeros({p.dims.d_inner});
    p.out_w = Tensor::zeros({p.dims.d_inner, d});
    SplitRng rng(10);
    Graph g;
    TokenSeq seq{Tensor::uniform({L, d}, rng, -1, 1), patch_cls_roles(L - 1)};
    auto out = mamba2_mixer(g, seq, p);
    REQUIRE(out.data.shape() == Shape{L, d});
    for (float v : out.data.values()) CHECK(v == 0.0f);
}

TEST_CASE("the whole mixer is bitwise causal, including across chunk boundaries") {
    const int64_t d = 8, L = 8, cut = 5;
    auto p = random_ssd<float>(d, 11);
    p.dims.chunk = 4;  // edits land inside the second chunk
    SplitRng rng(12);
    auto base = Tensor::uniform({L, d}, rng, -1, 1);
    std::vector<float> edited(base.values().begin(), base.values().end());
    for (int64_t i = cut * d; i < L * d; ++i) edited[size_t(i)] -= 0.4f;
    Graph g1, g2;
    auto y1 = mamba2_mixer(g1, {base, patch_cls_roles(L - 1)}, p);
    auto y2 = mamba2_mixer(g2, {tensor<float>({L, d}, edited), patch_cls_roles(L - 1)}, p);
    for (int64_t i = 0; i < cut * d; ++i)
        CHECK(y1.data.values()[size_t(i)] == y2.data.values()[size_t(i)]);
}

TEST_CASE("mixer gradients survive a central-difference audit") {
    const int64_t d = 8, L = 5;
    auto p = random_ssd<double>(d, 13);
    SplitRng rng(14);
    DTokenSeq seq{DTensor::uniform({L, d}, rng, -1, 1), patch_cls_roles(L - 1)};
    std::vector<std::pair<const char*, DTensor*>> leaves = {{"in_w", &p.in_w},
                                                            {"dt_bias", &p.dt_bias},
                                                            {"a_log", &p.a_log},
                                                            {"skip", &p.skip},
                                                            {"out_w", &p.out_w}};
    for (auto& [name, t] : leaves) t->set_requires_grad(true);
    {
        DGraph g;
        g.backward(mean_all(g, mamba2_mixer(g, seq, p).data));
    }
    auto eval = [&] {
        DGraph g;
        g.recording = false;
        return mean_all(g, mamba2_mixer(g, seq, p).data).item();
    };
    for (auto& [name, t] : leaves) {
        CAPTURE(name);
        CHECK(test_util::worst_grad_gap(t->values(), t->grad(), eval) <= 5e-3);
    }
}

TEST_CASE("channel mixer hidden widths follow their kind") {
    CHECK(channel_hidden(ChannelKind::swiglu, 10) == 25);
    CHECK(channel_hidden(ChannelKind::swiglu, 7) == 17);  // floor of 2.5x
    CHECK(channel_hidden(ChannelKind::plain_mlp, 10) == 40);
    CHECK(channel_hidden(ChannelKind::none, 10) == 0);
}

TEST_CASE("channel mixer kind none is the bitwise identity") {
    SplitRng rng(15);
    Graph g;
    TokenSeq seq{Tensor::uniform({4, 6}, rng, -1, 1), patch_cls_roles(3)};
    ChannelMixerParams<float> p;
    p.kind = ChannelKind::none;
    auto out = channel_mixer(g, seq, p);
    CHECK(out.data.same_as(seq.data));
}

TEST_CASE("swiglu with zero biases maps zero input to zero output") {
    const int64_t d = 6, hid = channel_hidden(ChannelKind::swiglu, d);
    SplitRng rng(16);
    ChannelMixerParams<float> p;
    p.kind = ChannelKind::swiglu;
    p.w_gate = Tensor::uniform({d, hid}, rng, -0.5, 0.5);
    p.b_gate = Tensor::zeros({hid});
    p.w_up = Tensor::uniform({d, hid}, rng, -0.5, 0.5);
    p.b_up = Tensor::zeros({hid});
    p.w_down = Tensor::uniform({hid, d}, rng, -0.5, 0.5);
    p.b_down = Tensor::zeros({d});
    Graph g;
    auto out = channel_mixer(g, {Tensor::zeros({3, d}), patch_cls_roles(2)}, p);
    for (float v : out.data.values()) CHECK(v == 0.0f);  // silu(0) = 0 gates everything off
}

TEST_CASE("swiglu matches a 64-bit scalar reference on a random token") {
    const int64_t d = 8, hid = channel_hidden(ChannelKind::swiglu, d);
    SplitRng rng(17);
    ChannelMixerParams<float> p;
    p.kind = ChannelKind::swiglu;
    p.w_gate = Tensor::uniform({d, hid}, rng, -0.5, 0.5);
    p.b_gate = Tensor::uniform({hid}, rng, -0.1, 0.1);
    p.w_up = Tensor::uniform({d, hid}, rng, -0.5, 0.5);
    p.b_up = Tensor::uniform({hid}, rng, -0.1, 0.1);
    p.w_down = Tensor::uniform({hid, d}, rng, -0.5, 0.5);
    p.b_down = Tensor::uniform({d}, rng, -0.1, 0.1);
    auto x = Tensor::uniform({1, d}, rng, -1, 1);
    Graph g;
    auto out = channel_mixer(g, {x, {Role::cls}}, p);
    std::vector<double> gate(hid), up(hid), y(d);
    for (int64_t j = 0; j < hid; ++j) {
        double sg = p.b_gate.values()[j], su = p.b_up.values()[j];
        for (int64_t i = 0; i < d; ++i) {
            sg += double(x.values()[i]) * p.w_gate.values()[i * hid + j];
            su += double(x.values()[i]) * p.w_up.values()[i * hid + j];
        }
        gate[j] = sg / (1.0 + std::exp(-sg));  // silu
        up[j] = su;
    }
    for (int64_t j = 0; j < d; ++j) {
        double s = p.b_down.values()[j];
        for (int64_t i = 0; i < hid; ++i) s += gate[i] * up[i] * p.w_down.values()[i * d + j];
        y[j] = s;
    }
    CHECK(test_util::rel_gap(out.data.values(), y) <= 1e-5);
}

TEST_CASE("plain-mlp channel mixer matches a 64-bit GELU reference") {
    const int64_t d = 6, hid = channel_hidden(ChannelKind::plain_mlp, d);
    SplitRng rng(18);
    ChannelMixerParams<float> p;
    p.kind = ChannelKind::plain_mlp;
    p.w_up = Tensor::uniform({d, hid}, rng, -0.5, 0.5);
    p.b_up = Tensor::uniform({hid}, rng, -0.1, 0.1);
    p.w_down = Tensor::uniform({hid, d}, rng, -0.5, 0.5);
    p.b_down = Tensor::uniform({d}, rng, -0.1, 0.1);
    auto x = Tensor::uniform({1, d}, rng, -1, 1);
    Graph g;
    auto out = channel_mixer(g, {x, {Role::cls}}, p);
    std::vector<double> hidv(hid), y(d);
    for (int64_t j = 0; j < hid; ++j) {
        double s = p.b_up.values()[j];
        for (int64_t i = 0; i < d; ++i) s += double(x.values()[i]) * p.w_up.values()[i * hid + j];
        hidv[j] = 0.5 * s * (1.0 + std::erf(s / std::sqrt(2.0)));  // exact GELU
    }
    for (int64_t j = 0; j < d; ++j) {
        double s = p.b_down.values()[j];
        for (int64_t i = 0; i < hid; ++i) s += hidv[i] * p.w_down.values()[i * d + j];
        y[j] = s;
    }
    CHECK(test_util::rel_gap(out.data.values(), y) <= 1e-3);  // tanh-form GELU differs slightly
}

TEST_CASE("rms norm saturates constants to unit magnitude and respects the scale") {
    Graph g;
    auto ones = Tensor::full({6}, 1.0f);
    auto out = rms_norm(g, {Tensor::full({1, 6}, 2.5f), {Role::cls}}, ones, 1e-12);
    for (float v : out.data.values()) CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
    auto neg_out = rms_norm(g, {Tensor::full({1, 6}, -3.0f), {Role::cls}}, ones, 1e-12);
    for (float v : neg_out.data.values()) CHECK(v == doctest::Approx(-1.0).epsilon(1e-4));
    auto zero_scale = rms_norm(g, {Tensor::full({1, 6}, 2.5f), {Role::cls}}, Tensor::zeros({6}));
    for (float v : zero_scale.data.values()) CHECK(v == 0.0f);
    CHECK_THROWS_AS(rms_norm(g, {Tensor::full({1, 6}, 1.0f), {Role::cls}}, ones, 0.0),
                    ContractError);
}

TEST_CASE("rms norm matches a 64-bit scalar reference on a random token") {
    const int64_t d = 16;
    SplitRng rng(19);
    auto x = Tensor::uniform({1, d}, rng, -2, 2);
    auto scale = Tensor::uniform({d}, rng, 0.5, 1.5);
    Graph g;
    auto out = rms_norm(g, {x, {Role::cls}}, scale, 1e-6);
    double ms = 0;
    for (int64_t i = 0; i < d; ++i) ms += double(x.values()[i]) * double(x.values()[i]);
    ms /= double(d);
    std::vector<double> y(d);
    for (int64_t i = 0; i < d; ++i)
        y[i] = double(x.values()[i]) / std::sqrt(ms + 1e-6) * double(scale.values()[i]);
    CHECK(test_util::rel_gap(out.data.values(), y) <= 1e-5);
}

TEST_CASE("causal depthwise convolution pads left and keeps the kernel's last tap current") {
    Graph g;
    auto x = tensor<float>({3, 1}, {1, 2, 3});
    auto w = tensor<float>({1, 4}, {10, 20, 30, 40});
    auto b = tensor<float>({1}, {5});
    auto y = conv1d_causal(g, x, w, b);
    CHECK(y.at({0, 0}) == 45.0f);   // 5 + 40*1
    CHECK(y.at({1, 0}) == 115.0f);  // 5 + 30*1 + 40*2
    CHECK(y.at({2, 0}) == 205.0f);  // 5 + 20*1 + 30*2 + 40*3
    CHECK_THROWS_AS(conv1d_causal(g, x, tensor<float>({2, 4}, std::vector<float>(8, 1.0f)), b),
                    DimError);
}

TEST_CASE("counted cost grows linearly for the scan mixer and quadratically for attention") {
    const int64_t d = 8;
    auto ssd = random_ssd<float>(d, 40);
    auto attn = random_attn(d, 2, 41);
    std::vector<double> lx, lm, la;
    for (int64_t L : {128, 256, 512, 1024}) {
        SplitRng rng(42);
        TokenSeq seq{Tensor::uniform({L, d}, rng, -1, 1), patch_cls_roles(L - 1)};
        Graph g1;
        g1.recording = false;
        mamba2_mixer(g1, seq, ssd);
        Graph g2;
        g2.recording = false;
        causal_attention(g2, seq, attn);
        lx.push_back(std::log(double(L)));
        lm.push_back(std::log(double(g1.macs())));
        la.push_back(std::log(double(g2.macs())));
    }
    const double mamba_slope = fit_loglog_slope(lx, lm);
    const double attn_slope = fit_loglog_slope(lx, la);
    CHECK(std::abs(mamba_slope - 1.0) <= 0.15);
    CHECK(std::abs(attn_slope - 2.0) <= 0.15);
    CHECK(attn_slope - mamba_slope > 0.5);  // the separation itself
}
