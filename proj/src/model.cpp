#include "cim/model.hpp"

#include <cmath>
#include <numeric>

#include "cim/errors.hpp"

namespace cim {
namespace {

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

void add_dense(std::vector<ParamSpec>& v, const std::string& stem, int64_t in, int64_t out,
               bool bias = true, Init weight_init = Init::trunc_fan_in) {
    v.push_back({stem + ".weight", Shape{in, out}, weight_init});
    if (bias) v.push_back({stem + ".bias", Shape{out}, Init::zeros});
}

void add_token_mixer(std::vector<ParamSpec>& v, const ModelConfig& cfg, const std::string& stem) {
    if (cfg.token_mixer == TokenMixer::mamba2) {
        SsdDims dm = cfg.ssd_dims();
        v.push_back({stem + ".in_w", Shape{cfg.dim, dm.proj_width()}, Init::trunc_fan_in});
        v.push_back({stem + ".dt_bias", Shape{dm.n_heads}, Init::dt_bias_log_uniform});
        v.push_back({stem + ".a_log", Shape{dm.n_heads}, Init::a_log_uniform});
        v.push_back({stem + ".skip", Shape{dm.d_inner}, Init::ones});
        v.push_back({stem + ".out_w", Shape{dm.d_inner, cfg.dim}, Init::trunc_fan_in});
        if (dm.conv) {
            v.push_back({stem + ".conv_w", Shape{dm.conv_channels(), dm.conv_kernel},
                         Init::trunc_fan_in});
            v.push_back({stem + ".conv_b", Shape{dm.conv_channels()}, Init::zeros});
        }
    } else {
        add_dense(v, stem + ".q", cfg.dim, cfg.dim);
        add_dense(v, stem + ".k", cfg.dim, cfg.dim);
        add_dense(v, stem + ".v", cfg.dim, cfg.dim);
        add_dense(v, stem + ".o", cfg.dim, cfg.dim);
    }
}

}  // namespace

std::vector<ParamSpec> param_specs(const ModelConfig& cfg) {
    cfg.validate();
    std::vector<ParamSpec> v;
    int64_t d = cfg.dim, n = cfg.n_patches();
    v.push_back({"patch_embed.weight", Shape{3 * cfg.patch * cfg.patch, d}, Init::trunc02});
    v.push_back({"patch_embed.bias", Shape{d}, Init::zeros});
    v.push_back({"pos_embed", Shape{n + 1, d}, Init::trunc02});
    v.push_back({"cls_token", Shape{1, d}, Init::trunc02});
    if (cfg.heading == Heading::learnable)
        v.push_back({"heading_token", Shape{1, d}, Init::trunc02});
    bool norm = cfg.norm == NormKind::rms;
    for (int64_t i = 0; i < cfg.depth; ++i) {
        std::string b = "block" + std::to_string(i);
        if (norm) v.push_back({b + ".mixer_norm", Shape{d}, Init::ones});
        add_token_mixer(v, cfg, b + ".mixer");
        if (cfg.channel_mixer == ChannelKind::none) {
            if (norm) v.push_back({b + ".mixer2_norm", Shape{d}, Init::ones});
            add_token_mixer(v, cfg, b + ".mixer2");
        } else {
            if (norm) v.push_back({b + ".channel_norm", Shape{d}, Init::ones});
            int64_t hid = channel_hidden(cfg.channel_mixer, d);
            if (cfg.channel_mixer == ChannelKind::swiglu)
                add_dense(v, b + ".channel.gate", d, hid);
            add_dense(v, b + ".channel.up", d, hid);
            add_dense(v, b + ".channel.down", hid, d);
        }
    }
    if (norm) v.push_back({"final_norm", Shape{d}, Init::ones});
    add_dense(v, "head", d, cfg.num_classes, true, Init::trunc02);
    return v;
}

int64_t count_params(const ModelConfig& cfg) {
    int64_t total = 0;
    for (const auto& s : param_specs(cfg)) total += s.shape.numel();
    return total;
}

double preset_param_budget(const std::string& preset) {
    if (preset == "tiny") return 12.0e6;
    if (preset == "small") return 44.0e6;
    if (preset == "base") return 99.0e6;
    if (preset == "large") return 346.0e6;
    return 0.0;
}

namespace {

template <class T>
BasicTensor<T> make_param(const ParamSpec& spec, SplitRng& root) {
    SplitRng r = root.split(fnv1a(spec.name));
    switch (spec.init) {
        case Init::trunc02: return BasicTensor<T>::trunc_normal(spec.shape, r, 0.02);
        case Init::trunc_fan_in: {
            // [in, out] matrices scale by rows; depthwise conv taps by kernel width.
            const Shape& s = spec.shape;
            const int64_t fan_in = s.rank() == 2 && spec.name.find("conv_w") == std::string::npos
                                       ? s[0]
                                       : s[s.rank() - 1];
            return BasicTensor<T>::trunc_normal(spec.shape, r, 1.0 / std::sqrt(static_cast<double>(fan_in)));
        }
        case Init::zeros: return BasicTensor<T>::zeros(spec.shape);
        case Init::ones: return BasicTensor<T>::full(spec.shape, T(1));
        case Init::dt_bias_log_uniform: {
            auto t = BasicTensor<T>::zeros(spec.shape);
            for (auto& x : t.values()) {
                double dt = std::exp(r.uniform(std::log(1e-3), std::log(1e-1)));
                x = static_cast<T>(std::log(std::expm1(dt)));
            }
            return t;
        }
        default: {  // a_log_uniform
            auto t = BasicTensor<T>::zeros(spec.shape);
            for (auto& x : t.values()) x = static_cast<T>(std::log(r.uniform(1.0, 16.0)));
            return t;
        }
    }
}

template <class T>
void wire_token_mixer(ModelParams<T>& p, const std::string& stem, SsdParams<T>& ssd,
                      AttnParams<T>& attn) {
    const ModelConfig& cfg = p.cfg;
    if (cfg.token_mixer == TokenMixer::mamba2) {
        ssd.dims = cfg.ssd_dims();
        ssd.dims.chunk = cfg.chunk;
        ssd.in_w = p.find(stem + ".in_w");
        ssd.dt_bias = p.find(stem + ".dt_bias");
        ssd.a_log = p.find(stem + ".a_log");
        ssd.skip = p.find(stem + ".skip");
        ssd.out_w = p.find(stem + ".out_w");
        if (ssd.dims.conv) {
            ssd.conv_w = p.find(stem + ".conv_w");
            ssd.conv_b = p.find(stem + ".conv_b");
        }
    } else {
        attn.heads = cfg.resolved_attn_heads();
        attn.mask = cfg.token_mixer == TokenMixer::causal_attn ? MaskMode::causal : MaskMode::full;
        attn.wq = p.find(stem + ".q.weight");
        attn.bq = p.find(stem + ".q.bias");
        attn.wk = p.find(stem + ".k.weight");
        attn.bk = p.find(stem + ".k.bias");
        attn.wv = p.find(stem + ".v.weight");
        attn.bv = p.find(stem + ".v.bias");
        attn.wo = p.find(stem + ".o.weight");
        attn.bo = p.find(stem + ".o.bias");
    }
}

template <class T>
void wire(ModelParams<T>& p) {
    const ModelConfig& cfg = p.cfg;
    p.patch_embed.patch = cfg.patch;
    p.patch_embed.weight = p.find("patch_embed.weight");
    p.patch_embed.bias = p.find("patch_embed.bias");
    p.pos_embed = p.find("pos_embed");
    p.cls_token = p.find("cls_token");
    if (cfg.heading == Heading::learnable) p.heading_token = p.find("heading_token");
    bool norm = cfg.norm == NormKind::rms;
    p.blocks.resize(static_cast<size_t>(cfg.depth));
    for (int64_t i = 0; i < cfg.depth; ++i) {
        std::string b = "block" + std::to_string(i);
        auto& blk = p.blocks[static_cast<size_t>(i)];
        if (norm) blk.mixer_norm = p.find(b + ".mixer_norm");
        wire_token_mixer(p, b + ".mixer", blk.ssd, blk.attn);
        if (cfg.channel_mixer == ChannelKind::none) {
            if (norm) blk.mixer2_norm = p.find(b + ".mixer2_norm");
            wire_token_mixer(p, b + ".mixer2", blk.ssd2, blk.attn2);
        } else {
            if (norm) blk.channel_norm = p.find(b + ".channel_norm");
            blk.channel.kind = cfg.channel_mixer;
            if (cfg.channel_mixer == ChannelKind::swiglu) {
                blk.channel.w_gate = p.find(b + ".channel.gate.weight");
                blk.channel.b_gate = p.find(b + ".channel.gate.bias");
            }
            blk.channel.w_up = p.find(b + ".channel.up.weight");
            blk.channel.b_up = p.find(b + ".channel.up.bias");
            blk.channel.w_down = p.find(b + ".channel.down.weight");
            blk.channel.b_down = p.find(b + ".channel.down.bias");
        }
    }
    if (norm) p.final_norm = p.find("final_norm");
    p.head_w = p.find("head.weight");
    p.head_b = p.find("head.bias");
}

}  // namespace

template <class T>
BasicTensor<T>& ModelParams<T>::find(const std::string& name) {
    for (auto& [n, t] : named)
        if (n == name) return t;
    throw ContractError("model: no parameter named '" + name + "'");
}

template <class T>
const BasicTensor<T>& ModelParams<T>::find(const std::string& name) const {
    for (const auto& [n, t] : named)
        if (n == name) return t;
    throw ContractError("model: no parameter named '" + name + "'");
}

template <class T>
ModelParams<T> init_params(const ModelConfig& cfg, uint64_t seed) {
    ModelParams<T> p;
    p.cfg = cfg;
    SplitRng root(seed);
    for (const auto& spec : param_specs(cfg))
        p.named.emplace_back(spec.name, make_param<T>(spec, root));
    wire(p);
    return p;
}

template <class T>
void require_all_grads(ModelParams<T>& p) {
    for (auto& [n, t] : p.named) t.set_requires_grad(true);
}

// ---- sequence surgery ----

namespace {

template <class T>
BasicTensor<T> reverse_rows(BasicGraph<T>& g, const BasicTensor<T>& x) {
    std::vector<int64_t> idx(static_cast<size_t>(x.shape()[0]));
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int64_t>(idx.size() - 1 - i);
    return gather_rows(g, x, idx);
}

}  // namespace

template <class T>
BasicTensor<T> compute_heading_rows(BasicGraph<T>& g, const BasicTokenSeq<T>& seq,
                                    const ModelConfig& cfg, const BasicTensor<T>& learned_token) {
    seq.check();
    switch (cfg.heading) {
        case Heading::off: return {};
        case Heading::average:
            return reduce_mean(g, seq.data, 0, true);
        case Heading::duplicate_cls: {
            if (seq.roles.empty() || seq.roles.back() != Role::cls)
                throw ContractError("heading: duplicate-cls needs a trailing cls token");
            return gather_rows(g, seq.data, {seq.len() - 1});
        }
        case Heading::learnable:
            if (!learned_token.defined())
                throw ContractError("heading: learnable mode without a learned token");
            return learned_token;
        default: {  // grid
            int64_t r = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(cfg.grid_n))));
            int64_t side = cfg.grid_side(), cell = side / r;
            if (cell * r != side)
                throw ConfigError("heading: patch grid not divisible into grid cells");
            // patch rows are assumed to sit at positions 0..n-1 (post-drop layout)
            std::vector<BasicTensor<T>> rows;
            for (int64_t ci = 0; ci < r; ++ci)
                for (int64_t cj = 0; cj < r; ++cj) {
                    std::vector<int64_t> idx;
                    idx.reserve(static_cast<size_t>(cell * cell));
                    for (int64_t py = ci * cell; py < (ci + 1) * cell; ++py)
                        for (int64_t px = cj * cell; px < (cj + 1) * cell; ++px)
                            idx.push_back(py * side + px);
                    rows.push_back(reduce_mean(g, gather_rows(g, seq.data, idx), 0, true));
                }
            return rows.size() == 1 ? rows[0] : concat_rows(g, rows);
        }
    }
}

template <class T>
BasicTokenSeq<T> prepend_heading(BasicGraph<T>& g, const BasicTokenSeq<T>& seq,
                                 const ModelConfig& cfg, const BasicTensor<T>& learned_token,
                                 const BasicTensor<T>& frozen) {
    seq.check();
    if (cfg.heading == Heading::off) return seq;
    BasicTensor<T> rows =
        frozen.defined() ? frozen : compute_heading_rows(g, seq, cfg, learned_token);
    BasicTokenSeq<T> out;
    out.data = concat_rows(g, {rows, seq.data});
    out.roles.assign(static_cast<size_t>(rows.shape()[0]), Role::avg);
    out.roles.insert(out.roles.end(), seq.roles.begin(), seq.roles.end());
    return out;
}

template <class T>
BasicTokenSeq<T> drop_heading(BasicGraph<T>& g, const BasicTokenSeq<T>& seq) {
    seq.check();
    std::vector<int64_t> keep;
    std::vector<Role> roles;
    for (int64_t i = 0; i < seq.len(); ++i)
        if (seq.roles[static_cast<size_t>(i)] != Role::avg) {
            keep.push_back(i);
            roles.push_back(seq.roles[static_cast<size_t>(i)]);
        }
    if (keep.size() == seq.roles.size()) return seq;
    return {gather_rows(g, seq.data, keep), std::move(roles)};
}

template <class T>
BasicTokenSeq<T> flip_patches(BasicGraph<T>& g, const BasicTokenSeq<T>& seq) {
    seq.check();
    if (seq.count(Role::avg) != 0)
        throw ContractError("flip_patches: drop the heading prefix before flipping");
    if (!seq.canonical())
        throw ContractError("flip_patches: roles must be patches then one cls, got " +
                            seq.role_str());
    int64_t n = seq.len() - 1;
    std::vector<int64_t> idx(static_cast<size_t>(seq.len()));
    for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = n - 1 - i;
    idx[static_cast<size_t>(n)] = n;
    return {gather_rows(g, seq.data, idx), seq.roles};
}

// ---- model forward ----

namespace {

template <class T>
BasicTokenSeq<T> apply_token_mixer(BasicGraph<T>& g, const BasicTokenSeq<T>& x,
                                   const BasicTensor<T>& norm_scale, const SsdParams<T>& ssd,
                                   const AttnParams<T>& attn, const ModelConfig& cfg,
                                   const TestHooks& hooks) {
    BasicTokenSeq<T> normed =
        cfg.norm == NormKind::rms ? rms_norm(g, x, norm_scale) : x;
    auto run = [&](const BasicTokenSeq<T>& in) {
        if (cfg.token_mixer == TokenMixer::mamba2) return mamba2_mixer(g, in, ssd, hooks.scan);
        return causal_attention(g, in, attn);
    };
    if (cfg.scan == ScanMode::one_way) return run(normed);
    auto fwd = run(normed);
    std::vector<Role> rev_roles(normed.roles.rbegin(), normed.roles.rend());
    BasicTokenSeq<T> rev{reverse_rows(g, normed.data), std::move(rev_roles)};
    auto back = reverse_rows(g, run(rev).data);
    return {mul_scalar(g, add(g, fwd.data, back), 0.5), x.roles};
}

}  // namespace

template <class T>
BasicTokenSeq<T> adventurer_block(BasicGraph<T>& g, const BasicTokenSeq<T>& seq,
                                  const ModelParams<T>& params, int64_t block_idx,
                                  const BasicTensor<T>& frozen_heading, const TestHooks& hooks,
                                  BlockTrace<T>* trace) {
    const ModelConfig& cfg = params.cfg;
    seq.check();
    if (!seq.canonical() || seq.count(Role::avg) != 0)
        throw ContractError("block: expected roles [patch*n, cls], got " + seq.role_str());
    const auto& blk = params.blocks[static_cast<size_t>(block_idx)];

    if (trace) {
        trace->boundary.push_back(seq.data);
        trace->boundary_roles.push_back(seq.role_str());
    }

    BasicTokenSeq<T> x = seq;
    if (cfg.heading != Heading::off) {
        BasicTensor<T> rows = frozen_heading.defined()
                                  ? frozen_heading
                                  : compute_heading_rows(g, seq, cfg, params.heading_token);
        x.data = concat_rows(g, {rows, seq.data});
        x.roles.assign(static_cast<size_t>(rows.shape()[0]), Role::avg);
        x.roles.insert(x.roles.end(), seq.roles.begin(), seq.roles.end());
        if (trace) trace->heading_rows.push_back(rows);
    }
    if (trace) trace->mixer_input.push_back(x.data);

    auto mixed = apply_token_mixer(g, x, blk.mixer_norm, blk.ssd, blk.attn, cfg, hooks);
    x.data = add(g, x.data, mixed.data);

    if (cfg.channel_mixer == ChannelKind::none) {
        auto mixed2 = apply_token_mixer(g, x, blk.mixer2_norm, blk.ssd2, blk.attn2, cfg, hooks);
        x.data = add(g, x.data, mixed2.data);
    } else {
        BasicTokenSeq<T> normed =
            cfg.norm == NormKind::rms ? rms_norm(g, x, blk.channel_norm) : x;
        auto ch = channel_mixer(g, normed, blk.channel);
        x.data = add(g, x.data, ch.data);
    }

    auto out = drop_heading(g, x);
    if (cfg.flip == FlipMode::inter_layer && cfg.scan == ScanMode::one_way && !hooks.disable_flip)
        out = flip_patches(g, out);
    return out;
}

template <class T>
BasicTokenSeq<T> forward_features(BasicGraph<T>& g, const BasicTensor<T>& image,
                                  const ModelParams<T>& params, const TestHooks& hooks,
                                  BlockTrace<T>* trace) {
    const ModelConfig& cfg = params.cfg;
    auto seq = patchify(g, image, params.patch_embed);
    seq.data = concat_rows(g, {seq.data, params.cls_token});
    seq.roles.push_back(Role::cls);
    seq.data = add(g, seq.data, params.pos_embed);

    BasicTensor<T> frozen;
    if (cfg.heading != Heading::off && cfg.heading != Heading::learnable && !cfg.recalc_heading)
        frozen = compute_heading_rows(g, seq, cfg, params.heading_token);

    for (int64_t i = 0; i < cfg.depth; ++i)
        seq = adventurer_block(g, seq, params, i, frozen, hooks, trace);

    if (trace) {
        trace->boundary.push_back(seq.data);
        trace->boundary_roles.push_back(seq.role_str());
    }
    if (cfg.norm == NormKind::rms) seq = rms_norm(g, seq, params.final_norm);
    return seq;
}

template <class T>
BasicTensor<T> classify(BasicGraph<T>& g, const BasicTensor<T>& image,
                        const ModelParams<T>& params, const TestHooks& hooks,
                        BlockTrace<T>* trace) {
    auto feats = forward_features(g, image, params, hooks, trace);
    auto cls_row = gather_rows(g, feats.data, {feats.len() - 1});
    auto logits = add(g, matmul(g, cls_row, params.head_w), params.head_b);
    return reshape(g, logits, Shape{params.cfg.num_classes});
}

#define CIM_INSTANTIATE_MODEL(T)                                                                   \
    template struct ModelParams<T>;                                                                \
    template ModelParams<T> init_params<T>(const ModelConfig&, uint64_t);                          \
    template void require_all_grads<T>(ModelParams<T>&);                                           \
    template BasicTensor<T> compute_heading_rows<T>(BasicGraph<T>&, const BasicTokenSeq<T>&,       \
                                                    const ModelConfig&, const BasicTensor<T>&);    \
    template BasicTokenSeq<T> prepend_heading<T>(BasicGraph<T>&, const BasicTokenSeq<T>&,          \
                                                 const ModelConfig&, const BasicTensor<T>&,        \
                                                 const BasicTensor<T>&);                           \
    template BasicTokenSeq<T> drop_heading<T>(BasicGraph<T>&, const BasicTokenSeq<T>&);            \
    template BasicTokenSeq<T> flip_patches<T>(BasicGraph<T>&, const BasicTokenSeq<T>&);            \
    template BasicTokenSeq<T> adventurer_block<T>(BasicGraph<T>&, const BasicTokenSeq<T>&,         \
                                                  const ModelParams<T>&, int64_t,                  \
                                                  const BasicTensor<T>&, const TestHooks&,         \
                                                  BlockTrace<T>*);                                 \
    template BasicTokenSeq<T> forward_features<T>(BasicGraph<T>&, const BasicTensor<T>&,           \
                                                  const ModelParams<T>&, const TestHooks&,         \
                                                  BlockTrace<T>*);                                 \
    template BasicTensor<T> classify<T>(BasicGraph<T>&, const BasicTensor<T>&,                     \
                                        const ModelParams<T>&, const TestHooks&, BlockTrace<T>*);

CIM_INSTANTIATE_MODEL(float)
CIM_INSTANTIATE_MODEL(double)

#undef CIM_INSTANTIATE_MODEL

}  // namespace cim
