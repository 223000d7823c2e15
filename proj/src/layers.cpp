#include "cim/layers.hpp"

#include <cmath>
#include <cstring>

#include "cim/op_detail.hpp"

namespace cim {

using detail::finish;
using detail::make_out;

int64_t channel_hidden(ChannelKind kind, int64_t d) {
    switch (kind) {
        case ChannelKind::swiglu: return (5 * d) / 2;
        case ChannelKind::plain_mlp: return 4 * d;
        default: return 0;
    }
}

SsdDims SsdDims::make(int64_t d, int64_t d_state, int64_t head_dim, bool conv) {
    SsdDims dm;
    dm.d = d;
    dm.d_inner = 2 * d;
    dm.d_state = d_state;
    dm.head_dim = head_dim;
    if (dm.d_inner % head_dim != 0)
        throw ConfigError("ssd dims: inner width " + std::to_string(dm.d_inner) +
                          " not divisible by head_dim " + std::to_string(head_dim));
    dm.n_heads = dm.d_inner / head_dim;
    dm.conv = conv;
    return dm;
}

// ---- selective scan kernels ----

namespace {

struct SsdShape {
    int64_t L, H, N, hd, di;
};

template <class T>
SsdShape check_ssd_args(const BasicTensor<T>& x, const BasicTensor<T>& dt,
                        const BasicTensor<T>& bmat, const BasicTensor<T>& cmat,
                        const BasicTensor<T>& a, const BasicTensor<T>& skip) {
    if (x.shape().rank() != 2 || dt.shape().rank() != 2 || bmat.shape().rank() != 3 ||
        cmat.shape().rank() != 3 || a.shape().rank() != 1 || skip.shape().rank() != 1)
        throw DimError("ssd_scan: bad operand ranks");
    SsdShape s;
    s.L = x.shape()[0];
    s.di = x.shape()[1];
    s.H = dt.shape()[1];
    s.N = bmat.shape()[2];
    if (dt.shape()[0] != s.L || bmat.shape()[0] != s.L || cmat.shape()[0] != s.L ||
        bmat.shape()[1] != s.H || cmat.shape()[1] != s.H || cmat.shape()[2] != s.N ||
        a.shape()[0] != s.H || skip.shape()[0] != s.di || s.di % s.H != 0)
        throw DimError("ssd_scan: inconsistent shapes x " + x.shape().str() + " dt " +
                       dt.shape().str() + " B " + bmat.shape().str());
    s.hd = s.di / s.H;
    for (T v : dt.values()) {
        if (!std::isfinite(v)) throw NonFiniteError("ssd_scan.dt");
        if (v <= T(0)) throw ContractError("ssd_scan: dt must be positive everywhere");
    }
    for (T v : a.values()) {
        if (!std::isfinite(v)) throw NonFiniteError("ssd_scan.a");
        if (v >= T(0)) throw ContractError("ssd_scan: decay coefficient a must be negative");
    }
    return s;
}

// Sequential recurrence. Writes y (unless null) and the post-update states
// [L,H,N,hd] (unless null).
template <class T>
void ssd_rec_kernel(const T* x, const T* dt, const T* B, const T* C, const T* a, const T* skip,
                    T* y, T* states, const SsdShape& s, bool unit_decay) {
    std::vector<T> state(static_cast<size_t>(s.H * s.N * s.hd), T(0));
    for (int64_t t = 0; t < s.L; ++t)
        for (int64_t h = 0; h < s.H; ++h) {
            T dtv = dt[t * s.H + h];
            T al = unit_decay ? T(1) : std::exp(dtv * a[h]);
            T* sh = state.data() + h * s.N * s.hd;
            const T* xt = x + t * s.di + h * s.hd;
            const T* bt = B + (t * s.H + h) * s.N;
            const T* ct = C + (t * s.H + h) * s.N;
            for (int64_t n = 0; n < s.N; ++n) {
                T bn = dtv * bt[n];
                T* row = sh + n * s.hd;
                for (int64_t c = 0; c < s.hd; ++c) row[c] = al * row[c] + bn * xt[c];
            }
            if (y) {
                T* yt = y + t * s.di + h * s.hd;
                const T* dp = skip + h * s.hd;
                for (int64_t c = 0; c < s.hd; ++c) yt[c] = dp[c] * xt[c];
                for (int64_t n = 0; n < s.N; ++n) {
                    T cn = ct[n];
                    const T* row = sh + n * s.hd;
                    for (int64_t c = 0; c < s.hd; ++c) yt[c] += cn * row[c];
                }
            }
            if (states)
                std::memcpy(states + (t * s.H + h) * s.N * s.hd, sh,
                            sizeof(T) * static_cast<size_t>(s.N * s.hd));
        }
}

inline uint64_t ssd_rec_macs(const SsdShape& s) {
    return static_cast<uint64_t>(s.L * s.H) *
           static_cast<uint64_t>(s.N + 3 * s.N * s.hd + s.hd + 1);
}

// Chunk-parallel form: pairwise decay-weighted products inside a chunk plus
// a carried state across chunks.
template <class T>
void ssd_chunk_kernel(const T* x, const T* dt, const T* B, const T* C, const T* a, const T* skip,
                      T* y, const SsdShape& s, int64_t chunk, bool unit_decay, uint64_t* macs) {
    std::vector<T> carried(static_cast<size_t>(s.N * s.hd));
    std::vector<T> fresh(static_cast<size_t>(s.N * s.hd));
    std::vector<T> ldec(static_cast<size_t>(chunk));
    for (int64_t h = 0; h < s.H; ++h) {
        std::fill(carried.begin(), carried.end(), T(0));
        for (int64_t t0 = 0; t0 < s.L; t0 += chunk) {
            int64_t c = std::min(chunk, s.L - t0);
            T run = 0;
            for (int64_t i = 0; i < c; ++i) {
                if (!unit_decay) run += dt[(t0 + i) * s.H + h] * a[h];
                ldec[static_cast<size_t>(i)] = run;
            }
            for (int64_t i = 0; i < c; ++i) {
                int64_t t = t0 + i;
                T* yt = y + t * s.di + h * s.hd;
                const T* xi = x + t * s.di + h * s.hd;
                const T* ci = C + (t * s.H + h) * s.N;
                const T* dp = skip + h * s.hd;
                for (int64_t ch = 0; ch < s.hd; ++ch) yt[ch] = dp[ch] * xi[ch];
                T ed = std::exp(ldec[static_cast<size_t>(i)]);
                for (int64_t n = 0; n < s.N; ++n) {
                    T cn = ci[n] * ed;
                    const T* row = carried.data() + n * s.hd;
                    for (int64_t ch = 0; ch < s.hd; ++ch) yt[ch] += cn * row[ch];
                }
                for (int64_t j = 0; j <= i; ++j) {
                    const T* bj = B + ((t0 + j) * s.H + h) * s.N;
                    T dot = 0;
                    for (int64_t n = 0; n < s.N; ++n) dot += ci[n] * bj[n];
                    T coef = dot *
                             std::exp(ldec[static_cast<size_t>(i)] - ldec[static_cast<size_t>(j)]) *
                             dt[(t0 + j) * s.H + h];
                    const T* xj = x + (t0 + j) * s.di + h * s.hd;
                    for (int64_t ch = 0; ch < s.hd; ++ch) yt[ch] += coef * xj[ch];
                }
            }
            T edall = std::exp(ldec[static_cast<size_t>(c - 1)]);
            for (size_t i = 0; i < fresh.size(); ++i) fresh[i] = edall * carried[i];
            for (int64_t j = 0; j < c; ++j) {
                T wj = std::exp(ldec[static_cast<size_t>(c - 1)] - ldec[static_cast<size_t>(j)]) *
                       dt[(t0 + j) * s.H + h];
                const T* bj = B + ((t0 + j) * s.H + h) * s.N;
                const T* xj = x + (t0 + j) * s.di + h * s.hd;
                for (int64_t n = 0; n < s.N; ++n) {
                    T bn = wj * bj[n];
                    T* row = fresh.data() + n * s.hd;
                    for (int64_t ch = 0; ch < s.hd; ++ch) row[ch] += bn * xj[ch];
                }
            }
            carried.swap(fresh);
            uint64_t pairs = static_cast<uint64_t>(c) * static_cast<uint64_t>(c + 1) / 2;
            *macs += static_cast<uint64_t>(c) * static_cast<uint64_t>(s.hd + s.N * s.hd + 1) +
                     pairs * static_cast<uint64_t>(s.N + s.hd + 2) +
                     static_cast<uint64_t>(s.N * s.hd) +
                     static_cast<uint64_t>(c) * static_cast<uint64_t>(s.N * s.hd + s.N + 1);
        }
    }
}

template <class T>
struct SsdGradPtrs {
    T* dx = nullptr;
    T* ddt = nullptr;
    T* dB = nullptr;
    T* dC = nullptr;
    T* da = nullptr;
    T* dskip = nullptr;
};

// Reverse sweep of the recurrence using stored post-update states. The
// adjoint state G accumulates C_t (outer) dy_t and decays by alpha_t going
// backward in time.
template <class T>
void ssd_adjoint_kernel(const T* x, const T* dt, const T* B, const T* C, const T* a, const T* skip,
                        const T* dy, const T* states, const SsdShape& s, bool unit_decay,
                        const SsdGradPtrs<T>& gr) {
    for (int64_t t = 0; t < s.L; ++t)
        for (int64_t ch = 0; ch < s.di; ++ch) {
            T u = dy[t * s.di + ch];
            if (gr.dskip) gr.dskip[ch] += u * x[t * s.di + ch];
            if (gr.dx) gr.dx[t * s.di + ch] += u * skip[ch];
        }
    std::vector<T> G(static_cast<size_t>(s.N * s.hd));
    for (int64_t h = 0; h < s.H; ++h) {
        std::fill(G.begin(), G.end(), T(0));
        for (int64_t t = s.L - 1; t >= 0; --t) {
            const T* dyt = dy + t * s.di + h * s.hd;
            const T* st = states + (t * s.H + h) * s.N * s.hd;
            const T* bt = B + (t * s.H + h) * s.N;
            const T* ct = C + (t * s.H + h) * s.N;
            const T* xt = x + t * s.di + h * s.hd;
            T dtv = dt[t * s.H + h];
            if (gr.dC)
                for (int64_t n = 0; n < s.N; ++n) {
                    const T* row = st + n * s.hd;
                    T sum = 0;
                    for (int64_t c = 0; c < s.hd; ++c) sum += row[c] * dyt[c];
                    gr.dC[(t * s.H + h) * s.N + n] += sum;
                }
            for (int64_t n = 0; n < s.N; ++n) {
                T cn = ct[n];
                T* row = G.data() + n * s.hd;
                for (int64_t c = 0; c < s.hd; ++c) row[c] += cn * dyt[c];
            }
            T al = unit_decay ? T(1) : std::exp(dtv * a[h]);
            T dal = 0;
            if (!unit_decay && t > 0 && (gr.ddt || gr.da)) {
                const T* prev = states + ((t - 1) * s.H + h) * s.N * s.hd;
                for (int64_t i = 0; i < s.N * s.hd; ++i) dal += G[static_cast<size_t>(i)] * prev[i];
            }
            T gbx = 0;
            for (int64_t n = 0; n < s.N; ++n) {
                const T* row = G.data() + n * s.hd;
                T gx = 0;
                for (int64_t c = 0; c < s.hd; ++c) gx += row[c] * xt[c];
                gbx += gx * bt[n];
                if (gr.dB) gr.dB[(t * s.H + h) * s.N + n] += dtv * gx;
            }
            if (gr.dx) {
                T* dxt = gr.dx + t * s.di + h * s.hd;
                for (int64_t c = 0; c < s.hd; ++c) {
                    T gb = 0;
                    for (int64_t n = 0; n < s.N; ++n) gb += G[static_cast<size_t>(n * s.hd + c)] * bt[n];
                    dxt[c] += dtv * gb;
                }
            }
            if (gr.ddt)
                gr.ddt[t * s.H + h] += (unit_decay ? T(0) : dal * a[h] * al) + gbx;
            if (gr.da && !unit_decay) gr.da[h] += dal * dtv * al;
            if (!unit_decay)
                for (T& v : G) v *= al;
        }
    }
}

// Shared wrapper: forward via `fwd`, backward via the adjoint kernel over
// states recomputed by the sequential recurrence.
template <class T, class FwdFn>
BasicTensor<T> ssd_scan_common(BasicGraph<T>& g, const BasicTensor<T>& x, const BasicTensor<T>& dt,
                               const BasicTensor<T>& bmat, const BasicTensor<T>& cmat,
                               const BasicTensor<T>& a, const BasicTensor<T>& skip,
                               const ScanHooks& hooks, std::string_view kind, FwdFn fwd) {
    SsdShape s = check_ssd_args(x, dt, bmat, cmat, a, skip);
    auto out = make_out(g, x.shape());
    uint64_t macs = 0;
    fwd(s, out.values().data(), &macs);
    bool need = x.requires_grad() || dt.requires_grad() || bmat.requires_grad() ||
                cmat.requires_grad() || a.requires_grad() || skip.requires_grad();
    BasicTensor<T> states;
    if (need && g.recording) {
        states = make_out(g, Shape{s.L, s.H, s.N, s.hd});
        ssd_rec_kernel(x.values().data(), dt.values().data(), bmat.values().data(),
                       cmat.values().data(), a.values().data(), skip.values().data(),
                       static_cast<T*>(nullptr), states.values().data(), s, hooks.force_unit_decay);
    }
    auto bw = [xs = x.ptr(), dts = dt.ptr(), bs = bmat.ptr(), cs = cmat.ptr(), as = a.ptr(),
               ks = skip.ptr(), os = out.ptr(), states, s, unit = hooks.force_unit_decay]() {
        SsdGradPtrs<T> gr;
        if (xs->requires_grad) gr.dx = ensure_grad(*xs).data();
        if (dts->requires_grad) gr.ddt = ensure_grad(*dts).data();
        if (bs->requires_grad) gr.dB = ensure_grad(*bs).data();
        if (cs->requires_grad) gr.dC = ensure_grad(*cs).data();
        if (as->requires_grad) gr.da = ensure_grad(*as).data();
        if (ks->requires_grad) gr.dskip = ensure_grad(*ks).data();
        ssd_adjoint_kernel(xs->v.data(), dts->v.data(), bs->v.data(), cs->v.data(), as->v.data(),
                           ks->v.data(), os->g.data(), states.values().data(), s, unit, gr);
    };
    finish(g, out, kind, macs, need, std::move(bw));
    return out;
}

}  // namespace

template <class T>
BasicTensor<T> ssd_scan_recurrent(BasicGraph<T>& g, const BasicTensor<T>& x,
                                  const BasicTensor<T>& dt, const BasicTensor<T>& bmat,
                                  const BasicTensor<T>& cmat, const BasicTensor<T>& a,
                                  const BasicTensor<T>& skip, const ScanHooks& hooks) {
    return ssd_scan_common(g, x, dt, bmat, cmat, a, skip, hooks, "ssd_scan_recurrent",
                           [&](const SsdShape& s, T* y, uint64_t* macs) {
                               ssd_rec_kernel(x.values().data(), dt.values().data(),
                                              bmat.values().data(), cmat.values().data(),
                                              a.values().data(), skip.values().data(), y,
                                              static_cast<T*>(nullptr), s,
                                              hooks.force_unit_decay);
                               *macs = ssd_rec_macs(s);
                           });
}

template <class T>
BasicTensor<T> ssd_scan_chunked(BasicGraph<T>& g, const BasicTensor<T>& x,
                                const BasicTensor<T>& dt, const BasicTensor<T>& bmat,
                                const BasicTensor<T>& cmat, const BasicTensor<T>& a,
                                const BasicTensor<T>& skip, int64_t chunk_len,
                                const ScanHooks& hooks) {
    if (chunk_len < 1) throw ContractError("ssd_scan_chunked: chunk_len must be >= 1");
    return ssd_scan_common(g, x, dt, bmat, cmat, a, skip, hooks, "ssd_scan_chunked",
                           [&](const SsdShape& s, T* y, uint64_t* macs) {
                               ssd_chunk_kernel(x.values().data(), dt.values().data(),
                                                bmat.values().data(), cmat.values().data(),
                                                a.values().data(), skip.values().data(), y, s,
                                                chunk_len, hooks.force_unit_decay, macs);
                           });
}

// ---- layer forwards ----

template <class T>
BasicTokenSeq<T> patchify(BasicGraph<T>& g, const BasicTensor<T>& image,
                          const PatchEmbedParams<T>& p) {
    auto rows = extract_patches(g, image, p.patch);
    auto tok = add(g, matmul(g, rows, p.weight), p.bias);
    BasicTokenSeq<T> seq;
    seq.data = tok;
    seq.roles.assign(static_cast<size_t>(tok.shape()[0]), Role::patch);
    return seq;
}

template <class T>
BasicTokenSeq<T> causal_attention(BasicGraph<T>& g, const BasicTokenSeq<T>& seq,
                                  const AttnParams<T>& p) {
    seq.check();
    const auto& xx = seq.data;
    int64_t d = seq.dim();
    if (d % p.heads != 0)
        throw DimError("causal_attention: width " + std::to_string(d) + " not divisible by " +
                       std::to_string(p.heads) + " heads");
    int64_t hd = d / p.heads;
    auto q = split_heads(g, add(g, matmul(g, xx, p.wq), p.bq), p.heads);
    auto k = split_heads(g, add(g, matmul(g, xx, p.wk), p.bk), p.heads);
    auto v = split_heads(g, add(g, matmul(g, xx, p.wv), p.bv), p.heads);
    auto scores = mul_scalar(g, bmm(g, q, transpose_last2(g, k)),
                             1.0 / std::sqrt(static_cast<double>(hd)));
    auto probs = masked_softmax(g, scores, p.mask);
    auto ctx = merge_heads(g, bmm(g, probs, v));
    auto out = add(g, matmul(g, ctx, p.wo), p.bo);
    return {out, seq.roles};
}

template <class T>
BasicTokenSeq<T> mamba2_mixer(BasicGraph<T>& g, const BasicTokenSeq<T>& seq, const SsdParams<T>& p,
                              const ScanHooks& hooks) {
    seq.check();
    const auto& dm = p.dims;
    if (seq.dim() != dm.d)
        throw DimError("mamba2_mixer: sequence width " + std::to_string(seq.dim()) +
                       " != configured " + std::to_string(dm.d));
    auto proj = matmul(g, seq.data, p.in_w);
    auto xs = slice_cols(g, proj, 0, dm.d_inner);
    auto z = slice_cols(g, proj, dm.d_inner, dm.d_inner);
    auto bc = slice_cols(g, proj, 2 * dm.d_inner, dm.d_state);
    auto cc = slice_cols(g, proj, 2 * dm.d_inner + dm.d_state, dm.d_state);
    auto dt_raw = slice_cols(g, proj, 2 * dm.d_inner + 2 * dm.d_state, dm.n_heads);
    if (dm.conv) {
        auto xbc = silu(g, conv1d_causal(g, concat_cols(g, {xs, bc, cc}), p.conv_w, p.conv_b));
        xs = slice_cols(g, xbc, 0, dm.d_inner);
        bc = slice_cols(g, xbc, dm.d_inner, dm.d_state);
        cc = slice_cols(g, xbc, dm.d_inner + dm.d_state, dm.d_state);
    }
    auto dt = softplus(g, add(g, dt_raw, p.dt_bias));
    auto bh = repeat_mid(g, bc, dm.n_heads);
    auto ch = repeat_mid(g, cc, dm.n_heads);
    auto decay = neg(g, vexp(g, p.a_log));
    auto y = ssd_scan_chunked(g, xs, dt, bh, ch, decay, p.skip, dm.chunk, hooks);
    auto out = matmul(g, mul(g, y, silu(g, z)), p.out_w);
    return {out, seq.roles};
}

template <class T>
BasicTokenSeq<T> channel_mixer(BasicGraph<T>& g, const BasicTokenSeq<T>& seq,
                               const ChannelMixerParams<T>& p) {
    seq.check();
    if (p.kind == ChannelKind::none) return seq;
    const auto& xx = seq.data;
    BasicTensor<T> out;
    if (p.kind == ChannelKind::swiglu) {
        auto gate = silu(g, add(g, matmul(g, xx, p.w_gate), p.b_gate));
        auto up = add(g, matmul(g, xx, p.w_up), p.b_up);
        out = add(g, matmul(g, mul(g, gate, up), p.w_down), p.b_down);
    } else {
        auto hid = gelu(g, add(g, matmul(g, xx, p.w_up), p.b_up));
        out = add(g, matmul(g, hid, p.w_down), p.b_down);
    }
    return {out, seq.roles};
}

template <class T>
BasicTensor<T> rms_norm_rows(BasicGraph<T>& g, const BasicTensor<T>& rows,
                             const BasicTensor<T>& scale, double eps) {
    if (eps <= 0) throw ContractError("rms_norm: eps must be positive");
    auto ms = reduce_mean(g, mul(g, rows, rows), 1, true);
    auto inv = rsqrt(g, add_scalar(g, ms, eps));
    return mul(g, mul(g, rows, inv), scale);
}

template <class T>
BasicTokenSeq<T> rms_norm(BasicGraph<T>& g, const BasicTokenSeq<T>& seq,
                          const BasicTensor<T>& scale, double eps) {
    seq.check();
    return {rms_norm_rows(g, seq.data, scale, eps), seq.roles};
}

#define CIM_INSTANTIATE_LAYERS(T)                                                                  \
    template BasicTokenSeq<T> patchify<T>(BasicGraph<T>&, const BasicTensor<T>&,                   \
                                          const PatchEmbedParams<T>&);                             \
    template BasicTokenSeq<T> causal_attention<T>(BasicGraph<T>&, const BasicTokenSeq<T>&,         \
                                                  const AttnParams<T>&);                           \
    template BasicTensor<T> ssd_scan_recurrent<T>(BasicGraph<T>&, const BasicTensor<T>&,           \
                                                  const BasicTensor<T>&, const BasicTensor<T>&,    \
                                                  const BasicTensor<T>&, const BasicTensor<T>&,    \
                                                  const BasicTensor<T>&, const ScanHooks&);        \
    template BasicTensor<T> ssd_scan_chunked<T>(BasicGraph<T>&, const BasicTensor<T>&,             \
                                                const BasicTensor<T>&, const BasicTensor<T>&,      \
                                                const BasicTensor<T>&, const BasicTensor<T>&,      \
                                                const BasicTensor<T>&, int64_t, const ScanHooks&); \
    template BasicTokenSeq<T> mamba2_mixer<T>(BasicGraph<T>&, const BasicTokenSeq<T>&,             \
                                              const SsdParams<T>&, const ScanHooks&);              \
    template BasicTokenSeq<T> channel_mixer<T>(BasicGraph<T>&, const BasicTokenSeq<T>&,            \
                                               const ChannelMixerParams<T>&);                      \
    template BasicTensor<T> rms_norm_rows<T>(BasicGraph<T>&, const BasicTensor<T>&,                \
                                             const BasicTensor<T>&, double);                       \
    template BasicTokenSeq<T> rms_norm<T>(BasicGraph<T>&, const BasicTokenSeq<T>&,                 \
                                          const BasicTensor<T>&, double);

CIM_INSTANTIATE_LAYERS(float)
CIM_INSTANTIATE_LAYERS(double)

#undef CIM_INSTANTIATE_LAYERS

}  // namespace cim
