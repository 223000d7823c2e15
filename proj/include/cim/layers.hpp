#pragma once

#include "cim/ops.hpp"
#include "cim/token_seq.hpp"

namespace cim {

// ---- parameter records ----

template <class T>
struct PatchEmbedParams {
    int64_t patch = 16;
    BasicTensor<T> weight;  // [3*p*p, d]
    BasicTensor<T> bias;    // [d]
};

template <class T>
struct AttnParams {
    int64_t heads = 1;
    MaskMode mask = MaskMode::causal;
    BasicTensor<T> wq, wk, wv, wo;  // [d, d]
    BasicTensor<T> bq, bk, bv, bo;  // [d]
};

// Dimension bundle of the selective-scan mixer. Projections use a single
// shared B/C group broadcast across heads; per-head B/C widths would roughly
// double the projection and overshoot the published model sizes.
struct SsdDims {
    int64_t d = 0;
    int64_t d_inner = 0;  // 2*d
    int64_t d_state = 64;
    int64_t head_dim = 64;
    int64_t n_heads = 0;  // d_inner / head_dim
    int64_t chunk = 64;
    int64_t conv_kernel = 4;
    bool conv = false;

    static SsdDims make(int64_t d, int64_t d_state = 64, int64_t head_dim = 64, bool conv = false);

    int64_t proj_width() const { return 2 * d_inner + 2 * d_state + n_heads; }
    int64_t conv_channels() const { return d_inner + 2 * d_state; }
};

template <class T>
struct SsdParams {
    SsdDims dims;
    BasicTensor<T> in_w;             // [d, proj_width]
    BasicTensor<T> dt_bias;          // [n_heads]
    BasicTensor<T> a_log;            // [n_heads]; decay coefficient a = -exp(a_log)
    BasicTensor<T> skip;             // [d_inner]
    BasicTensor<T> out_w;            // [d_inner, d]
    BasicTensor<T> conv_w, conv_b;   // [conv_channels, K], [conv_channels] when dims.conv
};

enum class ChannelKind { swiglu, plain_mlp, none };

template <class T>
struct ChannelMixerParams {
    ChannelKind kind = ChannelKind::swiglu;
    BasicTensor<T> w_gate, b_gate;  // swiglu only: [d, hid], [hid]
    BasicTensor<T> w_up, b_up;      // [d, hid], [hid]
    BasicTensor<T> w_down, b_down;  // [hid, d], [d]
};

// swiglu uses floor(2.5*d), the plain two-layer mlp uses 4*d.
int64_t channel_hidden(ChannelKind kind, int64_t d);

// Test-only knobs threaded into the scan kernels.
struct ScanHooks {
    bool force_unit_decay = false;  // pretend exp(dt*a) == 1 everywhere
};

// ---- forward functions ----

template <class T>
BasicTokenSeq<T> patchify(BasicGraph<T>& g, const BasicTensor<T>& image,
                          const PatchEmbedParams<T>& p);

template <class T>
BasicTokenSeq<T> causal_attention(BasicGraph<T>& g, const BasicTokenSeq<T>& seq,
                                  const AttnParams<T>& p);

// Sequential reference form of the selective scan. Per head with state S:
//   alpha_t = exp(dt_t * a); S  = alpha_t*S + dt_t*(B_t outer x_t);
//   y_t = C_t^T S + skip (.) x_t, starting from S = 0.
// x [L, d_inner], dt [L, H] (all positive), bmat/cmat [L, H, N], a [H]
// (negative), skip [d_inner].
template <class T>
BasicTensor<T> ssd_scan_recurrent(BasicGraph<T>& g, const BasicTensor<T>& x,
                                  const BasicTensor<T>& dt, const BasicTensor<T>& bmat,
                                  const BasicTensor<T>& cmat, const BasicTensor<T>& a,
                                  const BasicTensor<T>& skip, const ScanHooks& hooks = {});

// Same map computed chunk-parallel: decay-weighted pairwise products inside
// each chunk plus a carried inter-chunk state. Differs from the recurrent
// form only by floating-point reassociation.
template <class T>
BasicTensor<T> ssd_scan_chunked(BasicGraph<T>& g, const BasicTensor<T>& x,
                                const BasicTensor<T>& dt, const BasicTensor<T>& bmat,
                                const BasicTensor<T>& cmat, const BasicTensor<T>& a,
                                const BasicTensor<T>& skip, int64_t chunk_len,
                                const ScanHooks& hooks = {});

template <class T>
BasicTokenSeq<T> mamba2_mixer(BasicGraph<T>& g, const BasicTokenSeq<T>& seq,
                              const SsdParams<T>& p, const ScanHooks& hooks = {});

template <class T>
BasicTokenSeq<T> channel_mixer(BasicGraph<T>& g, const BasicTokenSeq<T>& seq,
                               const ChannelMixerParams<T>& p);

// Per token: x * scale / sqrt(mean(x^2) + eps).
template <class T>
BasicTokenSeq<T> rms_norm(BasicGraph<T>& g, const BasicTokenSeq<T>& seq,
                          const BasicTensor<T>& scale, double eps = 1e-6);

template <class T>
BasicTensor<T> rms_norm_rows(BasicGraph<T>& g, const BasicTensor<T>& rows,
                             const BasicTensor<T>& scale, double eps = 1e-6);

}  // namespace cim
