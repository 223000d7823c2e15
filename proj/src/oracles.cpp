#include "cim/oracles.hpp"

#include <cmath>
#include <limits>

#include "cim/config.hpp"
#include "cim/errors.hpp"

namespace cim::oracle {

std::vector<double> ssd_reference(int64_t L, int64_t H, int64_t N, int64_t hd,
                                  const std::vector<double>& x, const std::vector<double>& dt,
                                  const std::vector<double>& bmat, const std::vector<double>& cmat,
                                  const std::vector<double>& a, const std::vector<double>& skip) {
    const int64_t di = H * hd;
    if (static_cast<int64_t>(x.size()) != L * di || static_cast<int64_t>(dt.size()) != L * H ||
        static_cast<int64_t>(bmat.size()) != L * H * N || static_cast<int64_t>(cmat.size()) != L * H * N ||
        static_cast<int64_t>(a.size()) != H || static_cast<int64_t>(skip.size()) != di)
        throw ContractError("ssd_reference: inconsistent extents");

    std::vector<double> y(static_cast<size_t>(L * di), 0.0);
    std::vector<double> state(static_cast<size_t>(N * hd));
    for (int64_t h = 0; h < H; ++h) {
        std::fill(state.begin(), state.end(), 0.0);
        for (int64_t t = 0; t < L; ++t) {
            const double step = dt[t * H + h];
            const double alpha = std::exp(step * a[h]);
            const double* b = &bmat[(t * H + h) * N];
            const double* c = &cmat[(t * H + h) * N];
            for (int64_t n = 0; n < N; ++n)
                for (int64_t k = 0; k < hd; ++k)
                    state[n * hd + k] = alpha * state[n * hd + k] + step * b[n] * x[t * di + h * hd + k];
            for (int64_t k = 0; k < hd; ++k) {
                double acc = skip[h * hd + k] * x[t * di + h * hd + k];
                for (int64_t n = 0; n < N; ++n) acc += c[n] * state[n * hd + k];
                y[t * di + h * hd + k] = acc;
            }
        }
    }
    return y;
}

namespace {

// out[r] = x[r] . w[:, c] + b  for [in][out] weights, all row-major.
std::vector<double> dense(const std::vector<double>& x, int64_t rows, int64_t in, int64_t out,
                          const std::vector<double>& w, const std::vector<double>& b) {
    std::vector<double> y(static_cast<size_t>(rows * out), 0.0);
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < out; ++c) {
            double acc = b.empty() ? 0.0 : b[c];
            for (int64_t i = 0; i < in; ++i) acc += x[r * in + i] * w[i * out + c];
            y[r * out + c] = acc;
        }
    return y;
}

std::vector<double> to_vec(const BasicTensor<double>& t) {
    auto v = t.values();
    return std::vector<double>(v.begin(), v.end());
}

}  // namespace

std::vector<double> masked_attention(int64_t L, int64_t d, int64_t heads, bool causal,
                                     const std::vector<double>& x, const std::vector<double>& wq,
                                     const std::vector<double>& bq, const std::vector<double>& wk,
                                     const std::vector<double>& bk, const std::vector<double>& wv,
                                     const std::vector<double>& bv, const std::vector<double>& wo,
                                     const std::vector<double>& bo) {
    if (d % heads != 0) throw ContractError("masked_attention: heads must divide d");
    const int64_t hd = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const double neg_inf = -std::numeric_limits<double>::infinity();

    const auto q = dense(x, L, d, d, wq, bq);
    const auto k = dense(x, L, d, d, wk, bk);
    const auto v = dense(x, L, d, d, wv, bv);

    std::vector<double> ctx(static_cast<size_t>(L * d), 0.0);
    std::vector<double> row(static_cast<size_t>(L));
    for (int64_t h = 0; h < heads; ++h) {
        for (int64_t i = 0; i < L; ++i) {
            for (int64_t j = 0; j < L; ++j) {
                double s = 0.0;
                for (int64_t e = 0; e < hd; ++e) s += q[i * d + h * hd + e] * k[j * d + h * hd + e];
                const double mask = (causal && j > i) ? neg_inf : 0.0;
                row[j] = s * scale + mask;
            }
            double mx = neg_inf;
            for (int64_t j = 0; j < L; ++j) mx = std::max(mx, row[j]);
            double z = 0.0;
            for (int64_t j = 0; j < L; ++j) {
                row[j] = std::isinf(row[j]) ? 0.0 : std::exp(row[j] - mx);
                z += row[j];
            }
            for (int64_t e = 0; e < hd; ++e) {
                double acc = 0.0;
                for (int64_t j = 0; j < L; ++j) acc += row[j] * v[j * d + h * hd + e];
                ctx[i * d + h * hd + e] = acc / z;
            }
        }
    }
    return dense(ctx, L, d, d, wo, bo);
}

std::vector<double> plain_vit_features(const ModelParams<double>& params,
                                       const BasicTensor<double>& image) {
    const ModelConfig& cfg = params.cfg;
    if (cfg.token_mixer != TokenMixer::full_attn || cfg.heading != Heading::off ||
        cfg.flip != FlipMode::off || cfg.channel_mixer != ChannelKind::swiglu ||
        cfg.norm != NormKind::rms)
        throw ContractError("plain_vit_features expects the plain full-attn/swiglu configuration");

    const int64_t p = cfg.patch, d = cfg.dim, side = cfg.image / p;
    const int64_t n = side * side, rows = n + 1, pd = 3 * p * p;
    const double eps = 1e-6;
    auto img = image.values();

    // Patch rows in (channel, dy, dx) order, then embed.
    std::vector<double> patches(static_cast<size_t>(n * pd));
    for (int64_t gy = 0; gy < side; ++gy)
        for (int64_t gx = 0; gx < side; ++gx)
            for (int64_t c = 0; c < 3; ++c)
                for (int64_t dy = 0; dy < p; ++dy)
                    for (int64_t dx = 0; dx < p; ++dx)
                        patches[(gy * side + gx) * pd + (c * p + dy) * p + dx] =
                            img[(c * cfg.image + gy * p + dy) * cfg.image + gx * p + dx];
    auto tokens = dense(patches, n, pd, d, to_vec(params.find("patch_embed.weight")),
                        to_vec(params.find("patch_embed.bias")));

    tokens.resize(static_cast<size_t>(rows * d));
    const auto cls = to_vec(params.find("cls_token"));
    for (int64_t c = 0; c < d; ++c) tokens[n * d + c] = cls[c];
    const auto pos = to_vec(params.find("pos_embed"));
    for (size_t i = 0; i < tokens.size(); ++i) tokens[i] += pos[i];

    auto rms_rows = [&](const std::vector<double>& v, const std::vector<double>& scale) {
        std::vector<double> out(v.size());
        for (int64_t r = 0; r < rows; ++r) {
            double ms = 0.0;
            for (int64_t c = 0; c < d; ++c) ms += v[r * d + c] * v[r * d + c];
            const double inv = 1.0 / std::sqrt(ms / static_cast<double>(d) + eps);
            for (int64_t c = 0; c < d; ++c) out[r * d + c] = v[r * d + c] * inv * scale[c];
        }
        return out;
    };

    const int64_t hid = channel_hidden(ChannelKind::swiglu, d);
    for (int64_t b = 0; b < cfg.depth; ++b) {
        const std::string blk = "block" + std::to_string(b);
        const auto normed = rms_rows(tokens, to_vec(params.find(blk + ".mixer_norm")));
        const auto attn = masked_attention(
            rows, d, cfg.resolved_attn_heads(), false, normed, to_vec(params.find(blk + ".mixer.q.weight")),
            to_vec(params.find(blk + ".mixer.q.bias")), to_vec(params.find(blk + ".mixer.k.weight")),
            to_vec(params.find(blk + ".mixer.k.bias")), to_vec(params.find(blk + ".mixer.v.weight")),
            to_vec(params.find(blk + ".mixer.v.bias")), to_vec(params.find(blk + ".mixer.o.weight")),
            to_vec(params.find(blk + ".mixer.o.bias")));
        for (size_t i = 0; i < tokens.size(); ++i) tokens[i] += attn[i];

        const auto normed2 = rms_rows(tokens, to_vec(params.find(blk + ".channel_norm")));
        const auto gate = dense(normed2, rows, d, hid, to_vec(params.find(blk + ".channel.gate.weight")),
                                to_vec(params.find(blk + ".channel.gate.bias")));
        const auto up = dense(normed2, rows, d, hid, to_vec(params.find(blk + ".channel.up.weight")),
                              to_vec(params.find(blk + ".channel.up.bias")));
        std::vector<double> mid(static_cast<size_t>(rows * hid));
        for (size_t i = 0; i < mid.size(); ++i)
            mid[i] = gate[i] / (1.0 + std::exp(-gate[i])) * up[i];
        const auto down = dense(mid, rows, hid, d, to_vec(params.find(blk + ".channel.down.weight")),
                                to_vec(params.find(blk + ".channel.down.bias")));
        for (size_t i = 0; i < tokens.size(); ++i) tokens[i] += down[i];
    }
    return rms_rows(tokens, to_vec(params.find("final_norm")));
}

double finite_difference(const std::function<double()>& f, double* coord, double eps) {
    const double saved = *coord;
    *coord = saved + eps;
    const double hi = f();
    *coord = saved - eps;
    const double lo = f();
    *coord = saved;
    return (hi - lo) / (2.0 * eps);
}

}  // namespace cim::oracle
