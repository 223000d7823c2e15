#include "cim/ops.hpp"

#include <array>
#include <cmath>
#include <cstring>

#include "cim/errors.hpp"
#include "cim/op_detail.hpp"

namespace cim {

using detail::finish;
using detail::make_out;

namespace {

// ---- broadcast plan: trailing-aligned, extent 1 stretches ----

struct Bcast {
    std::array<int64_t, 4> out{1, 1, 1, 1};
    std::array<int64_t, 4> sa{0, 0, 0, 0};
    std::array<int64_t, 4> sb{0, 0, 0, 0};
    Shape out_shape;
};

inline std::array<int64_t, 4> pad4(const Shape& s) {
    std::array<int64_t, 4> d{1, 1, 1, 1};
    for (int i = 0; i < s.rank(); ++i) d[static_cast<size_t>(4 - s.rank() + i)] = s[i];
    return d;
}

inline std::array<int64_t, 4> strides4(const std::array<int64_t, 4>& d) {
    std::array<int64_t, 4> st{};
    int64_t run = 1;
    for (int i = 3; i >= 0; --i) {
        st[static_cast<size_t>(i)] = (d[static_cast<size_t>(i)] == 1) ? 0 : run;
        run *= d[static_cast<size_t>(i)];
    }
    return st;
}

Bcast plan_broadcast(const Shape& a, const Shape& b, std::string_view op) {
    auto a4 = pad4(a), b4 = pad4(b);
    Bcast p;
    for (size_t i = 0; i < 4; ++i) {
        if (a4[i] != b4[i] && a4[i] != 1 && b4[i] != 1)
            throw DimError(std::string(op) + ": shapes " + a.str() + " and " + b.str() +
                           " are not broadcastable");
        p.out[i] = std::max(a4[i], b4[i]);
    }
    p.sa = strides4(a4);
    p.sb = strides4(b4);
    int rank = std::max(a.rank(), b.rank());
    Shape s;
    if (rank == 1) s = Shape{p.out[3]};
    else if (rank == 2) s = Shape{p.out[2], p.out[3]};
    else if (rank == 3) s = Shape{p.out[1], p.out[2], p.out[3]};
    else if (rank == 4) s = Shape{p.out[0], p.out[1], p.out[2], p.out[3]};
    p.out_shape = s;
    return p;
}

// Binary elementwise with broadcast. FwdFn: T(T,T); GradA/GradB: contribution
// given (upstream, a value, b value).
template <class T, class FwdFn, class GradA, class GradB>
BasicTensor<T> binary_op(BasicGraph<T>& g, const BasicTensor<T>& a, const BasicTensor<T>& b,
                         std::string_view kind, FwdFn fwd, GradA ga_fn, GradB gb_fn) {
    Bcast p = plan_broadcast(a.shape(), b.shape(), kind);
    auto out = make_out(g, p.out_shape);
    {
        const T* pa = a.values().data();
        const T* pb = b.values().data();
        T* po = out.values().data();
        int64_t o = 0;
        for (int64_t i0 = 0; i0 < p.out[0]; ++i0)
            for (int64_t i1 = 0; i1 < p.out[1]; ++i1)
                for (int64_t i2 = 0; i2 < p.out[2]; ++i2) {
                    int64_t ba = i0 * p.sa[0] + i1 * p.sa[1] + i2 * p.sa[2];
                    int64_t bb = i0 * p.sb[0] + i1 * p.sb[1] + i2 * p.sb[2];
                    for (int64_t i3 = 0; i3 < p.out[3]; ++i3, ++o)
                        po[o] = fwd(pa[ba + i3 * p.sa[3]], pb[bb + i3 * p.sb[3]]);
                }
    }
    bool need = a.requires_grad() || b.requires_grad();
    auto bw = [as = a.ptr(), bs = b.ptr(), os = out.ptr(), p, ga_fn, gb_fn]() {
        const T* pa = as->v.data();
        const T* pb = bs->v.data();
        const T* go = os->g.data();
        T* gra = as->requires_grad ? ensure_grad(*as).data() : nullptr;
        T* grb = bs->requires_grad ? ensure_grad(*bs).data() : nullptr;
        int64_t o = 0;
        for (int64_t i0 = 0; i0 < p.out[0]; ++i0)
            for (int64_t i1 = 0; i1 < p.out[1]; ++i1)
                for (int64_t i2 = 0; i2 < p.out[2]; ++i2) {
                    int64_t ba = i0 * p.sa[0] + i1 * p.sa[1] + i2 * p.sa[2];
                    int64_t bb = i0 * p.sb[0] + i1 * p.sb[1] + i2 * p.sb[2];
                    for (int64_t i3 = 0; i3 < p.out[3]; ++i3, ++o) {
                        int64_t ia = ba + i3 * p.sa[3];
                        int64_t ib = bb + i3 * p.sb[3];
                        if (gra) gra[ia] += ga_fn(go[o], pa[ia], pb[ib]);
                        if (grb) grb[ib] += gb_fn(go[o], pa[ia], pb[ib]);
                    }
                }
    };
    finish(g, out, kind, static_cast<uint64_t>(out.numel()), need, std::move(bw));
    return out;
}

// Unary elementwise. Grad: contribution given (upstream, x, y=f(x)).
template <class T, class FwdFn, class GradFn>
BasicTensor<T> unary_op(BasicGraph<T>& g, const BasicTensor<T>& a, std::string_view kind,
                        FwdFn fwd, GradFn grad_fn) {
    auto out = make_out(g, a.shape());
    {
        const T* pa = a.values().data();
        T* po = out.values().data();
        int64_t n = a.numel();
        for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
    }
    bool need = a.requires_grad();
    auto bw = [as = a.ptr(), os = out.ptr(), grad_fn]() {
        if (!as->requires_grad) return;
        const T* pa = as->v.data();
        const T* po = os->v.data();
        const T* go = os->g.data();
        T* gra = ensure_grad(*as).data();
        int64_t n = static_cast<int64_t>(as->v.size());
        for (int64_t i = 0; i < n; ++i) gra[i] += grad_fn(go[i], pa[i], po[i]);
    };
    finish(g, out, kind, static_cast<uint64_t>(out.numel()), need, std::move(bw));
    return out;
}

// ---- raw matmul kernels (row-major, accumulate into c) ----

template <class T>
void mm_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (int64_t kk = 0; kk < k; ++kk) {
            T aik = arow[kk];
            const T* brow = b + kk * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

// da += go @ b^T
template <class T>
void mm_abt_acc(const T* go, const T* b, T* da, int64_t m, int64_t n, int64_t k) {
    for (int64_t i = 0; i < m; ++i) {
        const T* grow = go + i * n;
        T* darow = da + i * k;
        for (int64_t kk = 0; kk < k; ++kk) {
            const T* brow = b + kk * n;
            T s = 0;
            for (int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
            darow[kk] += s;
        }
    }
}

// db += a^T @ go
template <class T>
void mm_atb_acc(const T* a, const T* go, T* db, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* grow = go + i * n;
        for (int64_t kk = 0; kk < k; ++kk) {
            T aik = arow[kk];
            T* dbrow = db + kk * n;
            for (int64_t j = 0; j < n; ++j) dbrow[j] += aik * grow[j];
        }
    }
}

template <class T>
T stable_sigmoid(T x) {
    if (x >= T(0)) {
        T e = std::exp(-x);
        return T(1) / (T(1) + e);
    }
    T e = std::exp(x);
    return e / (T(1) + e);
}

template <class T>
T stable_softplus(T x) {
    T m = x > T(0) ? x : T(0);
    return m + std::log1p(std::exp(-std::abs(x)));
}

constexpr double inv_sqrt2 = 0.7071067811865475;
constexpr double inv_sqrt2pi = 0.3989422804014327;

}  // namespace

// ---- linear algebra ----

template <class T>
BasicTensor<T> matmul(BasicGraph<T>& g, const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.shape().rank() != 2 || b.shape().rank() != 2)
        throw DimError("matmul: expected rank-2 operands, got " + a.shape().str() + " and " +
                       b.shape().str());
    int64_t m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2)
        throw DimError("matmul: inner extents differ, " + a.shape().str() + " vs " +
                       b.shape().str());
    auto out = make_out(g, Shape{m, n});
    mm_acc(a.values().data(), b.values().data(), out.values().data(), m, k, n);
    bool need = a.requires_grad() || b.requires_grad();
    auto bw = [as = a.ptr(), bs = b.ptr(), os = out.ptr(), m, k, n]() {
        const T* go = os->g.data();
        if (as->requires_grad)
            mm_abt_acc(go, bs->v.data(), ensure_grad(*as).data(), m, n, k);
        if (bs->requires_grad)
            mm_atb_acc(as->v.data(), go, ensure_grad(*bs).data(), m, k, n);
    };
    finish(g, out, "matmul", static_cast<uint64_t>(m * k * n), need, std::move(bw));
    return out;
}

template <class T>
BasicTensor<T> bmm(BasicGraph<T>& g, const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.shape().rank() != 3 || b.shape().rank() != 3)
        throw DimError("bmm: expected rank-3 operands, got " + a.shape().str() + " and " +
                       b.shape().str());
    int64_t bt = a.shape()[0], m = a.shape()[1], k = a.shape()[2];
    int64_t n = b.shape()[2];
    if (b.shape()[0] != bt || b.shape()[1] != k)
        throw DimError("bmm: incompatible shapes " + a.shape().str() + " vs " + b.shape().str());
    auto out = make_out(g, Shape{bt, m, n});
    for (int64_t h = 0; h < bt; ++h)
        mm_acc(a.values().data() + h * m * k, b.values().data() + h * k * n,
               out.values().data() + h * m * n, m, k, n);
    bool need = a.requires_grad() || b.requires_grad();
    auto bw = [as = a.ptr(), bs = b.ptr(), os = out.ptr(), bt, m, k, n]() {
        const T* go = os->g.data();
        if (as->requires_grad) {
            T* da = ensure_grad(*as).data();
            for (int64_t h = 0; h < bt; ++h)
                mm_abt_acc(go + h * m * n, bs->v.data() + h * k * n, da + h * m * k, m, n, k);
        }
        if (bs->requires_grad) {
            T* db = ensure_grad(*bs).data();
            for (int64_t h = 0; h < bt; ++h)
                mm_atb_acc(as->v.data() + h * m * k, go + h * m * n, db + h * k * n, m, k, n);
        }
    };
    finish(g, out, "bmm", static_cast<uint64_t>(bt * m * k * n), need, std::move(bw));
    return out;
}

template <class T>
BasicTensor<T> transpose(BasicGraph<T>& g, const BasicTensor<T>& a) {
    if (a.shape().rank() != 2) throw DimError("transpose: expected rank 2, got " + a.shape().str());
    int64_t m = a.shape()[0], n = a.shape()[1];
    auto out = make_out(g, Shape{n, m});
    const T* pa = a.values().data();
    T* po = out.values().data();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) po[j * m + i] = pa[i * n + j];
    bool need = a.requires_grad();
    auto bw = [as = a.ptr(), os = out.ptr(), m, n]() {
        if (!as->requires_grad) return;
        const T* go = os->g.data();
        T* da = ensure_grad(*as).data();
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) da[i * n + j] += go[j * m + i];
    };
    finish(g, out, "transpose", 0, need, std::move(bw));
    return out;
}

template <class T>
BasicTensor<T> transpose_last2(BasicGraph<T>& g, const BasicTensor<T>& a) {
    if (a.shape().rank() != 3)
        throw DimError("transpose_last2: expected rank 3, got " + a.shape().str());
    int64_t bt = a.shape()[0], m = a.shape()[1], n = a.shape()[2];
    auto out = make_out(g, Shape{bt, n, m});
    const T* pa = a.values().data();
    T* po = out.values().data();
    for (int64_t h = 0; h < bt; ++h)
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) po[h * n * m + j * m + i] = pa[h * m * n + i * n + j];
    bool need = a.requires_grad();
    auto bw = [as = a.ptr(), os = out.ptr(), bt, m, n]() {
        if (!as->requires_grad) return;
        const T* go = os->g.data();
        T* da = ensure_grad(*as).data();
        for (int64_t h = 0; h < bt; ++h)
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j)
                    da[h * m * n + i * n + j] += go[h * n * m + j * m + i];
    };
    finish(g, out, "transpose_last2", 0, need, std::move(bw));
    return out;
}

// ---- elementwise ----

template <class T>
BasicTensor<T> add(BasicGraph<T>& g, const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return binary_op(
        g, a, b, "add", [](T x, T y) { return x + y; },
        [](T go, T, T) { return go; }, [](T go, T, T) { return go; });
}

template <class T>
BasicTensor<T> sub(BasicGraph<T>& g, const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return binary_op(
        g, a, b, "sub", [](T x, T y) { return x - y; },
        [](T go, T, T) { return go; }, [](T go, T, T) { return -go; });
}

template <class T>
BasicTensor<T> mul(BasicGraph<T>& g, const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return binary_op(
        g, a, b, "mul", [](T x, T y) { return x * y; },
        [](T go, T, T y) { return go * y; }, [](T go, T x, T) { return go * x; });
}

template <class T>
BasicTensor<T> neg(BasicGraph<T>& g, const BasicTensor<T>& a) {
    return unary_op(
        g, a, "neg", [](T x) { return -x; }, [](T go, T, T) { return -go; });
}

template <class T>
BasicTensor<T> vexp(BasicGraph<T>& g, const BasicTensor<T>& a) {
    return unary_op(
        g, a, "exp", [](T x) { return std::exp(x); }, [](T go, T, T y) { return go * y; });
}

template <class T>
BasicTensor<T> silu(BasicGraph<T>& g, const BasicTensor<T>& a) {
    return unary_op(
        g, a, "silu", [](T x) { return x * stable_sigmoid(x); },
        [](T go, T x, T) {
            T s = stable_sigmoid(x);
            return go * (s + x * s * (T(1) - s));
        });
}

template <class T>
BasicTensor<T> softplus(BasicGraph<T>& g, const BasicTensor<T>& a) {
    return unary_op(
        g, a, "softplus", [](T x) { return stable_softplus(x); },
        [](T go, T x, T) { return go * stable_sigmoid(x); });
}

template <class T>
BasicTensor<T> gelu(BasicGraph<T>& g, const BasicTensor<T>& a) {
    return unary_op(
        g, a, "gelu",
        [](T x) {
            return static_cast<T>(0.5 * static_cast<double>(x) *
                                  (1.0 + std::erf(static_cast<double>(x) * inv_sqrt2)));
        },
        [](T go, T x, T) {
            double xd = static_cast<double>(x);
            double cdf = 0.5 * (1.0 + std::erf(xd * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * xd * xd);
            return static_cast<T>(static_cast<double>(go) * (cdf + xd * pdf));
        });
}

template <class T>
BasicTensor<T> sigmoid(BasicGraph<T>& g, const BasicTensor<T>& a) {
    return unary_op(
        g, a, "sigmoid", [](T x) { return stable_sigmoid(x); },
        [](T go, T, T y) { return go * y * (T(1) - y); });
}

template <class T>
BasicTensor<T> rsqrt(BasicGraph<T>& g, const BasicTensor<T>& a) {
    return unary_op(
        g, a, "rsqrt", [](T x) { return T(1) / std::sqrt(x); },
        [](T go, T, T y) { return go * T(-0.5) * y * y * y; });
}

template <class T>
BasicTensor<T> add_scalar(BasicGraph<T>& g, const BasicTensor<T>& a, double c) {
    T cv = static_cast<T>(c);
    return unary_op(
        g, a, "add_scalar", [cv](T x) { return x + cv; }, [](T go, T, T) { return go; });
}

template <class T>
BasicTensor<T> mul_scalar(BasicGraph<T>& g, const BasicTensor<T>& a, double c) {
    T cv = static_cast<T>(c);
    return unary_op(
        g, a, "mul_scalar", [cv](T x) { return x * cv; }, [cv](T go, T, T) { return go * cv; });
}

// ---- reductions ----

namespace {

struct AxisSplit {
    int64_t outer, ext, inner;
};

AxisSplit axis_split(const Shape& s, int axis) {
    if (axis < 0 || axis >= s.rank())
        throw DimError("reduce: axis " + std::to_string(axis) + " out of range for " + s.str());
    AxisSplit sp{1, s[axis], 1};
    for (int i = 0; i < axis; ++i) sp.outer *= s[i];
    for (int i = axis + 1; i < s.rank(); ++i) sp.inner *= s[i];
    return sp;
}

Shape reduced_shape(const Shape& s, int axis, bool keepdim) {
    std::vector<int64_t> d;
    for (int i = 0; i < s.rank(); ++i) {
        if (i == axis) {
            if (keepdim) d.push_back(1);
        } else {
            d.push_back(s[i]);
        }
    }
    Shape out;
    switch (d.size()) {
        case 0: out = Shape::scalar(); break;
        case 1: out = Shape{d[0]}; break;
        case 2: out = Shape{d[0], d[1]}; break;
        case 3: out = Shape{d[0], d[1], d[2]}; break;
        default: out = Shape{d[0], d[1], d[2], d[3]}; break;
    }
    return out;
}

template <class T>
BasicTensor<T> reduce_impl(BasicGraph<T>& g, const BasicTensor<T>& a, int axis, bool keepdim,
                           bool is_mean) {
    AxisSplit sp = axis_split(a.shape(), axis);
    auto out = make_out(g, reduced_shape(a.shape(), axis, keepdim));
    T scale = is_mean ? T(1) / static_cast<T>(sp.ext) : T(1);
    const T* pa = a.values().data();
    T* po = out.values().data();
    for (int64_t o = 0; o < sp.outer; ++o)
        for (int64_t e = 0; e < sp.ext; ++e) {
            const T* src = pa + (o * sp.ext + e) * sp.inner;
            T* dst = po + o * sp.inner;
            for (int64_t i = 0; i < sp.inner; ++i) dst[i] += src[i] * scale;
        }
    bool need = a.requires_grad();
    auto bw = [as = a.ptr(), os = out.ptr(), sp, scale]() {
        if (!as->requires_grad) return;
        const T* go = os->g.data();
        T* da = ensure_grad(*as).data();
        for (int64_t o = 0; o < sp.outer; ++o)
            for (int64_t e = 0; e < sp.ext; ++e) {
                T* dst = da + (o * sp.ext + e) * sp.inner;
                const T* src = go + o * sp.inner;
                for (int64_t i = 0; i < sp.inner; ++i) dst[i] += src[i] * scale;
            }
    };
    finish(g, out, is_mean ? "mean" : "sum", static_cast<uint64_t>(a.numel()), need, std::move(bw));
    return out;
}

}  // namespace

template <class T>
BasicTensor<T> reduce_mean(BasicGraph<T>& g, const BasicTensor<T>& a, int axis, bool keepdim) {
    return reduce_impl(g, a, axis, keepdim, true);
}

template <class T>
BasicTensor<T> reduce_sum(BasicGraph<T>& g, const BasicTensor<T>& a, int axis, bool keepdim) {
    return reduce_impl(g, a, axis, keepdim, false);
}

template <class T>
BasicTensor<T> sum_all(BasicGraph<T>& g, const BasicTensor<T>& a) {
    auto out = make_out(g, Shape::scalar());
    T s = 0;
    for (T x : a.values()) s += x;
    out.values()[0] = s;
    bool need = a.requires_grad();
    auto bw = [as = a.ptr(), os = out.ptr()]() {
        if (!as->requires_grad) return;
        T go = os->g[0];
        for (T& x : ensure_grad(*as)) x += go;
    };
    finish(g, out, "sum_all", static_cast<uint64_t>(a.numel()), need, std::move(bw));
    return out;
}

template <class T>
BasicTensor<T> mean_all(BasicGraph<T>& g, const BasicTensor<T>& a) {
    auto out = make_out(g, Shape::scalar());
    T s = 0;
    for (T x : a.values()) s += x;
    T scale = T(1) / static_cast<T>(a.numel());
    out.values()[0] = s * scale;
    bool need = a.requires_grad();
    auto bw = [as = a.ptr(), os = out.ptr(), scale]() {
        if (!as->requires_grad) return;
        T go = os->g[0] * scale;
        for (T& x : ensure_grad(*as)) x += go;
    };
    finish(g, out, "mean_all", static_cast<uint64_t>(a.numel()), need, std::move(bw));
    return out;
}

template <class T>
BasicTensor<T> argmax_axis(const BasicTensor<T>& a, int axis) {
    AxisSplit sp = axis_split(a.shape(), axis);
    auto out = BasicTensor<T>::zeros(reduced_shape(a.shape(), axis, false));
    const T* pa = a.values().data();
    T* po = out.values().data();
    for (int64_t o = 0; o < sp.outer; ++o)
        for (int64_t i = 0; i < sp.inner; ++i) {
            int64_t best = 0;
            T best_v = pa[o * sp.ext * sp.inner + i];
            for (int64_t e = 1; e < sp.ext; ++e) {
                T v = pa[(o * sp.ext + e) * sp.inner + i];
                if (v > best_v) {
                    best_v = v;
                    best = e;
                }
            }
            po[o * sp.inner + i] = static_cast<T>(best);
        }
    return out;
}

template <class T>
int64_t argmax(const BasicTensor<T>& a) {
    const auto v = a.values();
    int64_t best = 0;
    for (int64_t i = 1; i < static_cast<int64_t>(v.size()); ++i)
        if (v[static_cast<size_t>(i)] > v[static_cast<size_t>(best)]) best = i;
    return best;
}

// ---- data movement ----

template <class T>
BasicTensor<T> reshape(BasicGraph<T>& g, const BasicTensor<T>& a, const Shape& s) {
    if (s.numel() != a.numel())
        throw DimError("reshape: " + a.shape().str() + " -> " + s.str() + " changes element count");
    auto out = make_out(g, s);
    std::memcpy(out.values().data(), a.values().data(), sizeof(T) * static_cast<size_t>(a.numel()));
    bool need = a.requires_grad();
    auto bw = [as = a.ptr(), os = out.ptr()]() {
        if (!as->requires_grad) return;
        T* da = ensure_grad(*as).data();
        const T* go = os->g.data();
        for (size_t i = 0; i < as->v.size(); ++i) da[i] += go[i];
    };
    finish(g, out, "reshape", 0, need, std::move(bw));
    return out;
}

template <class T>
BasicTensor<T> concat_rows(BasicGraph<T>& g, const std::vector<BasicTensor<T>>& parts) {
    if (parts.empty()) throw DimError("concat_rows: no parts");
    int64_t d = parts[0].shape().rank() == 2 ? parts[0].shape()[1] : -1;
    int64_t rows = 0;
    for (const auto& p : parts) {
        if (p.shape().rank() != 2 || p.shape()[1] != d)
            throw DimError("concat_rows: part shape " + p.shape().str() + " incompatible");
        rows += p.shape()[0];
    }
    auto out = make_out(g, Shape{rows, d});
    T* po = out.values().data();
    int64_t off = 0;
    bool need = false;
    for (const auto& p : parts) {
        std::memcpy(po + off * d, p.values().data(),
                    sizeof(T) * static_cast<size_t>(p.numel()));
        off += p.shape()[0];
        need = need || p.requires_grad();
    }
    std::vector<std::shared_ptr<TensorStorage<T>>> srcs;
    for (const auto& p : parts) srcs.push_back(p.ptr());
    auto bw = [srcs, os = out.ptr(), d]() {
        const T* go = os->g.data();
        int64_t off = 0;
        for (const auto& s : srcs) {
            int64_t n = static_cast<int64_t>(s->v.size());
            if (s->requires_grad) {
                T* ds = ensure_grad(*s).data();
                const T* src = go + off;
                for (int64_t i = 0; i < n; ++i) ds[i] += src[i];
            }
            off += n;
        }
        (void)d;
    };
    finish(g, out, "concat_rows", 0, need, std::move(bw));
    return out;
}

template <class T>
BasicTensor<T> concat_cols(BasicGraph<T>& g, const std::vector<BasicTensor<T>>& parts) {
    if (parts.empty()) throw DimError("concat_cols: no parts");
    int64_t rows = parts[0].shape().rank() == 2 ? parts[0].shape()[0] : -1;
    int64_t cols = 0;
    for (const auto& p : parts) {
        if (p.shape().rank() != 2 || p.shape()[0] != rows)
            throw DimError("concat_cols: part shape " + p.shape().str() + " incompatible");
        cols += p.shape()[1];
    }
    auto out = make_out(g, Shape{rows, cols});
    T* po = out.values().data();
    bool need = false;
    int64_t coff = 0;
    for (const auto& p : parts) {
        int64_t pc = p.shape()[1];
        const T* src = p.values().data();
        for (int64_t r = 0; r < rows; ++r)
            std::memcpy(po + r * cols + coff, src + r * pc, sizeof(T) * static_cast<size_t>(pc));
        coff += pc;
        need = need || p.requires_grad();
    }
    std::vector<std::shared_ptr<TensorStorage<T>>> srcs;
    for (const auto& p : parts) srcs.push_back(p.ptr());
    auto bw = [srcs, os = out.ptr(), rows, cols]() {
        const T* go = os->g.data();
        int64_t coff = 0;
        for (const auto& s : srcs) {
            int64_t pc = s->shape[1];
            if (s->requires_grad) {
                T* ds = ensure_grad(*s).data();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < pc; ++c) ds[r * pc + c] += go[r * cols + coff + c];
            }
            coff += pc;
        }
    };
    finish(g, out, "concat_cols", 0, need, std::move(bw));
    return out;
}

template <class T>
BasicTensor<T> slice_cols(BasicGraph<T>& g, const BasicTensor<T>& a, int64_t start, int64_t len) {
    if (a.shape().rank() != 2) throw DimError("slice_cols: expected rank 2, got " + a.shape().str());
    int64_t rows = a.shape()[0], cols = a.shape()[1];
    if (start < 0 || len <= 0 || start + len > cols)
        throw DimError("slice_cols: range [" + std::to_string(start) + ", " +
                       std::to_string(start + len) + ") outside " + a.shape().str());
    auto out = make_out(g, Shape{rows, len});
    const T* pa = a.values().data();
    T* po = out.values().data();
    for (int64_t r = 0; r < rows; ++r)
        std::memcpy(po + r * len, pa + r * cols + start, sizeof(T) * static_cast<size_t>(len));
    bool need = a.requires_grad();
    auto bw = [as = a.ptr(), os = out.ptr(), rows, cols, start, len]() {
        if (!as->requires_grad) return;
        T* da = ensure_grad(*as).data();
        const T* go = os->g.data();
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < len; ++c) da[r * cols + start + c] += go[r * len + c];
    };
    finish(g, out, "slice_cols", 0, need, std::move(bw));
    return out;
}

template <class T>
BasicTensor<T> gather_rows(BasicGraph<T>& g, const BasicTensor<T>& a,
                           const std::vector<int64_t>& idx) {
    if (a.shape().rank() != 2) throw DimError("gather_rows: expected rank 2, got " + a.shape().str());
    int64_t rows = a.shape()[0], d = a.shape()[1];
    for (int64_t i : idx)
        if (i < 0 || i >= rows) throw DimError("gather_rows: index out of range");
    auto out = make_out(g, Shape{static_cast<int64_t>(idx.size()), d});
    const T* pa = a.values().data();
    T* po = out.values().data();
    for (size_t r = 0; r < idx.size(); ++r)
        std::memcpy(po + static_cast<int64_t>(r) * d, pa + idx[r] * d,
                    sizeof(T) * static_cast<size_t>(d));
    bool need = a.requires_grad();
    auto bw = [as = a.ptr(), os = out.ptr(), idx, d]() {
        if (!as->requires_grad) return;
        T* da = ensure_grad(*as).data();
        const T* go = os->g.data();
        for (size_t r = 0; r < idx.size(); ++r) {
            const T* src = go + static_cast<int64_t>(r) * d;
            T* dst = da + idx[r] * d;
            for (int64_t c = 0; c < d; ++c) dst[c] += src[c];
        }
    };
    finish(g, out, "gather_rows", 0, need, std::move(bw));
    return out;
}

template <class T>
BasicTensor<T> repeat_mid(BasicGraph<T>& g, const BasicTensor<T>& a, int64_t reps) {
    if (a.shape().rank() != 2) throw DimError("repeat_mid: expected rank 2, got " + a.shape().str());
    int64_t rows = a.shape()[0], n = a.shape()[1];
    auto out = make_out(g, Shape{rows, reps, n});
    const T* pa = a.values().data();
    T* po = out.values().data();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t h = 0; h < reps; ++h)
            std::memcpy(po + (r * reps + h) * n, pa + r * n, sizeof(T) * static_cast<size_t>(n));
    bool need = a.requires_grad();
    auto bw = [as = a.ptr(), os = out.ptr(), rows, reps, n]() {
        if (!as->requires_grad) return;
        T* da = ensure_grad(*as).data();
        const T* go = os->g.data();
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t h = 0; h < reps; ++h)
                for (int64_t c = 0; c < n; ++c) da[r * n + c] += go[(r * reps + h) * n + c];
    };
    finish(g, out, "repeat_mid", 0, need, std::move(bw));
    return out;
}

template <class T>
BasicTensor<T> split_heads(BasicGraph<T>& g, const BasicTensor<T>& a, int64_t heads) {
    if (a.shape().rank() != 2) throw DimError("split_heads: expected rank 2, got " + a.shape().str());
    int64_t L = a.shape()[0], d = a.shape()[1];
    if (d % heads != 0)
        throw DimError("split_heads: width " + std::to_string(d) + " not divisible by " +
                       std::to_string(heads) + " heads");
    int64_t hd = d / heads;
    auto out = make_out(g, Shape{heads, L, hd});
    const T* pa = a.values().data();
    T* po = out.values().data();
    for (int64_t h = 0; h < heads; ++h)
        for (int64_t l = 0; l < L; ++l)
            std::memcpy(po + (h * L + l) * hd, pa + l * d + h * hd,
                        sizeof(T) * static_cast<size_t>(hd));
    bool need = a.requires_grad();
    auto bw = [as = a.ptr(), os = out.ptr(), heads, L, d, hd]() {
        if (!as->requires_grad) return;
        T* da = ensure_grad(*as).data();
        const T* go = os->g.data();
        for (int64_t h = 0; h < heads; ++h)
            for (int64_t l = 0; l < L; ++l)
                for (int64_t c = 0; c < hd; ++c)
                    da[l * d + h * hd + c] += go[(h * L + l) * hd + c];
    };
    finish(g, out, "split_heads", 0, need, std::move(bw));
    return out;
}

template <class T>
BasicTensor<T> merge_heads(BasicGraph<T>& g, const BasicTensor<T>& a) {
    if (a.shape().rank() != 3) throw DimError("merge_heads: expected rank 3, got " + a.shape().str());
    int64_t heads = a.shape()[0], L = a.shape()[1], hd = a.shape()[2];
    int64_t d = heads * hd;
    auto out = make_out(g, Shape{L, d});
    const T* pa = a.values().data();
    T* po = out.values().data();
    for (int64_t h = 0; h < heads; ++h)
        for (int64_t l = 0; l < L; ++l)
            std::memcpy(po + l * d + h * hd, pa + (h * L + l) * hd,
                        sizeof(T) * static_cast<size_t>(hd));
    bool need = a.requires_grad();
    auto bw = [as = a.ptr(), os = out.ptr(), heads, L, d, hd]() {
        if (!as->requires_grad) return;
        T* da = ensure_grad(*as).data();
        const T* go = os->g.data();
        for (int64_t h = 0; h < heads; ++h)
            for (int64_t l = 0; l < L; ++l)
                for (int64_t c = 0; c < hd; ++c)
                    da[(h * L + l) * hd + c] += go[l * d + h * hd + c];
    };
    finish(g, out, "merge_heads", 0, need, std::move(bw));
    return out;
}

template <class T>
BasicTensor<T> extract_patches(BasicGraph<T>& g, const BasicTensor<T>& image, int64_t p) {
    if (image.shape().rank() != 3 || image.shape()[0] != 3)
        throw DimError("extract_patches: expected 3xHxW image, got " + image.shape().str());
    int64_t h = image.shape()[1], w = image.shape()[2];
    if (p <= 0 || h % p != 0 || w % p != 0)
        throw DimError("extract_patches: image " + image.shape().str() +
                       " not divisible by patch " + std::to_string(p));
    int64_t gh = h / p, gw = w / p, n = gh * gw, row = 3 * p * p;
    auto out = make_out(g, Shape{n, row});
    const T* pi = image.values().data();
    T* po = out.values().data();
    for (int64_t py = 0; py < gh; ++py)
        for (int64_t px = 0; px < gw; ++px) {
            T* dst = po + (py * gw + px) * row;
            for (int64_t c = 0; c < 3; ++c)
                for (int64_t dy = 0; dy < p; ++dy)
                    for (int64_t dx = 0; dx < p; ++dx)
                        dst[(c * p + dy) * p + dx] = pi[(c * h + py * p + dy) * w + px * p + dx];
        }
    bool need = image.requires_grad();
    auto bw = [is = image.ptr(), os = out.ptr(), h, w, p, gh, gw, row]() {
        if (!is->requires_grad) return;
        T* di = ensure_grad(*is).data();
        const T* go = os->g.data();
        for (int64_t py = 0; py < gh; ++py)
            for (int64_t px = 0; px < gw; ++px) {
                const T* src = go + (py * gw + px) * row;
                for (int64_t c = 0; c < 3; ++c)
                    for (int64_t dy = 0; dy < p; ++dy)
                        for (int64_t dx = 0; dx < p; ++dx)
                            di[(c * h + py * p + dy) * w + px * p + dx] +=
                                src[(c * p + dy) * p + dx];
            }
    };
    finish(g, out, "extract_patches", 0, need, std::move(bw));
    return out;
}

// ---- fused ops ----

template <class T>
BasicTensor<T> masked_softmax(BasicGraph<T>& g, const BasicTensor<T>& scores, MaskMode mode) {
    if (scores.shape().rank() != 3)
        throw DimError("masked_softmax: expected rank 3, got " + scores.shape().str());
    int64_t H = scores.shape()[0], L = scores.shape()[1], Lk = scores.shape()[2];
    if (mode == MaskMode::causal && L != Lk)
        throw DimError("masked_softmax: causal mask needs square scores, got " +
                       scores.shape().str());
    auto out = make_out(g, scores.shape());
    const T* ps = scores.values().data();
    T* po = out.values().data();
    uint64_t work = 0;
    for (int64_t h = 0; h < H; ++h)
        for (int64_t i = 0; i < L; ++i) {
            int64_t vis = (mode == MaskMode::causal) ? i + 1 : Lk;
            const T* row = ps + (h * L + i) * Lk;
            T* orow = po + (h * L + i) * Lk;
            T m = row[0];
            for (int64_t j = 1; j < vis; ++j) m = std::max(m, row[j]);
            T sum = 0;
            for (int64_t j = 0; j < vis; ++j) {
                orow[j] = std::exp(row[j] - m);
                sum += orow[j];
            }
            T inv = T(1) / sum;
            for (int64_t j = 0; j < vis; ++j) orow[j] *= inv;
            work += static_cast<uint64_t>(vis) * 2;
        }
    bool need = scores.requires_grad();
    auto bw = [ss = scores.ptr(), os = out.ptr(), H, L, Lk, mode]() {
        if (!ss->requires_grad) return;
        const T* y = os->v.data();
        const T* go = os->g.data();
        T* ds = ensure_grad(*ss).data();
        for (int64_t h = 0; h < H; ++h)
            for (int64_t i = 0; i < L; ++i) {
                int64_t vis = (mode == MaskMode::causal) ? i + 1 : Lk;
                int64_t base = (h * L + i) * Lk;
                T dot = 0;
                for (int64_t j = 0; j < vis; ++j) dot += go[base + j] * y[base + j];
                for (int64_t j = 0; j < vis; ++j)
                    ds[base + j] += y[base + j] * (go[base + j] - dot);
            }
    };
    finish(g, out, mode == MaskMode::causal ? "masked_softmax_causal" : "masked_softmax_full",
           work, need, std::move(bw));
    return out;
}

template <class T>
BasicTensor<T> conv1d_causal(BasicGraph<T>& g, const BasicTensor<T>& x, const BasicTensor<T>& w,
                             const BasicTensor<T>& b) {
    if (x.shape().rank() != 2 || w.shape().rank() != 2 || b.shape().rank() != 1)
        throw DimError("conv1d_causal: bad ranks");
    int64_t L = x.shape()[0], C = x.shape()[1], K = w.shape()[1];
    if (w.shape()[0] != C || b.shape()[0] != C)
        throw DimError("conv1d_causal: channel mismatch, x " + x.shape().str() + " w " +
                       w.shape().str());
    auto out = make_out(g, Shape{L, C});
    const T* px = x.values().data();
    const T* pw = w.values().data();
    const T* pb = b.values().data();
    T* po = out.values().data();
    for (int64_t t = 0; t < L; ++t)
        for (int64_t c = 0; c < C; ++c) {
            T s = pb[c];
            for (int64_t k = 0; k < K; ++k) {
                int64_t src = t - K + 1 + k;
                if (src >= 0) s += pw[c * K + k] * px[src * C + c];
            }
            po[t * C + c] = s;
        }
    bool need = x.requires_grad() || w.requires_grad() || b.requires_grad();
    auto bw = [xs = x.ptr(), ws = w.ptr(), bs = b.ptr(), os = out.ptr(), L, C, K]() {
        const T* go = os->g.data();
        const T* px = xs->v.data();
        const T* pw = ws->v.data();
        T* dx = xs->requires_grad ? ensure_grad(*xs).data() : nullptr;
        T* dw = ws->requires_grad ? ensure_grad(*ws).data() : nullptr;
        T* db = bs->requires_grad ? ensure_grad(*bs).data() : nullptr;
        for (int64_t t = 0; t < L; ++t)
            for (int64_t c = 0; c < C; ++c) {
                T u = go[t * C + c];
                if (db) db[c] += u;
                for (int64_t k = 0; k < K; ++k) {
                    int64_t src = t - K + 1 + k;
                    if (src < 0) continue;
                    if (dw) dw[c * K + k] += u * px[src * C + c];
                    if (dx) dx[src * C + c] += u * pw[c * K + k];
                }
            }
    };
    finish(g, out, "conv1d", static_cast<uint64_t>(L * C * K), need, std::move(bw));
    return out;
}

template <class T>
BasicTensor<T> cross_entropy(BasicGraph<T>& g, const BasicTensor<T>& logits, int64_t label) {
    if (logits.shape().rank() != 1)
        throw DimError("cross_entropy: expected rank-1 logits, got " + logits.shape().str());
    int64_t C = logits.shape()[0];
    if (label < 0 || label >= C) throw ContractError("cross_entropy: label out of range");
    auto out = make_out(g, Shape::scalar());
    const T* pl = logits.values().data();
    T m = pl[0];
    for (int64_t j = 1; j < C; ++j) m = std::max(m, pl[j]);
    T sum = 0;
    for (int64_t j = 0; j < C; ++j) sum += std::exp(pl[j] - m);
    out.values()[0] = std::log(sum) + m - pl[label];
    bool need = logits.requires_grad();
    auto bw = [ls = logits.ptr(), os = out.ptr(), label, C]() {
        if (!ls->requires_grad) return;
        const T* pl = ls->v.data();
        T go = os->g[0];
        T* dl = ensure_grad(*ls).data();
        T m = pl[0];
        for (int64_t j = 1; j < C; ++j) m = std::max(m, pl[j]);
        T sum = 0;
        for (int64_t j = 0; j < C; ++j) sum += std::exp(pl[j] - m);
        for (int64_t j = 0; j < C; ++j) {
            T p = std::exp(pl[j] - m) / sum;
            dl[j] += go * (p - (j == label ? T(1) : T(0)));
        }
    };
    finish(g, out, "cross_entropy", static_cast<uint64_t>(C * 2), need, std::move(bw));
    return out;
}

// ---- explicit instantiations ----

#define CIM_INSTANTIATE_OPS(T)                                                                     \
    template BasicTensor<T> matmul<T>(BasicGraph<T>&, const BasicTensor<T>&, const BasicTensor<T>&); \
    template BasicTensor<T> bmm<T>(BasicGraph<T>&, const BasicTensor<T>&, const BasicTensor<T>&);  \
    template BasicTensor<T> transpose<T>(BasicGraph<T>&, const BasicTensor<T>&);                   \
    template BasicTensor<T> transpose_last2<T>(BasicGraph<T>&, const BasicTensor<T>&);             \
    template BasicTensor<T> add<T>(BasicGraph<T>&, const BasicTensor<T>&, const BasicTensor<T>&);  \
    template BasicTensor<T> sub<T>(BasicGraph<T>&, const BasicTensor<T>&, const BasicTensor<T>&);  \
    template BasicTensor<T> mul<T>(BasicGraph<T>&, const BasicTensor<T>&, const BasicTensor<T>&);  \
    template BasicTensor<T> neg<T>(BasicGraph<T>&, const BasicTensor<T>&);                         \
    template BasicTensor<T> vexp<T>(BasicGraph<T>&, const BasicTensor<T>&);                        \
    template BasicTensor<T> silu<T>(BasicGraph<T>&, const BasicTensor<T>&);                        \
    template BasicTensor<T> softplus<T>(BasicGraph<T>&, const BasicTensor<T>&);                    \
    template BasicTensor<T> gelu<T>(BasicGraph<T>&, const BasicTensor<T>&);                        \
    template BasicTensor<T> sigmoid<T>(BasicGraph<T>&, const BasicTensor<T>&);                     \
    template BasicTensor<T> rsqrt<T>(BasicGraph<T>&, const BasicTensor<T>&);                       \
    template BasicTensor<T> add_scalar<T>(BasicGraph<T>&, const BasicTensor<T>&, double);          \
    template BasicTensor<T> mul_scalar<T>(BasicGraph<T>&, const BasicTensor<T>&, double);          \
    template BasicTensor<T> reduce_mean<T>(BasicGraph<T>&, const BasicTensor<T>&, int, bool);      \
    template BasicTensor<T> reduce_sum<T>(BasicGraph<T>&, const BasicTensor<T>&, int, bool);       \
    template BasicTensor<T> sum_all<T>(BasicGraph<T>&, const BasicTensor<T>&);                     \
    template BasicTensor<T> mean_all<T>(BasicGraph<T>&, const BasicTensor<T>&);                    \
    template BasicTensor<T> argmax_axis<T>(const BasicTensor<T>&, int);                            \
    template int64_t argmax<T>(const BasicTensor<T>&);                                             \
    template BasicTensor<T> reshape<T>(BasicGraph<T>&, const BasicTensor<T>&, const Shape&);       \
    template BasicTensor<T> concat_rows<T>(BasicGraph<T>&, const std::vector<BasicTensor<T>>&);    \
    template BasicTensor<T> concat_cols<T>(BasicGraph<T>&, const std::vector<BasicTensor<T>>&);    \
    template BasicTensor<T> slice_cols<T>(BasicGraph<T>&, const BasicTensor<T>&, int64_t, int64_t); \
    template BasicTensor<T> gather_rows<T>(BasicGraph<T>&, const BasicTensor<T>&,                  \
                                           const std::vector<int64_t>&);                           \
    template BasicTensor<T> repeat_mid<T>(BasicGraph<T>&, const BasicTensor<T>&, int64_t);         \
    template BasicTensor<T> extract_patches<T>(BasicGraph<T>&, const BasicTensor<T>&, int64_t);    \
    template BasicTensor<T> split_heads<T>(BasicGraph<T>&, const BasicTensor<T>&, int64_t);        \
    template BasicTensor<T> merge_heads<T>(BasicGraph<T>&, const BasicTensor<T>&);                 \
    template BasicTensor<T> masked_softmax<T>(BasicGraph<T>&, const BasicTensor<T>&, MaskMode);    \
    template BasicTensor<T> conv1d_causal<T>(BasicGraph<T>&, const BasicTensor<T>&,                \
                                             const BasicTensor<T>&, const BasicTensor<T>&);        \
    template BasicTensor<T> cross_entropy<T>(BasicGraph<T>&, const BasicTensor<T>&, int64_t);

CIM_INSTANTIATE_OPS(float)
CIM_INSTANTIATE_OPS(double)

#undef CIM_INSTANTIATE_OPS

}  // namespace cim
