#pragma once

#include <vector>

#include "cim/graph.hpp"

namespace cim {

enum class MaskMode { causal, full };

// --- linear algebra ---
template <class T>
BasicTensor<T> matmul(BasicGraph<T>& g, const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> bmm(BasicGraph<T>& g, const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> transpose(BasicGraph<T>& g, const BasicTensor<T>& a);        // rank 2
template <class T>
BasicTensor<T> transpose_last2(BasicGraph<T>& g, const BasicTensor<T>& a);  // rank 3

// --- elementwise, trailing-aligned broadcast on either operand ---
template <class T>
BasicTensor<T> add(BasicGraph<T>& g, const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> sub(BasicGraph<T>& g, const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> mul(BasicGraph<T>& g, const BasicTensor<T>& a, const BasicTensor<T>& b);

template <class T>
BasicTensor<T> neg(BasicGraph<T>& g, const BasicTensor<T>& a);
template <class T>
BasicTensor<T> vexp(BasicGraph<T>& g, const BasicTensor<T>& a);
template <class T>
BasicTensor<T> silu(BasicGraph<T>& g, const BasicTensor<T>& a);
template <class T>
BasicTensor<T> softplus(BasicGraph<T>& g, const BasicTensor<T>& a);
template <class T>
BasicTensor<T> gelu(BasicGraph<T>& g, const BasicTensor<T>& a);
template <class T>
BasicTensor<T> sigmoid(BasicGraph<T>& g, const BasicTensor<T>& a);
template <class T>
BasicTensor<T> rsqrt(BasicGraph<T>& g, const BasicTensor<T>& a);

template <class T>
BasicTensor<T> add_scalar(BasicGraph<T>& g, const BasicTensor<T>& a, double c);
template <class T>
BasicTensor<T> mul_scalar(BasicGraph<T>& g, const BasicTensor<T>& a, double c);

// --- reductions ---
template <class T>
BasicTensor<T> reduce_mean(BasicGraph<T>& g, const BasicTensor<T>& a, int axis, bool keepdim = false);
template <class T>
BasicTensor<T> reduce_sum(BasicGraph<T>& g, const BasicTensor<T>& a, int axis, bool keepdim = false);
template <class T>
BasicTensor<T> sum_all(BasicGraph<T>& g, const BasicTensor<T>& a);
template <class T>
BasicTensor<T> mean_all(BasicGraph<T>& g, const BasicTensor<T>& a);

// Index of the per-slice maximum along `axis`; indices as values, no gradient.
template <class T>
BasicTensor<T> argmax_axis(const BasicTensor<T>& a, int axis);
template <class T>
int64_t argmax(const BasicTensor<T>& a);  // flat, over all elements

// --- data movement (all explicit copies) ---
template <class T>
BasicTensor<T> reshape(BasicGraph<T>& g, const BasicTensor<T>& a, const Shape& s);
template <class T>
BasicTensor<T> concat_rows(BasicGraph<T>& g, const std::vector<BasicTensor<T>>& parts);
template <class T>
BasicTensor<T> concat_cols(BasicGraph<T>& g, const std::vector<BasicTensor<T>>& parts);
template <class T>
BasicTensor<T> slice_cols(BasicGraph<T>& g, const BasicTensor<T>& a, int64_t start, int64_t len);
template <class T>
BasicTensor<T> gather_rows(BasicGraph<T>& g, const BasicTensor<T>& a, const std::vector<int64_t>& idx);
template <class T>
BasicTensor<T> repeat_mid(BasicGraph<T>& g, const BasicTensor<T>& a, int64_t reps);  // [L,N] -> [L,reps,N]

// [L, H*hd] -> [H, L, hd] and back.
template <class T>
BasicTensor<T> split_heads(BasicGraph<T>& g, const BasicTensor<T>& a, int64_t heads);
template <class T>
BasicTensor<T> merge_heads(BasicGraph<T>& g, const BasicTensor<T>& a);

// Image [3,h,w] -> [n, 3*p*p] rows, one per patch in raster order over the
// patch grid; within a row the layout is (channel, dy, dx).
template <class T>
BasicTensor<T> extract_patches(BasicGraph<T>& g, const BasicTensor<T>& image, int64_t p);

// --- fused ops ---
// Row softmax over the last axis of [H, L, Lk]; causal mode hides j > i
// (requires L == Lk), hidden entries come out exactly zero.
template <class T>
BasicTensor<T> masked_softmax(BasicGraph<T>& g, const BasicTensor<T>& scores, MaskMode mode);

// Depthwise causal convolution: x [L,C], w [C,K], b [C]; left zero padding.
template <class T>
BasicTensor<T> conv1d_causal(BasicGraph<T>& g, const BasicTensor<T>& x, const BasicTensor<T>& w,
                             const BasicTensor<T>& b);

// Numerically stable -log softmax(logits)[label]; logits rank 1.
template <class T>
BasicTensor<T> cross_entropy(BasicGraph<T>& g, const BasicTensor<T>& logits, int64_t label);

}  // namespace cim
