#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "cim/model.hpp"

// Independent reference implementations, written as plain double loops with
// no shared code against the production ops. The test suites compare the two
// sides; these must stay dumb and obvious rather than fast.
namespace cim::oracle {

// Position-by-position selective scan. x [L*di] row-major, dt [L*H],
// bmat/cmat [L*H*N], a [H], skip [di]; head h owns channels [h*hd,(h+1)*hd).
std::vector<double> ssd_reference(int64_t L, int64_t H, int64_t N, int64_t hd,
                                  const std::vector<double>& x, const std::vector<double>& dt,
                                  const std::vector<double>& bmat, const std::vector<double>& cmat,
                                  const std::vector<double>& a, const std::vector<double>& skip);

// Multi-head attention with an explicit additive mask (0 or -inf) applied
// before the softmax; causal=false masks nothing. x [L*d], weights [d*d]
// row-major [in][out], biases [d].
std::vector<double> masked_attention(int64_t L, int64_t d, int64_t heads, bool causal,
                                     const std::vector<double>& x, const std::vector<double>& wq,
                                     const std::vector<double>& bq, const std::vector<double>& wk,
                                     const std::vector<double>& bk, const std::vector<double>& wv,
                                     const std::vector<double>& bv, const std::vector<double>& wo,
                                     const std::vector<double>& bo);

// Full forward of the plain full-attention configuration (no extra token, no
// row reversal) on shared weights: patch rows, class token last, learned
// positions, pre-norm blocks, final norm. Returns [(n+1)*dim] features.
std::vector<double> plain_vit_features(const ModelParams<double>& params,
                                       const BasicTensor<double>& image);

// Central difference of f around *coord.
double finite_difference(const std::function<double()>& f, double* coord, double eps);

}  // namespace cim::oracle
