#include "cim/tensor.hpp"

#include <cmath>

#include "cim/errors.hpp"

namespace cim {

template <class T>
BasicTensor<T> BasicTensor<T>::zeros(const Shape& s) {
    BasicTensor t;
    t.s_ = std::make_shared<TensorStorage<T>>();
    t.s_->shape = s;
    t.s_->v.assign(static_cast<size_t>(s.numel()), T(0));
    return t;
}

template <class T>
BasicTensor<T> BasicTensor<T>::full(const Shape& s, T value) {
    BasicTensor t = zeros(s);
    for (T& x : t.s_->v) x = value;
    return t;
}

template <class T>
BasicTensor<T> BasicTensor<T>::from(const Shape& s, std::vector<T> values) {
    if (static_cast<int64_t>(values.size()) != s.numel())
        throw DimError("value count " + std::to_string(values.size()) +
                       " does not match shape " + s.str());
    BasicTensor t;
    t.s_ = std::make_shared<TensorStorage<T>>();
    t.s_->shape = s;
    t.s_->v = std::move(values);
    return t;
}

template <class T>
BasicTensor<T> BasicTensor<T>::trunc_normal(const Shape& s, SplitRng& rng, double std_dev) {
    BasicTensor t = zeros(s);
    for (T& x : t.s_->v) x = static_cast<T>(rng.trunc_normal(std_dev));
    return t;
}

template <class T>
BasicTensor<T> BasicTensor<T>::uniform(const Shape& s, SplitRng& rng, double lo, double hi) {
    BasicTensor t = zeros(s);
    for (T& x : t.s_->v) x = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <class T>
std::span<T> BasicTensor<T>::grad() {
    return ensure_grad(*s_);
}

template <class T>
T BasicTensor<T>::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape().str());
    return s_->v[0];
}

template <class T>
T BasicTensor<T>::at(std::initializer_list<int64_t> idx) const {
    const Shape& sh = s_->shape;
    if (static_cast<int>(idx.size()) != sh.rank())
        throw DimError("index rank mismatch for shape " + sh.str());
    int64_t flat = 0;
    int i = 0;
    for (int64_t ix : idx) {
        if (ix < 0 || ix >= sh[i]) throw DimError("index out of range");
        flat = flat * sh[i] + ix;
        ++i;
    }
    return s_->v[static_cast<size_t>(flat)];
}

template <class T>
bool BasicTensor<T>::all_finite() const {
    for (T x : s_->v)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace cim
