#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "cim/rng.hpp"
#include "cim/shape.hpp"

namespace cim {

// Tracks live and peak bytes of tensor payloads attached to it. A graph owns
// one; every tensor an op produces on that graph registers its buffer here,
// so a forward pass's transient working set shows up as the peak.
struct MemCounter {
    int64_t live = 0;
    int64_t peak = 0;

    void add(int64_t bytes) {
        live += bytes;
        if (live > peak) peak = live;
    }
    void sub(int64_t bytes) { live -= bytes; }
};

template <class T>
struct TensorStorage {
    Shape shape;
    std::vector<T> v;               // values, row-major
    std::vector<T> g;               // gradient, empty until needed
    bool requires_grad = false;
    int32_t node = -1;              // producing tape node, -1 for leaves
    std::shared_ptr<MemCounter> mem;

    ~TensorStorage() {
        if (mem) mem->sub(static_cast<int64_t>(v.capacity() + g.capacity()) * sizeof(T));
    }
};

// Shared-ownership handle over a dense array of T with an optional gradient
// slot. Values are immutable by convention once an op has produced them; the
// gradient buffer is the only thing backward mutates.
template <class T>
class BasicTensor {
public:
    BasicTensor() = default;

    static BasicTensor zeros(const Shape& s);
    static BasicTensor full(const Shape& s, T value);
    static BasicTensor from(const Shape& s, std::vector<T> values);
    static BasicTensor scalar(T value) { return full(Shape::scalar(), value); }
    static BasicTensor trunc_normal(const Shape& s, SplitRng& rng, double std_dev);
    static BasicTensor uniform(const Shape& s, SplitRng& rng, double lo, double hi);

    bool defined() const { return s_ != nullptr; }
    const Shape& shape() const { return s_->shape; }
    int64_t numel() const { return s_->shape.numel(); }

    std::span<T> values() { return {s_->v.data(), s_->v.size()}; }
    std::span<const T> values() const { return {s_->v.data(), s_->v.size()}; }

    bool requires_grad() const { return s_->requires_grad; }
    BasicTensor& set_requires_grad(bool b) {
        s_->requires_grad = b;
        return *this;
    }

    bool has_grad() const { return !s_->g.empty(); }
    // Allocates (zero-filled) on first touch.
    std::span<T> grad();
    std::span<const T> grad() const { return {s_->g.data(), s_->g.size()}; }
    void zero_grad() {
        for (T& x : s_->g) x = T(0);
    }

    T item() const;

    // Row-major multi-index access; test and tooling convenience.
    T at(std::initializer_list<int64_t> idx) const;

    bool all_finite() const;

    std::shared_ptr<TensorStorage<T>>& ptr() { return s_; }
    const std::shared_ptr<TensorStorage<T>>& ptr() const { return s_; }

    // Identity (same storage), not value equality.
    bool same_as(const BasicTensor& o) const { return s_ == o.s_; }

private:
    std::shared_ptr<TensorStorage<T>> s_;
};

using Tensor = BasicTensor<float>;
using DTensor = BasicTensor<double>;

// Grad buffer helper usable from backward closures.
template <class T>
std::span<T> ensure_grad(TensorStorage<T>& s) {
    if (s.g.empty()) {
        s.g.assign(s.v.size(), T(0));
        if (s.mem) s.mem->add(static_cast<int64_t>(s.g.capacity()) * sizeof(T));
    }
    return {s.g.data(), s.g.size()};
}

}  // namespace cim
