#include "cim/graph.hpp"

#include <algorithm>

#include "cim/errors.hpp"

namespace cim {

void OpStats::add(std::string_view kind, uint64_t elems) {
    auto it = std::lower_bound(elems_by_kind.begin(), elems_by_kind.end(), kind,
                               [](const auto& p, std::string_view k) { return p.first < k; });
    if (it != elems_by_kind.end() && it->first == kind) {
        it->second += elems;
    } else {
        elems_by_kind.insert(it, {std::string(kind), elems});
    }
}

uint64_t OpStats::fingerprint() const {
    uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](uint64_t x) {
        for (int i = 0; i < 8; ++i) {
            h ^= (x >> (8 * i)) & 0xff;
            h *= 0x100000001b3ull;
        }
    };
    for (const auto& [kind, elems] : elems_by_kind) {
        for (char c : kind) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ull;
        }
        mix(elems);
    }
    return h;
}

template <class T>
int32_t BasicGraph<T>::record(std::shared_ptr<TensorStorage<T>> out, std::function<void()> backward) {
    if (!recording) return -1;
    nodes_.push_back(Node{std::move(out), std::move(backward)});
    return static_cast<int32_t>(nodes_.size()) - 1;
}

template <class T>
void BasicGraph<T>::backward(const BasicTensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward requires a scalar loss");
    int32_t start = loss.ptr()->node;
    if (start < 0) {
        // Leaf loss: gradient of itself is one; nothing to traverse.
        if (loss.ptr()->requires_grad) ensure_grad(*loss.ptr())[0] += T(1);
        return;
    }

    // Intermediates get fresh zero grads each sweep; leaves are left alone
    // so repeated backward calls accumulate into them.
    for (auto& n : nodes_) {
        ensure_grad(*n.out);
        for (T& x : n.out->g) x = T(0);
    }
    ensure_grad(*loss.ptr())[0] = T(1);

    for (int32_t i = start; i >= 0; --i) {
        nodes_[static_cast<size_t>(i)].bw();
    }
}

template class BasicGraph<float>;
template class BasicGraph<double>;

}  // namespace cim
