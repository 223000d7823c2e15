#pragma once

#include <functional>
#include <string_view>
#include <utility>

#include "cim/graph.hpp"

// Support for defining ops: allocate an output registered with the graph's
// memory counter, then log/record it once the forward value is in place.
namespace cim::detail {

template <class T>
BasicTensor<T> make_out(BasicGraph<T>& g, const Shape& s) {
    auto t = BasicTensor<T>::zeros(s);
    attach_mem(g, t);
    return t;
}

template <class T>
void finish(BasicGraph<T>& g, BasicTensor<T>& out, std::string_view kind, uint64_t macs,
            bool needs_grad, std::function<void()> bw) {
    g.log_op(kind, static_cast<uint64_t>(out.numel()));
    g.count_macs(macs);
    if (needs_grad && g.recording) {
        out.set_requires_grad(true);
        out.ptr()->node = g.record(out.ptr(), std::move(bw));
    }
}

}  // namespace cim::detail
