#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string_view>
#include <vector>

#include "cim/tensor.hpp"

namespace cim {

// Per-operation instrumentation totals, keyed by op kind. Deterministic
// across runs for a fixed computation, so a hash of it fingerprints the
// recorded graph structure.
struct OpStats {
    std::vector<std::pair<std::string, uint64_t>> elems_by_kind;  // sorted by kind

    void add(std::string_view kind, uint64_t elems);
    uint64_t fingerprint() const;  // FNV-1a over (kind, count, elems) triples
};

// Recording tape plus execution context. Ops always run through a graph:
// it carries the multiply-accumulate counter, the op log, and the memory
// accounting even when `recording` is off (pure inference).
//
// Single-threaded per instance; independent graphs are independent.
template <class T>
class BasicGraph {
public:
    BasicGraph() : mem_(std::make_shared<MemCounter>()) {}

    bool recording = true;

    // --- instrumentation ---
    void count_macs(uint64_t n) { macs_ += n; }
    uint64_t macs() const { return macs_; }
    void log_op(std::string_view kind, uint64_t elems) { stats_.add(kind, elems); }
    const OpStats& op_stats() const { return stats_; }
    uint64_t fingerprint() const { return stats_.fingerprint(); }
    const std::shared_ptr<MemCounter>& mem() const { return mem_; }
    int64_t peak_bytes() const { return mem_->peak; }
    size_t nodes_recorded() const { return nodes_.size(); }

    // --- tape ---
    // Registers the output of an op. Returns the node id to store on the
    // output tensor, or -1 when nothing was recorded (no-grad path).
    int32_t record(std::shared_ptr<TensorStorage<T>> out, std::function<void()> backward);

    // Reverse sweep from a scalar loss. Intermediate (node-produced) grads
    // are reset first; leaf grads accumulate across calls.
    void backward(const BasicTensor<T>& loss);

private:
    struct Node {
        std::shared_ptr<TensorStorage<T>> out;
        std::function<void()> bw;
    };
    std::vector<Node> nodes_;
    uint64_t macs_ = 0;
    OpStats stats_;
    std::shared_ptr<MemCounter> mem_;
};

using Graph = BasicGraph<float>;
using DGraph = BasicGraph<double>;

// Registers a freshly produced op output with the graph's memory counter.
template <class T>
void attach_mem(BasicGraph<T>& g, BasicTensor<T>& t) {
    auto& s = *t.ptr();
    s.mem = g.mem();
    s.mem->add(static_cast<int64_t>(s.v.capacity() + s.g.capacity()) * sizeof(T));
}

}  // namespace cim
