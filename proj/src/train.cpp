#include "cim/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cim/errors.hpp"
#include "cim/layers.hpp"
#include "cim/ops.hpp"

namespace cim {

namespace {

template <class T>
void check_compatible(const ModelParams<T>& params, const ToyDataset<T>& data) {
    if (params.cfg.num_classes != data.spec.classes)
        throw ContractError("model expects " + std::to_string(params.cfg.num_classes) +
                            " classes, dataset has " + std::to_string(data.spec.classes));
    if (params.cfg.image != data.spec.image)
        throw ContractError("model expects " + std::to_string(params.cfg.image) + "px images, dataset has " +
                            std::to_string(data.spec.image));
}

template <class T>
bool all_finite(const BasicTensor<T>& t) {
    auto v = t.values();
    return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(static_cast<double>(x)); });
}

// Names the first broken tensor so a diverged run fails with a usable message.
template <class T>
[[noreturn]] void diagnose_non_finite(const ModelParams<T>& params) {
    for (const auto& [name, t] : params.named)
        if (!all_finite(t)) throw NonFiniteError(name);
    throw NonFiniteError("loss");
}

}  // namespace

template <class T>
double toy_accuracy(const ModelParams<T>& params, const ToyDataset<T>& data) {
    check_compatible(params, data);
    int64_t hits = 0;
    for (size_t i = 0; i < data.images.size(); ++i) {
        BasicGraph<T> g;
        g.recording = false;
        auto logits = classify(g, data.images[i], params);
        auto v = logits.values();
        int64_t best = 0;
        for (int64_t c = 1; c < params.cfg.num_classes; ++c)
            if (v[c] > v[best]) best = c;
        if (best == data.labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(data.images.size());
}

template <class T>
TrainTrace train_toy(ModelParams<T>& params, const ToyDataset<T>& data, const TrainOptions& opt) {
    check_compatible(params, data);
    if (opt.steps < 0) throw ContractError("steps must be >= 0");
    if (opt.lr < 0.0) throw ContractError("lr must be >= 0");
    if (opt.eval_every < 1) throw ContractError("eval_every must be >= 1");
    require_all_grads(params);

    const double inv_count = 1.0 / static_cast<double>(data.images.size());
    TrainTrace trace;

    for (int64_t step = 0; step < opt.steps; ++step) {
        for (auto& [name, t] : params.named) {
            auto gr = t.grad();
            std::fill(gr.begin(), gr.end(), T(0));
        }

        double total = 0.0;
        for (size_t i = 0; i < data.images.size(); ++i) {
            BasicGraph<T> g;
            auto logits = classify(g, data.images[i], params);
            auto loss = cross_entropy(g, logits, data.labels[i]);
            auto scaled = mul_scalar(g, loss, static_cast<T>(inv_count));
            g.backward(scaled);
            total += static_cast<double>(loss.values()[0]);
        }
        const double mean_loss = total * inv_count;
        if (!std::isfinite(mean_loss)) diagnose_non_finite(params);
        trace.loss.push_back(mean_loss);

        const double frac = static_cast<double>(step) / static_cast<double>(std::max<int64_t>(opt.steps, 1));
        const double lr_t =
            opt.cosine_decay ? opt.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac)) : opt.lr;
        for (auto& [name, t] : params.named) {
            auto v = t.values();
            auto gr = t.grad();
            for (size_t j = 0; j < v.size(); ++j) v[j] -= static_cast<T>(lr_t) * gr[j];
        }
        trace.steps_run = step + 1;

        const bool last = step + 1 == opt.steps;
        if ((step + 1) % opt.eval_every == 0 || last) {
            const double acc = toy_accuracy(params, data);
            trace.acc.emplace_back(step + 1, acc);
            trace.final_acc = acc;
            if (opt.target_acc >= 0.0 && acc >= opt.target_acc) break;
        }
    }
    if (trace.acc.empty()) {
        trace.final_acc = toy_accuracy(params, data);
        trace.acc.emplace_back(trace.steps_run, trace.final_acc);
    }
    return trace;
}

template TrainTrace train_toy<float>(ModelParams<float>&, const ToyDataset<float>&, const TrainOptions&);
template TrainTrace train_toy<double>(ModelParams<double>&, const ToyDataset<double>&, const TrainOptions&);
template double toy_accuracy<float>(const ModelParams<float>&, const ToyDataset<float>&);
template double toy_accuracy<double>(const ModelParams<double>&, const ToyDataset<double>&);

}  // namespace cim
