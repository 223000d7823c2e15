#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "cim/dataset.hpp"
#include "cim/model.hpp"

namespace cim {

struct TrainOptions {
    int64_t steps = 500;
    double lr = 0.05;
    double target_acc = -1.0;  // stop once train accuracy reaches this; < 0 disables
    int64_t eval_every = 25;
    bool cosine_decay = true;
};

struct TrainTrace {
    std::vector<double> loss;                     // mean cross-entropy per completed step
    std::vector<std::pair<int64_t, double>> acc;  // (steps completed, train accuracy)
    double final_acc = 0.0;
    int64_t steps_run = 0;
};

// Full-batch gradient descent on the toy set. Deterministic given params and
// data; lr == 0 leaves every parameter (and hence the loss trace) unchanged.
// Throws NonFiniteError naming the offending tensor if training diverges.
template <class T>
TrainTrace train_toy(ModelParams<T>& params, const ToyDataset<T>& data, const TrainOptions& opt);

// Train accuracy of the current parameters on the whole set (no recording).
template <class T>
double toy_accuracy(const ModelParams<T>& params, const ToyDataset<T>& data);

}  // namespace cim
