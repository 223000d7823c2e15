#pragma once

#include <cstdint>
#include <vector>

#include "cim/tensor.hpp"

namespace cim {

// Synthetic classification set: each class is a sinusoidal grating at its own
// orientation, with a random phase and pixel noise per image. Labels cycle
// through the classes, so counts stay balanced within one.
struct ToyDatasetSpec {
    uint64_t seed = 0;
    int64_t count = 32;
    int64_t classes = 2;
    int64_t image = 32;   // square side, pixels
    double noise = 0.1;   // pixel noise std
};

template <class T>
struct ToyDataset {
    ToyDatasetSpec spec;
    std::vector<BasicTensor<T>> images;  // each [3, image, image]
    std::vector<int64_t> labels;
};

template <class T>
ToyDataset<T> make_toy_dataset(const ToyDatasetSpec& spec);

}  // namespace cim
