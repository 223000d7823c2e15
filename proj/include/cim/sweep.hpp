#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cim/config.hpp"

namespace cim {

struct SweepCell {
    ModelConfig cfg;
    double final_loss = 0.0;
    double final_acc = 0.0;
    bool failed = false;
    std::string error;
};

struct SweepOptions {
    std::vector<std::string> axes;  // subset of heading / flip / channel_mixer / token_mixer
    int64_t steps = 30;
    double lr = 0.1;
    uint64_t seed = 0;
    int64_t count = 24;  // toy images per sweep
};

const std::vector<std::string>& sweep_axis_names();
std::vector<std::string> sweep_axis_values(const std::string& axis);

// Cartesian product over the chosen axes; every cell shares the same init
// seed and dataset so rows differ only by architecture. A failing cell is
// recorded and the sweep continues.
std::vector<SweepCell> ablation_sweep(const ModelConfig& base, const SweepOptions& opt);

// One column per config axis, then final_loss,final_acc; failed rows carry
// nan metrics.
std::string sweep_csv(const std::vector<SweepCell>& cells);

}  // namespace cim
