#include "cim/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cim/dataset.hpp"
#include "cim/errors.hpp"
#include "cim/train.hpp"

namespace cim {

const std::vector<std::string>& sweep_axis_names() {
    static const std::vector<std::string> names{"heading", "flip", "channel_mixer", "token_mixer"};
    return names;
}

std::vector<std::string> sweep_axis_values(const std::string& axis) {
    if (axis == "heading") return {"off", "average"};
    if (axis == "flip") return {"off", "inter-layer"};
    if (axis == "channel_mixer") return {"swiglu", "plain-mlp", "none"};
    if (axis == "token_mixer") return {"mamba2", "causal-attn", "full-attn"};
    std::string all;
    for (const auto& a : sweep_axis_names()) all += (all.empty() ? "" : "/") + a;
    throw ConfigError("unknown sweep axis '" + axis + "' (want " + all + ")");
}

std::vector<SweepCell> ablation_sweep(const ModelConfig& base, const SweepOptions& opt) {
    if (opt.axes.empty()) throw ConfigError("sweep needs at least one axis");
    for (const auto& a : opt.axes) sweep_axis_values(a);  // validates
    for (size_t i = 0; i < opt.axes.size(); ++i)
        for (size_t j = i + 1; j < opt.axes.size(); ++j)
            if (opt.axes[i] == opt.axes[j]) throw ConfigError("duplicate sweep axis '" + opt.axes[i] + "'");

    // Expand the cartesian product in the order the axes were given.
    std::vector<ModelConfig> cells{base};
    for (const auto& axis : opt.axes) {
        std::vector<ModelConfig> next;
        for (const auto& cfg : cells)
            for (const auto& value : sweep_axis_values(axis)) {
                ModelConfig c = cfg;
                apply_override(c, axis, value);
                next.push_back(c);
            }
        cells = std::move(next);
    }

    ToyDatasetSpec dspec{.seed = opt.seed, .count = opt.count, .classes = base.num_classes,
                         .image = base.image};
    const auto data = make_toy_dataset<float>(dspec);
    TrainOptions topt{.steps = opt.steps, .lr = opt.lr, .target_acc = -1.0,
                      .eval_every = std::max<int64_t>(opt.steps, 1)};

    std::vector<SweepCell> out;
    out.reserve(cells.size());
    for (const auto& cfg : cells) {
        SweepCell cell;
        cell.cfg = cfg;
        try {
            cfg.validate();
            auto params = init_params<float>(cfg, opt.seed);
            auto trace = train_toy(params, data, topt);
            cell.final_loss = trace.loss.empty() ? std::nan("") : trace.loss.back();
            cell.final_acc = trace.final_acc;
        } catch (const Error& e) {
            cell.failed = true;
            cell.error = e.what();
            cell.final_loss = std::nan("");
            cell.final_acc = std::nan("");
        }
        out.push_back(std::move(cell));
    }
    return out;
}

std::string sweep_csv(const std::vector<SweepCell>& cells) {
    std::ostringstream os;
    os << "heading,flip,channel_mixer,token_mixer,final_loss,final_acc\n";
    for (const auto& c : cells) {
        os << heading_name(c.cfg) << "," << flip_name(c.cfg) << "," << channel_mixer_name(c.cfg) << ","
           << token_mixer_name(c.cfg) << ",";
        if (c.failed) os << "nan,nan";
        else os << c.final_loss << "," << c.final_acc;
        os << "\n";
    }
    return os.str();
}

}  // namespace cim
