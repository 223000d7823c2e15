#include "cim/dataset.hpp"

#include <cmath>
#include <numbers>

#include "cim/errors.hpp"
#include "cim/rng.hpp"

namespace cim {

template <class T>
ToyDataset<T> make_toy_dataset(const ToyDatasetSpec& spec) {
    if (spec.count < 1) throw ContractError("toy dataset needs count >= 1");
    if (spec.classes < 2) throw ContractError("toy dataset needs >= 2 classes");
    if (spec.image < 4) throw ContractError("toy dataset needs image >= 4");

    const double pi = std::numbers::pi;
    const int64_t s = spec.image;
    SplitRng root(spec.seed, 0x70795f64617461ull);

    ToyDataset<T> out;
    out.spec = spec;
    out.images.reserve(static_cast<size_t>(spec.count));
    out.labels.reserve(static_cast<size_t>(spec.count));

    for (int64_t i = 0; i < spec.count; ++i) {
        const int64_t label = i % spec.classes;
        const double theta = pi * static_cast<double>(label) / static_cast<double>(spec.classes);
        SplitRng rng = root.split(static_cast<uint64_t>(i));
        const double phase = rng.uniform(0.0, 2.0 * pi);
        const double freq = 3.0;

        auto img = BasicTensor<T>::zeros(Shape{3, s, s});
        auto v = img.values();
        for (int64_t y = 0; y < s; ++y) {
            for (int64_t x = 0; x < s; ++x) {
                const double u = (std::cos(theta) * static_cast<double>(x) +
                                  std::sin(theta) * static_cast<double>(y)) /
                                 static_cast<double>(s);
                const double base = std::sin(2.0 * pi * freq * u + phase);
                for (int64_t c = 0; c < 3; ++c)
                    v[(c * s + y) * s + x] = static_cast<T>(base + spec.noise * rng.normal());
            }
        }
        out.images.push_back(std::move(img));
        out.labels.push_back(label);
    }
    return out;
}

template ToyDataset<float> make_toy_dataset<float>(const ToyDatasetSpec&);
template ToyDataset<double> make_toy_dataset<double>(const ToyDatasetSpec&);

}  // namespace cim
