#include "cim/rng.hpp"

#include <cmath>

namespace cim {

double SplitRng::normal() {
    // u in (0,1] so log(u) is finite.
    double u = 1.0 - uniform();
    double v = uniform();
    return std::sqrt(-2.0 * std::log(u)) * std::cos(6.283185307179586 * v);
}

double SplitRng::trunc_normal(double std_dev) {
    for (;;) {
        double z = normal();
        if (z >= -2.0 && z <= 2.0) return z * std_dev;
    }
}

}  // namespace cim
