// Runs every release gate and prints one verdict line per suite. Exit status
// is the number of failed gates, so CI can consume it directly.

#include <cstdio>

#include "cim/suites.hpp"

int main() {
    const auto& names = cim::suite_names();
    int failed = 0;
    for (size_t i = 0; i < names.size(); ++i) {
        const auto r = cim::run_suite(names[i]);
        std::printf("[%zu/%zu] %-18s %s (%.1fs) %s\n", i + 1, names.size(), r.name.c_str(),
                    r.passed ? "PASS" : "FAIL", r.seconds, r.detail.c_str());
        std::fflush(stdout);
        failed += !r.passed;
    }
    std::printf("%zu/%zu gates passed\n", names.size() - size_t(failed), names.size());
    return failed;
}
