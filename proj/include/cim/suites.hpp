#pragma once

#include <string>
#include <vector>

namespace cim {

// Fault injection used to prove the gate can actually fail: with break_flip
// set, forwards silently skip inter-layer flipping and the heading-flip suite
// must go red.
struct SuiteHooks {
    bool break_flip = false;
};

struct SuiteResult {
    std::string name;
    bool passed = false;
    std::string detail;  // headline measurement, or the first failures
    double seconds = 0.0;
};

// The nine release gates, in report order.
const std::vector<std::string>& suite_names();

SuiteResult run_suite(const std::string& name, const SuiteHooks& hooks = {});

// Empty filter runs everything.
std::vector<SuiteResult> run_suites(const std::vector<std::string>& filter = {},
                                    const SuiteHooks& hooks = {});

}  // namespace cim
