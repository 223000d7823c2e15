#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cim {

struct BenchRecord {
    std::string config_id;
    int64_t length = 0;
    int64_t repeats = 0;
    double ms_median = 0.0;   // median over warm runs (first two discarded)
    int64_t peak_bytes = 0;   // peak transient tensor bytes of one forward
    uint64_t macs = 0;        // counted multiply-accumulates of one forward
    bool failed = false;      // out of memory at this length
};

struct BenchOptions {
    std::vector<int64_t> lengths{256, 512, 1024, 2048};
    int64_t dim = 64;
    int64_t repeats = 5;
    uint64_t seed = 0;
    int64_t max_tokens = 4096;    // refuse longer rows unless raised
    bool backward_sanity = true;  // add one fwd+bwd record at the shortest length
};

struct MixerScaling {
    std::string mixer;                 // mamba2 | causal-attn | full-attn
    std::vector<BenchRecord> records;  // forward-only, one per length
    std::vector<BenchRecord> extras;   // fwd+bwd sanity point, excluded from fits
    double time_slope = 0.0;           // log-log least-squares over non-failed records
    double mem_slope = 0.0;
    double mac_slope = 0.0;
};

// Least-squares slope of ys against xs (both already in log space).
double fit_loglog_slope(std::span<const double> xs, std::span<const double> ys);

// Times one token-mixer layer standalone at each length.
MixerScaling bench_mixer(const std::string& mixer, const BenchOptions& opt);
std::vector<MixerScaling> bench_scaling(const std::vector<std::string>& mixers, const BenchOptions& opt);

// Header "config_id,L,ms_median,peak_bytes,macs"; failed rows carry nan ms.
std::string bench_csv(const std::vector<MixerScaling>& rows);

}  // namespace cim
