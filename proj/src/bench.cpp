#include "cim/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <new>
#include <sstream>

#include "cim/config.hpp"
#include "cim/errors.hpp"
#include "cim/layers.hpp"
#include "cim/model.hpp"
#include "cim/ops.hpp"
#include "cim/rng.hpp"

namespace cim {

namespace {

using clock_t_ = std::chrono::steady_clock;

TokenMixer parse_mixer(const std::string& s) {
    if (s == "mamba2") return TokenMixer::mamba2;
    if (s == "causal-attn") return TokenMixer::causal_attn;
    if (s == "full-attn") return TokenMixer::full_attn;
    throw ConfigError("unknown mixer '" + s + "' (want mamba2/causal-attn/full-attn)");
}

double median(std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <class F>
double run_once(F&& fwd, BenchRecord& rec) {
    BasicGraph<float> g;
    g.recording = false;
    const auto t0 = clock_t_::now();
    fwd(g);
    const double ms = std::chrono::duration<double, std::milli>(clock_t_::now() - t0).count();
    rec.peak_bytes = g.peak_bytes();
    rec.macs = g.macs();
    return ms;
}

}  // namespace

double fit_loglog_slope(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size() || xs.size() < 2) throw ContractError("slope fit needs >= 2 points");
    double mx = 0, my = 0;
    for (size_t i = 0; i < xs.size(); ++i) { mx += xs[i]; my += ys[i]; }
    mx /= static_cast<double>(xs.size());
    my /= static_cast<double>(xs.size());
    double num = 0, den = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        num += (xs[i] - mx) * (ys[i] - my);
        den += (xs[i] - mx) * (xs[i] - mx);
    }
    if (den == 0) throw ContractError("slope fit needs distinct x values");
    return num / den;
}

MixerScaling bench_mixer(const std::string& mixer, const BenchOptions& opt) {
    if (opt.lengths.size() < 3) throw ContractError("bench needs >= 3 lengths");
    if (!std::is_sorted(opt.lengths.begin(), opt.lengths.end()))
        throw ContractError("bench lengths must be sorted ascending");
    if (opt.repeats < 5) throw ContractError("bench needs repeats >= 5");
    for (int64_t L : opt.lengths) {
        if (L < 1) throw ContractError("bench lengths must be positive");
        if (L > opt.max_tokens)
            throw ConfigError("length " + std::to_string(L) + " exceeds the " +
                              std::to_string(opt.max_tokens) + "-token cap; raise it explicitly");
    }

    // Reuse model init for realistic layer weights; only block 0's mixer is used.
    ModelConfig cfg;
    cfg.depth = 1;
    cfg.dim = opt.dim;
    cfg.patch = 4;
    cfg.image = 32;
    cfg.num_classes = 2;
    cfg.heading = Heading::off;
    cfg.flip = FlipMode::off;
    cfg.token_mixer = parse_mixer(mixer);
    // Narrow widths cannot honour the 64-wide default head; take the largest
    // divisor of the inner width that still fits it.
    const int64_t inner = 2 * cfg.dim;
    for (int64_t h = std::min<int64_t>(cfg.head_dim, inner); h >= 1; --h)
        if (inner % h == 0) {
            cfg.head_dim = h;
            break;
        }
    cfg.d_state = std::min(cfg.d_state, cfg.dim);
    auto params = init_params<float>(cfg, opt.seed);

    MixerScaling out;
    out.mixer = mixer;
    const std::string id = mixer + "-d" + std::to_string(opt.dim);
    SplitRng rng(opt.seed, 0x62656e6368ull);

    for (int64_t L : opt.lengths) {
        BenchRecord rec;
        rec.config_id = id;
        rec.length = L;
        rec.repeats = opt.repeats;
        try {
            auto x = BasicTensor<float>::zeros(Shape{L, opt.dim});
            for (auto& v : x.values()) v = static_cast<float>(rng.normal());
            TokenSeq seq{x, std::vector<Role>(static_cast<size_t>(L), Role::patch)};

            auto fwd = [&](BasicGraph<float>& g) {
                if (cfg.token_mixer == TokenMixer::mamba2)
                    mamba2_mixer(g, seq, params.blocks[0].ssd);
                else
                    causal_attention(g, seq, params.blocks[0].attn);
            };
            std::vector<double> times;
            for (int64_t r = 0; r < opt.repeats + 2; ++r) {
                const double ms = run_once(fwd, rec);
                if (r >= 2) times.push_back(ms);
            }
            rec.ms_median = median(times);
        } catch (const std::bad_alloc&) {
            rec.failed = true;
            rec.ms_median = std::nan("");
        }
        out.records.push_back(rec);
    }

    if (opt.backward_sanity) {
        BenchRecord rec;
        rec.config_id = id + "-fwd-bwd";
        rec.length = opt.lengths.front();
        rec.repeats = 1;
        try {
            auto x = BasicTensor<float>::zeros(Shape{rec.length, opt.dim});
            for (auto& v : x.values()) v = static_cast<float>(rng.normal());
            x.set_requires_grad(true);
            TokenSeq seq{x, std::vector<Role>(static_cast<size_t>(rec.length), Role::patch)};
            BasicGraph<float> g;
            const auto t0 = clock_t_::now();
            auto y = cfg.token_mixer == TokenMixer::mamba2 ? mamba2_mixer(g, seq, params.blocks[0].ssd)
                                                           : causal_attention(g, seq, params.blocks[0].attn);
            auto loss = mean_all(g, y.data);
            g.backward(loss);
            rec.ms_median = std::chrono::duration<double, std::milli>(clock_t_::now() - t0).count();
            rec.peak_bytes = g.peak_bytes();
            rec.macs = g.macs();
        } catch (const std::bad_alloc&) {
            rec.failed = true;
            rec.ms_median = std::nan("");
        }
        out.extras.push_back(rec);
    }

    std::vector<double> lx, lt, lm, lc;
    for (const auto& r : out.records) {
        if (r.failed) continue;
        lx.push_back(std::log(static_cast<double>(r.length)));
        lt.push_back(std::log(std::max(r.ms_median, 1e-6)));
        lm.push_back(std::log(static_cast<double>(std::max<int64_t>(r.peak_bytes, 1))));
        lc.push_back(std::log(static_cast<double>(std::max<uint64_t>(r.macs, 1))));
    }
    if (lx.size() >= 2) {
        out.time_slope = fit_loglog_slope(lx, lt);
        out.mem_slope = fit_loglog_slope(lx, lm);
        out.mac_slope = fit_loglog_slope(lx, lc);
    }
    return out;
}

std::vector<MixerScaling> bench_scaling(const std::vector<std::string>& mixers, const BenchOptions& opt) {
    std::vector<MixerScaling> out;
    out.reserve(mixers.size());
    for (const auto& m : mixers) out.push_back(bench_mixer(m, opt));
    return out;
}

std::string bench_csv(const std::vector<MixerScaling>& rows) {
    std::ostringstream os;
    os << "config_id,L,ms_median,peak_bytes,macs\n";
    auto emit = [&os](const BenchRecord& r) {
        os << r.config_id << "," << r.length << ",";
        if (r.failed) os << "nan";
        else os << r.ms_median;
        os << "," << r.peak_bytes << "," << r.macs << "\n";
    };
    for (const auto& m : rows) {
        for (const auto& r : m.records) emit(r);
        for (const auto& r : m.extras) emit(r);
    }
    return os.str();
}

}  // namespace cim
