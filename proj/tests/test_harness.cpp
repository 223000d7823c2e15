// Harness plumbing: toy dataset determinism, the training loop's contracts,
// the ablation sweep grid, benchmark bookkeeping, and the independent oracles
// the equivalence suites rely on.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "cim/bench.hpp"
#include "cim/dataset.hpp"
#include "cim/manifest.hpp"
#include "cim/oracles.hpp"
#include "cim/sweep.hpp"
#include "cim/train.hpp"
#include "helpers.hpp"

using namespace cim;

namespace {

ModelConfig fast_micro() {
    ModelConfig cfg = preset_config("micro");
    cfg.image = 16;  // 4x4 patch grid keeps unit-test training cheap
    cfg.validate();
    return cfg;
}

ToyDataset<float> fast_data(uint64_t seed, int64_t count) {
    return make_toy_dataset<float>({seed, count, 2, 16, 0.1});
}

int csv_rows(const std::string& text) {
    std::istringstream in(text);
    int n = -1;  // discount the header
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) ++n;
    return n;
}

}  // namespace

TEST_CASE("toy dataset balances classes within one and is deterministic per seed") {
    auto a = make_toy_dataset<float>({9, 7, 2, 16, 0.1});
    REQUIRE(a.images.size() == 7);
    REQUIRE(a.labels.size() == 7);
    int64_t counts[2] = {0, 0};
    for (int64_t l : a.labels) {
        REQUIRE(l >= 0);
        REQUIRE(l < 2);
        ++counts[l];
    }
    CHECK(std::abs(counts[0] - counts[1]) <= 1);
    for (const auto& img : a.images) {
        CHECK(img.shape() == Shape{3, 16, 16});
        CHECK(img.all_finite());
    }
    auto b = make_toy_dataset<float>({9, 7, 2, 16, 0.1});
    for (size_t i = 0; i < a.images.size(); ++i)
        CHECK(test_util::max_abs_gap(a.images[i].values(), b.images[i].values()) == 0.0);
    auto c = make_toy_dataset<float>({10, 7, 2, 16, 0.1});
    CHECK(test_util::max_abs_gap(a.images[0].values(), c.images[0].values()) > 0.0);
}

TEST_CASE("toy dataset rejects degenerate specs") {
    CHECK_THROWS_AS(make_toy_dataset<float>({0, 0, 2, 16, 0.1}), ContractError);
    CHECK_THROWS_AS(make_toy_dataset<float>({0, 4, 1, 16, 0.1}), ContractError);
    CHECK_THROWS_AS(make_toy_dataset<float>({0, 4, 2, 2, 0.1}), ContractError);
}

TEST_CASE("zero learning rate leaves the loss trace constant") {
    auto cfg = fast_micro();
    auto params = init_params<float>(cfg, 0);
    auto data = fast_data(0, 4);
    TrainOptions opt;
    opt.steps = 4;
    opt.lr = 0.0;
    opt.eval_every = 100;
    auto trace = train_toy(params, data, opt);
    REQUIRE(trace.loss.size() == 4);
    for (double l : trace.loss) CHECK(std::abs(l - trace.loss[0]) <= 1e-6);
}

TEST_CASE("training twice from one seed replays the identical trace") {
    auto cfg = fast_micro();
    auto data = fast_data(0, 4);
    TrainOptions opt;
    opt.steps = 5;
    opt.lr = 0.1;
    opt.eval_every = 100;
    auto p1 = init_params<float>(cfg, 3);
    auto p2 = init_params<float>(cfg, 3);
    auto t1 = train_toy(p1, data, opt);
    auto t2 = train_toy(p2, data, opt);
    REQUIRE(t1.loss.size() == t2.loss.size());
    for (size_t i = 0; i < t1.loss.size(); ++i) CHECK(t1.loss[i] == t2.loss[i]);
    for (size_t i = 0; i < p1.named.size(); ++i)
        CHECK(test_util::max_abs_gap(p1.named[i].second.values(),
                                     p2.named[i].second.values()) == 0.0);
    CHECK(t1.loss.back() < t1.loss.front());  // it also has to actually learn something
}

TEST_CASE("training requires the config and dataset to agree") {
    auto cfg = fast_micro();
    auto params = init_params<float>(cfg, 0);
    auto wrong_classes = make_toy_dataset<float>({0, 4, 4, 16, 0.1});
    CHECK_THROWS_AS(train_toy(params, wrong_classes, {}), ContractError);
    auto wrong_size = make_toy_dataset<float>({0, 4, 2, 32, 0.1});
    CHECK_THROWS_AS(train_toy(params, wrong_size, {}), ContractError);
}

TEST_CASE("divergence aborts with a diagnostic instead of silent NaNs") {
    auto data = fast_data(0, 4);
    TrainOptions opt;
    opt.steps = 8;
    opt.lr = 1e4;
    opt.eval_every = 100;
    opt.cosine_decay = false;

    // attention path: parameters blow up and the first non-finite tensor is named
    auto cfg_attn = fast_micro();
    cfg_attn.token_mixer = TokenMixer::causal_attn;
    cfg_attn.validate();
    auto pa = init_params<float>(cfg_attn, 0);
    bool threw = false;
    try {
        train_toy(pa, data, opt);
    } catch (const NonFiniteError& e) {
        threw = true;
        CHECK(!e.tensor_name.empty());
    }
    CHECK(threw);

    // scan path: the dt positivity contract trips first, which is still an abort
    auto pm = init_params<float>(fast_micro(), 0);
    opt.lr = 100.0;
    CHECK_THROWS_AS(train_toy(pm, data, opt), Error);
}

TEST_CASE("a heading-by-flip sweep emits the full 2x2 grid with shared seed") {
    auto cfg = fast_micro();
    SweepOptions opt;
    opt.axes = {"heading", "flip"};
    opt.steps = 2;
    opt.lr = 0.05;
    opt.count = 4;
    auto cells = ablation_sweep(cfg, opt);
    REQUIRE(cells.size() == 4);
    std::vector<std::pair<std::string, std::string>> seen;
    for (const auto& cell : cells) {
        CHECK(!cell.failed);
        CHECK(std::isfinite(cell.final_loss));
        seen.emplace_back(heading_name(cell.cfg), flip_name(cell.cfg));
        // off-axis fields stay pinned to the base config
        CHECK(cell.cfg.token_mixer == cfg.token_mixer);
        CHECK(cell.cfg.channel_mixer == cfg.channel_mixer);
    }
    std::sort(seen.begin(), seen.end());
    CHECK(std::unique(seen.begin(), seen.end()) == seen.end());  // four distinct cells

    auto csv = sweep_csv(cells);
    CHECK(csv.rfind("heading,flip,channel_mixer,token_mixer,final_loss,final_acc\n", 0) == 0);
    CHECK(csv_rows(csv) == 4);
}

TEST_CASE("sweep axes cover the published ablation modes and reject junk") {
    const auto& names = sweep_axis_names();
    CHECK(names == std::vector<std::string>{"heading", "flip", "channel_mixer", "token_mixer"});
    CHECK(sweep_axis_values("channel_mixer") ==
          std::vector<std::string>{"swiglu", "plain-mlp", "none"});
    CHECK(sweep_axis_values("token_mixer") ==
          std::vector<std::string>{"mamba2", "causal-attn", "full-attn"});
    CHECK_THROWS_AS(sweep_axis_values("nonsense"), ConfigError);
    SweepOptions opt;
    opt.axes = {"flip", "flip"};
    CHECK_THROWS_AS(ablation_sweep(fast_micro(), opt), ConfigError);
}

TEST_CASE("benchmark runs produce one record per length with exact op counts") {
    BenchOptions opt;
    // whole chunks only, so the scan's op count doubles exactly with length
    opt.lengths = {64, 128, 256};
    opt.dim = 16;
    opt.repeats = 5;
    auto rows = bench_scaling({"mamba2", "full-attn"}, opt);
    REQUIRE(rows.size() == 2);
    for (const auto& m : rows) {
        CAPTURE(m.mixer);
        REQUIRE(m.records.size() == 3);
        for (const auto& r : m.records) {
            CHECK(!r.failed);
            CHECK(r.repeats >= 5);
            CHECK(r.macs > 0);
            CHECK(r.peak_bytes > 0);
            CHECK(std::isfinite(r.ms_median));
        }
        REQUIRE(m.extras.size() == 1);  // one fwd+bwd sanity point
        CHECK(m.extras[0].macs > m.records[0].macs);
    }
    // scan cost is exactly linear in the length: increments double with the
    // spacing (only the decay precompute is length-independent); attention
    // grows faster than any line
    const auto& mr = rows[0].records;
    CHECK(mr[2].macs - mr[1].macs == 2 * (mr[1].macs - mr[0].macs));
    CHECK(mr[1].macs > mr[0].macs);
    const auto& ar = rows[1].records;
    CHECK(ar[1].macs > 2 * ar[0].macs);

    auto csv = bench_csv(rows);
    CHECK(csv.rfind("config_id,L,ms_median,peak_bytes,macs\n", 0) == 0);
    std::istringstream in(csv);
    int fwd = 0;
    for (std::string line; std::getline(in, line);)
        if (line.rfind("mamba2-d16,", 0) == 0) ++fwd;
    CHECK(fwd == 3);
}

TEST_CASE("benchmark preconditions match the recorded contract") {
    BenchOptions opt;
    opt.dim = 16;
    opt.lengths = {64, 32, 128};
    CHECK_THROWS_AS(bench_mixer("mamba2", opt), ContractError);  // unsorted
    opt.lengths = {32, 64};
    CHECK_THROWS_AS(bench_mixer("mamba2", opt), ContractError);  // too few lengths
    opt.lengths = {32, 64, 128};
    opt.repeats = 3;
    CHECK_THROWS_AS(bench_mixer("mamba2", opt), ContractError);  // not enough repeats
    opt.repeats = 5;
    opt.lengths = {32, 64, 8192};
    CHECK_THROWS_AS(bench_mixer("mamba2", opt), ConfigError);  // beyond the desk-scale cap
    opt.lengths = {32, 64, 8192};
    opt.max_tokens = 16384;
    CHECK_NOTHROW(bench_mixer("mamba2", opt));  // raising the cap is explicit
    CHECK_THROWS_AS(bench_mixer("warp-drive", opt), ConfigError);
}

TEST_CASE("log-log slope fitting recovers known exponents and rejects degenerate input") {
    std::vector<double> xs, ys;
    for (double L : {256.0, 512.0, 1024.0, 2048.0}) {
        xs.push_back(std::log(L));
        ys.push_back(std::log(3.7 * L * L));
    }
    CHECK(fit_loglog_slope(xs, ys) == doctest::Approx(2.0).epsilon(1e-9));
    CHECK_THROWS_AS(fit_loglog_slope(std::vector<double>{1.0}, std::vector<double>{1.0}),
                    ContractError);
    CHECK_THROWS_AS(fit_loglog_slope(std::vector<double>{1.0, 1.0},
                                     std::vector<double>{1.0, 2.0}),
                    ContractError);
}

TEST_CASE("scan oracle self-check: unit decay reduces to the closed-form prefix sum") {
    const int64_t L = 6;
    std::vector<double> x(L), dt(L, 1.0), b(L, 1.0), c(L, 1.0), a{0.0}, skip{0.0};
    for (int64_t t = 0; t < L; ++t) x[size_t(t)] = double(t + 1);
    auto y = oracle::ssd_reference(L, 1, 1, 1, x, dt, b, c, a, skip);
    const double want[6] = {1, 3, 6, 10, 15, 21};  // triangular numbers
    for (int64_t t = 0; t < L; ++t) CHECK(y[size_t(t)] == want[t]);
}

TEST_CASE("attention oracle self-check: two tokens against manual softmax arithmetic") {
    // d=1 with unit weights collapses to softmax over raw products
    std::vector<double> x{1.0, 2.0}, w{1.0}, b{0.0};
    auto y = oracle::masked_attention(2, 1, 1, true, x, w, b, w, b, w, b, w, b);
    CHECK(y[0] == doctest::Approx(1.0).epsilon(1e-9));  // only itself visible
    const double e2 = std::exp(2.0), e4 = std::exp(4.0);
    const double want = (e2 * 1.0 + e4 * 2.0) / (e2 + e4);
    CHECK(y[1] == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("finite-difference oracle self-check: slope of x squared at 3 is 6") {
    double x = 3.0;
    auto f = [&x] { return x * x; };
    CHECK(oracle::finite_difference(f, &x, 1e-4) == doctest::Approx(6.0).epsilon(1e-6));
    CHECK(x == 3.0);  // the probe restores the coordinate
}

TEST_CASE("run manifests resolve to timestamp-free JSON that names its artifacts") {
    RunManifest m;
    m.subcommand = "bench";
    m.seed = 7;
    m.flags = {{"dim", "64"}, {"repeats", "5"}};
    m.config_text = "depth=4\ndim=64\n";
    m.artifacts = {"bench.csv"};
    auto j = nlohmann::json::parse(manifest_json(m));
    CHECK(j["tool"] == "cim");
    CHECK(j["subcommand"] == "bench");
    CHECK(j["seed"] == 7);
    CHECK(j["host"].contains("os"));
    CHECK(j["host"].contains("compiler"));
    CHECK(j["flags"]["dim"] == "64");
    CHECK(j["config"]["depth"] == "4");
    CHECK(j["artifacts"][0] == "bench.csv");
    for (const auto& key : {"time", "timestamp", "date"}) CHECK(!j.contains(key));
    CHECK(manifest_json(m) == manifest_json(m));  // replay-stable text
    CHECK_THROWS_AS(write_manifest(m, "/nonexistent-dir-for-cim-tests/m.json"), IoError);
}
