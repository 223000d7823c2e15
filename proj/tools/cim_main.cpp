#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cim/bench.hpp"
#include "cim/checkpoint.hpp"
#include "cim/config.hpp"
#include "cim/dataset.hpp"
#include "cim/errors.hpp"
#include "cim/manifest.hpp"
#include "cim/model.hpp"
#include "cim/suites.hpp"
#include "cim/sweep.hpp"
#include "cim/train.hpp"

namespace fs = std::filesystem;
using namespace cim;

namespace {

// Exit codes: 0 success, 1 failed check/assertion, 2 usage error, 3 I/O error.
constexpr int exit_ok = 0;
constexpr int exit_failed = 1;
constexpr int exit_usage = 2;
constexpr int exit_io = 3;

struct Common {
    std::string config_path;
    std::string preset = "micro";
    std::string out = ".";
    uint64_t seed = 0;
    std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_path, "key=value config file (overrides --preset)");
    cmd->add_option("--preset", c.preset, "built-in scale: tiny/small/base/large/micro")
        ->default_val("micro");
    cmd->add_option("--seed", c.seed, "RNG seed")->default_val(0);
    cmd->add_option("--out", c.out, "output directory for artifacts")->default_val(".");
    cmd->add_option("--set", c.sets, "config override key=value, repeatable");
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read: " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

ModelConfig resolve_config(const Common& c) {
    ModelConfig cfg =
        c.config_path.empty() ? preset_config(c.preset) : parse_config(slurp(c.config_path));
    for (const auto& kv : c.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

std::string out_path(const Common& c, const std::string& name) {
    std::error_code ec;
    fs::create_directories(c.out, ec);
    if (ec) throw IoError("cannot create output directory: " + c.out);
    return (fs::path(c.out) / name).string();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write: " + path);
    out << text;
    if (!out) throw IoError("write failed: " + path);
}

std::string join(const std::vector<std::string>& v, const char* sep = ",") {
    std::string s;
    for (const auto& e : v) s += (s.empty() ? "" : sep) + e;
    return s;
}

std::string join_i64(const std::vector<int64_t>& v) {
    std::string s;
    for (int64_t e : v) s += (s.empty() ? "" : ",") + std::to_string(e);
    return s;
}

// ------------------------------------------------------------ verify ----

int cmd_verify(const Common& common, const std::vector<std::string>& suites,
               const std::string& fault) {
    SuiteHooks hooks;
    if (!fault.empty()) {
        if (fault == "disable-flip") hooks.break_flip = true;
        else throw ConfigError("unknown fault '" + fault + "' (have: disable-flip)");
    }
    auto results = run_suites(suites, hooks);
    int fails = 0;
    for (const auto& r : results) {
        std::printf("[%s] %-18s %6.1fs  %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.seconds,
                    r.detail.c_str());
        fails += !r.passed;
    }
    std::printf("%d/%zu suites passed\n", static_cast<int>(results.size()) - fails, results.size());

    RunManifest m;
    m.subcommand = "verify";
    m.seed = common.seed;
    m.flags = {{"suite", suites.empty() ? "all" : join(suites)}, {"inject-fault", fault}};
    write_manifest(m, out_path(common, "manifest.json"));
    return fails ? exit_failed : exit_ok;
}

// ------------------------------------------------------------- bench ----

int cmd_bench(const Common& common, const std::vector<std::string>& mixers,
              std::vector<int64_t> lengths, int64_t dim, int64_t repeats, int64_t max_tokens) {
    BenchOptions opt;
    opt.lengths = std::move(lengths);
    opt.dim = dim;
    opt.repeats = repeats;
    opt.seed = common.seed;
    opt.max_tokens = max_tokens;
    auto runs = bench_scaling(mixers, opt);

    const std::string csv = out_path(common, "bench.csv");
    write_text(csv, bench_csv(runs));
    for (const auto& m : runs)
        std::printf("%-12s time slope %.3f  memory slope %.3f  MAC slope %.3f\n", m.mixer.c_str(),
                    m.time_slope, m.mem_slope, m.mac_slope);
    std::printf("wrote %s\n", csv.c_str());

    RunManifest man;
    man.subcommand = "bench";
    man.seed = common.seed;
    man.flags = {{"mixers", join(mixers)},
                 {"lengths", join_i64(opt.lengths)},
                 {"dim", std::to_string(dim)},
                 {"repeats", std::to_string(repeats)},
                 {"max-tokens", std::to_string(max_tokens)}};
    man.artifacts = {"bench.csv"};
    write_manifest(man, out_path(common, "manifest.json"));
    return exit_ok;
}

// --------------------------------------------------------- train-toy ----

int cmd_train_toy(const Common& common, int64_t steps, double lr, int64_t count, double target_acc) {
    ModelConfig cfg = resolve_config(common);
    auto data = make_toy_dataset<float>(
        {.seed = common.seed, .count = count, .classes = cfg.num_classes, .image = cfg.image});
    auto params = init_params<float>(cfg, common.seed);
    TrainOptions opt{.steps = steps, .lr = lr, .target_acc = target_acc, .eval_every = 10};
    auto trace = train_toy(params, data, opt);

    std::ostringstream os;
    os << "step,loss,acc\n";
    size_t next_acc = 0;
    for (size_t i = 0; i < trace.loss.size(); ++i) {
        os << (i + 1) << "," << std::setprecision(9) << trace.loss[i] << ",";
        if (next_acc < trace.acc.size() && trace.acc[next_acc].first == static_cast<int64_t>(i + 1)) {
            os << std::setprecision(9) << trace.acc[next_acc].second;
            ++next_acc;
        }
        os << "\n";
    }
    const std::string csv = out_path(common, "train_trace.csv");
    write_text(csv, os.str());
    save_checkpoint(params, common.seed, out_path(common, "model.ckpt"));
    std::printf("ran %lld steps, final loss %.6f, train accuracy %.4f\nwrote %s\n",
                static_cast<long long>(trace.steps_run), trace.loss.empty() ? 0.0 : trace.loss.back(),
                trace.final_acc, csv.c_str());

    RunManifest man;
    man.subcommand = "train-toy";
    man.seed = common.seed;
    man.flags = {{"steps", std::to_string(steps)},
                 {"lr", std::to_string(lr)},
                 {"count", std::to_string(count)},
                 {"target-acc", std::to_string(target_acc)}};
    man.config_text = serialize_config(cfg);
    man.artifacts = {"train_trace.csv", "model.ckpt"};
    write_manifest(man, out_path(common, "manifest.json"));
    return exit_ok;
}

// ------------------------------------------------------------- sweep ----

int cmd_sweep(const Common& common, const std::vector<std::string>& axes, int64_t steps, double lr,
              int64_t count) {
    ModelConfig base = resolve_config(common);
    SweepOptions opt{.axes = axes, .steps = steps, .lr = lr, .seed = common.seed, .count = count};
    auto cells = ablation_sweep(base, opt);

    const std::string csv_text = sweep_csv(cells);
    const std::string csv = out_path(common, "sweep.csv");
    write_text(csv, csv_text);
    std::fputs(csv_text.c_str(), stdout);
    std::printf("wrote %s\n", csv.c_str());

    RunManifest man;
    man.subcommand = "sweep";
    man.seed = common.seed;
    man.flags = {{"axes", join(axes)},
                 {"steps", std::to_string(steps)},
                 {"lr", std::to_string(lr)},
                 {"count", std::to_string(count)}};
    man.config_text = serialize_config(base);
    man.artifacts = {"sweep.csv"};
    write_manifest(man, out_path(common, "manifest.json"));
    int fails = 0;
    for (const auto& c : cells) fails += c.failed;
    return fails ? exit_failed : exit_ok;
}

// ------------------------------------------------------------ params ----

int cmd_params(const Common& common, bool config_given) {
    if (config_given || !common.sets.empty()) {
        ModelConfig cfg = resolve_config(common);
        std::printf("%lld parameters\n", static_cast<long long>(count_params(cfg)));
    } else {
        for (const auto& name : preset_names()) {
            const int64_t got = count_params(preset_config(name));
            const double budget = preset_param_budget(name);
            if (budget > 0)
                std::printf("%-6s %12lld  (%+.2f%% vs %.0fM reference)\n", name.c_str(),
                            static_cast<long long>(got),
                            100.0 * (static_cast<double>(got) - budget) / budget, budget / 1e6);
            else
                std::printf("%-6s %12lld\n", name.c_str(), static_cast<long long>(got));
        }
    }
    RunManifest man;
    man.subcommand = "params";
    man.seed = common.seed;
    man.flags = {{"preset", common.preset}, {"config", common.config_path}};
    write_manifest(man, out_path(common, "manifest.json"));
    return exit_ok;
}

// ----------------------------------------------------------- inspect ----

int cmd_inspect(const Common& common, const std::string& path) {
    auto loaded = load_checkpoint<float>(path);
    std::printf("checkpoint %s\nformat version %u\nseed %llu\n", path.c_str(), checkpoint_version,
                static_cast<unsigned long long>(loaded.seed));
    std::printf("---- config ----\n%s---- tensors ----\n", serialize_config(loaded.params.cfg).c_str());
    int64_t total = 0;
    for (const auto& [name, t] : loaded.params.named) {
        std::printf("%-28s %s\n", name.c_str(), t.shape().str().c_str());
        total += t.numel();
    }
    std::printf("%zu tensors, %lld parameters\n", loaded.params.named.size(),
                static_cast<long long>(total));

    RunManifest man;
    man.subcommand = "inspect";
    man.seed = common.seed;
    man.flags = {{"checkpoint", path}};
    man.config_text = serialize_config(loaded.params.cfg);
    write_manifest(man, out_path(common, "manifest.json"));
    return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cim: causal image modeling workbench"};
    app.require_subcommand(1);

    Common common;

    auto* verify = app.add_subcommand("verify", "run the release gate suites");
    std::vector<std::string> suites;
    std::string fault;
    add_common(verify, common);
    verify->add_option("--suite", suites, "suite name filter, repeatable (default: all)");
    verify->add_option("--inject-fault", fault, "sabotage a known invariant to prove the gate trips")
        ->group("");  // hidden

    auto* bench = app.add_subcommand("bench", "token-mixer scaling benchmark");
    std::vector<std::string> mixers{"mamba2", "causal-attn", "full-attn"};
    std::vector<int64_t> lengths{256, 512, 1024, 2048};
    int64_t dim = 64, repeats = 5, max_tokens = 4096;
    add_common(bench, common);
    bench->add_option("--mixers", mixers, "mixers to time")->delimiter(',');
    bench->add_option("--lengths", lengths, "token counts, ascending")->delimiter(',');
    bench->add_option("--dim", dim, "model width")->default_val(64);
    bench->add_option("--repeats", repeats, "timed repeats per length (median)")->default_val(5);
    bench->add_option("--max-tokens", max_tokens, "refuse lengths beyond this")->default_val(4096);

    auto* train = app.add_subcommand("train-toy", "train on the synthetic grating set");
    int64_t steps = 200, count = 24;
    double lr = 0.1, target_acc = -1.0;
    add_common(train, common);
    train->add_option("--steps", steps, "gradient steps")->default_val(200);
    train->add_option("--lr", lr, "peak learning rate (cosine decay)")->default_val(0.1);
    train->add_option("--count", count, "toy images")->default_val(24);
    train->add_option("--target-acc", target_acc, "stop early at this train accuracy")
        ->default_val(-1.0);

    auto* sweep = app.add_subcommand("sweep", "ablation grid over architecture axes");
    std::vector<std::string> axes{"heading", "flip"};
    int64_t sweep_steps = 60, sweep_count = 24;
    double sweep_lr = 0.1;
    add_common(sweep, common);
    sweep->add_option("--axes", axes, "axes: heading,flip,channel_mixer,token_mixer")->delimiter(',');
    sweep->add_option("--steps", sweep_steps, "steps per cell")->default_val(60);
    sweep->add_option("--lr", sweep_lr, "peak learning rate per cell")->default_val(0.1);
    sweep->add_option("--count", sweep_count, "toy images")->default_val(24);

    auto* params_cmd = app.add_subcommand("params", "parameter counts per scale");
    add_common(params_cmd, common);

    auto* inspect = app.add_subcommand("inspect", "describe a checkpoint file");
    std::string ckpt_path;
    add_common(inspect, common);
    inspect->add_option("path", ckpt_path, "checkpoint file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_usage;
    }

    try {
        if (verify->parsed()) return cmd_verify(common, suites, fault);
        if (bench->parsed()) return cmd_bench(common, mixers, lengths, dim, repeats, max_tokens);
        if (train->parsed()) return cmd_train_toy(common, steps, lr, count, target_acc);
        if (sweep->parsed()) return cmd_sweep(common, axes, sweep_steps, sweep_lr, sweep_count);
        if (params_cmd->parsed()) return cmd_params(common, !common.config_path.empty());
        if (inspect->parsed()) {
            try {
                return cmd_inspect(common, ckpt_path);
            } catch (const Error& e) {
                std::fprintf(stderr, "error: %s\n", e.what());
                return exit_io;
            }
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return exit_usage;
    } catch (const IoError& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return exit_io;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return exit_io;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_failed;
    }
    return exit_usage;
}
