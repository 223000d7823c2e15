// Config plumbing plus end-to-end runs of the installed binary. The binary
// path arrives via the CIM_CLI_PATH compile definition so the tests exercise
// exactly what the build produced.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cim/config.hpp"
#include "cim/suites.hpp"

using namespace cim;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(bool(in));
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

fs::path fresh_dir(const std::string& stem) {
    auto d = fs::temp_directory_path() / ("cim-cli-" + stem + "-" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

struct CliRun {
    int code = -1;
    std::string output;  // stdout and stderr interleaved
};

CliRun run_cli(const std::string& args, const fs::path& workdir) {
    const fs::path log = workdir / "run.log";
    const std::string cmd = std::string(CIM_CLI_PATH) + " " + args + " > '" + log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.output = slurp(log);
    return r;
}

int lines_with_prefix(const std::string& text, const std::string& prefix) {
    std::istringstream in(text);
    int n = 0;
    for (std::string line; std::getline(in, line);)
        if (line.rfind(prefix, 0) == 0) ++n;
    return n;
}

}  // namespace

TEST_CASE("config text survives a serialize/parse round trip") {
    ModelConfig cfg = preset_config("small");
    apply_override(cfg, "heading", "grid(4)");
    apply_override(cfg, "conv1d", "false");
    const std::string text = serialize_config(cfg);
    ModelConfig back = parse_config(text);
    CHECK(serialize_config(back) == text);
    CHECK(back.heading == Heading::grid);
    CHECK(back.grid_n == 4);
    CHECK(!back.conv1d);
}

TEST_CASE("overrides validate both key and value") {
    ModelConfig cfg = preset_config("micro");
    apply_override(cfg, "depth", "7");
    CHECK(cfg.depth == 7);
    CHECK_THROWS_AS(apply_override(cfg, "bogus", "1"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "depth", "abc"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "token_mixer", "rnn"), ConfigError);
    CHECK(!config_keys().empty());
    CHECK(preset_names().size() == 5);
    CHECK_THROWS_AS(preset_config("huge"), ConfigError);
}

TEST_CASE("the release gate table is fixed at nine suites") {
    CHECK(suite_names().size() == 9);
    CHECK_THROWS_AS(run_suite("no-such-suite"), ConfigError);
    auto r = run_suite("param-count");
    CHECK(r.passed);
    CHECK(r.name == "param-count");
}

TEST_CASE("binary: params and verify report success through exit codes") {
    auto dir = fresh_dir("basic");
    auto params = run_cli("params --preset micro --out " + dir.string(), dir);
    CHECK(params.code == 0);
    CHECK(params.output.find("micro") != std::string::npos);

    auto verify = run_cli("verify --suite param-count --out " + dir.string(), dir);
    CHECK(verify.code == 0);
    CHECK(verify.output.find("PASS") != std::string::npos);
    CHECK(fs::exists(dir / "manifest.json"));
}

TEST_CASE("binary: usage and i/o failures map to distinct exit codes") {
    auto dir = fresh_dir("codes");
    CHECK(run_cli("verify --suite nope --out " + dir.string(), dir).code == 2);
    CHECK(run_cli("params --set bogus=1 --out " + dir.string(), dir).code == 2);
    CHECK(run_cli("inspect " + (dir / "missing.ckpt").string(), dir).code == 3);
}

TEST_CASE("binary: an injected fault turns the heading-flip gate red") {
    auto dir = fresh_dir("fault");
    auto r = run_cli("verify --suite heading-flip --inject-fault disable-flip --out " + dir.string(),
                     dir);
    CHECK(r.code == 1);
    CHECK(r.output.find("FAIL") != std::string::npos);
}

TEST_CASE("binary: a repeated train-toy command replays its artifacts byte for byte") {
    auto a = fresh_dir("train-a");
    auto b = fresh_dir("train-b");
    const std::string args = "train-toy --seed 7 --steps 2 --count 4 --set image=16 --out ";
    REQUIRE(run_cli(args + a.string(), a).code == 0);
    REQUIRE(run_cli(args + b.string(), b).code == 0);
    for (const char* name : {"train_trace.csv", "model.ckpt", "manifest.json"}) {
        CAPTURE(name);
        CHECK(slurp(a / name) == slurp(b / name));
    }
    const std::string trace = slurp(a / "train_trace.csv");
    CHECK(trace.rfind("step,loss,acc\n", 0) == 0);
    auto man = nlohmann::json::parse(slurp(a / "manifest.json"));
    CHECK(man["tool"] == "cim");
    CHECK(man["subcommand"] == "train-toy");
    CHECK(man["seed"] == 7);
}

TEST_CASE("binary: bench writes one forward row per requested length") {
    auto dir = fresh_dir("bench");
    auto r = run_cli("bench --lengths 32,64,128 --dim 16 --repeats 5 --mixers mamba2 --out " +
                         dir.string(),
                     dir);
    REQUIRE(r.code == 0);
    const std::string csv = slurp(dir / "bench.csv");
    CHECK(csv.rfind("config_id,L,ms_median,peak_bytes,macs\n", 0) == 0);
    CHECK(lines_with_prefix(csv, "mamba2-d16,") == 3);
    CHECK(lines_with_prefix(csv, "mamba2-d16-fwd-bwd,") == 1);
}

TEST_CASE("binary: a two-axis sweep emits the full grid") {
    auto dir = fresh_dir("sweep");
    auto r = run_cli("sweep --axes heading,flip --steps 2 --count 4 --set image=16 --out " +
                         dir.string(),
                     dir);
    REQUIRE(r.code == 0);
    const std::string csv = slurp(dir / "sweep.csv");
    CHECK(csv.rfind("heading,flip,channel_mixer,token_mixer,final_loss,final_acc\n", 0) == 0);
    int rows = 0;
    std::istringstream in(csv);
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) ++rows;
    CHECK(rows == 5);  // header + 2x2 cells
    CHECK(csv.find("nan") == std::string::npos);  // every cell trained
}
