#include "cim/manifest.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cim/errors.hpp"

namespace cim {

namespace {

const char* host_os() {
#if defined(__linux__)
    return "linux";
#elif defined(__APPLE__)
    return "darwin";
#elif defined(_WIN32)
    return "windows";
#else
    return "unknown";
#endif
}

const char* host_arch() {
#if defined(__x86_64__) || defined(_M_X64)
    return "x86_64";
#elif defined(__aarch64__)
    return "aarch64";
#else
    return "unknown";
#endif
}

}  // namespace

std::string manifest_json(const RunManifest& m) {
    nlohmann::ordered_json j;
    j["tool"] = "cim";
    j["subcommand"] = m.subcommand;
    j["seed"] = m.seed;
    j["host"] = {{"os", host_os()}, {"arch", host_arch()}, {"compiler", __VERSION__}};

    nlohmann::ordered_json flags = nlohmann::ordered_json::object();
    for (const auto& [k, v] : m.flags) flags[k] = v;
    j["flags"] = flags;

    nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
    std::istringstream lines(m.config_text);
    for (std::string line; std::getline(lines, line);) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) cfg[line.substr(0, eq)] = line.substr(eq + 1);
    }
    j["config"] = cfg;
    j["artifacts"] = m.artifacts;
    return j.dump(2) + "\n";
}

void write_manifest(const RunManifest& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write manifest: " + path);
    out << manifest_json(m);
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace cim
