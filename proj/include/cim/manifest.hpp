#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace cim {

// Written for every CLI run: enough resolved state (seed, flags, config) that
// reissuing the same command line reproduces the artifacts byte for byte.
// Deliberately carries no timestamps.
struct RunManifest {
    std::string subcommand;
    uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> flags;  // resolved flag snapshot
    std::string config_text;                                 // canonical key=value block, may be empty
    std::vector<std::string> artifacts;                      // files the run wrote
};

std::string manifest_json(const RunManifest& m);
void write_manifest(const RunManifest& m, const std::string& path);

}  // namespace cim
