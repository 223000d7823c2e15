#pragma once

#include <cstdint>
#include <string>

#include "cim/model.hpp"

namespace cim {

// Little-endian container: magic, format version, RNG seed, the canonical
// key=value config text, then every parameter tensor (name, extents, 32-bit
// values) in param_specs order. Save -> load -> save is byte-identical.
inline constexpr uint32_t checkpoint_version = 1;

template <class T>
void save_checkpoint(const ModelParams<T>& params, uint64_t seed, const std::string& path);

template <class T>
struct LoadedCheckpoint {
    ModelParams<T> params;
    uint64_t seed = 0;
};

// Throws IoError (unreadable), FormatError (bad magic / version / truncated),
// ConfigError (bad embedded config) or ShapeMismatchError (tensors disagree
// with the config's parameter table).
template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path);

}  // namespace cim
