#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cim/layers.hpp"

namespace cim {

enum class TokenMixer { mamba2, causal_attn, full_attn };
enum class Heading { off, average, grid, duplicate_cls, learnable };
enum class FlipMode { off, inter_layer };
enum class ScanMode { one_way, per_layer_bidirectional };
enum class NormKind { rms, none };

// Full architectural description. Flat, bijective with the key=value config
// text: every field here is a key, every key maps back to one field.
struct ModelConfig {
    int64_t depth = 12;
    int64_t dim = 256;
    int64_t patch = 16;
    int64_t image = 224;  // square input, pixels per side
    TokenMixer token_mixer = TokenMixer::mamba2;
    ChannelKind channel_mixer = ChannelKind::swiglu;
    Heading heading = Heading::average;
    int64_t grid_n = 1;  // cells for heading=grid; one of 1, 4, 9
    bool recalc_heading = true;
    FlipMode flip = FlipMode::inter_layer;
    ScanMode scan = ScanMode::one_way;
    NormKind norm = NormKind::rms;
    int64_t num_classes = 1000;
    int64_t d_state = 64;
    int64_t head_dim = 64;
    int64_t attn_heads = 0;  // 0 resolves to max(1, dim/64)
    bool conv1d = false;
    int64_t chunk = 64;

    int64_t grid_side() const { return image / patch; }
    int64_t n_patches() const { return grid_side() * grid_side(); }
    int64_t n_heading() const {
        if (heading == Heading::off) return 0;
        return heading == Heading::grid ? grid_n : 1;
    }
    int64_t resolved_attn_heads() const {
        return attn_heads > 0 ? attn_heads : std::max<int64_t>(1, dim / 64);
    }
    SsdDims ssd_dims() const { return SsdDims::make(dim, d_state, head_dim, conv1d); }

    // Throws ConfigError on impossible combinations.
    void validate() const;
};

// Named presets. tiny/small/base/large follow the published model table and
// carry conv1d on; micro is the desk-scale test model.
ModelConfig preset_config(const std::string& name);
const std::vector<std::string>& preset_names();

// key=value text, one pair per line, '#' comments allowed.
// Display names matching the key=value serialization below.
std::string token_mixer_name(const ModelConfig& cfg);
std::string channel_mixer_name(const ModelConfig& cfg);
std::string heading_name(const ModelConfig& cfg);
std::string flip_name(const ModelConfig& cfg);

std::string serialize_config(const ModelConfig& cfg);
ModelConfig parse_config(const std::string& text);
void apply_override(ModelConfig& cfg, const std::string& key, const std::string& value);
const std::vector<std::string>& config_keys();

}  // namespace cim
