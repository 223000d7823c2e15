#include "cim/config.hpp"

#include <cmath>
#include <sstream>

#include "cim/errors.hpp"

namespace cim {
namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int64_t x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' wants an integer, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "on" || v == "1") return true;
    if (v == "false" || v == "off" || v == "0") return false;
    throw ConfigError("config: key '" + key + "' wants true/false, got '" + v + "'");
}

[[noreturn]] void bad_enum(const std::string& key, const std::string& v,
                           const std::string& allowed) {
    throw ConfigError("config: key '" + key + "' got '" + v + "', expected one of " + allowed);
}

}  // namespace

void ModelConfig::validate() const {
    if (depth < 1) throw ConfigError("config: depth must be >= 1");
    if (dim < 2 || dim % 2 != 0) throw ConfigError("config: dim must be a positive even number");
    if (patch < 1 || image < patch || image % patch != 0)
        throw ConfigError("config: image " + std::to_string(image) +
                          " must be a positive multiple of patch " + std::to_string(patch));
    if (num_classes < 2) throw ConfigError("config: num_classes must be >= 2");
    if (heading == Heading::grid) {
        if (grid_n != 1 && grid_n != 4 && grid_n != 9)
            throw ConfigError("config: grid heading supports 1, 4 or 9 cells, got " +
                              std::to_string(grid_n));
        int64_t r = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(grid_n))));
        if (grid_side() % r != 0)
            throw ConfigError("config: patch grid " + std::to_string(grid_side()) + "x" +
                              std::to_string(grid_side()) + " not divisible into " +
                              std::to_string(grid_n) + " equal cells");
    }
    if (token_mixer == TokenMixer::mamba2) {
        if ((2 * dim) % head_dim != 0)
            throw ConfigError("config: inner width " + std::to_string(2 * dim) +
                              " not divisible by head_dim " + std::to_string(head_dim));
        if (d_state < 1) throw ConfigError("config: d_state must be >= 1");
        if (chunk < 1) throw ConfigError("config: chunk must be >= 1");
    } else if (dim % resolved_attn_heads() != 0) {
        throw ConfigError("config: dim " + std::to_string(dim) + " not divisible by " +
                          std::to_string(resolved_attn_heads()) + " attention heads");
    }
}

ModelConfig preset_config(const std::string& name) {
    ModelConfig c;
    if (name == "tiny") {
        c.depth = 12;
        c.dim = 256;
        c.conv1d = true;
    } else if (name == "small") {
        c.depth = 12;
        c.dim = 512;
        c.conv1d = true;
    } else if (name == "base") {
        c.depth = 12;
        c.dim = 768;
        c.conv1d = true;
    } else if (name == "large") {
        c.depth = 24;
        c.dim = 1024;
        c.conv1d = true;
    } else if (name == "micro") {
        c.depth = 4;
        c.dim = 64;
        c.patch = 4;
        c.image = 32;
        c.num_classes = 2;
    } else {
        throw ConfigError("unknown preset '" + name + "', expected tiny/small/base/large/micro");
    }
    c.validate();
    return c;
}

const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names{"tiny", "small", "base", "large", "micro"};
    return names;
}

namespace {

std::string heading_str(const ModelConfig& c) {
    switch (c.heading) {
        case Heading::off: return "off";
        case Heading::average: return "average";
        case Heading::grid: return "grid(" + std::to_string(c.grid_n) + ")";
        case Heading::duplicate_cls: return "duplicate-cls";
        default: return "learnable";
    }
}

void set_heading(ModelConfig& c, const std::string& v) {
    if (v == "off") {
        c.heading = Heading::off;
    } else if (v == "average") {
        c.heading = Heading::average;
    } else if (v == "duplicate-cls") {
        c.heading = Heading::duplicate_cls;
    } else if (v == "learnable") {
        c.heading = Heading::learnable;
    } else if (v.rfind("grid", 0) == 0) {
        std::string num = v.substr(4);
        if (!num.empty() && num.front() == '(' && num.back() == ')')
            num = num.substr(1, num.size() - 2);
        c.heading = Heading::grid;
        c.grid_n = parse_int("heading", num);
    } else {
        bad_enum("heading", v, "off/average/grid(N)/duplicate-cls/learnable");
    }
}

}  // namespace

std::string token_mixer_name(const ModelConfig& c) {
    return c.token_mixer == TokenMixer::mamba2
               ? "mamba2"
               : c.token_mixer == TokenMixer::causal_attn ? "causal-attn" : "full-attn";
}

std::string channel_mixer_name(const ModelConfig& c) {
    return c.channel_mixer == ChannelKind::swiglu
               ? "swiglu"
               : c.channel_mixer == ChannelKind::plain_mlp ? "plain-mlp" : "none";
}

std::string heading_name(const ModelConfig& c) { return heading_str(c); }

std::string flip_name(const ModelConfig& c) {
    return c.flip == FlipMode::inter_layer ? "inter-layer" : "off";
}

std::string serialize_config(const ModelConfig& c) {
    std::ostringstream o;
    o << "depth=" << c.depth << "\n";
    o << "dim=" << c.dim << "\n";
    o << "patch=" << c.patch << "\n";
    o << "image=" << c.image << "\n";
    o << "token_mixer=" << token_mixer_name(c) << "\n";
    o << "channel_mixer=" << channel_mixer_name(c) << "\n";
    o << "heading=" << heading_str(c) << "\n";
    o << "recalc_heading=" << (c.recalc_heading ? "true" : "false") << "\n";
    o << "flip=" << flip_name(c) << "\n";
    o << "scan=" << (c.scan == ScanMode::one_way ? "one-way" : "per-layer-bidirectional") << "\n";
    o << "norm=" << (c.norm == NormKind::rms ? "rms" : "none") << "\n";
    o << "num_classes=" << c.num_classes << "\n";
    o << "d_state=" << c.d_state << "\n";
    o << "head_dim=" << c.head_dim << "\n";
    o << "attn_heads=" << c.attn_heads << "\n";
    o << "conv1d=" << (c.conv1d ? "on" : "off") << "\n";
    o << "chunk=" << c.chunk << "\n";
    return o.str();
}

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys{
        "depth",  "dim",         "patch", "image",    "token_mixer", "channel_mixer",
        "heading", "recalc_heading", "flip", "scan", "norm",        "num_classes",
        "d_state", "head_dim",   "attn_heads", "conv1d", "chunk"};
    return keys;
}

void apply_override(ModelConfig& c, const std::string& key, const std::string& value) {
    std::string v = trim(value);
    if (key == "depth") {
        c.depth = parse_int(key, v);
    } else if (key == "dim") {
        c.dim = parse_int(key, v);
    } else if (key == "patch") {
        c.patch = parse_int(key, v);
    } else if (key == "image") {
        c.image = parse_int(key, v);
    } else if (key == "token_mixer") {
        if (v == "mamba2") c.token_mixer = TokenMixer::mamba2;
        else if (v == "causal-attn") c.token_mixer = TokenMixer::causal_attn;
        else if (v == "full-attn") c.token_mixer = TokenMixer::full_attn;
        else bad_enum(key, v, "mamba2/causal-attn/full-attn");
    } else if (key == "channel_mixer") {
        if (v == "swiglu") c.channel_mixer = ChannelKind::swiglu;
        else if (v == "plain-mlp") c.channel_mixer = ChannelKind::plain_mlp;
        else if (v == "none") c.channel_mixer = ChannelKind::none;
        else bad_enum(key, v, "swiglu/plain-mlp/none");
    } else if (key == "heading") {
        set_heading(c, v);
    } else if (key == "recalc_heading") {
        c.recalc_heading = parse_bool(key, v);
    } else if (key == "flip") {
        if (v == "inter-layer") c.flip = FlipMode::inter_layer;
        else if (v == "off") c.flip = FlipMode::off;
        else bad_enum(key, v, "inter-layer/off");
    } else if (key == "scan") {
        if (v == "one-way") c.scan = ScanMode::one_way;
        else if (v == "per-layer-bidirectional") c.scan = ScanMode::per_layer_bidirectional;
        else bad_enum(key, v, "one-way/per-layer-bidirectional");
    } else if (key == "norm") {
        if (v == "rms") c.norm = NormKind::rms;
        else if (v == "none") c.norm = NormKind::none;
        else bad_enum(key, v, "rms/none");
    } else if (key == "num_classes") {
        c.num_classes = parse_int(key, v);
    } else if (key == "d_state") {
        c.d_state = parse_int(key, v);
    } else if (key == "head_dim") {
        c.head_dim = parse_int(key, v);
    } else if (key == "attn_heads") {
        c.attn_heads = parse_int(key, v);
    } else if (key == "conv1d") {
        c.conv1d = parse_bool(key, v);
    } else if (key == "chunk") {
        c.chunk = parse_int(key, v);
    } else {
        std::string keys;
        for (const auto& k : config_keys()) {
            if (!keys.empty()) keys += ", ";
            keys += k;
        }
        throw ConfigError("config: unknown key '" + key + "'; valid keys: " + keys);
    }
}

ModelConfig parse_config(const std::string& text) {
    ModelConfig c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        apply_override(c, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    c.validate();
    return c;
}

}  // namespace cim
