#include "cim/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "cim/config.hpp"
#include "cim/errors.hpp"

namespace cim {

namespace {

constexpr char magic_bytes[8] = {'C', 'I', 'M', 'C', 'K', 'P', 'T', '\0'};

void put_bytes(std::ofstream& out, const void* p, size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_u32(std::ofstream& out, uint32_t v) { put_bytes(out, &v, 4); }
void put_u64(std::ofstream& out, uint64_t v) { put_bytes(out, &v, 8); }
void put_i64(std::ofstream& out, int64_t v) { put_bytes(out, &v, 8); }

struct Reader {
    std::ifstream in;
    std::string path;

    void read_exact(void* p, size_t n) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in.gcount()) != n)
            throw FormatError("checkpoint truncated: " + path);
    }
    uint32_t u32() { uint32_t v; read_exact(&v, 4); return v; }
    uint64_t u64() { uint64_t v; read_exact(&v, 8); return v; }
    int64_t i64() { int64_t v; read_exact(&v, 8); return v; }
    std::string str(uint32_t n) {
        std::string s(n, '\0');
        if (n) read_exact(s.data(), n);
        return s;
    }
};

}  // namespace

template <class T>
void save_checkpoint(const ModelParams<T>& params, uint64_t seed, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for write: " + path);

    put_bytes(out, magic_bytes, 8);
    put_u32(out, checkpoint_version);
    put_u64(out, seed);

    const std::string cfg = serialize_config(params.cfg);
    put_u32(out, static_cast<uint32_t>(cfg.size()));
    put_bytes(out, cfg.data(), cfg.size());

    put_u32(out, static_cast<uint32_t>(params.named.size()));
    std::vector<float> row;
    for (const auto& [name, t] : params.named) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        put_bytes(out, name.data(), name.size());
        put_u32(out, static_cast<uint32_t>(t.shape().rank()));
        for (int d = 0; d < t.shape().rank(); ++d) put_i64(out, t.shape()[d]);
        row.resize(static_cast<size_t>(t.numel()));
        auto v = t.values();
        for (int64_t i = 0; i < t.numel(); ++i) row[static_cast<size_t>(i)] = static_cast<float>(v[i]);
        put_bytes(out, row.data(), row.size() * 4);
    }
    if (!out) throw IoError("write failed: " + path);
}

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
    Reader r{std::ifstream(path, std::ios::binary), path};
    if (!r.in) throw IoError("cannot open for read: " + path);

    char magic[8];
    r.read_exact(magic, 8);
    if (std::memcmp(magic, magic_bytes, 8) != 0)
        throw FormatError("not a checkpoint (bad magic): " + path);
    const uint32_t version = r.u32();
    if (version != checkpoint_version)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));

    LoadedCheckpoint<T> out;
    out.seed = r.u64();
    const std::string cfg_text = r.str(r.u32());
    const ModelConfig cfg = parse_config(cfg_text);

    out.params = init_params<T>(cfg, out.seed);
    const uint32_t n = r.u32();
    if (n != out.params.named.size())
        throw ShapeMismatchError("checkpoint holds " + std::to_string(n) + " tensors, config expects " +
                                 std::to_string(out.params.named.size()));

    std::vector<float> row;
    for (uint32_t i = 0; i < n; ++i) {
        const std::string name = r.str(r.u32());
        auto& [want_name, t] = out.params.named[i];
        if (name != want_name)
            throw ShapeMismatchError("tensor " + std::to_string(i) + " is '" + name + "', expected '" +
                                     want_name + "'");
        const uint32_t rank = r.u32();
        if (rank > 4) throw FormatError("tensor '" + name + "' has rank " + std::to_string(rank));
        int64_t d[4] = {0, 0, 0, 0};
        for (uint32_t k = 0; k < rank; ++k) {
            d[k] = r.i64();
            if (d[k] <= 0) throw FormatError("tensor '" + name + "' has non-positive extent");
        }
        Shape s;
        switch (rank) {
            case 0: break;
            case 1: s = Shape{d[0]}; break;
            case 2: s = Shape{d[0], d[1]}; break;
            case 3: s = Shape{d[0], d[1], d[2]}; break;
            default: s = Shape{d[0], d[1], d[2], d[3]}; break;
        }
        if (!(s == t.shape()))
            throw ShapeMismatchError("tensor '" + name + "' has shape " + s.str() + ", expected " +
                                     t.shape().str());
        row.resize(static_cast<size_t>(t.numel()));
        r.read_exact(row.data(), row.size() * 4);
        auto v = t.values();
        for (int64_t j = 0; j < t.numel(); ++j) v[j] = static_cast<T>(row[static_cast<size_t>(j)]);
    }
    char extra;
    if (r.in.read(&extra, 1); r.in.gcount() != 0)
        throw FormatError("trailing bytes after last tensor: " + path);
    return out;
}

template void save_checkpoint<float>(const ModelParams<float>&, uint64_t, const std::string&);
template void save_checkpoint<double>(const ModelParams<double>&, uint64_t, const std::string&);
template LoadedCheckpoint<float> load_checkpoint<float>(const std::string&);
template LoadedCheckpoint<double> load_checkpoint<double>(const std::string&);

}  // namespace cim
