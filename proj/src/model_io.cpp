#include "dag/model_io.hpp"

#include <cstring>
#include <fstream>

namespace dag::io {

namespace {

constexpr char kMagic[4] = {'D', 'A', 'G', 'M'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}
void put_f64(std::ofstream& out, double v) {
    out.write(reinterpret_cast<const char*>(&v), 8);
}

std::uint32_t get_u32(std::ifstream& in, const std::string& path) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 4))
        throw FormatError(path + ": truncated model file");
    return v;
}
double get_f64(std::ifstream& in, const std::string& path) {
    double v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 8))
        throw FormatError(path + ": truncated model file");
    return v;
}

}  // namespace

void save_model(const nn::ParamStore<float>& store, const DagConfig& cfg,
                const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write model file: " + path.string());
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, cfg.dim);
    put_u32(out, cfg.offset_hidden);
    put_u32(out, cfg.neighbors);
    put_f64(out, cfg.stride);
    put_u32(out, std::uint32_t(cfg.readout));
    put_u32(out, (cfg.offset_on ? 1u : 0u) | (cfg.weight_on ? 2u : 0u) |
                     (cfg.coords_on ? 4u : 0u));
    put_u32(out, cfg.classes);
    put_f64(out, cfg.leaky_slope);

    std::uint32_t count = 0;
    store.for_each_const([&](const std::string&, const nn::Tensor<float>&) { ++count; });
    put_u32(out, count);
    store.for_each_const([&](const std::string& name, const nn::Tensor<float>& t) {
        put_u32(out, std::uint32_t(name.size()));
        out.write(name.data(), std::streamsize(name.size()));
        put_u32(out, std::uint32_t(t.rows));
        put_u32(out, std::uint32_t(t.cols));
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  std::streamsize(t.data.size() * sizeof(float)));
    });
    if (!out) throw IoError("short write to model file: " + path.string());
}

LoadedModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model file: " + path.string());
    const std::string p = path.string();

    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError(p + ": bad magic (expected DAGM) (byte offset 0)");
    const std::uint32_t version = get_u32(in, p);
    if (version != kVersion)
        throw FormatError(p + ": unsupported model version " + std::to_string(version));

    LoadedModel lm;
    lm.cfg.dim = get_u32(in, p);
    lm.cfg.offset_hidden = get_u32(in, p);
    lm.cfg.neighbors = get_u32(in, p);
    lm.cfg.stride = get_f64(in, p);
    lm.cfg.readout = ReadoutKind(get_u32(in, p));
    const std::uint32_t flags = get_u32(in, p);
    lm.cfg.offset_on = flags & 1u;
    lm.cfg.weight_on = flags & 2u;
    lm.cfg.coords_on = flags & 4u;
    lm.cfg.classes = get_u32(in, p);
    lm.cfg.leaky_slope = get_f64(in, p);
    lm.cfg.validate();

    const std::uint32_t count = get_u32(in, p);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = get_u32(in, p);
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw FormatError(p + ": truncated model file");
        const std::uint32_t rows = get_u32(in, p);
        const std::uint32_t cols = get_u32(in, p);
        if (rows == 0 || cols == 0) throw FormatError(p + ": zero-sized parameter " + name);
        nn::Tensor<float> t(rows, cols);
        if (!in.read(reinterpret_cast<char*>(t.data.data()),
                     std::streamsize(t.data.size() * sizeof(float))))
            throw FormatError(p + ": truncated parameter data for " + name);
        lm.store.add(name, std::move(t));
    }
    return lm;
}

}  // namespace dag::io
