#include "dag/bag_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "bag files are little-endian; this build targets LE hosts only");

namespace dag::io {

namespace {

constexpr char kMagic[4] = {'D', 'A', 'G', 'B'};
constexpr std::uint32_t kVersion = 1;

[[noreturn]] void format_fail(const std::filesystem::path& path, std::size_t offset,
                              const std::string& what) {
    throw FormatError(path.string() + ": " + what + " (byte offset " + std::to_string(offset) +
                      ")");
}

void read_exact(std::ifstream& in, void* dst, std::size_t len,
                const std::filesystem::path& path, std::size_t& offset, const char* what) {
    in.read(reinterpret_cast<char*>(dst), std::streamsize(len));
    if (std::size_t(in.gcount()) != len)
        format_fail(path, offset + std::size_t(std::max<std::streamsize>(in.gcount(), 0)),
                    std::string("truncated ") + what);
    offset += len;
}

std::uint32_t read_u32(std::ifstream& in, const std::filesystem::path& path,
                       std::size_t& offset, const char* what) {
    std::uint32_t v = 0;
    read_exact(in, &v, sizeof(v), path, offset, what);
    return v;
}

}  // namespace

Bag read_bag(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open bag file: " + path.string());
    std::size_t offset = 0;

    char magic[4];
    read_exact(in, magic, 4, path, offset, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0) format_fail(path, 0, "bad magic (expected DAGB)");

    const std::uint32_t version = read_u32(in, path, offset, "version");
    if (version != kVersion)
        format_fail(path, 4, "unsupported format version " + std::to_string(version));

    Bag bag;
    bag.n = read_u32(in, path, offset, "patch count");
    if (bag.n == 0) format_fail(path, 8, "patch count is zero");
    bag.d = read_u32(in, path, offset, "feature dim");
    if (bag.d == 0) format_fail(path, 12, "feature dim is zero");
    bag.label = read_u32(in, path, offset, "label");

    bag.coords.resize(std::size_t(bag.n) * 2);
    read_exact(in, bag.coords.data(), bag.coords.size() * sizeof(float), path, offset, "coords");
    bag.features.resize(std::size_t(bag.n) * bag.d);
    read_exact(in, bag.features.data(), bag.features.size() * sizeof(float), path, offset,
               "features");

    char extra;
    if (in.read(&extra, 1).gcount() == 1)
        format_fail(path, offset, "trailing bytes after payload");

    bag.id = path.stem().string();
    bag.validate();
    return bag;
}

void write_bag(const Bag& bag, const std::filesystem::path& path) {
    bag.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write bag file: " + path.string());
    out.write(kMagic, 4);
    auto put_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    put_u32(kVersion);
    put_u32(bag.n);
    put_u32(bag.d);
    put_u32(bag.label);
    out.write(reinterpret_cast<const char*>(bag.coords.data()),
              std::streamsize(bag.coords.size() * sizeof(float)));
    out.write(reinterpret_cast<const char*>(bag.features.data()),
              std::streamsize(bag.features.size() * sizeof(float)));
    if (!out) throw IoError("short write to bag file: " + path.string());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": invalid manifest JSON: " + e.what());
    }
    if (!doc.is_array()) throw FormatError(path.string() + ": manifest must be a JSON array");
    std::vector<ManifestEntry> entries;
    entries.reserve(doc.size());
    for (const auto& rec : doc) {
        if (!rec.contains("id") || !rec.contains("path") || !rec.contains("label"))
            throw FormatError(path.string() + ": manifest record missing id/path/label");
        entries.push_back(ManifestEntry{rec.at("id").get<std::string>(),
                                        rec.at("path").get<std::string>(),
                                        rec.at("label").get<std::uint32_t>()});
    }
    return entries;
}

void write_manifest(const std::vector<ManifestEntry>& entries,
                    const std::filesystem::path& path) {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& e : entries)
        doc.push_back({{"id", e.id}, {"path", e.path}, {"label", e.label}});
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest: " + path.string());
    out << doc.dump(2) << "\n";
}

std::vector<Bag> load_bags(const std::filesystem::path& manifest_path) {
    const auto entries = read_manifest(manifest_path);
    const auto base = manifest_path.parent_path();
    std::vector<Bag> bags;
    bags.reserve(entries.size());
    for (const auto& e : entries) {
        std::filesystem::path p(e.path);
        if (p.is_relative()) p = base / p;
        Bag bag = read_bag(p);
        bag.id = e.id;
        if (bag.label != e.label)
            throw FormatError(p.string() + ": label " + std::to_string(bag.label) +
                              " disagrees with manifest label " + std::to_string(e.label));
        bags.push_back(std::move(bag));
    }
    return bags;
}

}  // namespace dag::io
