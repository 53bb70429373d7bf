#pragma once

#include <filesystem>
#include <vector>

#include "dag/bag.hpp"

namespace dag::io {

// .dagbag layout, little-endian:
//   "DAGB" | version u32 = 1 | N u32 | D u32 | label u32
//   | coords N*2 f32 | features N*D f32

Bag read_bag(const std::filesystem::path& path);
void write_bag(const Bag& bag, const std::filesystem::path& path);

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<ManifestEntry>& entries,
                    const std::filesystem::path& path);

/// Loads every bag referenced by a manifest; relative paths resolve against
/// the manifest's directory. Ids and labels must match the bag headers.
std::vector<Bag> load_bags(const std::filesystem::path& manifest_path);

}  // namespace dag::io
