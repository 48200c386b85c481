#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace partpool {

/// FNV-1a over raw bytes, used to fingerprint config files in manifests.
std::uint64_t fnv1a(const std::string& bytes);

/// Writes <out_dir>/manifest.json recording what produced the outputs.
void write_manifest(const std::string& out_dir, const std::string& command,
                    std::uint64_t config_hash, std::uint64_t seed,
                    const std::vector<std::string>& output_paths,
                    const std::string& started_at, const std::string& finished_at);

std::string timestamp_now();

} // namespace partpool
