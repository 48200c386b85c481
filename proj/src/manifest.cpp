#include "partpool/manifest.hpp"

#include <array>
#include <cstdio>
#include <ctime>
#include <fstream>

#include <json.hpp>

#include "partpool/errors.hpp"

namespace partpool {

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {
std::string git_describe() {
    std::array<char, 128> buf{};
    FILE* pipe = popen("git describe --always --dirty 2>/dev/null", "r");
    if (!pipe) return "unknown";
    std::string out;
    while (fgets(buf.data(), buf.size(), pipe)) out += buf.data();
    pclose(pipe);
    while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
    return out.empty() ? "unknown" : out;
}
} // namespace

std::string timestamp_now() {
    std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    std::uint64_t config_hash, std::uint64_t seed,
                    const std::vector<std::string>& output_paths,
                    const std::string& started_at, const std::string& finished_at) {
    char hash_hex[24];
    std::snprintf(hash_hex, sizeof hash_hex, "%016llx",
                  static_cast<unsigned long long>(config_hash));
    nlohmann::json j{
        {"command", command},
        {"config_hash", hash_hex},
        {"seed", seed},
        {"git", git_describe()},
        {"started_at", started_at},
        {"finished_at", finished_at},
        {"outputs", output_paths},
    };
    const std::string path = out_dir + "/manifest.json";
    std::ofstream os(path);
    if (!os) throw DataError("cannot write manifest: " + path);
    os << j.dump(2) << "\n";
}

} // namespace partpool
