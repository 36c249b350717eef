#ifndef CONTOURFIT_MANIFEST_HPP
#define CONTOURFIT_MANIFEST_HPP

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "contourfit/config.hpp"
#include "contourfit/errors.hpp"
#include "contourfit/version.hpp"

namespace contourfit {

inline std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string digest_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot digest missing file: " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 15];
    while (f) {
        f.read(buf, sizeof buf);
        h = fnv1a64(buf, static_cast<std::size_t>(f.gcount()), h);
    }
    std::ostringstream out;
    out << "fnv1a64:" << std::hex << std::setw(16) << std::setfill('0') << h;
    return out.str();
}

/// Digest every regular file under a path (or the file itself), keyed by
/// relative path, in sorted order.
inline std::map<std::string, std::string> digest_inputs(const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    std::map<std::string, std::string> out;
    if (fs::is_directory(path)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(path))
            if (e.is_regular_file()) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files)
            out[fs::relative(f, path).generic_string()] = digest_file(f);
    } else {
        out[path.filename().generic_string()] = digest_file(path);
    }
    return out;
}

/// Deterministic run record written into every output directory. The
/// wall-clock duration goes to a sibling run.log so the manifest (and the
/// bundle) stays byte-reproducible for identical config + seed.
inline void write_run_manifest(const std::filesystem::path& out_dir, const std::string& command,
                               const Config& config, std::uint64_t seed,
                               const std::map<std::string, std::map<std::string, std::string>>& inputs,
                               double duration_seconds) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    nlohmann::ordered_json j;
    j["tool"] = "contourfit";
    j["version"] = kVersion;
    j["command"] = command;
    j["seed"] = seed;
    nlohmann::ordered_json jc;
    for (const auto& [k, v] : config.entries()) jc[k] = v;
    j["config"] = jc;
    nlohmann::ordered_json ji;
    for (const auto& [name, digests] : inputs) {
        nlohmann::ordered_json jd;
        for (const auto& [rel, dig] : digests) jd[rel] = dig;
        ji[name] = jd;
    }
    j["inputs"] = ji;

    const fs::path manifest = out_dir / "manifest.json";
    // model/weight bundles already carry a manifest; merge under "run"
    if (fs::exists(manifest)) {
        std::ifstream in(manifest);
        nlohmann::ordered_json existing;
        in >> existing;
        existing["run"] = j;
        std::ofstream f(manifest, std::ios::trunc);
        f << existing.dump(2) << "\n";
    } else {
        nlohmann::ordered_json wrapper;
        wrapper["run"] = j;
        std::ofstream f(manifest, std::ios::trunc);
        f << wrapper.dump(2) << "\n";
    }

    std::ofstream log(out_dir / "run.log", std::ios::trunc);
    log << command << " finished in " << std::fixed << std::setprecision(3) << duration_seconds
        << " s\n";
}

} // namespace contourfit

#endif
