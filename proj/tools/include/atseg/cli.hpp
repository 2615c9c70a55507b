#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace atseg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

inline constexpr const char* kToolVersion = "0.1.0";

/// Runs one `atseg` invocation. `args` excludes the program name.
/// Returns 0 on success, 1 for runtime or data errors, 2 for usage errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// 64-bit FNV-1a, the corpus fingerprint recorded in manifests.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t hash = 0xcbf29ce484222325ULL);

/// Hash of every images/*.pgm and masks/*.pgm under `dir`, in sorted path order,
/// covering relative paths and file bytes.
std::uint64_t corpus_hash(const std::filesystem::path& dir);

}  // namespace atseg::cli
