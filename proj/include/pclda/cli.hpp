#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

namespace pclda::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitDivergence = 4;

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kManifestVersion = 1;

// Entry point behind the `pclda` executable. Progress and diagnostics go to
// `err`; artifacts only to files.
int run(const std::vector<std::string>& args, std::ostream& err);

// Flat key=value text: one pair per line, '#' starts a comment, blank lines
// ignored. Throws DataError on a malformed line or repeated key.
std::map<std::string, std::string> parse_config_text(const std::string& text);

// Returns args with `--key value` spliced in after the subcommand name for
// every config key the command line does not already set. Keys are long
// option names; "true"/"false" values map to a bare flag or nothing.
std::vector<std::string> merge_config(const std::vector<std::string>& args,
                                      const std::map<std::string, std::string>& config);

// FNV-1a 64 of the canonical (key-sorted, compact) JSON text, as 16 hex
// digits. Independent of the order keys were inserted in.
std::string config_hash(const nlohmann::json& config);

}  // namespace pclda::cli
