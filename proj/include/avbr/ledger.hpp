#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace avbr {

struct ArtifactRef {
    std::string path;    // relative to the output directory
    std::string sha256;
};

// One machine-readable record per run: command, resolved config, seed,
// metrics, and every artifact with its content digest. No wall-clock fields,
// so repeated runs are byte-identical.
struct LedgerEntry {
    std::string run_id;  // first 16 hex chars of sha256(command + config)
    std::string command;
    nlohmann::ordered_json config;
    uint64_t seed = 0;
    nlohmann::ordered_json metrics;
    std::vector<ArtifactRef> artifacts;

    std::string to_json() const;
    static LedgerEntry from_json(const std::string& line);
};

std::string compute_run_id(const std::string& command, const nlohmann::ordered_json& config);

void append_ledger(const std::string& path, const LedgerEntry& entry);
std::vector<LedgerEntry> read_ledger(const std::string& path);

// True when the ledger already has this run_id and every recorded artifact
// still exists with a matching digest (the --resume no-op check).
bool run_is_current(const std::string& ledger_path, const std::string& run_id,
                    const std::string& artifact_root);

}  // namespace avbr
