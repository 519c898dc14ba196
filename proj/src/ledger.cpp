#include "avbr/ledger.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "avbr/digest.hpp"
#include "avbr/errors.hpp"

namespace avbr {

using nlohmann::ordered_json;

std::string LedgerEntry::to_json() const {
    ordered_json obj;
    obj["run_id"] = run_id;
    obj["command"] = command;
    obj["config"] = config;
    obj["seed"] = seed;
    obj["metrics"] = metrics;
    ordered_json arts = ordered_json::array();
    for (const auto& a : artifacts) {
        arts.push_back({{"path", a.path}, {"sha256", a.sha256}});
    }
    obj["artifacts"] = arts;
    return obj.dump();
}

LedgerEntry LedgerEntry::from_json(const std::string& line) {
    LedgerEntry e;
    try {
        const auto obj = ordered_json::parse(line);
        e.run_id = obj.at("run_id").get<std::string>();
        e.command = obj.at("command").get<std::string>();
        e.config = obj.at("config");
        e.seed = obj.at("seed").get<uint64_t>();
        e.metrics = obj.value("metrics", ordered_json::object());
        for (const auto& a : obj.value("artifacts", ordered_json::array())) {
            e.artifacts.push_back(
                {a.at("path").get<std::string>(), a.at("sha256").get<std::string>()});
        }
    } catch (const nlohmann::json::exception& ex) {
        throw ParseError(std::string("ledger entry: ") + ex.what());
    }
    return e;
}

std::string compute_run_id(const std::string& command, const ordered_json& config) {
    return sha256_hex(command + "\x1f" + config.dump()).substr(0, 16);
}

void append_ledger(const std::string& path, const LedgerEntry& entry) {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw Error("cannot append to ledger " + path);
    out << entry.to_json() << "\n";
}

std::vector<LedgerEntry> read_ledger(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::vector<LedgerEntry> out;
    if (!in) return out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) out.push_back(LedgerEntry::from_json(line));
    }
    return out;
}

bool run_is_current(const std::string& ledger_path, const std::string& run_id,
                    const std::string& artifact_root) {
    const auto entries = read_ledger(ledger_path);
    for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
        if (it->run_id != run_id) continue;
        for (const auto& a : it->artifacts) {
            const auto full = std::filesystem::path(artifact_root) / a.path;
            std::error_code ec;
            if (!std::filesystem::exists(full, ec)) return false;
            if (sha256_file(full.string()) != a.sha256) return false;
        }
        return true;
    }
    return false;
}

}  // namespace avbr
