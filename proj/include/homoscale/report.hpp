#pragma once

#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "homoscale/errors.hpp"

namespace homoscale {

inline constexpr int kReportSchemaVersion = 1;
inline constexpr const char* kToolVersion = "1.0.0";

/// One pass/fail line. `criterion` names an acceptance criterion ("C1".."C10")
/// or an invariant of the run ("mass", "budget").
struct Verdict {
    std::string criterion;
    std::string name;
    bool pass = false;
    std::string detail;
};

[[nodiscard]] inline std::string sha256_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw InvalidArgument("sha256 failed");
    std::ostringstream os;
    for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
}

/// Hash of the canonical (key-sorted, compact) dump of the config plus seed.
[[nodiscard]] inline std::string config_hash(const nlohmann::json& config, std::uint64_t seed) {
    return sha256_hex(config.dump() + "#" + std::to_string(seed)).substr(0, 16);
}

/// Shortest round-trip decimal form, so identical doubles print identically.
[[nodiscard]] inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// CSV table with a fixed header; every row gets the config hash appended.
class CsvTable {
public:
    CsvTable(std::vector<std::string> header, std::string hash) : header_(std::move(header)), hash_(std::move(hash)) {}

    void row(const std::vector<std::string>& cells) {
        if (cells.size() != header_.size())
            throw InvalidArgument("csv row has " + std::to_string(cells.size()) + " cells, header has " +
                                  std::to_string(header_.size()));
        rows_.push_back(cells);
    }

    [[nodiscard]] std::string str() const {
        std::ostringstream os;
        for (const auto& h : header_) os << h << ',';
        os << "config_hash\n";
        for (const auto& r : rows_) {
            for (const auto& c : r) os << c << ',';
            os << hash_ << '\n';
        }
        return os.str();
    }

    void write(const std::filesystem::path& p) const {
        std::filesystem::create_directories(p.parent_path());
        std::ofstream out(p, std::ios::binary);
        if (!out) throw InvalidArgument("cannot write " + p.string());
        out << str();
    }

private:
    std::vector<std::string> header_;
    std::string hash_;
    std::vector<std::vector<std::string>> rows_;
};

/// JSON run summary: experiment id, provenance, results, verdicts.
struct RunSummary {
    std::string experiment;
    std::string hash;
    std::uint64_t seed = 0;
    nlohmann::json config = nlohmann::json::object();
    nlohmann::json results = nlohmann::json::object();
    std::vector<Verdict> verdicts;

    [[nodiscard]] bool all_pass() const {
        for (const auto& v : verdicts)
            if (!v.pass) return false;
        return true;
    }

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json j;
        j["schema_version"] = kReportSchemaVersion;
        j["experiment"] = experiment;
        j["provenance"] = {{"config_hash", hash}, {"seed", seed}, {"tool_version", kToolVersion},
                           {"compiler", __VERSION__}, {"config", config}};
        j["results"] = results;
        auto& vs = j["verdicts"] = nlohmann::json::array();
        for (const auto& v : verdicts)
            vs.push_back({{"criterion", v.criterion}, {"name", v.name}, {"pass", v.pass}, {"detail", v.detail}});
        j["pass"] = all_pass();
        return j;
    }

    void write(const std::filesystem::path& dir) const {
        std::filesystem::create_directories(dir);
        std::ofstream out(dir / (experiment + ".json"), std::ios::binary);
        if (!out) throw InvalidArgument("cannot write into " + dir.string());
        out << to_json().dump(2) << '\n';
    }
};

/// Merges run summaries into one document; pass iff every input passes.
[[nodiscard]] inline nlohmann::json merge_summaries(const std::vector<nlohmann::json>& runs) {
    nlohmann::json j;
    j["schema_version"] = kReportSchemaVersion;
    j["runs"] = nlohmann::json::array();
    bool pass = true;
    for (const auto& r : runs) {
        if (!r.contains("schema_version") || r.at("schema_version") != kReportSchemaVersion)
            throw ConfigError("summary with unsupported schema version");
        pass = pass && r.value("pass", false);
        j["runs"].push_back(r);
    }
    j["pass"] = pass;
    return j;
}

}  // namespace homoscale
