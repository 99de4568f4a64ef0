#pragma once

#include <charconv>
#include <cstdint>
#include <string>
#include <system_error>

#include <json.hpp>

#include "mvjl/verify.hpp"

namespace mvjl {

/// Shortest round-trip decimal form of a double; identical input bits always
/// produce identical text, which is what the byte-identical-rerun contract
/// needs.
inline std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string to_csv(const Table& table) {
    std::string out;
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
        if (c) out += ',';
        out += table.columns[c];
    }
    out += '\n';
    for (const auto& row : table.rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) out += ',';
            out += format_double(row[c]);
        }
        out += '\n';
    }
    return out;
}

/// FNV-1a over the canonical configuration dump; stamped into reports for
/// reproducibility tracking.
inline std::uint64_t fnv1a(const std::string& bytes) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x00000100000001B3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v, 16);
    std::string s(buf, res.ptr);
    return std::string(16 - s.size(), '0') + s;
}

/// Flat-text form of an empirical measure: a "K d" header line followed by
/// the K*d coordinates in atom-major order.
inline std::string measure_to_text(const EmpiricalMeasure& mu) {
    std::string out = std::to_string(mu.size()) + " " + std::to_string(mu.dim()) + "\n";
    for (double v : mu.atoms()) {
        out += format_double(v);
        out += '\n';
    }
    return out;
}

inline nlohmann::json report_to_json(const VerificationReport& rep) {
    nlohmann::json j;
    j["kind"] = rep.kind;
    j["seed"] = rep.seed;
    j["pass"] = rep.pass();
    nlohmann::json checks = nlohmann::json::array();
    for (const auto& c : rep.checks) {
        checks.push_back({{"name", c.name},
                          {"observed", format_double(c.observed)},
                          {"bound", format_double(c.bound)},
                          {"pass", c.pass}});
    }
    j["checks"] = checks;
    nlohmann::json scalars = nlohmann::json::object();
    for (const auto& [k, v] : rep.scalars) scalars[k] = format_double(v);
    j["scalars"] = scalars;
    nlohmann::json notes = nlohmann::json::object();
    for (const auto& [k, v] : rep.notes) notes[k] = v;
    j["notes"] = notes;
    nlohmann::json tables = nlohmann::json::array();
    for (const auto& t : rep.tables) tables.push_back(t.name + ".csv");
    j["tables"] = tables;
    return j;
}

}  // namespace mvjl
