#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace scseg {

struct SweepRow {
    std::size_t n = 0;
    std::string method;
    std::optional<double> delta; // omitted when undefined (single support)
    double miou = 0.0;
    double wall_ms = 0.0;
};

/// Rows grouped by method with strictly increasing N inside each group; all
/// present metrics finite.
struct SweepResult {
    std::vector<SweepRow> rows;
    std::uint64_t seed = 0;
    std::string config_hash;

    void validate() const;
    std::vector<std::string> methods() const; // in first-appearance order
};

/// CSV with header `N,method,delta,miou,wall_ms`, one row per SweepRow in
/// order, then `#`-prefixed metadata lines (seed, config hash). delta prints
/// empty when omitted; reals print with fixed precision, so identical
/// results give identical bytes.
std::string render_csv(const SweepResult& result);

/// Minimal line chart of delta against N: axes, one polyline per method,
/// method labels. Rows without delta are skipped. Byte-deterministic.
std::string render_svg(const SweepResult& result);

void emit_report(const SweepResult& result, const std::string& csv_path,
                 const std::string& svg_path);

} // namespace scseg
