#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "scseg/report.hpp"
#include "scseg/synth.hpp"

namespace scseg {

/// Dilution experiment: for each N, a pool of one exact query copy (support
/// id 0) plus N-1 independent low supports; for each method, the deviation
/// of support 0 (per-layer deviations averaged) and the episode IoU, both
/// averaged over seeds. Methods: "standard" (separate key/query maps),
/// "symmetric" (shared projector), "symmetric+prune" (same projector,
/// selection enabled).
struct SweepConfig {
    // Pool template; upper_bound is forced on and the N-1 extra supports are
    // independent low scenes.
    PoolSpec base;
    std::vector<std::size_t> n_values = {1, 2, 5, 10, 30, 50, 70};
    std::vector<std::string> methods = {"standard", "symmetric", "symmetric+prune"};
    std::size_t seeds = 20;
    std::uint64_t base_seed = 42;
    std::size_t workers = 0;  // 0 = pick from hardware
    bool timings = false;     // off: wall_ms recorded as 0.0, bytes reproducible
    PruneSettings prune{true, 30, 30};
    double map_scale = 0.6;   // random correlation map weight scale
    double map_untie = 8.0;   // standard maps: query-side perturbation fraction
    std::size_t heads = 1;

    void validate() const;
};

struct TrialResult {
    std::optional<double> delta;
    double iou = 0.0;
    double wall_ms = 0.0;
};

/// One episode of one method on one concrete pool spec.
TrialResult run_dilution_trial(const PoolSpec& spec, const std::string& method,
                               const SweepConfig& cfg);

/// Full grid of seeds x n_values x methods. Trials run on a bounded worker
/// group; each result lands in its preassigned slot, so row bytes never
/// depend on scheduling.
SweepResult dilution_sweep(const SweepConfig& cfg);

} // namespace scseg
