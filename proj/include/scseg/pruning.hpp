#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "scseg/correlation.hpp"

namespace scseg {

/// Cached per-support objective terms. theta[i] is the correlation of the
/// projected mean support token with the projected mean query token; the
/// pool objective of any subset is the sum of its members' terms.
struct PruneScoreTable {
    std::vector<double> theta;
    Matrix query_embedding; // 1 x d, projected mean query token
};

struct PruneResult {
    std::vector<std::size_t> selected; // in selection order
    double objective = 0.0;
    /// Candidate objective evaluations performed (greedy: one per scanned
    /// candidate, at most n_prime * pool size; top-k: one per term read).
    std::size_t evaluations = 0;
};

/// Single objective term: f(mean support token) . f(mean query token).
/// Token-level projections are never formed, only the two mean tokens'.
double theta_term(const TokenMatrix& support, const TokenMatrix& query,
                  const ScProjector& p);

PruneScoreTable make_score_table(std::span<const TokenMatrix> pool,
                                 const TokenMatrix& query, const ScProjector& p);

/// Reference greedy: each round rescans every remaining candidate and
/// recomputes the partial-set objective plus the candidate's term, keeping
/// the strictly best (ties resolve to the lowest index). Counts every
/// candidate evaluation.
PruneResult greedy_prune_terms(std::span<const double> terms, std::size_t n_prime);

PruneResult greedy_prune(std::span<const TokenMatrix> pool, const TokenMatrix& query,
                         const ScProjector& p, std::size_t n_prime);

/// Fast path over the cached table: descending term order, ties to the
/// lowest index. Selects the same set as the greedy reference.
PruneResult topk_prune(const PruneScoreTable& table, std::size_t n_prime);

/// Terms averaged over layers, then greedy selection on the averaged terms.
/// pools[l] lists the same supports at layer l; ragged pools are an error.
PruneResult multilayer_prune(const std::vector<std::vector<TokenMatrix>>& pools,
                             const std::vector<TokenMatrix>& query_layers,
                             std::span<const ScProjector> projectors,
                             std::size_t n_prime);

/// Per-support comparison of the true contribution index against the cheap
/// mean-token term it lower-approximates. No sign is asserted anywhere; the
/// gap is measured, not assumed.
struct JensenGapRow {
    double delta = 0.0;
    double theta = 0.0;
    double gap = 0.0; // delta - theta
};

std::vector<JensenGapRow> jensen_gap_report(std::span<const TokenMatrix> pool,
                                            const TokenMatrix& query,
                                            const ScProjector& p,
                                            ScaleMode mode = ScaleMode::sqrt_d);

} // namespace scseg
