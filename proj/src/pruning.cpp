#include "scseg/pruning.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "scseg/kernels.hpp"
#include "scseg/ops.hpp"

namespace scseg {

double theta_term(const TokenMatrix& support, const TokenMatrix& query,
                  const ScProjector& p) {
    Matrix ms = sc_project(p, mean_rows(support.values()));
    Matrix mq = sc_project(p, mean_rows(query.values()));
    return kernels::active().dot(ms.data(), mq.data(), ms.cols());
}

PruneScoreTable make_score_table(std::span<const TokenMatrix> pool,
                                 const TokenMatrix& query, const ScProjector& p) {
    if (pool.empty()) throw ContractError("make_score_table: empty pool");
    PruneScoreTable table;
    table.query_embedding = sc_project(p, mean_rows(query.values()));
    table.theta.reserve(pool.size());
    const auto& k = kernels::active();
    for (const auto& s : pool) {
        Matrix ms = sc_project(p, mean_rows(s.values()));
        table.theta.push_back(
            k.dot(ms.data(), table.query_embedding.data(), ms.cols()));
    }
    return table;
}

PruneResult greedy_prune_terms(std::span<const double> terms, std::size_t n_prime) {
    const std::size_t n = terms.size();
    if (n == 0) throw ContractError("greedy_prune: empty pool");
    if (n_prime == 0 || n_prime > n)
        throw ContractError("greedy_prune: n_prime " + std::to_string(n_prime) +
                            " out of range for pool of " + std::to_string(n));
    PruneResult result;
    std::vector<bool> taken(n, false);
    double partial = 0.0;
    for (std::size_t round = 0; round < n_prime; ++round) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_id = n;
        for (std::size_t cand = 0; cand < n; ++cand) {
            if (taken[cand]) continue;
            // Recompute the full objective of the would-be set, as the
            // reference procedure does.
            double sum = terms[cand];
            for (std::size_t s : result.selected) sum += terms[s];
            ++result.evaluations;
            if (sum > best) {
                best = sum;
                best_id = cand;
            }
        }
        taken[best_id] = true;
        result.selected.push_back(best_id);
        partial = best;
    }
    result.objective = partial;
    return result;
}

PruneResult greedy_prune(std::span<const TokenMatrix> pool, const TokenMatrix& query,
                         const ScProjector& p, std::size_t n_prime) {
    const PruneScoreTable table = make_score_table(pool, query, p);
    return greedy_prune_terms(table.theta, n_prime);
}

PruneResult topk_prune(const PruneScoreTable& table, std::size_t n_prime) {
    const std::size_t n = table.theta.size();
    if (n == 0) throw ContractError("topk_prune: empty table");
    if (n_prime == 0 || n_prime > n)
        throw ContractError("topk_prune: n_prime " + std::to_string(n_prime) +
                            " out of range for pool of " + std::to_string(n));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return table.theta[a] > table.theta[b];
    });
    PruneResult result;
    result.selected.assign(order.begin(), order.begin() + n_prime);
    for (std::size_t s : result.selected) result.objective += table.theta[s];
    result.evaluations = n;
    return result;
}

PruneResult multilayer_prune(const std::vector<std::vector<TokenMatrix>>& pools,
                             const std::vector<TokenMatrix>& query_layers,
                             std::span<const ScProjector> projectors,
                             std::size_t n_prime) {
    if (pools.empty()) throw ContractError("multilayer_prune: no layers");
    if (pools.size() != query_layers.size() || pools.size() != projectors.size())
        throw ContractError("multilayer_prune: layers mismatch: pools " +
                            std::to_string(pools.size()) + ", queries " +
                            std::to_string(query_layers.size()) + ", projectors " +
                            std::to_string(projectors.size()));
    const std::size_t n = pools.front().size();
    for (const auto& layer : pools)
        if (layer.size() != n)
            throw ContractError("multilayer_prune: ragged pools: " + std::to_string(n) +
                                " vs " + std::to_string(layer.size()));
    std::vector<double> terms(n, 0.0);
    for (std::size_t l = 0; l < pools.size(); ++l) {
        const PruneScoreTable table =
            make_score_table(pools[l], query_layers[l], projectors[l]);
        for (std::size_t i = 0; i < n; ++i) terms[i] += table.theta[i];
    }
    const double inv_layers = 1.0 / static_cast<double>(pools.size());
    for (double& t : terms) t *= inv_layers;
    return greedy_prune_terms(terms, n_prime);
}

std::vector<JensenGapRow> jensen_gap_report(std::span<const TokenMatrix> pool,
                                            const TokenMatrix& query,
                                            const ScProjector& p, ScaleMode mode) {
    SupportPack pack(std::vector<TokenMatrix>(pool.begin(), pool.end()));
    const AttentionMap map = symmetric_attention(pack, query, p, mode);
    const ContributionReport report = contribution_index(map);
    const PruneScoreTable table = make_score_table(pool, query, p);
    std::vector<JensenGapRow> rows(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        rows[i].delta = report.delta[i];
        rows[i].theta = table.theta[i];
        rows[i].gap = report.delta[i] - table.theta[i];
    }
    return rows;
}

} // namespace scseg
