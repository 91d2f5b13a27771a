#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "scseg/ops.hpp"
#include "scseg/pruning.hpp"
#include "scseg/rng.hpp"
#include "scseg/synth.hpp"

using namespace scseg;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
    Matrix m(r, c);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, scale);
    return m;
}

TokenMatrix random_tokens(Rng& rng, std::size_t n, std::size_t d, double scale = 1.0) {
    return TokenMatrix(random_matrix(rng, n, d, scale));
}

Affine identity_affine(std::size_t d) {
    Affine a;
    a.w = Matrix(d, d);
    for (std::size_t i = 0; i < d; ++i) a.w.at(i, i) = 1.0;
    a.b = Matrix(1, d);
    return a;
}

TokenMatrix single_token(const std::vector<double>& v) {
    return TokenMatrix(Matrix(1, v.size(), v));
}

// Exhaustive reference: best subset of the given size by term sum.
std::vector<std::size_t> brute_best_subset(const std::vector<double>& terms,
                                           std::size_t k) {
    std::vector<std::size_t> pick(k);
    std::iota(pick.begin(), pick.end(), 0);
    std::vector<std::size_t> best_set;
    double best = -std::numeric_limits<double>::infinity();
    const std::size_t n = terms.size();
    while (true) {
        double sum = 0.0;
        for (std::size_t i : pick) sum += terms[i];
        if (sum > best) {
            best = sum;
            best_set = pick;
        }
        // Next combination in lexicographic order.
        std::size_t i = k;
        while (i > 0 && pick[i - 1] == n - k + i - 1) --i;
        if (i == 0) break;
        ++pick[i - 1];
        for (std::size_t j = i; j < k; ++j) pick[j] = pick[j - 1] + 1;
    }
    return best_set;
}

std::vector<std::size_t> sorted_copy(std::vector<std::size_t> v) {
    std::sort(v.begin(), v.end());
    return v;
}

} // namespace

TEST_CASE("theta term anchors under the unit-initialized projector") {
    const std::size_t d = 4;
    ScProjector unit = unit_f2_projector(identity_affine(d));

    // Both branches reduce to x / sqrt(d), so the term is m_s . m_q / d.
    TokenMatrix q(Matrix(2, d, std::vector<double>{2, 0, 0, 0, 4, 0, 0, 0}));
    CHECK(theta_term(q, q, unit) == doctest::Approx(9.0 / 4.0).epsilon(1e-15));

    // Orthogonal mean tokens: every partial product is an exact zero.
    TokenMatrix s(Matrix(1, d, std::vector<double>{0, 0, 5, 0}));
    CHECK(theta_term(s, q, unit) == 0.0);

    // Random case against an explicit recompute.
    Rng rng(5);
    ScProjector p = random_projector(rng, d, 0.8);
    TokenMatrix a = random_tokens(rng, 3, d), b = random_tokens(rng, 6, d);
    Matrix pa = sc_project(p, mean_rows(a.values()));
    Matrix pb = sc_project(p, mean_rows(b.values()));
    double want = 0.0;
    for (std::size_t i = 0; i < d; ++i) want += pa.at(0, i) * pb.at(0, i);
    CHECK(theta_term(a, b, p) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("score table caches one term per support plus the query embedding") {
    const std::size_t d = 6;
    Rng rng(9);
    ScProjector p = random_projector(rng, d, 0.7);
    std::vector<TokenMatrix> pool;
    for (int i = 0; i < 5; ++i) pool.push_back(random_tokens(rng, 2 + i, d));
    TokenMatrix q = random_tokens(rng, 4, d);

    PruneScoreTable table = make_score_table(pool, q, p);
    CHECK(table.query_embedding.rows() == 1);
    CHECK(table.query_embedding.cols() == d);
    REQUIRE(table.theta.size() == pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i)
        CHECK(table.theta[i] == theta_term(pool[i], q, p));

    CHECK_THROWS_AS(make_score_table(std::span<const TokenMatrix>{}, q, p),
                    ContractError);
}

TEST_CASE("mean tokens are projected, individual tokens never are") {
    // One support token is exactly zero. A token-level projection would hit
    // the degenerate-row guard of the direction branch; the mean token is
    // well away from zero, so scoring must succeed.
    const std::size_t d = 4;
    Affine id = identity_affine(d);
    ScProjector p;
    p.f1 = id;
    p.f2 = id;

    Matrix vals(2, d);
    for (std::size_t c = 0; c < d; ++c) vals.at(0, c) = 2.0;
    TokenMatrix support(vals); // rows: [2,2,2,2] and [0,0,0,0]
    TokenMatrix query(Matrix(1, d, 1.0));

    CHECK_THROWS_AS(sc_project(p, vals), DegenerateRowError);
    CHECK_NOTHROW(theta_term(support, query, p));
    std::vector<TokenMatrix> pool = {support, query};
    CHECK_NOTHROW(make_score_table(pool, query, p));
    CHECK_NOTHROW(greedy_prune(pool, query, p, 1));
}

TEST_CASE("greedy selection walkthrough on fixed terms") {
    std::vector<double> terms = {0.9, 0.1, 0.5};
    PruneResult r = greedy_prune_terms(terms, 2);
    REQUIRE(r.selected.size() == 2);
    CHECK(r.selected[0] == 0);
    CHECK(r.selected[1] == 2);
    CHECK(r.objective == doctest::Approx(1.4).epsilon(1e-15));
    // Round one scans 3 candidates, round two scans 2.
    CHECK(r.evaluations == 5);
    CHECK(r.evaluations <= 2 * terms.size());
}

TEST_CASE("full-size greedy emits descending term order") {
    std::vector<double> terms = {0.1, 0.9, 0.5, 0.7};
    PruneResult r = greedy_prune_terms(terms, 4);
    const std::vector<std::size_t> want = {1, 3, 2, 0};
    CHECK(r.selected == want);
    CHECK(r.objective == doctest::Approx(2.2).epsilon(1e-12));
}

TEST_CASE("greedy ties resolve to the lowest index") {
    std::vector<double> terms = {0.5, 0.7, 0.7, 0.5};
    PruneResult r = greedy_prune_terms(terms, 3);
    const std::vector<std::size_t> want = {1, 2, 0};
    CHECK(r.selected == want);

    std::vector<double> flat(4, 0.3);
    PruneResult f = greedy_prune_terms(flat, 2);
    CHECK(f.selected == std::vector<std::size_t>{0, 1});
}

TEST_CASE("selection size contract") {
    std::vector<double> terms = {0.1, 0.2};
    CHECK_THROWS_AS(greedy_prune_terms(terms, 0), ContractError);
    CHECK_THROWS_AS(greedy_prune_terms(terms, 3), ContractError);
    CHECK_THROWS_AS(greedy_prune_terms(std::span<const double>{}, 1), ContractError);

    PruneScoreTable empty;
    CHECK_THROWS_AS(topk_prune(empty, 1), ContractError);
}

TEST_CASE("greedy, top-k and exhaustive search agree on random pools") {
    Rng rng(17);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t d = 4 + rep % 3;
        const std::size_t n = rng.uniform_index(2, 10);
        const std::size_t k = rng.uniform_index(1, std::min<std::size_t>(n, 4));
        ScProjector p = random_projector(rng, d, 0.7);
        std::vector<TokenMatrix> pool;
        for (std::size_t i = 0; i < n; ++i)
            pool.push_back(random_tokens(rng, rng.uniform_index(1, 4), d));
        TokenMatrix q = random_tokens(rng, 3, d);

        PruneScoreTable table = make_score_table(pool, q, p);
        PruneResult g = greedy_prune(pool, q, p, k);
        PruneResult t = topk_prune(table, k);
        std::vector<std::size_t> brute = brute_best_subset(table.theta, k);

        CHECK(sorted_copy(g.selected) == sorted_copy(t.selected));
        CHECK(sorted_copy(g.selected) == sorted_copy(brute));
        CHECK(g.selected == t.selected); // both emit descending term order
        CHECK(g.objective == doctest::Approx(t.objective).epsilon(1e-12));

        // Additivity: the objective is the plain sum of the chosen terms.
        double sum = 0.0;
        for (std::size_t s : g.selected) sum += table.theta[s];
        CHECK(g.objective == doctest::Approx(sum).epsilon(1e-12));

        // Budget: the reference scan never exceeds k per-candidate sweeps,
        // and its exact count is the arithmetic series of shrinking scans.
        CHECK(g.evaluations <= k * n);
        CHECK(g.evaluations == k * n - k * (k - 1) / 2);
        CHECK(t.evaluations == n);
    }
}

TEST_CASE("greedy selection commutes with pool permutation") {
    Rng rng(21);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t n = rng.uniform_index(5, 9);
        std::vector<double> terms(n);
        for (double& v : terms) v = rng.normal();
        const std::size_t k = rng.uniform_index(1, n);

        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = n; i > 1; --i)
            std::swap(perm[i - 1], perm[rng.uniform_index(0, i - 1)]);
        std::vector<double> shuffled(n);
        for (std::size_t i = 0; i < n; ++i) shuffled[i] = terms[perm[i]];

        PruneResult base = greedy_prune_terms(terms, k);
        PruneResult moved = greedy_prune_terms(shuffled, k);
        std::vector<std::size_t> mapped;
        for (std::size_t i : moved.selected) mapped.push_back(perm[i]);
        CHECK(sorted_copy(mapped) == sorted_copy(base.selected));
    }
}

TEST_CASE("single-layer multilayer selection equals plain greedy") {
    const std::size_t d = 5;
    Rng rng(25);
    ScProjector p = random_projector(rng, d, 0.8);
    std::vector<TokenMatrix> pool;
    for (int i = 0; i < 7; ++i) pool.push_back(random_tokens(rng, 2, d));
    TokenMatrix q = random_tokens(rng, 2, d);

    PruneResult direct = greedy_prune(pool, q, p, 3);
    PruneResult multi = multilayer_prune({pool}, {q}, std::vector<ScProjector>{p}, 3);
    CHECK(direct.selected == multi.selected);
    CHECK(direct.objective == multi.objective);
    CHECK(direct.evaluations == multi.evaluations);
}

TEST_CASE("multilayer terms are the per-layer average") {
    const std::size_t d = 4, L = 3, n = 6;
    Rng rng(29);
    std::vector<std::vector<TokenMatrix>> pools(L);
    std::vector<TokenMatrix> queries;
    std::vector<ScProjector> projectors;
    for (std::size_t l = 0; l < L; ++l) {
        for (std::size_t i = 0; i < n; ++i)
            pools[l].push_back(random_tokens(rng, 1 + (i + l) % 3, d));
        queries.push_back(random_tokens(rng, 2, d));
        projectors.push_back(random_projector(rng, d, 0.7));
    }

    PruneResult got = multilayer_prune(pools, queries, projectors, 2);

    std::vector<double> avg(n, 0.0);
    for (std::size_t l = 0; l < L; ++l) {
        PruneScoreTable table = make_score_table(pools[l], queries[l], projectors[l]);
        for (std::size_t i = 0; i < n; ++i) avg[i] += table.theta[i];
    }
    for (double& v : avg) v /= (double)L;
    PruneResult want = greedy_prune_terms(avg, 2);
    CHECK(got.selected == want.selected);
    CHECK(got.objective == doctest::Approx(want.objective).epsilon(1e-12));
}

TEST_CASE("multilayer average ties resolve to the lowest index") {
    // Unit-initialized projector turns each term into m_s . m_q / d with
    // exactly representable values, so the two supports tie bit-for-bit
    // after the layers swap their scores.
    const std::size_t d = 4;
    ScProjector unit = unit_f2_projector(identity_affine(d));
    TokenMatrix q = single_token({2, 0, 0, 0}); // embeds to [1,0,0,0]

    std::vector<std::vector<TokenMatrix>> pools = {
        {single_token({1.0, 0, 0, 0}), single_token({0.5, 0, 0, 0})},
        {single_token({0.5, 0, 0, 0}), single_token({1.0, 0, 0, 0})},
    };
    std::vector<TokenMatrix> queries = {q, q};
    std::vector<ScProjector> projectors = {unit, unit};

    PruneResult r = multilayer_prune(pools, queries, projectors, 1);
    REQUIRE(r.selected.size() == 1);
    CHECK(r.selected[0] == 0);
}

TEST_CASE("multilayer shape contracts") {
    const std::size_t d = 4;
    Rng rng(33);
    ScProjector p = random_projector(rng, d, 0.7);
    std::vector<TokenMatrix> a = {random_tokens(rng, 1, d), random_tokens(rng, 1, d)};
    std::vector<TokenMatrix> b = {random_tokens(rng, 1, d)};
    TokenMatrix q = random_tokens(rng, 1, d);

    CHECK_THROWS_AS(multilayer_prune({}, {}, std::span<const ScProjector>{}, 1),
                    ContractError);
    std::vector<ScProjector> two(2, p);
    CHECK_THROWS_AS(multilayer_prune({a, b}, {q, q}, two, 1), ContractError);
    CHECK_THROWS_AS(multilayer_prune({a, a}, {q}, two, 1), ContractError);
    std::vector<ScProjector> one(1, p);
    CHECK_THROWS_AS(multilayer_prune({a, a}, {q, q}, one, 1), ContractError);
}

TEST_CASE("gap report compares true contribution against the cheap term") {
    const std::size_t d = 4;
    Rng rng(37);

    // Single support with a single token: the contribution index is exactly
    // one, so the measured gap is one minus the cached term.
    ScProjector p = random_projector(rng, d, 0.7);
    std::vector<TokenMatrix> solo = {random_tokens(rng, 1, d)};
    TokenMatrix q = random_tokens(rng, 2, d);
    std::vector<JensenGapRow> rows = jensen_gap_report(solo, q, p);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].delta == 1.0);
    CHECK(rows[0].theta == theta_term(solo[0], q, p));
    CHECK(rows[0].gap == 1.0 - rows[0].theta);

    // Random pools: the identity gap == delta - theta holds bitwise, both
    // scale modes run, and the magnitudes are summarized for the record
    // without asserting a sign anywhere.
    double gmin = std::numeric_limits<double>::infinity();
    double gmax = -gmin, gsum = 0.0;
    std::size_t count = 0;
    for (int rep = 0; rep < 100; ++rep) {
        ScProjector pr = random_projector(rng, d, 0.6);
        const std::size_t n = rng.uniform_index(2, 6);
        std::vector<TokenMatrix> pool;
        for (std::size_t i = 0; i < n; ++i)
            pool.push_back(random_tokens(rng, rng.uniform_index(1, 3), d));
        TokenMatrix query = random_tokens(rng, 2, d);
        ScaleMode mode = (rep % 2 == 0) ? ScaleMode::sqrt_d : ScaleMode::d;
        std::vector<JensenGapRow> rep_rows = jensen_gap_report(pool, query, pr, mode);
        REQUIRE(rep_rows.size() == n);
        for (const JensenGapRow& row : rep_rows) {
            CHECK(std::isfinite(row.gap));
            CHECK(row.gap == row.delta - row.theta);
            CHECK(row.delta > 0.0);
            CHECK(row.delta <= 1.0);
            gmin = std::min(gmin, row.gap);
            gmax = std::max(gmax, row.gap);
            gsum += row.gap;
            ++count;
        }
    }
    MESSAGE("gap over ", count, " rows: min ", gmin, " mean ", gsum / (double)count,
            " max ", gmax);
}
