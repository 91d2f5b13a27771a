#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "scseg/config.hpp"
#include "scseg/errors.hpp"
#include "scseg/kernels.hpp"
#include "scseg/report.hpp"
#include "scseg/sweep.hpp"
#include "scseg/synth.hpp"

using namespace scseg;
namespace fs = std::filesystem;

namespace {

struct ScopedLane {
    kernels::Lane prev;
    explicit ScopedLane(const char* name) : prev(kernels::active_lane()) {
        kernels::select(kernels::parse_lane(name));
    }
    ~ScopedLane() { kernels::select(prev); }
};

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    REQUIRE(out.good());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

fs::path fresh_dir(const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() / ("scseg_lab_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

fs::path fixture(const std::string& name) {
    return fs::path(SCSEG_SOURCE_DIR) / "tests" / "fixtures" / name;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(SCSEG_CLI) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    REQUIRE(WIFEXITED(rc));
    return WEXITSTATUS(rc);
}

bool stacks_equal(const LayerStack& a, const LayerStack& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t l = 0; l < a.size(); ++l) {
        if (a[l].n() != b[l].n() || a[l].dim() != b[l].dim()) return false;
        for (std::size_t i = 0; i < a[l].values().size(); ++i)
            if (a[l].values().data()[i] != b[l].values().data()[i]) return false;
    }
    return true;
}

bool grids_equal(const Grid& a, const Grid& b) {
    if (a.height() != b.height() || a.width() != b.width() || a.channels() != b.channels())
        return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.data()[i] != b.data()[i]) return false;
    return true;
}

// The configuration behind tests/fixtures/sweep_small.{csv,svg}. The CLI
// config file in the golden subprocess test must describe the same sweep.
SweepConfig pinned_sweep() {
    SweepConfig cfg;
    cfg.base.upper_bound = true;
    cfg.base.dim = 8;
    cfg.base.tokens_per_layer = {16, 64};
    cfg.n_values = {1, 2, 5};
    cfg.seeds = 3;
    cfg.base_seed = 7;
    cfg.workers = 1;
    return cfg;
}

} // namespace

TEST_CASE("synthetic pools are seed-deterministic and float32 representable") {
    PoolSpec spec;
    spec.n_high = 2;
    spec.n_low = 1;
    spec.dim = 6;
    spec.tokens_per_layer = {4, 16};
    spec.seed = 301;

    const Episode a = synth_pool(spec);
    const Episode b = synth_pool(spec);
    REQUIRE(a.supports.size() == 3);
    CHECK(a.category == b.category);
    CHECK(stacks_equal(a.query, b.query));
    CHECK(grids_equal(a.query_truth, b.query_truth));
    for (std::size_t i = 0; i < a.supports.size(); ++i) {
        CHECK(a.supports[i].id == b.supports[i].id);
        CHECK(stacks_equal(a.supports[i].layers, b.supports[i].layers));
        CHECK(grids_equal(a.supports[i].mask, b.supports[i].mask));
    }

    // A different seed must actually change the features.
    spec.seed = 302;
    const Episode c = synth_pool(spec);
    CHECK_FALSE(stacks_equal(a.query, c.query));

    for (const TokenMatrix& layer : a.query)
        for (std::size_t i = 0; i < layer.values().size(); ++i) {
            const double v = layer.values().data()[i];
            CHECK(v == static_cast<double>(static_cast<float>(v)));
        }
}

TEST_CASE("upper bound support is the query verbatim; zero-noise clones match too") {
    PoolSpec spec;
    spec.n_high = 2;
    spec.noise_sigma_high = 0.0;
    spec.dim = 6;
    spec.tokens_per_layer = {4, 16};
    spec.seed = 310;
    spec.upper_bound = true;

    const Episode ep = synth_pool(spec);
    REQUIRE(ep.supports.size() == 3);
    for (const SupportItem& s : ep.supports) {
        CHECK(stacks_equal(s.layers, ep.query));
        CHECK(grids_equal(s.mask, ep.query_truth));
        REQUIRE(s.layer_masks.size() == ep.layer_count());
    }
    CHECK(ep.supports[0].id == 0);
}

TEST_CASE("high-support noise stays within a tight ball around the query") {
    PoolSpec spec;
    spec.n_high = 2;
    spec.dim = 6;
    spec.tokens_per_layer = {4, 16};
    spec.seed = 311;

    const Episode ep = synth_pool(spec);
    double max_diff = 0.0;
    for (const SupportItem& s : ep.supports)
        for (std::size_t l = 0; l < ep.layer_count(); ++l)
            for (std::size_t i = 0; i < ep.query[l].values().size(); ++i)
                max_diff = std::max(max_diff, std::abs(s.layers[l].values().data()[i] -
                                                       ep.query[l].values().data()[i]));
    CHECK(max_diff > 0.0);
    CHECK(max_diff < 10.0 * spec.noise_sigma_high);
}

TEST_CASE("pool spec validation rejects degenerate recipes") {
    PoolSpec good;
    good.n_low = 1;
    good.validate();

    PoolSpec s = good;
    s.n_low = 0;
    CHECK_THROWS_AS(s.validate(), ContractError); // no supports at all

    s = good;
    s.noise_sigma_low = -0.1;
    CHECK_THROWS_AS(s.validate(), ContractError);
    s = good;
    s.dim = 0;
    CHECK_THROWS_AS(s.validate(), ContractError);
    s = good;
    s.tokens_per_layer = {};
    CHECK_THROWS_AS(s.validate(), ContractError);
    s = good;
    s.tokens_per_layer = {4, 15};
    CHECK_THROWS_AS(s.validate(), ContractError); // not a square grid
    s = good;
    s.tokens_per_layer = {64, 16};
    CHECK_THROWS_AS(s.validate(), ContractError); // must refine coarse -> fine
    s = good;
    s.token_jitter = -1.0;
    CHECK_THROWS_AS(s.validate(), ContractError);
}

TEST_CASE("single trials report deviation only when a comparison support exists") {
    SweepConfig cfg = pinned_sweep();

    PoolSpec spec = cfg.base;
    spec.n_low = 0;
    spec.seed = 400;
    const TrialResult solo = run_dilution_trial(spec, "symmetric", cfg);
    CHECK_FALSE(solo.delta.has_value());
    CHECK(solo.iou >= 0.0);
    CHECK(solo.iou <= 1.0);
    CHECK(solo.wall_ms == 0.0); // timings disabled

    spec.n_low = 2;
    const TrialResult mixed = run_dilution_trial(spec, "symmetric", cfg);
    REQUIRE(mixed.delta.has_value());
    CHECK(*mixed.delta > 0.0);
    CHECK(*mixed.delta <= 1.0);

    PoolSpec free_pool = spec;
    free_pool.upper_bound = false;
    free_pool.n_high = 1;
    CHECK_THROWS_AS(run_dilution_trial(free_pool, "symmetric", cfg), ContractError);
    CHECK_THROWS_AS(run_dilution_trial(spec, "bogus", cfg), ConfigError);
}

TEST_CASE("sweep config validation") {
    SweepConfig good = pinned_sweep();
    good.validate();

    SweepConfig c = good;
    c.n_values = {5};
    CHECK_THROWS_AS(c.validate(), ContractError); // a sweep needs at least two N
    c = good;
    c.n_values = {5, 2};
    CHECK_THROWS_AS(c.validate(), ContractError); // strictly increasing
    c = good;
    c.n_values = {0, 2};
    CHECK_THROWS_AS(c.validate(), ContractError);
    c = good;
    c.methods = {};
    CHECK_THROWS_AS(c.validate(), ContractError);
    c = good;
    c.methods = {"standard", "mystery"};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = good;
    c.seeds = 0;
    CHECK_THROWS_AS(c.validate(), ContractError);
    c = good;
    c.heads = 0;
    CHECK_THROWS_AS(c.validate(), ContractError);
}

TEST_CASE("result validation and method order on hand-built tables") {
    SweepResult r;
    CHECK_THROWS_AS(r.validate(), ContractError); // empty

    r.rows = {{1, "standard", std::nullopt, 0.5, 0.0},
              {2, "standard", 0.25, 0.5, 0.0},
              {1, "symmetric", std::nullopt, 0.75, 0.0}};
    r.seed = 9;
    r.config_hash = "00000000deadbeef";
    r.validate();
    CHECK(r.methods() == std::vector<std::string>{"standard", "symmetric"});

    SweepResult bad = r;
    bad.rows[1].method = "";
    CHECK_THROWS_AS(bad.validate(), ContractError);

    bad = r;
    bad.rows[1].miou = std::nan("");
    CHECK_THROWS_AS(bad.validate(), EvalError);

    bad = r;
    bad.rows[1].n = 1; // repeats N within the standard group
    CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("csv layout: header, blank deltas, metadata footer") {
    SweepResult r;
    r.rows = {{1, "standard", std::nullopt, 0.5, 0.0}, {2, "standard", 0.125, 0.25, 1.5}};
    r.seed = 9;
    r.config_hash = "00000000deadbeef";

    const std::string csv = render_csv(r);
    CHECK(csv.rfind("N,method,delta,miou,wall_ms\n", 0) == 0);
    CHECK(csv.find("1,standard,,0.500000,0.000\n") != std::string::npos);
    CHECK(csv.find("2,standard,0.125000,0.250000,1.500\n") != std::string::npos);
    CHECK(csv.find("# seed = 9\n") != std::string::npos);
    CHECK(csv.find("# config = 00000000deadbeef\n") != std::string::npos);
    // Two renders of the same table are byte-identical.
    CHECK(render_csv(r) == csv);
}

TEST_CASE("svg has one curve and one label per method") {
    SweepResult r;
    r.rows = {{1, "standard", std::nullopt, 0.5, 0.0}, {2, "standard", 0.125, 0.25, 0.0},
              {5, "standard", 0.1, 0.25, 0.0},         {1, "symmetric", std::nullopt, 0.5, 0.0},
              {2, "symmetric", 0.5, 0.25, 0.0},        {5, "symmetric", 0.5, 0.25, 0.0}};
    r.seed = 1;
    r.config_hash = "0";

    const std::string svg = render_svg(r);
    CHECK(svg.rfind("<svg", 0) == 0);
    std::size_t polylines = 0;
    for (std::size_t at = svg.find("<polyline"); at != std::string::npos;
         at = svg.find("<polyline", at + 1))
        ++polylines;
    CHECK(polylines == 2);
    CHECK(svg.find(">standard<") != std::string::npos);
    CHECK(svg.find(">symmetric<") != std::string::npos);
    CHECK(svg.find("</svg>") != std::string::npos);
    CHECK(render_svg(r) == svg);
}

TEST_CASE("pinned sweep reproduces the golden report bytes on the scalar lane") {
    ScopedLane lane("scalar");
    const SweepConfig cfg = pinned_sweep();
    const SweepResult result = dilution_sweep(cfg);
    result.validate();

    REQUIRE(result.rows.size() == 9);
    CHECK(result.methods() ==
          std::vector<std::string>{"standard", "symmetric", "symmetric+prune"});
    for (const SweepRow& row : result.rows)
        CHECK(row.delta.has_value() == (row.n > 1));

    // Selection never activates below its pool-size threshold, so the pruned
    // method must reproduce the plain symmetric rows bit for bit.
    for (std::size_t i = 0; i < 3; ++i) {
        const SweepRow& sym = result.rows[3 + i];
        const SweepRow& pruned = result.rows[6 + i];
        CHECK(sym.n == pruned.n);
        CHECK(sym.delta == pruned.delta);
        CHECK(sym.miou == pruned.miou);
    }

    CHECK(render_csv(result) == read_file(fixture("sweep_small.csv")));
    CHECK(render_svg(result) == read_file(fixture("sweep_small.svg")));

    const fs::path dir = fresh_dir("emit");
    emit_report(result, (dir / "r.csv").string(), (dir / "r.svg").string());
    CHECK(read_file(dir / "r.csv") == render_csv(result));
    CHECK(read_file(dir / "r.svg") == render_svg(result));
    CHECK_THROWS_AS(
        emit_report(result, (dir / "no_such" / "r.csv").string(), (dir / "r.svg").string()),
        ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("pruning pays for itself on pools well past the threshold") {
    SweepConfig cfg = pinned_sweep();
    cfg.timings = true;

    PoolSpec spec = cfg.base;
    spec.dim = 16;
    spec.tokens_per_layer = {64, 256};
    spec.n_low = 99;
    spec.seed = 500;

    // Best of three keeps scheduler noise out of the ratio.
    double full = 1e300, pruned = 1e300;
    for (int rep = 0; rep < 3; ++rep) {
        full = std::min(full, run_dilution_trial(spec, "symmetric", cfg).wall_ms);
        pruned = std::min(pruned, run_dilution_trial(spec, "symmetric+prune", cfg).wall_ms);
    }
    CHECK(full > 0.0);
    CHECK(pruned > 0.0);
    MESSAGE("full ", full, "ms pruned ", pruned, "ms ratio ", full / pruned);
    CHECK(2.0 * pruned <= full);
}

TEST_CASE("config text canonicalizes and hashes stably") {
    const Config cfg = Config::parse("b = 2\n# noise\n\na = 1\n");
    CHECK(cfg.canonical() == "a = 1\nb = 2\n");
    CHECK(cfg.get_count("b", 0) == 2);
    CHECK(cfg.get_count("missing", 7) == 7);

    const std::string h = config_hash(cfg);
    CHECK(h.size() == 16);
    CHECK(h == config_hash(Config::parse("a = 1\nb = 2")));
    CHECK(h != config_hash(Config::parse("a = 1\nb = 3")));

    CHECK_THROWS_AS(Config::parse("a = 1\na = 2"), ConfigError);
    CHECK_THROWS_AS(Config::parse("just words"), ConfigError);
    const Config typed = Config::parse("n = apple\nr = 1.5\n");
    CHECK_THROWS_AS((void)typed.get_count("n", 0), ConfigError);
    CHECK_THROWS_AS((void)typed.get_count("r", 0), ConfigError); // fraction is not a count
    CHECK(typed.get_real("r", 0.0) == 1.5);
}

TEST_CASE("cli rejects bad invocations with exit code 2") {
    CHECK(run_cli("") == 2);
    CHECK(run_cli("mystery") == 2);
    CHECK(run_cli("synth") == 2);                          // --out is required
    CHECK(run_cli("synth --config /no/such.cfg --out /tmp/scseg_lab_x") == 2);
    CHECK(run_cli("segment --episode /no/such/dir") == 2);
    const fs::path dir = fresh_dir("cli_bad");
    write_file(dir / "bad.cfg", "methods = bogus\n");
    CHECK(run_cli("dilution --config " + (dir / "bad.cfg").string() + " --out " +
                  dir.string()) == 2);
    fs::remove_all(dir);
}

TEST_CASE("cli synth writes byte-identical episodes for a fixed seed") {
    const fs::path dir = fresh_dir("cli_synth");
    write_file(dir / "pool.cfg", "dim = 6\ntokens_per_layer = 4,16\nn_low = 2\n");
    const std::string base = "synth --config " + (dir / "pool.cfg").string() + " --seed 5 ";
    REQUIRE(run_cli(base + "--out " + (dir / "a").string()) == 0);
    REQUIRE(run_cli(base + "--out " + (dir / "b").string()) == 0);

    for (const char* name : {"episode.cfg", "query.fts", "truth.pgm", "s0.fts", "s0_mask.pgm"})
        CHECK(read_file(dir / "a" / name) == read_file(dir / "b" / name));
    fs::remove_all(dir);
}

TEST_CASE("cli dilution reproduces the golden sweep bytes") {
    const fs::path dir = fresh_dir("cli_dilution");
    write_file(dir / "sweep.cfg",
               "seed = 7\n"
               "dim = 8\n"
               "tokens_per_layer = 16,64\n"
               "n_values = 1,2,5\n"
               "sweep_seeds = 3\n"
               "workers = 1\n");
    REQUIRE(run_cli("dilution --kernels scalar --config " + (dir / "sweep.cfg").string() +
                    " --out " + dir.string()) == 0);
    CHECK(read_file(dir / "sweep.csv") == read_file(fixture("sweep_small.csv")));
    CHECK(read_file(dir / "sweep.svg") == read_file(fixture("sweep_small.svg")));
    fs::remove_all(dir);
}
