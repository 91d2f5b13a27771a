#include "scseg/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <thread>

#include "scseg/config.hpp"

namespace scseg {

namespace {

bool known_method(const std::string& m) {
    return m == "standard" || m == "symmetric" || m == "symmetric+prune";
}

/// Method parameters are drawn from a stream derived from the pool seed, so
/// a (seed, method) pair is fully reproducible on its own. The standard
/// method's key and query maps share a base with a small independent
/// perturbation: untrained independent maps carry no query-support affinity
/// at all, which would make the dilution curve vacuously flat.
PipelineParams method_params(const PoolSpec& spec, const std::string& method,
                             const SweepConfig& cfg) {
    const std::size_t layers = spec.tokens_per_layer.size();
    const std::size_t stream = method == "standard" ? 7001 : 7002;
    Rng rng(derive_seed(spec.seed, stream));
    PipelineParams params =
        random_params(rng, method == "standard" ? CorrelationKind::standard
                                                : CorrelationKind::symmetric,
                      layers, spec.dim, cfg.heads, cfg.map_scale, 0.0);
    if (method == "standard") {
        for (LayerMaps& maps : params.layers) {
            maps.f_q = maps.f_k;
            const Affine delta = random_affine(rng, spec.dim, spec.dim,
                                               cfg.map_untie * cfg.map_scale);
            for (std::size_t i = 0; i < maps.f_q.w.size(); ++i)
                maps.f_q.w.data()[i] += delta.w.data()[i];
            for (std::size_t i = 0; i < maps.f_q.b.size(); ++i)
                maps.f_q.b.data()[i] += delta.b.data()[i];
        }
    }
    params.refiner = passthrough_refiner(layers, spec.dim);
    return params;
}

} // namespace

void SweepConfig::validate() const {
    base.validate();
    if (n_values.size() < 2)
        throw ContractError("sweep: need at least two N values");
    for (std::size_t i = 0; i < n_values.size(); ++i) {
        if (n_values[i] == 0) throw ContractError("sweep: N must be positive");
        if (i > 0 && n_values[i] <= n_values[i - 1])
            throw ContractError("sweep: N values must be strictly increasing");
    }
    if (methods.empty()) throw ContractError("sweep: no methods selected");
    for (const std::string& m : methods)
        if (!known_method(m)) throw ConfigError("sweep: unknown method \"" + m + "\"");
    if (seeds == 0) throw ContractError("sweep: zero seeds");
    if (heads == 0) throw ContractError("sweep: zero heads");
}

TrialResult run_dilution_trial(const PoolSpec& spec, const std::string& method,
                               const SweepConfig& cfg) {
    if (!known_method(method)) throw ConfigError("sweep: unknown method \"" + method + "\"");
    if (!spec.upper_bound) throw ContractError("sweep: trials need the upper-bound support");

    const Episode ep = synth_pool(spec);
    const PipelineParams params = method_params(spec, method, cfg);
    PruneSettings prune;
    if (method == "symmetric+prune") prune = cfg.prune;

    const auto t_start = std::chrono::steady_clock::now();
    const EpisodeOutput out = forward_episode(ep, params, prune);
    const auto t_end = std::chrono::steady_clock::now();

    TrialResult r;
    if (cfg.timings)
        r.wall_ms = std::chrono::duration<double, std::milli>(t_end - t_start).count();
    r.iou = miou({out.mask.binary}, {ep.query_truth}, {ep.category});

    // Deviation of the upper-bound support (id 0), averaged over layers;
    // undefined when it was pruned away or stands alone.
    const auto pos_it = std::find(out.active_ids.begin(), out.active_ids.end(), 0u);
    if (pos_it != out.active_ids.end() && out.active_ids.size() >= 2) {
        const std::size_t pos =
            static_cast<std::size_t>(pos_it - out.active_ids.begin());
        double sum = 0.0;
        for (ContributionReport report : out.layer_reports)
            sum += deviation(report, pos);
        r.delta = sum / static_cast<double>(out.layer_reports.size());
    }
    return r;
}

SweepResult dilution_sweep(const SweepConfig& cfg) {
    cfg.validate();

    struct Slot {
        PoolSpec spec;
        std::size_t method = 0;
        TrialResult result;
    };
    std::vector<Slot> slots;
    for (std::size_t s = 0; s < cfg.seeds; ++s) {
        PoolSpec spec = cfg.base;
        spec.upper_bound = true;
        spec.n_high = 0;
        spec.seed = derive_seed(cfg.base_seed, s);
        for (std::size_t n : cfg.n_values) {
            // The diluting supports are independent scenes: exemplars that
            // carry no usable guidance but still claim attention mass.
            spec.n_low = n - 1;
            for (std::size_t m = 0; m < cfg.methods.size(); ++m)
                slots.push_back(Slot{spec, m, {}});
        }
    }

    std::size_t workers = cfg.workers;
    if (workers == 0)
        workers = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    workers = std::min(workers, slots.size());

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto body = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= slots.size()) return;
            try {
                slots[i].result =
                    run_dilution_trial(slots[i].spec, cfg.methods[slots[i].method], cfg);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mu);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };
    if (workers <= 1) {
        body();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body);
        for (std::thread& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    // Aggregate means per (method, N) in method-major, N-ascending order.
    SweepResult result;
    result.seed = cfg.base_seed;

    Config meta;
    meta.set("base_seed", std::to_string(cfg.base_seed));
    meta.set("seeds", std::to_string(cfg.seeds));
    meta.set("dim", std::to_string(cfg.base.dim));
    std::string tokens;
    for (std::size_t t : cfg.base.tokens_per_layer) {
        if (!tokens.empty()) tokens += ",";
        tokens += std::to_string(t);
    }
    meta.set("tokens_per_layer", tokens);
    std::string ns;
    for (std::size_t n : cfg.n_values) {
        if (!ns.empty()) ns += ",";
        ns += std::to_string(n);
    }
    meta.set("n_values", ns);
    std::string ms;
    for (const std::string& m : cfg.methods) {
        if (!ms.empty()) ms += ",";
        ms += m;
    }
    meta.set("methods", ms);
    meta.set("sigma_low", std::to_string(cfg.base.noise_sigma_low));
    meta.set("fg_gain", std::to_string(cfg.base.fg_gain));
    meta.set("bg_gain", std::to_string(cfg.base.bg_gain));
    meta.set("token_jitter", std::to_string(cfg.base.token_jitter));
    meta.set("sigma_high", std::to_string(cfg.base.noise_sigma_high));
    meta.set("map_scale", std::to_string(cfg.map_scale));
    meta.set("map_untie", std::to_string(cfg.map_untie));
    meta.set("heads", std::to_string(cfg.heads));
    result.config_hash = config_hash(meta);

    for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
        for (std::size_t ni = 0; ni < cfg.n_values.size(); ++ni) {
            double delta_sum = 0.0, iou_sum = 0.0, wall_sum = 0.0;
            std::size_t delta_count = 0, count = 0;
            for (std::size_t s = 0; s < cfg.seeds; ++s) {
                const std::size_t idx =
                    (s * cfg.n_values.size() + ni) * cfg.methods.size() + m;
                const TrialResult& t = slots[idx].result;
                if (t.delta) {
                    delta_sum += *t.delta;
                    ++delta_count;
                }
                iou_sum += t.iou;
                wall_sum += t.wall_ms;
                ++count;
            }
            SweepRow row;
            row.n = cfg.n_values[ni];
            row.method = cfg.methods[m];
            if (delta_count > 0)
                row.delta = delta_sum / static_cast<double>(delta_count);
            row.miou = iou_sum / static_cast<double>(count);
            row.wall_ms = wall_sum / static_cast<double>(count);
            result.rows.push_back(std::move(row));
        }
    }
    result.validate();
    return result;
}

} // namespace scseg
