#include <cstdio>
#include <filesystem>
#include <string>

#include <CLI11.hpp>

#include "scseg/config.hpp"
#include "scseg/feature_io.hpp"
#include "scseg/gradcheck.hpp"
#include "scseg/kernels.hpp"
#include "scseg/pruning.hpp"
#include "scseg/sweep.hpp"

namespace {

using namespace scseg;

struct CommonArgs {
    std::uint64_t seed = 42;
    bool seed_given = false;
    std::string config_path;
    std::string out_dir;
    std::string kernels = "auto";
    std::string episode_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--seed", args.seed, "base RNG seed")->each([&](const std::string&) {
        args.seed_given = true;
    });
    cmd->add_option("--config", args.config_path, "key = value config file");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--kernels", args.kernels,
                    "compute lane: auto, scalar, avx2, neon")
        ->check(CLI::IsMember({"auto", "scalar", "avx2", "neon"}));
}

Config load_config(const CommonArgs& args) {
    Config cfg;
    if (!args.config_path.empty()) cfg = Config::parse_file(args.config_path);
    if (args.seed_given || !cfg.has("seed")) cfg.set("seed", std::to_string(args.seed));
    return cfg;
}

void apply_kernels(const CommonArgs& args) {
    kernels::select(kernels::parse_lane(args.kernels));
    std::printf("kernels: %s\n", kernels::lane_name(kernels::active_lane()));
}

std::string need_out(const CommonArgs& args) {
    if (args.out_dir.empty()) throw ConfigError("--out <dir> is required");
    std::filesystem::create_directories(args.out_dir);
    return args.out_dir;
}

PoolSpec pool_from(const Config& cfg) {
    PoolSpec spec;
    spec.n_high = cfg.get_count("n_high", spec.n_high);
    spec.n_low = cfg.get_count("n_low", 4);
    spec.noise_sigma_high = cfg.get_real("sigma_high", spec.noise_sigma_high);
    spec.noise_sigma_low = cfg.get_real("sigma_low", spec.noise_sigma_low);
    spec.dim = cfg.get_count("dim", spec.dim);
    spec.tokens_per_layer = cfg.get_counts("tokens_per_layer", spec.tokens_per_layer);
    spec.seed = cfg.get_u64("seed", spec.seed);
    spec.upper_bound = cfg.get_flag("upper_bound", true);
    spec.fg_gain = cfg.get_real("fg_gain", spec.fg_gain);
    spec.bg_gain = cfg.get_real("bg_gain", spec.bg_gain);
    spec.token_jitter = cfg.get_real("token_jitter", spec.token_jitter);
    return spec;
}

Episode episode_from(const CommonArgs& args, const Config& cfg) {
    if (!args.episode_dir.empty()) return read_episode(args.episode_dir);
    return synth_pool(pool_from(cfg));
}

PipelineParams params_from(const Config& cfg, const Episode& ep) {
    const std::string kind = cfg.get_str("kind", "symmetric");
    if (kind != "standard" && kind != "symmetric")
        throw ConfigError("kind must be standard or symmetric, got \"" + kind + "\"");
    Rng rng(derive_seed(cfg.get_u64("seed", 42), 7002));
    PipelineParams params = random_params(
        rng, kind == "standard" ? CorrelationKind::standard : CorrelationKind::symmetric,
        ep.layer_count(), ep.query.front().dim(), cfg.get_count("heads", 1),
        cfg.get_real("map_scale", 0.6), 0.0);
    params.refiner = passthrough_refiner(ep.layer_count(), ep.query.front().dim());
    if (cfg.get_str("scale_mode", "sqrt_d") == "d") params.scale_mode = ScaleMode::d;
    if (cfg.get_str("pool_mode", "joint_tokens") == "per_support")
        params.pool_mode = PoolMode::per_support;
    return params;
}

PruneSettings prune_from(const Config& cfg) {
    PruneSettings p;
    p.enabled = cfg.get_flag("prune", false);
    p.threshold = cfg.get_count("prune_threshold", p.threshold);
    p.keep = cfg.get_count("prune_keep", p.keep);
    return p;
}

int cmd_synth(const CommonArgs& args) {
    apply_kernels(args);
    const Config cfg = load_config(args);
    const Episode ep = synth_pool(pool_from(cfg));
    const std::string out = need_out(args);
    write_episode(out, ep);
    std::printf("episode: %zu layers, %zu supports -> %s\n", ep.layer_count(),
                ep.supports.size(), out.c_str());
    return 0;
}

int cmd_contrib(const CommonArgs& args) {
    apply_kernels(args);
    const Config cfg = load_config(args);
    const Episode ep = episode_from(args, cfg);
    const PipelineParams params = params_from(cfg, ep);
    const EpisodeOutput out = forward_episode(ep, params, prune_from(cfg));

    std::printf("layer support delta\n");
    for (std::size_t l = 0; l < out.layer_reports.size(); ++l)
        for (std::size_t i = 0; i < out.layer_reports[l].delta.size(); ++i)
            std::printf("%zu %zu %.6f\n", l, out.active_ids[i],
                        out.layer_reports[l].delta[i]);
    if (!args.out_dir.empty()) {
        std::string csv = "layer,support,delta\n";
        for (std::size_t l = 0; l < out.layer_reports.size(); ++l)
            for (std::size_t i = 0; i < out.layer_reports[l].delta.size(); ++i) {
                char buf[128];
                std::snprintf(buf, sizeof buf, "%zu,%zu,%.6f\n", l, out.active_ids[i],
                              out.layer_reports[l].delta[i]);
                csv += buf;
            }
        const std::string out_dir = need_out(args);
        std::FILE* f = std::fopen((out_dir + "/contrib.csv").c_str(), "wb");
        if (!f) throw ConfigError("cannot write contrib.csv");
        std::fwrite(csv.data(), 1, csv.size(), f);
        std::fclose(f);
    }
    return 0;
}

int cmd_prune(const CommonArgs& args) {
    apply_kernels(args);
    const Config cfg = load_config(args);
    const Episode ep = episode_from(args, cfg);
    const std::size_t keep =
        cfg.get_count("prune_keep", std::min<std::size_t>(30, ep.supports.size()));

    Rng rng(derive_seed(cfg.get_u64("seed", 42), 7002));
    const std::size_t d = ep.query.front().dim();
    const ScProjector proj = random_projector(rng, d, cfg.get_real("map_scale", 0.6));

    // Terms averaged over layers; reported per support.
    std::vector<double> terms(ep.supports.size(), 0.0);
    for (std::size_t l = 0; l < ep.layer_count(); ++l)
        for (std::size_t i = 0; i < ep.supports.size(); ++i)
            terms[i] += theta_term(ep.supports[i].layers[l], ep.query[l], proj);
    for (double& t : terms) t /= static_cast<double>(ep.layer_count());

    const PruneResult res = greedy_prune_terms(terms, keep);
    std::printf("support theta\n");
    for (std::size_t i = 0; i < terms.size(); ++i)
        std::printf("%zu %.6f\n", ep.supports[i].id, terms[i]);
    std::printf("selected:");
    for (std::size_t idx : res.selected) std::printf(" %zu", ep.supports[idx].id);
    std::printf("\nobjective: %.6f\nevaluations: %zu\n", res.objective, res.evaluations);
    return 0;
}

int cmd_segment(const CommonArgs& args) {
    apply_kernels(args);
    const Config cfg = load_config(args);
    const Episode ep = episode_from(args, cfg);
    const PipelineParams params = params_from(cfg, ep);
    const EpisodeOutput out = forward_episode(ep, params, prune_from(cfg));
    const double iou = miou({out.mask.binary}, {ep.query_truth}, {ep.category});
    std::printf("iou: %.6f\nactive supports: %zu\n", iou, out.active_ids.size());
    if (!args.out_dir.empty()) {
        const std::string dir = need_out(args);
        write_mask_pgm(dir + "/prediction.pgm", out.mask.binary);
        write_mask_pgm(dir + "/truth.pgm", ep.query_truth);
    }
    return 0;
}

int cmd_dilution(const CommonArgs& args, bool timings) {
    apply_kernels(args);
    const Config cfg = load_config(args);
    SweepConfig sweep;
    sweep.base = pool_from(cfg);
    sweep.map_untie = cfg.get_real("map_untie", sweep.map_untie);
    sweep.n_values = cfg.get_counts("n_values", sweep.n_values);
    sweep.methods = cfg.get_list("methods", sweep.methods);
    sweep.seeds = cfg.get_count("sweep_seeds", sweep.seeds);
    sweep.base_seed = cfg.get_u64("seed", sweep.base_seed);
    sweep.workers = cfg.get_count("workers", sweep.workers);
    sweep.map_scale = cfg.get_real("map_scale", sweep.map_scale);
    sweep.heads = cfg.get_count("heads", sweep.heads);
    sweep.timings = timings;

    const SweepResult result = dilution_sweep(sweep);
    const std::string dir = need_out(args);
    emit_report(result, dir + "/sweep.csv", dir + "/sweep.svg");
    std::printf("%s", render_csv(result).c_str());
    return 0;
}

int cmd_gradcheck(const CommonArgs& args) {
    apply_kernels(args);
    Config cfg = load_config(args);
    // Tiny episode keeps the finite-difference loop fast.
    if (!cfg.has("tokens_per_layer")) cfg.set("tokens_per_layer", "4,16");
    if (!cfg.has("dim")) cfg.set("dim", "6");
    if (!cfg.has("n_low")) cfg.set("n_low", "1");
    const Episode ep = episode_from(args, cfg);
    PipelineParams params = params_from(cfg, ep);
    Rng rng(derive_seed(cfg.get_u64("seed", 42), 7003));
    params.refiner =
        random_refiner(rng, ep.layer_count(), ep.query.front().dim(), 4, 0.2);
    const PruneSettings prune = prune_from(cfg);

    std::vector<double> flat = flatten_params(params);
    const std::size_t points = cfg.get_count("points", 20);
    const double tol = cfg.get_real("tol", 1e-4);

    PipelineParams probe = params;
    auto f = [&](std::span<const double> x) {
        set_params(probe, x);
        return episode_loss(ep, probe, prune);
    };
    Tape tape;
    EpisodeGraph graph = episode_loss_tape(tape, ep, params, prune);
    tape.backward(graph.loss);
    std::vector<double> analytic;
    for (Var v : graph.param_vars) {
        const Matrix& g = tape.grad(v);
        analytic.insert(analytic.end(), g.data(), g.data() + g.size());
    }

    Rng pick(derive_seed(cfg.get_u64("seed", 42), 7004));
    double worst = 0.0;
    for (std::size_t k = 0; k < points; ++k) {
        const std::size_t i = pick.uniform_index(0, flat.size() - 1);
        const double err =
            finite_difference_check_at(f, flat, analytic[i], i, 1e-5);
        worst = std::max(worst, err);
    }
    std::printf("gradcheck: %zu points, max rel err %.3e (tol %.1e)\n", points, worst,
                tol);
    if (worst > tol) {
        std::printf("gradcheck: FAILED\n");
        return 1;
    }
    return 0;
}

int cmd_train(const CommonArgs& args) {
    apply_kernels(args);
    Config cfg = load_config(args);
    if (!cfg.has("tokens_per_layer")) cfg.set("tokens_per_layer", "16,64");
    if (!cfg.has("dim")) cfg.set("dim", "8");
    if (!cfg.has("n_low")) cfg.set("n_low", "1");
    const std::size_t episodes = cfg.get_count("episodes", 1);
    std::vector<Episode> dataset;
    for (std::size_t e = 0; e < episodes; ++e) {
        PoolSpec spec = pool_from(cfg);
        spec.seed = derive_seed(spec.seed, e);
        dataset.push_back(synth_pool(spec));
    }
    PipelineParams init = params_from(cfg, dataset.front());
    Rng rng(derive_seed(cfg.get_u64("seed", 42), 7003));
    init.refiner = random_refiner(rng, dataset.front().layer_count(),
                                  dataset.front().query.front().dim(),
                                  cfg.get_count("hidden", 8), 0.2);

    TrainHyper hyper;
    hyper.steps = cfg.get_count("steps", hyper.steps);
    hyper.lr = cfg.get_real("lr", hyper.lr);
    hyper.momentum = cfg.get_real("momentum", hyper.momentum);
    hyper.weight_decay = cfg.get_real("weight_decay", hyper.weight_decay);

    const TrainResult result = train_toy(dataset, init, prune_from(cfg), hyper);
    std::printf("steps: %zu\nfirst loss: %.6f\nlast loss: %.6f\n",
                result.loss_trace.size(), result.loss_trace.front(),
                result.loss_trace.back());
    if (!args.out_dir.empty()) {
        const std::string dir = need_out(args);
        std::string csv = "step,loss\n";
        for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%zu,%.9f\n", i, result.loss_trace[i]);
            csv += buf;
        }
        std::FILE* f = std::fopen((dir + "/loss.csv").c_str(), "wb");
        if (!f) throw ConfigError("cannot write loss.csv");
        std::fwrite(csv.data(), 1, csv.size(), f);
        std::fclose(f);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"few-shot segmentation lab"};
    app.require_subcommand(1);

    CommonArgs synth_args, contrib_args, prune_args, segment_args, dilution_args,
        gradcheck_args, train_args;
    bool timings = false;

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic episode");
    add_common(synth, synth_args);
    CLI::App* contrib =
        app.add_subcommand("contrib", "per-layer support contribution indices");
    add_common(contrib, contrib_args);
    contrib->add_option("--episode", contrib_args.episode_dir, "episode directory");
    CLI::App* prune = app.add_subcommand("prune", "support selection audit");
    add_common(prune, prune_args);
    prune->add_option("--episode", prune_args.episode_dir, "episode directory");
    CLI::App* segment = app.add_subcommand("segment", "run the full pipeline once");
    add_common(segment, segment_args);
    segment->add_option("--episode", segment_args.episode_dir, "episode directory");
    CLI::App* dilution =
        app.add_subcommand("dilution", "deviation and IoU across support counts");
    add_common(dilution, dilution_args);
    dilution->add_flag("--timings", timings, "record wall times (non-reproducible bytes)");
    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "finite-difference gradient audit");
    add_common(gradcheck, gradcheck_args);
    CLI::App* train = app.add_subcommand("train", "toy SGD training run");
    add_common(train, train_args);

    try {
        app.parse(argc, argv);
        if (synth->parsed()) return cmd_synth(synth_args);
        if (contrib->parsed()) return cmd_contrib(contrib_args);
        if (prune->parsed()) return cmd_prune(prune_args);
        if (segment->parsed()) return cmd_segment(segment_args);
        if (dilution->parsed()) return cmd_dilution(dilution_args, timings);
        if (gradcheck->parsed()) return cmd_gradcheck(gradcheck_args);
        if (train->parsed()) return cmd_train(train_args);
        return 2;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const scseg::ContractError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const scseg::FormatError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const scseg::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const scseg::ShapeError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const scseg::DegenerateRowError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 1;
    }
}
