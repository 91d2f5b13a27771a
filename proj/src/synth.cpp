#include "scseg/synth.hpp"

#include <cmath>

#include "scseg/kernels.hpp"

namespace scseg {

namespace {

double q32(double v) { return static_cast<double>(static_cast<float>(v)); }

std::size_t side_of(std::size_t tokens) {
    std::size_t s = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(tokens))));
    while (s > 0 && s * s > tokens) --s;
    while ((s + 1) * (s + 1) <= tokens) ++s;
    return s;
}

/// One latent scene: a foreground rectangle in relative [0,1) coordinates
/// plus a foreground and a background feature direction (unit length).
struct Scene {
    double y0, x0, y1, x1;
    std::vector<double> fg_dir, bg_dir;
};

std::vector<double> unit_direction(Rng& rng, std::size_t dim) {
    std::vector<double> v(dim);
    double norm2 = 0.0;
    do {
        norm2 = 0.0;
        for (double& x : v) {
            x = rng.normal();
            norm2 += x * x;
        }
    } while (norm2 < 1e-12);
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& x : v) x *= inv;
    return v;
}

Scene make_scene(Rng& rng, std::size_t dim) {
    Scene s;
    s.y0 = rng.uniform(0.10, 0.45);
    s.x0 = rng.uniform(0.10, 0.45);
    s.y1 = s.y0 + rng.uniform(0.25, 0.45);
    s.x1 = s.x0 + rng.uniform(0.25, 0.45);
    s.fg_dir = unit_direction(rng, dim);
    // Background direction orthogonal to the foreground one: the classes are
    // separated by direction, not by magnitude, so neither side's tokens
    // dominate the correlation products.
    if (dim == 1) {
        s.bg_dir = {-s.fg_dir[0]};
        return s;
    }
    for (int attempt = 0; attempt < 16; ++attempt) {
        s.bg_dir = unit_direction(rng, dim);
        double proj = 0.0;
        for (std::size_t k = 0; k < dim; ++k) proj += s.bg_dir[k] * s.fg_dir[k];
        double norm2 = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
            s.bg_dir[k] -= proj * s.fg_dir[k];
            norm2 += s.bg_dir[k] * s.bg_dir[k];
        }
        if (norm2 > 1e-8) {
            const double inv = 1.0 / std::sqrt(norm2);
            for (double& v : s.bg_dir) v *= inv;
            break;
        }
    }
    return s;
}

bool in_rect(const Scene& s, double ry, double rx) {
    return ry >= s.y0 && ry < s.y1 && rx >= s.x0 && rx < s.x1;
}

Grid render_mask(const Scene& s, std::size_t side) {
    Grid g(side, side, 1);
    for (std::size_t y = 0; y < side; ++y) {
        const double ry = (static_cast<double>(y) + 0.5) / static_cast<double>(side);
        for (std::size_t x = 0; x < side; ++x) {
            const double rx = (static_cast<double>(x) + 0.5) / static_cast<double>(side);
            g.at(y, x, 0) = in_rect(s, ry, rx) ? 1.0 : 0.0;
        }
    }
    return g;
}

LayerStack render_features(const Scene& s, const PoolSpec& spec, Rng& rng) {
    LayerStack stack;
    for (std::size_t tokens : spec.tokens_per_layer) {
        const std::size_t side = side_of(tokens);
        Matrix m(tokens, spec.dim);
        for (std::size_t y = 0; y < side; ++y) {
            const double ry = (static_cast<double>(y) + 0.5) / static_cast<double>(side);
            for (std::size_t x = 0; x < side; ++x) {
                const double rx = (static_cast<double>(x) + 0.5) / static_cast<double>(side);
                const bool fg = in_rect(s, ry, rx);
                const double gain = fg ? spec.fg_gain : spec.bg_gain;
                const std::vector<double>& dir = fg ? s.fg_dir : s.bg_dir;
                double* row = m.row(y * side + x);
                for (std::size_t k = 0; k < spec.dim; ++k)
                    row[k] = q32(gain * dir[k] + spec.token_jitter * rng.normal());
            }
        }
        stack.emplace_back(std::move(m));
    }
    return stack;
}

std::vector<Grid> render_layer_masks(const Scene& s, const PoolSpec& spec) {
    std::vector<Grid> masks;
    for (std::size_t tokens : spec.tokens_per_layer)
        masks.push_back(render_mask(s, side_of(tokens)));
    return masks;
}

LayerStack jitter_stack(const LayerStack& base, double sigma, Rng& rng) {
    LayerStack out;
    for (const TokenMatrix& t : base) {
        Matrix m = t.values();
        for (std::size_t i = 0; i < m.size(); ++i)
            m.data()[i] = q32(m.data()[i] + sigma * rng.normal());
        out.emplace_back(std::move(m));
    }
    return out;
}

} // namespace

void PoolSpec::validate() const {
    if (total_supports() == 0) throw ContractError("pool spec: zero supports");
    if (noise_sigma_high < 0.0 || noise_sigma_low < 0.0)
        throw ContractError("pool spec: negative noise sigma");
    if (dim == 0) throw ContractError("pool spec: zero dim");
    if (tokens_per_layer.empty()) throw ContractError("pool spec: no layers");
    for (std::size_t t : tokens_per_layer) {
        const std::size_t s = side_of(t);
        if (t == 0 || s * s != t)
            throw ContractError("pool spec: token count " + std::to_string(t) +
                                " is not a positive perfect square");
    }
    for (std::size_t l = 1; l < tokens_per_layer.size(); ++l)
        if (tokens_per_layer[l] < tokens_per_layer[l - 1])
            throw ContractError("pool spec: token counts must go coarse to fine");
    if (!(std::isfinite(fg_gain) && std::isfinite(bg_gain) && std::isfinite(token_jitter)))
        throw ContractError("pool spec: non-finite gains");
    if (token_jitter < 0.0) throw ContractError("pool spec: negative token jitter");
}

Episode synth_pool(const PoolSpec& spec) {
    spec.validate();
    Rng root(spec.seed);

    Rng scene_rng = root.spawn(0);
    const Scene query_scene = make_scene(scene_rng, spec.dim);
    Rng query_rng = root.spawn(1);

    Episode ep;
    ep.category = "synthetic";
    ep.query = render_features(query_scene, spec, query_rng);
    ep.query_truth = render_mask(query_scene, side_of(spec.tokens_per_layer.back()));

    std::size_t next_id = 0;
    if (spec.upper_bound) {
        SupportItem s;
        s.id = next_id++;
        s.layers = ep.query;
        s.layer_masks = render_layer_masks(query_scene, spec);
        s.mask = ep.query_truth;
        ep.supports.push_back(std::move(s));
    }
    for (std::size_t k = 0; k < spec.n_high; ++k) {
        Rng noise_rng = root.spawn(1000 + k);
        SupportItem s;
        s.id = next_id++;
        s.layers = jitter_stack(ep.query, spec.noise_sigma_high, noise_rng);
        s.layer_masks = render_layer_masks(query_scene, spec);
        s.mask = ep.query_truth;
        ep.supports.push_back(std::move(s));
    }
    for (std::size_t k = 0; k < spec.n_low; ++k) {
        Rng low_scene_rng = root.spawn(2000 + 2 * k);
        Rng low_token_rng = root.spawn(2001 + 2 * k);
        const Scene scene = make_scene(low_scene_rng, spec.dim);
        SupportItem s;
        s.id = next_id++;
        s.layers = jitter_stack(render_features(scene, spec, low_token_rng),
                                spec.noise_sigma_low, low_token_rng);
        s.layer_masks = render_layer_masks(scene, spec);
        s.mask = render_mask(scene, side_of(spec.tokens_per_layer.back()));
        ep.supports.push_back(std::move(s));
    }
    return ep;
}

Affine random_affine(Rng& rng, std::size_t out, std::size_t in, double w_scale) {
    Affine a;
    a.w = Matrix(out, in);
    a.b = Matrix(1, out);
    for (std::size_t i = 0; i < a.w.size(); ++i) a.w.data()[i] = w_scale * rng.normal();
    for (std::size_t i = 0; i < a.b.size(); ++i) a.b.data()[i] = w_scale * rng.normal();
    return a;
}

ScProjector random_projector(Rng& rng, std::size_t dim, double w_scale) {
    ScProjector p;
    p.f1 = random_affine(rng, dim, dim, w_scale);
    p.f2 = random_affine(rng, dim, dim, w_scale);
    return p;
}

ScProjector unit_f2_projector(Affine f1) {
    const std::size_t dim = f1.w.rows();
    ScProjector p;
    p.f1 = std::move(f1);
    p.f2.w = Matrix(dim, dim, 0.0);
    p.f2.b = Matrix(1, dim, 1.0);
    return p;
}

RefinerWeights random_refiner(Rng& rng, std::size_t layers, std::size_t dim,
                              std::size_t hidden, double w_scale) {
    RefinerWeights w = RefinerWeights::zeros(layers, dim, hidden);
    auto fill = [&](ConvBlock& block) {
        for (std::size_t i = 0; i < block.w.size(); ++i)
            block.w.data()[i] = w_scale * rng.normal();
        for (std::size_t i = 0; i < block.bias.size(); ++i)
            block.bias.data()[i] = w_scale * rng.normal();
    };
    for (ConvBlock& m : w.mids) fill(m);
    fill(w.head);
    return w;
}

RefinerWeights passthrough_refiner(std::size_t layers, std::size_t dim, std::size_t hidden,
                                   double gain) {
    RefinerWeights w = RefinerWeights::zeros(layers, dim, hidden);
    // Center tap of a 3x3 block sits at tap index 4; tap-major channel-minor
    // columns put (tap, channel) at column 4 * in_c + channel.
    for (std::size_t i = 0; i < w.mids.size(); ++i) {
        ConvBlock& m = w.mids[i];
        m.w.at(0, 4 * m.in_c + 0) = 0.5;          // upsampled carry, channel 0
        m.w.at(0, 4 * m.in_c + (m.in_c - 1)) = 0.5; // incoming coarse mask
    }
    w.head.w.at(0, 4 * w.head.in_c + 0) = gain;
    w.head.bias.at(0, 0) = -0.5 * gain;
    return w;
}

PipelineParams random_params(Rng& rng, CorrelationKind kind, std::size_t layers,
                             std::size_t dim, std::size_t heads, double map_scale,
                             double refiner_scale) {
    if (layers == 0) throw ContractError("random_params: zero layers");
    if (kind == CorrelationKind::symmetric && (heads == 0 || dim % heads != 0))
        throw ConfigError("random_params: dim " + std::to_string(dim) +
                          " not divisible by heads " + std::to_string(heads));
    PipelineParams params;
    params.kind = kind;
    for (std::size_t l = 0; l < layers; ++l) {
        LayerMaps maps;
        if (kind == CorrelationKind::standard) {
            maps.f_k = random_affine(rng, dim, dim, map_scale);
            maps.f_q = random_affine(rng, dim, dim, map_scale);
        } else {
            const std::size_t dh = dim / heads;
            for (std::size_t h = 0; h < heads; ++h)
                maps.heads.push_back(random_projector(rng, dh, map_scale));
        }
        params.layers.push_back(std::move(maps));
    }
    params.refiner = random_refiner(rng, layers, dim, 16, refiner_scale);
    return params;
}

} // namespace scseg
