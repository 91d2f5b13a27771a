#pragma once

#include <cstdint>
#include <vector>

#include "scseg/rng.hpp"
#include "scseg/segmenter.hpp"

namespace scseg {

/// Recipe for a synthetic support pool around one query. The query is a
/// seeded latent scene (a rectangle of foreground tokens along a scene-
/// specific feature direction). High supports are noisy clones of the query
/// with aligned masks; low supports are independent scenes with unrelated
/// masks. upper_bound additionally inserts the exact query copy as support
/// id 0. All emitted feature values are float32-representable.
struct PoolSpec {
    std::size_t n_high = 0;
    std::size_t n_low = 0;
    double noise_sigma_high = 0.05;
    double noise_sigma_low = 0.05;
    std::size_t dim = 16;
    std::vector<std::size_t> tokens_per_layer = {16, 64, 256}; // coarse -> fine
    std::uint64_t seed = 0;
    bool upper_bound = false;

    // Scene texture: feature magnitude of foreground / background tokens and
    // the per-token jitter around the scene direction. Equal gains keep the
    // classes separated by direction alone.
    double fg_gain = 12.0;
    double bg_gain = 12.0;
    double token_jitter = 0.35;

    std::size_t total_supports() const noexcept {
        return (upper_bound ? 1 : 0) + n_high + n_low;
    }
    void validate() const;
};

Episode synth_pool(const PoolSpec& spec);

// ---- random parameter factories (test and harness plumbing) ----

/// Entries drawn N(0, w_scale) for weights, N(0, w_scale) for bias.
Affine random_affine(Rng& rng, std::size_t out, std::size_t in, double w_scale);
ScProjector random_projector(Rng& rng, std::size_t dim, double w_scale);

/// f1 as given; f2 at the identity-direction initialization (weights 0,
/// bias 1), which makes the projector's second branch a constant unit vector.
ScProjector unit_f2_projector(Affine f1);

RefinerWeights random_refiner(Rng& rng, std::size_t layers, std::size_t dim,
                              std::size_t hidden, double w_scale);

/// Hand-built refiner that forwards coarse masks unchanged: every mid block
/// blends its upsampled carry with the incoming coarse mask 50/50 on channel
/// 0, and the head reads channel 0 alone with logits gain*(carry - 1/2), so
/// binarization reproduces carry > 1/2 exactly.
RefinerWeights passthrough_refiner(std::size_t layers, std::size_t dim,
                                   std::size_t hidden = 16, double gain = 12.0);

/// Uniform parameter bundle: `layers` correlation levels at feature dim
/// `dim`, `heads` projectors per level for the symmetric kind (ignored for
/// standard), and a small random refiner.
PipelineParams random_params(Rng& rng, CorrelationKind kind, std::size_t layers,
                             std::size_t dim, std::size_t heads, double map_scale,
                             double refiner_scale);

} // namespace scseg
