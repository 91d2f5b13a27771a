#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "scseg/correlation.hpp"
#include "scseg/ops.hpp"
#include "scseg/tape.hpp"

namespace scseg {

/// Per-layer token matrices ordered coarse -> fine (index 0 has the fewest
/// tokens, the last index is full working resolution). Every layer's token
/// count must be a perfect square (tokens sit on a square grid).
using LayerStack = std::vector<TokenMatrix>;

struct SupportItem {
    std::size_t id = 0;
    LayerStack layers;
    std::vector<Grid> layer_masks; // binary h_l x w_l x 1, coarse -> fine
    Grid mask;                     // full resolution, binary h x w x 1
};

struct Episode {
    std::string category;
    LayerStack query;
    Grid query_truth; // full resolution binary mask
    std::vector<SupportItem> supports;

    std::size_t layer_count() const noexcept { return query.size(); }
};

/// Per-level 3x3 conv blocks of the top-down refiner. `mids` fuses each
/// upsampled running state with the next finer coarse mask (levels below the
/// coarsest, above the finest; empty when there are fewer than 3 layers).
/// `head` produces the final single-channel logits at full resolution.
struct RefinerWeights {
    std::vector<ConvBlock> mids;
    ConvBlock head;
    std::size_t hidden = 16;

    /// Shape-correct all-zero weights for a stack of `layers` levels with
    /// feature dim `dim`.
    static RefinerWeights zeros(std::size_t layers, std::size_t dim,
                                std::size_t hidden = 16);
    void validate(std::size_t layers, std::size_t dim) const;
};

struct PredictionMask {
    Grid probs;  // h x w x 1 in [0, 1]
    Grid binary; // h x w x 1 in {0, 1}, probs > 0.5
};

enum class CorrelationKind { standard, symmetric };

/// How the support features feeding the final head are averaged: over all
/// active support tokens jointly, or per support first and then across
/// supports. Identical for equal token counts up to summation order.
enum class PoolMode { joint_tokens, per_support };

/// Correlation parameters of one layer. `kind` in PipelineParams selects
/// which half is live: key/query maps (standard) or SC head projectors.
struct LayerMaps {
    Affine f_k, f_q;
    std::vector<ScProjector> heads;
};

struct PipelineParams {
    CorrelationKind kind = CorrelationKind::symmetric;
    std::vector<LayerMaps> layers; // coarse -> fine
    RefinerWeights refiner;
    ScaleMode scale_mode = ScaleMode::sqrt_d;
    PoolMode pool_mode = PoolMode::joint_tokens;
};

/// Support-set reduction policy: when more than `threshold` supports are
/// present, keep the best `keep` by the mean-token objective. Selection is
/// outside the gradient path. Requires the symmetric kind when it activates.
struct PruneSettings {
    bool enabled = false;
    std::size_t threshold = 30;
    std::size_t keep = 30;
};

struct EpisodeOutput {
    PredictionMask mask;
    std::vector<ContributionReport> layer_reports; // over active supports
    std::vector<std::size_t> active_ids;           // ascending original ids
};

/// Attention-weighted mask transfer: map rows (query tokens) times the
/// concatenated flattened support masks; reshaped to the square query grid.
/// Entries stay in [0, 1] because rows are stochastic and masks are binary.
Grid coarse_mask(const AttentionMap& map, const Matrix& support_mask);

/// Top-down fusion of per-layer coarse masks (coarse -> fine), finished by a
/// head that sees the upsampled running state, the finest query feature grid
/// and the pooled support features broadcast over the grid; sigmoid output.
PredictionMask refine_topdown(const std::vector<Grid>& coarse, const RefinerWeights& w,
                              const TokenMatrix& query_finest,
                              const Matrix& support_pool_finest);

/// Mean binary cross-entropy of probs against a binary truth grid.
double bce_loss(const Grid& probs, const Grid& truth);

/// Mean over distinct classes of per-class IoU, where each class aggregates
/// intersections and unions over its samples; empty union counts as 1.
double miou(const std::vector<Grid>& preds, const std::vector<Grid>& truths,
            const std::vector<std::string>& classes);

/// Area-average downsample of a binary mask to side x side, then threshold
/// at 0.5 (>= 0.5 becomes foreground).
Grid downsample_mask(const Grid& mask, std::size_t side);

/// Full pipeline: optional pruning, per-layer attention + contribution
/// reports + coarse masks, top-down refinement.
EpisodeOutput forward_episode(const Episode& ep, const PipelineParams& params,
                              const PruneSettings& prune = {});

/// forward_episode's probabilities scored against the episode truth.
double episode_loss(const Episode& ep, const PipelineParams& params,
                    const PruneSettings& prune = {});

/// Tape-recorded twin of episode_loss: same composition, differentiable in
/// every parameter. param_vars follows collect_params order.
struct EpisodeGraph {
    Var loss;
    std::vector<Var> param_vars;
};
EpisodeGraph episode_loss_tape(Tape& tape, const Episode& ep,
                               const PipelineParams& params,
                               const PruneSettings& prune = {});

/// Trainable parameter matrices in a fixed traversal order (per layer: live
/// correlation maps; then refiner blocks).
std::vector<Matrix*> collect_params(PipelineParams& params);
std::vector<const Matrix*> collect_params(const PipelineParams& params);
std::vector<double> flatten_params(const PipelineParams& params);
void set_params(PipelineParams& params, std::span<const double> flat);

struct TrainHyper {
    std::size_t steps = 200;
    double lr = 1e-4;
    double momentum = 0.9;
    double weight_decay = 1e-4;
};

struct TrainResult {
    PipelineParams params;
    std::vector<double> loss_trace; // loss before each update
};

/// SGD with momentum and coupled weight decay over all parameters, cycling
/// through the dataset one episode per step. Pruning selections stay outside
/// the gradient. Throws TrainingError (with the step) on non-finite loss.
TrainResult train_toy(std::span<const Episode> dataset, const PipelineParams& init,
                      const PruneSettings& prune, const TrainHyper& hyper);

} // namespace scseg
