#include "scseg/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

#include "scseg/kernels.hpp"
#include "scseg/pruning.hpp"

namespace scseg {

namespace {

std::size_t exact_side(std::size_t tokens, const char* what) {
    std::size_t s = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(tokens))));
    while (s > 0 && s * s > tokens) --s;
    while ((s + 1) * (s + 1) <= tokens) ++s;
    if (s * s != tokens)
        throw ContractError(std::string(what) + ": token count " + std::to_string(tokens) +
                            " is not a perfect square");
    return s;
}

void validate_episode(const Episode& ep, const PipelineParams& pp) {
    const std::size_t layers = ep.layer_count();
    if (layers == 0) throw ContractError("episode: query has no layers");
    if (pp.layers.size() != layers)
        throw ContractError("episode: " + std::to_string(layers) + " layers vs " +
                            std::to_string(pp.layers.size()) + " parameter layers");
    if (ep.supports.empty()) throw ContractError("episode: no supports");

    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t d = ep.query[l].dim();
        exact_side(ep.query[l].n(), "episode query");
        for (const auto& s : ep.supports) {
            if (s.layers.size() != layers || s.layer_masks.size() != layers)
                throw ContractError("episode: support " + std::to_string(s.id) +
                                    " has a different layer count");
            if (s.layers[l].dim() != d)
                throw ShapeError("episode: support " + std::to_string(s.id) + " layer " +
                                 std::to_string(l) + " dim " +
                                 std::to_string(s.layers[l].dim()) + " vs query dim " +
                                 std::to_string(d));
            const std::size_t side = exact_side(s.layers[l].n(), "episode support");
            const Grid& m = s.layer_masks[l];
            if (m.channels() != 1 || m.height() != side || m.width() != side)
                throw ShapeError("episode: support " + std::to_string(s.id) + " layer " +
                                 std::to_string(l) + " mask " + m.shape_str() +
                                 " vs token grid side " + std::to_string(side));
        }
        const LayerMaps& maps = pp.layers[l];
        if (pp.kind == CorrelationKind::standard) {
            maps.f_k.validate();
            maps.f_q.validate();
            if (maps.f_k.in_dim() != d || maps.f_q.in_dim() != d ||
                maps.f_k.out_dim() != maps.f_q.out_dim())
                throw ShapeError("episode: layer " + std::to_string(l) +
                                 " key/query maps do not fit dim " + std::to_string(d));
        } else {
            if (maps.heads.empty())
                throw ConfigError("episode: layer " + std::to_string(l) + " has no heads");
            if (d % maps.heads.size() != 0)
                throw ConfigError("episode: layer dim " + std::to_string(d) +
                                  " not divisible by heads " +
                                  std::to_string(maps.heads.size()));
            const std::size_t dh = d / maps.heads.size();
            for (const auto& h : maps.heads) {
                h.validate();
                if (h.dim() != dh)
                    throw ConfigError("episode: head dim " + std::to_string(h.dim()) +
                                      " vs dim/heads " + std::to_string(dh));
            }
        }
    }
    const std::size_t fine_side = exact_side(ep.query.back().n(), "episode query");
    if (ep.query_truth.channels() != 1 || ep.query_truth.height() != fine_side ||
        ep.query_truth.width() != fine_side)
        throw ShapeError("episode: truth " + ep.query_truth.shape_str() +
                         " vs full resolution side " + std::to_string(fine_side));
    pp.refiner.validate(layers, ep.query.back().dim());
}

// ---- engines: one pipeline body, two execution modes ----

struct PureEngine {
    using Val = Matrix;
    Val constant(Matrix m) const { return m; }
    Val param(const Matrix* p) const { return *p; }
    Val matmul(const Val& a, const Val& b) const { return scseg::matmul(a, b); }
    Val matmul_nt(const Val& a, const Val& b) const { return scseg::matmul_nt(a, b); }
    Val add_rowvec(const Val& a, const Val& r) const { return scseg::add_rowvec(a, r); }
    Val add(const Val& a, const Val& b) const { return scseg::add(a, b); }
    Val scale(const Val& a, double s) const { return scseg::scale(a, s); }
    Val hadamard(const Val& a, const Val& b) const { return scseg::hadamard(a, b); }
    Val row_softmax(const Val& a, double s) const { return scseg::row_softmax(a, s); }
    Val row_unit_normalize(const Val& a) const { return scseg::row_unit_normalize(a); }
    Val sigmoid(const Val& a) const { return scseg::sigmoid(a); }
    Val concat_cols(const Val& a, const Val& b) const { return scseg::concat_cols(a, b); }
    Val broadcast_row(const Val& r, std::size_t n) const { return scseg::broadcast_row(r, n); }
    Val im2col(const Val& x, std::size_t h, std::size_t w) const {
        return scseg::im2col(x, h, w);
    }
    Val bilinear(const Val& x, std::size_t h, std::size_t w, std::size_t oh,
                 std::size_t ow) const {
        Grid g(h, w, x.cols(), x.storage());
        return grid_to_matrix(scseg::bilinear_resize(g, oh, ow));
    }
};

struct TapeEngine {
    Tape* tape;
    const std::unordered_map<const Matrix*, Var>* leaves;

    using Val = Var;
    Val constant(Matrix m) const { return tape->leaf(std::move(m)); }
    Val param(const Matrix* p) const { return leaves->at(p); }
    Val matmul(Val a, Val b) const { return tape->matmul(a, b); }
    Val matmul_nt(Val a, Val b) const { return tape->matmul_nt(a, b); }
    Val add_rowvec(Val a, Val r) const { return tape->add_rowvec(a, r); }
    Val add(Val a, Val b) const { return tape->add(a, b); }
    Val scale(Val a, double s) const { return tape->scale(a, s); }
    Val hadamard(Val a, Val b) const { return tape->hadamard(a, b); }
    Val row_softmax(Val a, double s) const { return tape->row_softmax(a, s); }
    Val row_unit_normalize(Val a) const { return tape->row_unit_normalize(a); }
    Val sigmoid(Val a) const { return tape->sigmoid(a); }
    Val concat_cols(Val a, Val b) const { return tape->concat_cols(a, b); }
    Val broadcast_row(Val r, std::size_t n) const { return tape->broadcast_row(r, n); }
    Val im2col(Val x, std::size_t h, std::size_t w) const { return tape->im2col(x, h, w); }
    Val bilinear(Val x, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow) const {
        return tape->bilinear_resize(x, h, w, oh, ow);
    }
};

template <class E>
typename E::Val apply_affine(E& eng, const Affine& a, const typename E::Val& x) {
    return eng.add_rowvec(eng.matmul_nt(x, eng.param(&a.w)), eng.param(&a.b));
}

template <class E>
typename E::Val apply_projector(E& eng, const ScProjector& p, const typename E::Val& x) {
    return eng.hadamard(apply_affine(eng, p.f1, x),
                        eng.row_unit_normalize(apply_affine(eng, p.f2, x)));
}

template <class E>
typename E::Val apply_conv(E& eng, const ConvBlock& k, const typename E::Val& x,
                           std::size_t h, std::size_t w) {
    return eng.add_rowvec(eng.matmul_nt(eng.im2col(x, h, w), eng.param(&k.w)),
                          eng.param(&k.bias));
}

struct LayerInputs {
    Matrix support_concat; // active supports' tokens, stacked
    Matrix mask_vec;       // matching flattened masks, tokens x 1
    std::vector<ColSpan> spans;
};

LayerInputs gather_layer(const Episode& ep, const std::vector<std::size_t>& active,
                         std::size_t l) {
    LayerInputs in;
    std::size_t total = 0;
    for (std::size_t idx : active) total += ep.supports[idx].layers[l].n();
    const std::size_t d = ep.query[l].dim();
    in.support_concat = Matrix(total, d);
    in.mask_vec = Matrix(total, 1);
    std::size_t off = 0;
    for (std::size_t idx : active) {
        const SupportItem& s = ep.supports[idx];
        const Matrix& v = s.layers[l].values();
        std::copy(v.data(), v.data() + v.size(), in.support_concat.row(off));
        const Grid& m = s.layer_masks[l];
        std::copy(m.data(), m.data() + m.size(), in.mask_vec.data() + off);
        in.spans.push_back(ColSpan{off, off + v.rows()});
        off += v.rows();
    }
    return in;
}

Matrix pooled_support(const Episode& ep, const std::vector<std::size_t>& active,
                      PoolMode mode) {
    const std::size_t l = ep.layer_count() - 1;
    if (mode == PoolMode::joint_tokens) {
        std::size_t total = 0;
        for (std::size_t idx : active) total += ep.supports[idx].layers[l].n();
        Matrix all(total, ep.query[l].dim());
        std::size_t off = 0;
        for (std::size_t idx : active) {
            const Matrix& v = ep.supports[idx].layers[l].values();
            std::copy(v.data(), v.data() + v.size(), all.row(off));
            off += v.rows();
        }
        return mean_rows(all);
    }
    Matrix acc(1, ep.query[l].dim());
    for (std::size_t idx : active) {
        Matrix m = mean_rows(ep.supports[idx].layers[l].values());
        kernels::active().axpy(acc.data(), 1.0, m.data(), m.size());
    }
    kernels::active().scale(acc.data(), 1.0 / static_cast<double>(active.size()),
                            acc.size());
    return acc;
}

std::vector<std::size_t> select_supports(const Episode& ep, const PipelineParams& pp,
                                         const PruneSettings& prune) {
    const std::size_t n = ep.supports.size();
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    if (!prune.enabled || n <= prune.threshold) return all;
    if (pp.kind == CorrelationKind::standard)
        throw ContractError("pruning requires the symmetric correlation kind");
    if (prune.keep == 0 || prune.keep > n)
        throw ContractError("pruning: keep " + std::to_string(prune.keep) +
                            " out of range for " + std::to_string(n) + " supports");

    // Mean-token objective terms, averaged over layers and heads; the token-
    // level maps are never formed here.
    std::vector<double> terms(n, 0.0);
    std::size_t contributions = 0;
    for (std::size_t l = 0; l < ep.layer_count(); ++l) {
        const auto& heads = pp.layers[l].heads;
        const std::size_t dh = ep.query[l].dim() / heads.size();
        for (std::size_t h = 0; h < heads.size(); ++h) {
            const TokenMatrix q(heads.size() == 1
                                    ? ep.query[l].values()
                                    : slice_cols(ep.query[l].values(), h * dh, (h + 1) * dh));
            for (std::size_t i = 0; i < n; ++i) {
                const TokenMatrix s(heads.size() == 1
                                        ? ep.supports[i].layers[l].values()
                                        : slice_cols(ep.supports[i].layers[l].values(),
                                                     h * dh, (h + 1) * dh));
                terms[i] += theta_term(s, q, heads[h]);
            }
            ++contributions;
        }
    }
    for (double& t : terms) t /= static_cast<double>(contributions);

    PruneResult sel = greedy_prune_terms(terms, prune.keep);
    std::sort(sel.selected.begin(), sel.selected.end());
    return sel.selected;
}

template <class E>
struct RunOut {
    typename E::Val probs; // (side*side) x 1
    std::vector<typename E::Val> maps;
    std::vector<std::vector<ColSpan>> spans;
};

template <class E>
RunOut<E> run_pipeline(E& eng, const Episode& ep, const PipelineParams& pp,
                       const std::vector<std::size_t>& active) {
    using Val = typename E::Val;
    const std::size_t layers = ep.layer_count();
    RunOut<E> out;
    std::vector<Val> coarse;
    std::vector<std::size_t> sides;
    coarse.reserve(layers);

    for (std::size_t l = 0; l < layers; ++l) {
        LayerInputs in = gather_layer(ep, active, l);
        const std::size_t d = ep.query[l].dim();
        const std::size_t side = exact_side(ep.query[l].n(), "pipeline");
        Val map;
        if (pp.kind == CorrelationKind::standard) {
            Val q = apply_affine(eng, pp.layers[l].f_q, eng.constant(ep.query[l].values()));
            Val s = apply_affine(eng, pp.layers[l].f_k, eng.constant(in.support_concat));
            map = eng.row_softmax(
                eng.matmul_nt(q, s),
                std::sqrt(static_cast<double>(pp.layers[l].f_k.out_dim())));
        } else {
            const auto& heads = pp.layers[l].heads;
            const std::size_t dh = d / heads.size();
            Val acc;
            for (std::size_t h = 0; h < heads.size(); ++h) {
                Matrix qs = heads.size() == 1
                                ? ep.query[l].values()
                                : slice_cols(ep.query[l].values(), h * dh, (h + 1) * dh);
                Matrix ss = heads.size() == 1
                                ? in.support_concat
                                : slice_cols(in.support_concat, h * dh, (h + 1) * dh);
                Val pq = apply_projector(eng, heads[h], eng.constant(std::move(qs)));
                Val ps = apply_projector(eng, heads[h], eng.constant(std::move(ss)));
                Val m = eng.row_softmax(eng.matmul_nt(pq, ps),
                                        scale_value(pp.scale_mode, dh));
                acc = (h == 0) ? m : eng.add(acc, m);
            }
            map = heads.size() == 1
                      ? acc
                      : eng.scale(acc, 1.0 / static_cast<double>(heads.size()));
        }
        out.maps.push_back(map);
        out.spans.push_back(in.spans);
        coarse.push_back(eng.matmul(map, eng.constant(std::move(in.mask_vec))));
        sides.push_back(side);
    }

    // Top-down fusion: carry the running state from the coarsest level,
    // fusing one finer coarse mask per step; the finest level is the head.
    Val state = coarse[0];
    std::size_t state_side = sides[0];
    for (std::size_t idx = 1; idx + 1 < layers; ++idx) {
        Val up = eng.bilinear(state, state_side, state_side, sides[idx], sides[idx]);
        state = apply_conv(eng, pp.refiner.mids[idx - 1], eng.concat_cols(up, coarse[idx]),
                           sides[idx], sides[idx]);
        state_side = sides[idx];
    }
    const std::size_t fine = sides.back();
    Val head_in = layers == 1
                      ? coarse[0]
                      : eng.bilinear(state, state_side, state_side, fine, fine);
    Val qgrid = eng.constant(ep.query.back().values());
    Val pool = eng.broadcast_row(
        eng.constant(pooled_support(ep, active, pp.pool_mode)), fine * fine);
    Val head_cat = eng.concat_cols(eng.concat_cols(head_in, qgrid), pool);
    out.probs = eng.sigmoid(apply_conv(eng, pp.refiner.head, head_cat, fine, fine));
    return out;
}

Grid binarize(const Grid& probs) {
    Grid b(probs.height(), probs.width(), 1);
    for (std::size_t i = 0; i < probs.size(); ++i)
        b.data()[i] = probs.data()[i] > 0.5 ? 1.0 : 0.0;
    return b;
}

} // namespace

RefinerWeights RefinerWeights::zeros(std::size_t layers, std::size_t dim,
                                     std::size_t hidden) {
    if (layers == 0) throw ContractError("refiner: zero layers");
    if (hidden == 0) throw ContractError("refiner: zero hidden width");
    RefinerWeights w;
    w.hidden = hidden;
    if (layers >= 3) {
        w.mids.push_back(ConvBlock::zeros(hidden, 2));
        for (std::size_t i = 3; i < layers; ++i)
            w.mids.push_back(ConvBlock::zeros(hidden, hidden + 1));
    }
    const std::size_t carry = layers >= 3 ? hidden : 1;
    w.head = ConvBlock::zeros(1, carry + 2 * dim);
    return w;
}

void RefinerWeights::validate(std::size_t layers, std::size_t dim) const {
    const std::size_t want_mids = layers >= 3 ? layers - 2 : 0;
    if (mids.size() != want_mids)
        throw ShapeError("refiner: " + std::to_string(mids.size()) + " mid blocks for " +
                         std::to_string(layers) + " layers (want " +
                         std::to_string(want_mids) + ")");
    for (std::size_t i = 0; i < mids.size(); ++i) {
        mids[i].validate();
        const std::size_t want_in = i == 0 ? 2 : hidden + 1;
        if (mids[i].out_c != hidden || mids[i].in_c != want_in)
            throw ShapeError("refiner: mid block " + std::to_string(i) + " is " +
                             std::to_string(mids[i].out_c) + "<-" +
                             std::to_string(mids[i].in_c) + ", want " +
                             std::to_string(hidden) + "<-" + std::to_string(want_in));
    }
    head.validate();
    const std::size_t carry = layers >= 3 ? hidden : 1;
    if (head.out_c != 1 || head.in_c != carry + 2 * dim)
        throw ShapeError("refiner: head is " + std::to_string(head.out_c) + "<-" +
                         std::to_string(head.in_c) + ", want 1<-" +
                         std::to_string(carry + 2 * dim));
}

Grid coarse_mask(const AttentionMap& map, const Matrix& support_mask) {
    if (support_mask.cols() != 1 || support_mask.rows() != map.values.cols())
        throw ShapeError("coarse_mask: mask " + support_mask.shape_str() +
                         " vs attention " + map.values.shape_str());
    Matrix c = matmul(map.values, support_mask);
    const std::size_t side = exact_side(c.rows(), "coarse_mask");
    return matrix_to_grid(std::move(c), side, side);
}

PredictionMask refine_topdown(const std::vector<Grid>& coarse, const RefinerWeights& w,
                              const TokenMatrix& query_finest,
                              const Matrix& support_pool_finest) {
    if (coarse.empty()) throw ContractError("refine_topdown: no coarse masks");
    const std::size_t layers = coarse.size();
    const std::size_t dim = query_finest.dim();
    w.validate(layers, dim);
    if (support_pool_finest.rows() != 1 || support_pool_finest.cols() != dim)
        throw ShapeError("refine_topdown: pooled support " + support_pool_finest.shape_str() +
                         " vs dim " + std::to_string(dim));
    const std::size_t fine = exact_side(query_finest.n(), "refine_topdown");
    for (const Grid& g : coarse)
        if (g.channels() != 1 || g.height() != g.width() || g.height() == 0)
            throw ShapeError("refine_topdown: coarse mask " + g.shape_str() +
                             " is not a square single-channel grid");
    if (coarse.back().height() != fine)
        throw ShapeError("refine_topdown: finest coarse mask " + coarse.back().shape_str() +
                         " vs query grid side " + std::to_string(fine));

    PureEngine eng;
    Matrix state = grid_to_matrix(coarse[0]);
    std::size_t state_side = coarse[0].height();
    for (std::size_t idx = 1; idx + 1 < layers; ++idx) {
        const std::size_t side = coarse[idx].height();
        Matrix up = eng.bilinear(state, state_side, state_side, side, side);
        Matrix cat = concat_cols(up, Matrix(side * side, 1, coarse[idx].storage()));
        state = apply_conv(eng, w.mids[idx - 1], cat, side, side);
        state_side = side;
    }
    Matrix head_in = layers == 1 ? grid_to_matrix(coarse[0])
                                 : eng.bilinear(state, state_side, state_side, fine, fine);
    Matrix cat = concat_cols(concat_cols(head_in, query_finest.values()),
                             broadcast_row(support_pool_finest, fine * fine));
    Matrix logits = apply_conv(eng, w.head, cat, fine, fine);
    Grid probs = matrix_to_grid(sigmoid(logits), fine, fine);
    Grid binary = binarize(probs);
    return PredictionMask{std::move(probs), std::move(binary)};
}

double bce_loss(const Grid& probs, const Grid& truth) {
    if (probs.height() != truth.height() || probs.width() != truth.width() ||
        probs.channels() != truth.channels())
        throw ShapeError("bce_loss: probs " + probs.shape_str() + " vs truth " +
                         truth.shape_str());
    Matrix p(probs.size(), 1, probs.storage());
    Matrix t(truth.size(), 1, truth.storage());
    return bce_mean(p, t);
}

double miou(const std::vector<Grid>& preds, const std::vector<Grid>& truths,
            const std::vector<std::string>& classes) {
    if (preds.empty()) throw ContractError("miou: no samples");
    if (preds.size() != truths.size() || preds.size() != classes.size())
        throw ContractError("miou: " + std::to_string(preds.size()) + " preds, " +
                            std::to_string(truths.size()) + " truths, " +
                            std::to_string(classes.size()) + " labels");
    struct Agg {
        double inter = 0.0;
        double uni = 0.0;
    };
    std::unordered_map<std::string, Agg> by_class;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const Grid& p = preds[i];
        const Grid& t = truths[i];
        if (p.height() != t.height() || p.width() != t.width() ||
            p.channels() != t.channels())
            throw ShapeError("miou: sample " + std::to_string(i) + " pred " +
                             p.shape_str() + " vs truth " + t.shape_str());
        Agg& agg = by_class[classes[i]];
        for (std::size_t j = 0; j < p.size(); ++j) {
            const bool pf = p.data()[j] > 0.5;
            const bool tf = t.data()[j] > 0.5;
            agg.inter += (pf && tf) ? 1.0 : 0.0;
            agg.uni += (pf || tf) ? 1.0 : 0.0;
        }
    }
    double total = 0.0;
    for (const auto& [label, agg] : by_class)
        total += agg.uni > 0.0 ? agg.inter / agg.uni : 1.0;
    return total / static_cast<double>(by_class.size());
}

Grid downsample_mask(const Grid& mask, std::size_t side) {
    if (side == 0) throw ContractError("downsample_mask: zero side");
    if (mask.channels() != 1)
        throw ShapeError("downsample_mask: want 1 channel, got " + mask.shape_str());
    const double sy = static_cast<double>(mask.height()) / static_cast<double>(side);
    const double sx = static_cast<double>(mask.width()) / static_cast<double>(side);
    Grid out(side, side, 1);
    for (std::size_t ty = 0; ty < side; ++ty) {
        const double y0 = static_cast<double>(ty) * sy;
        const double y1 = y0 + sy;
        for (std::size_t tx = 0; tx < side; ++tx) {
            const double x0 = static_cast<double>(tx) * sx;
            const double x1 = x0 + sx;
            double acc = 0.0, area = 0.0;
            for (std::size_t y = static_cast<std::size_t>(y0);
                 y < mask.height() && static_cast<double>(y) < y1; ++y) {
                const double wy = std::min(y1, static_cast<double>(y) + 1.0) -
                                  std::max(y0, static_cast<double>(y));
                for (std::size_t x = static_cast<std::size_t>(x0);
                     x < mask.width() && static_cast<double>(x) < x1; ++x) {
                    const double wx = std::min(x1, static_cast<double>(x) + 1.0) -
                                      std::max(x0, static_cast<double>(x));
                    acc += wy * wx * mask.at(y, x, 0);
                    area += wy * wx;
                }
            }
            out.at(ty, tx, 0) = (acc / area >= 0.5) ? 1.0 : 0.0;
        }
    }
    return out;
}

EpisodeOutput forward_episode(const Episode& ep, const PipelineParams& params,
                              const PruneSettings& prune) {
    validate_episode(ep, params);
    const std::vector<std::size_t> active = select_supports(ep, params, prune);
    PureEngine eng;
    RunOut<PureEngine> run = run_pipeline(eng, ep, params, active);

    EpisodeOutput out;
    const std::size_t fine = exact_side(ep.query.back().n(), "forward_episode");
    out.mask.probs = matrix_to_grid(std::move(run.probs), fine, fine);
    out.mask.binary = binarize(out.mask.probs);
    for (std::size_t l = 0; l < run.maps.size(); ++l)
        out.layer_reports.push_back(
            contribution_index(AttentionMap{std::move(run.maps[l]), run.spans[l]}));
    for (std::size_t idx : active) out.active_ids.push_back(ep.supports[idx].id);
    return out;
}

double episode_loss(const Episode& ep, const PipelineParams& params,
                    const PruneSettings& prune) {
    validate_episode(ep, params);
    const std::vector<std::size_t> active = select_supports(ep, params, prune);
    PureEngine eng;
    RunOut<PureEngine> run = run_pipeline(eng, ep, params, active);
    Matrix truth(ep.query_truth.size(), 1, ep.query_truth.storage());
    return bce_mean(run.probs, truth);
}

EpisodeGraph episode_loss_tape(Tape& tape, const Episode& ep,
                               const PipelineParams& params, const PruneSettings& prune) {
    validate_episode(ep, params);
    const std::vector<std::size_t> active = select_supports(ep, params, prune);

    const std::vector<const Matrix*> ptrs = collect_params(params);
    std::unordered_map<const Matrix*, Var> leaves;
    EpisodeGraph graph;
    graph.param_vars.reserve(ptrs.size());
    for (const Matrix* p : ptrs) {
        Var v = tape.leaf(*p);
        leaves.emplace(p, v);
        graph.param_vars.push_back(v);
    }

    TapeEngine eng{&tape, &leaves};
    RunOut<TapeEngine> run = run_pipeline(eng, ep, params, active);
    Matrix truth(ep.query_truth.size(), 1, ep.query_truth.storage());
    graph.loss = tape.bce_mean(run.probs, std::move(truth));
    return graph;
}

std::vector<const Matrix*> collect_params(const PipelineParams& params) {
    std::vector<const Matrix*> out;
    for (const auto& layer : params.layers) {
        if (params.kind == CorrelationKind::standard) {
            out.push_back(&layer.f_k.w);
            out.push_back(&layer.f_k.b);
            out.push_back(&layer.f_q.w);
            out.push_back(&layer.f_q.b);
        } else {
            for (const auto& h : layer.heads) {
                out.push_back(&h.f1.w);
                out.push_back(&h.f1.b);
                out.push_back(&h.f2.w);
                out.push_back(&h.f2.b);
            }
        }
    }
    for (const auto& m : params.refiner.mids) {
        out.push_back(&m.w);
        out.push_back(&m.bias);
    }
    out.push_back(&params.refiner.head.w);
    out.push_back(&params.refiner.head.bias);
    return out;
}

std::vector<Matrix*> collect_params(PipelineParams& params) {
    std::vector<Matrix*> out;
    for (const Matrix* p : collect_params(static_cast<const PipelineParams&>(params)))
        out.push_back(const_cast<Matrix*>(p));
    return out;
}

std::vector<double> flatten_params(const PipelineParams& params) {
    std::vector<double> flat;
    for (const Matrix* p : collect_params(params))
        flat.insert(flat.end(), p->data(), p->data() + p->size());
    return flat;
}

void set_params(PipelineParams& params, std::span<const double> flat) {
    std::size_t off = 0;
    for (Matrix* p : collect_params(params)) {
        if (off + p->size() > flat.size())
            throw ContractError("set_params: flat vector too short");
        std::copy(flat.begin() + off, flat.begin() + off + p->size(), p->data());
        off += p->size();
    }
    if (off != flat.size())
        throw ContractError("set_params: flat vector has " + std::to_string(flat.size()) +
                            " values, parameters need " + std::to_string(off));
}

TrainResult train_toy(std::span<const Episode> dataset, const PipelineParams& init,
                      const PruneSettings& prune, const TrainHyper& hyper) {
    if (dataset.empty()) throw ContractError("train_toy: empty dataset");
    TrainResult result;
    result.params = init;
    std::vector<Matrix*> ptrs = collect_params(result.params);
    std::vector<Matrix> velocity;
    velocity.reserve(ptrs.size());
    for (Matrix* p : ptrs) velocity.emplace_back(p->rows(), p->cols());

    for (std::size_t step = 0; step < hyper.steps; ++step) {
        const Episode& ep = dataset[step % dataset.size()];
        Tape tape;
        EpisodeGraph graph = episode_loss_tape(tape, ep, result.params, prune);
        const double loss = tape.value(graph.loss).at(0, 0);
        if (!std::isfinite(loss))
            throw TrainingError("train_toy: non-finite loss at step " + std::to_string(step),
                                step);
        result.loss_trace.push_back(loss);
        tape.backward(graph.loss);
        for (std::size_t i = 0; i < ptrs.size(); ++i) {
            Matrix& p = *ptrs[i];
            const Matrix& g = tape.grad(graph.param_vars[i]);
            Matrix& v = velocity[i];
            for (std::size_t j = 0; j < p.size(); ++j) {
                const double grad = g.data()[j] + hyper.weight_decay * p.data()[j];
                v.data()[j] = hyper.momentum * v.data()[j] + grad;
                p.data()[j] -= hyper.lr * v.data()[j];
            }
        }
    }
    return result;
}

} // namespace scseg
