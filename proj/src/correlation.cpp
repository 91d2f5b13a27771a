#include "scseg/correlation.hpp"

#include <cmath>

#include "scseg/kernels.hpp"
#include "scseg/ops.hpp"

namespace scseg {

TokenMatrix::TokenMatrix(Matrix values) : values_(std::move(values)) {
    if (values_.rows() == 0 || values_.cols() == 0)
        throw ContractError("token matrix: need at least one token and one feature, got " +
                            values_.shape_str());
    assert_finite(values_, "token matrix");
}

SupportPack::SupportPack(std::vector<TokenMatrix> items) : items_(std::move(items)) {
    if (items_.empty()) throw ContractError("support pack: no supports");
    const std::size_t d = items_.front().dim();
    std::size_t total = 0;
    for (const auto& it : items_) {
        if (it.dim() != d)
            throw ShapeError("support pack: mixed dims " + std::to_string(d) + " vs " +
                             std::to_string(it.dim()));
        total += it.n();
    }
    concat_ = Matrix(total, d);
    spans_.reserve(items_.size());
    std::size_t off = 0;
    for (const auto& it : items_) {
        std::copy(it.values().data(), it.values().data() + it.values().size(),
                  concat_.row(off));
        spans_.push_back(ColSpan{off, off + it.n()});
        off += it.n();
    }
}

Matrix Affine::apply(const Matrix& x) const {
    validate();
    if (x.cols() != in_dim())
        throw ShapeError("affine: input " + x.shape_str() + " vs weight " + w.shape_str());
    return add_rowvec(matmul_nt(x, w), b);
}

void Affine::validate() const {
    if (w.rows() == 0 || w.cols() == 0)
        throw ContractError("affine: empty weight matrix");
    if (b.rows() != 1 || b.cols() != w.rows())
        throw ShapeError("affine: bias " + b.shape_str() + " vs weight " + w.shape_str());
}

void ScProjector::validate() const {
    f1.validate();
    f2.validate();
    if (f1.in_dim() != f1.out_dim() || f2.in_dim() != f2.out_dim() ||
        f1.in_dim() != f2.in_dim())
        throw ShapeError("projector: branches must both map dim->dim, got " +
                         f1.w.shape_str() + " and " + f2.w.shape_str());
}

double scale_value(ScaleMode mode, std::size_t dim) {
    if (dim == 0) throw ContractError("scale_value: zero dim");
    const double d = static_cast<double>(dim);
    return mode == ScaleMode::sqrt_d ? std::sqrt(d) : d;
}

Matrix sc_project(const ScProjector& p, const Matrix& tokens) {
    p.validate();
    return hadamard(p.f1.apply(tokens), row_unit_normalize(p.f2.apply(tokens)));
}

Matrix standard_logits(const Matrix& support_tokens, const Matrix& query_tokens,
                       const Affine& f_k, const Affine& f_q) {
    return matmul_nt(f_q.apply(query_tokens), f_k.apply(support_tokens));
}

Matrix symmetric_logits(const Matrix& support_tokens, const Matrix& query_tokens,
                        const ScProjector& p) {
    return matmul_nt(sc_project(p, query_tokens), sc_project(p, support_tokens));
}

AttentionMap standard_attention(const SupportPack& pack, const TokenMatrix& query,
                                const Affine& f_k, const Affine& f_q) {
    if (query.dim() != pack.dim())
        throw ShapeError("standard_attention: query dim " + std::to_string(query.dim()) +
                         " vs pack dim " + std::to_string(pack.dim()));
    Matrix logits = standard_logits(pack.concatenated(), query.values(), f_k, f_q);
    return AttentionMap{row_softmax(logits, std::sqrt(static_cast<double>(f_k.out_dim()))),
                        pack.spans()};
}

AttentionMap symmetric_attention(const SupportPack& pack, const TokenMatrix& query,
                                 const ScProjector& p, ScaleMode mode) {
    if (query.dim() != pack.dim())
        throw ShapeError("symmetric_attention: query dim " + std::to_string(query.dim()) +
                         " vs pack dim " + std::to_string(pack.dim()));
    Matrix logits = symmetric_logits(pack.concatenated(), query.values(), p);
    return AttentionMap{row_softmax(logits, scale_value(mode, p.dim())), pack.spans()};
}

AttentionMap multi_head_sc(const SupportPack& pack, const TokenMatrix& query,
                           std::span<const ScProjector> heads, ScaleMode mode) {
    if (heads.empty()) throw ConfigError("multi_head_sc: no heads");
    const std::size_t d = pack.dim();
    const std::size_t h = heads.size();
    if (d % h != 0)
        throw ConfigError("multi_head_sc: dim " + std::to_string(d) +
                          " not divisible by heads " + std::to_string(h));
    const std::size_t dh = d / h;
    for (const auto& p : heads) {
        p.validate();
        if (p.dim() != dh)
            throw ConfigError("multi_head_sc: head dim " + std::to_string(p.dim()) +
                              " vs dim/heads " + std::to_string(dh));
    }
    if (query.dim() != d)
        throw ShapeError("multi_head_sc: query dim " + std::to_string(query.dim()) +
                         " vs pack dim " + std::to_string(d));

    Matrix acc;
    for (std::size_t i = 0; i < h; ++i) {
        Matrix qs = slice_cols(query.values(), i * dh, (i + 1) * dh);
        Matrix ss = slice_cols(pack.concatenated(), i * dh, (i + 1) * dh);
        Matrix logits = symmetric_logits(ss, qs, heads[i]);
        Matrix map = row_softmax(logits, scale_value(mode, dh));
        acc = (i == 0) ? std::move(map) : add(acc, map);
    }
    return AttentionMap{scale(acc, 1.0 / static_cast<double>(h)), pack.spans()};
}

ContributionReport contribution_index(const AttentionMap& map) {
    if (map.spans.empty()) throw ContractError("contribution_index: no spans");
    Matrix maxima = col_max(map.values);
    ContributionReport report;
    report.delta.reserve(map.spans.size());
    const auto& k = kernels::active();
    for (const auto& s : map.spans) {
        if (s.size() == 0) throw ContractError("contribution_index: empty span");
        if (s.end > map.values.cols())
            throw ContractError("contribution_index: span past last column");
        const double total = k.vsum(maxima.data() + s.begin, s.size());
        report.delta.push_back(total / static_cast<double>(s.size()));
    }
    return report;
}

double deviation(ContributionReport& report, std::size_t designated) {
    const std::size_t n = report.delta.size();
    if (n < 2)
        throw ContractError("deviation: need at least two supports, have " +
                            std::to_string(n));
    if (designated >= n)
        throw ContractError("deviation: designated index " + std::to_string(designated) +
                            " out of range " + std::to_string(n));
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (i != designated) sum += report.delta[i];
    report.designated = designated;
    report.mean_others = sum / static_cast<double>(n - 1);
    report.deviation = report.delta[designated] - report.mean_others;
    return report.deviation;
}

} // namespace scseg
