#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "scseg/matrix.hpp"

namespace scseg {

/// Tokens-by-features matrix; at least one token, at least one feature, all
/// entries finite.
class TokenMatrix {
public:
    TokenMatrix() = default;
    explicit TokenMatrix(Matrix values);

    const Matrix& values() const noexcept { return values_; }
    std::size_t n() const noexcept { return values_.rows(); }
    std::size_t dim() const noexcept { return values_.cols(); }

private:
    Matrix values_;
};

/// Half-open column range [begin, end) of one support inside a concatenated
/// attention map.
struct ColSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const noexcept { return end - begin; }
};

/// Ordered support set. Column spans follow the running token offsets: item
/// i's span starts at the sum of the earlier items' token counts.
class SupportPack {
public:
    explicit SupportPack(std::vector<TokenMatrix> items);

    const std::vector<TokenMatrix>& items() const noexcept { return items_; }
    const std::vector<ColSpan>& spans() const noexcept { return spans_; }
    const Matrix& concatenated() const noexcept { return concat_; }
    std::size_t size() const noexcept { return items_.size(); }
    std::size_t dim() const noexcept { return items_.front().dim(); }
    std::size_t total_tokens() const noexcept { return concat_.rows(); }

private:
    std::vector<TokenMatrix> items_;
    std::vector<ColSpan> spans_;
    Matrix concat_;
};

/// Affine map y = x W^T + b applied row-wise; w is out x in, b is 1 x out.
struct Affine {
    Matrix w;
    Matrix b;

    Matrix apply(const Matrix& x) const;
    std::size_t in_dim() const noexcept { return w.cols(); }
    std::size_t out_dim() const noexcept { return w.rows(); }
    void validate() const;
};

/// Two-branch projector: output token = f1(x) scaled elementwise by the unit
/// direction of f2(x). Both branches map dim -> dim.
struct ScProjector {
    Affine f1;
    Affine f2;

    std::size_t dim() const noexcept { return f1.w.rows(); }
    void validate() const;
};

/// Divisor applied to correlation products before the row softmax.
enum class ScaleMode { sqrt_d, d };

double scale_value(ScaleMode mode, std::size_t dim);

/// Softmax-normalized map: one row per query token, one column per support
/// token across the whole pack (rows sum to 1); spans mark per-support
/// column ranges.
struct AttentionMap {
    Matrix values;
    std::vector<ColSpan> spans;
};

/// Per-support mean of column maxima. delta[i] lies in (0, 1]. designated /
/// mean_others / deviation are filled by deviation().
struct ContributionReport {
    std::vector<double> delta;
    std::optional<std::size_t> designated;
    double mean_others = 0.0;
    double deviation = 0.0;
};

/// f1(x) elementwise-times unit(f2(x)). Throws DegenerateRowError when a row
/// of f2(x) has norm below 1e-12.
Matrix sc_project(const ScProjector& p, const Matrix& tokens);

/// Raw (pre-divisor) correlation products; both matrices must share dim.
Matrix standard_logits(const Matrix& support_tokens, const Matrix& query_tokens,
                       const Affine& f_k, const Affine& f_q);
Matrix symmetric_logits(const Matrix& support_tokens, const Matrix& query_tokens,
                        const ScProjector& p);

/// Softmax attention with separate key/query maps, divisor sqrt(dim).
AttentionMap standard_attention(const SupportPack& pack, const TokenMatrix& query,
                                const Affine& f_k, const Affine& f_q);

/// Softmax attention with the shared symmetric projector.
AttentionMap symmetric_attention(const SupportPack& pack, const TokenMatrix& query,
                                 const ScProjector& p, ScaleMode mode = ScaleMode::sqrt_d);

/// Feature dims are split evenly across heads (dim % heads == 0, else
/// ConfigError); per-head attention maps are averaged, which keeps rows
/// stochastic. One head is exactly symmetric_attention.
AttentionMap multi_head_sc(const SupportPack& pack, const TokenMatrix& query,
                           std::span<const ScProjector> heads,
                           ScaleMode mode = ScaleMode::sqrt_d);

/// Per-support contribution indices of an attention map.
ContributionReport contribution_index(const AttentionMap& map);

/// Deviation of the designated support's delta from the mean of the others.
/// Needs at least two supports; fills the report's designated fields.
double deviation(ContributionReport& report, std::size_t designated);

} // namespace scseg
