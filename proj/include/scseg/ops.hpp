#pragma once

#include <cstddef>

#include "scseg/matrix.hpp"

namespace scseg {

/// 3x3 convolution weights, stride 1, zero padding 1 (the only geometry the
/// refiner uses). Row oc of `w` holds the 9 taps in (ky, kx) order, each tap
/// carrying in_c contiguous channel weights; `bias` is 1 x out_c.
struct ConvBlock {
    std::size_t out_c = 0;
    std::size_t in_c = 0;
    Matrix w;    // out_c x (9 * in_c)
    Matrix bias; // 1 x out_c

    static ConvBlock zeros(std::size_t out_c, std::size_t in_c);
    void validate() const;
};

// ---- linear algebra ----

Matrix matmul(const Matrix& a, const Matrix& b);    // a (m x k) * b (k x n)
Matrix matmul_nt(const Matrix& a, const Matrix& b); // a (m x k) * b^T (n x k)
Matrix matmul_tn(const Matrix& a, const Matrix& b); // a^T (k x m) * b (k x n)
Matrix transpose(const Matrix& a);

Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);

/// Adds a 1 x cols row vector to every row.
Matrix add_rowvec(const Matrix& a, const Matrix& row);

/// Mean over rows -> 1 x cols.
Matrix mean_rows(const Matrix& a);
/// Sum over rows -> 1 x cols.
Matrix col_sum(const Matrix& a);
/// Max over rows -> 1 x cols.
Matrix col_max(const Matrix& a);
/// Repeat a 1 x cols row vector n times -> n x cols.
Matrix broadcast_row(const Matrix& row, std::size_t n);

Matrix concat_cols(const Matrix& a, const Matrix& b);
Matrix concat_rows(const Matrix& a, const Matrix& b);
/// Columns [c0, c1) -> rows x (c1 - c0).
Matrix slice_cols(const Matrix& a, std::size_t c0, std::size_t c1);

double mean_all(const Matrix& a);
double sum_all(const Matrix& a);

// ---- nonlinear rows ----

/// Row-wise softmax of (a / divisor); divisor must be > 0. Max-subtraction
/// keeps arbitrarily large logits finite.
Matrix row_softmax(const Matrix& a, double divisor);

/// Rows scaled to unit L2 norm. Throws DegenerateRowError (with the row
/// index) when a row's norm is below 1e-12.
Matrix row_unit_normalize(const Matrix& a);

/// Per-row L2 norms -> rows x 1.
Matrix row_norms(const Matrix& a);

Matrix sigmoid(const Matrix& a);

/// Mean binary cross-entropy between probabilities and targets of identical
/// shape. probs must lie in [0, 1]; values are clamped to [1e-12, 1-1e-12]
/// inside the logs.
double bce_mean(const Matrix& probs, const Matrix& truth);

// ---- convolution / resize ----

/// Patch extraction for the fixed 3x3/s1/p1 geometry: x is (h*w) x c pixels,
/// result is (h*w) x (9c) with tap-major, channel-minor columns.
Matrix im2col(const Matrix& x, std::size_t h, std::size_t w);

/// Adjoint of im2col: scatter-adds (h*w) x (9c) patch gradients back to
/// (h*w) x c pixel gradients.
Matrix col2im(const Matrix& d, std::size_t h, std::size_t w);

Grid conv2d(const Grid& g, const ConvBlock& k);

/// Bilinear resample to (oh x ow), align_corners=false, edges clamped.
/// Weights of the four taps sum to one, so constants are preserved and
/// outputs stay within the input's [min, max].
Grid bilinear_resize(const Grid& g, std::size_t oh, std::size_t ow);

/// Adjoint of bilinear_resize for the same geometry.
Grid bilinear_resize_adjoint(const Grid& d, std::size_t ih, std::size_t iw);

} // namespace scseg
