#include "scseg/ops.hpp"

#include <algorithm>
#include <cmath>

#include "scseg/kernels.hpp"

namespace scseg {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
}

} // namespace

ConvBlock ConvBlock::zeros(std::size_t out_c, std::size_t in_c) {
    ConvBlock k;
    k.out_c = out_c;
    k.in_c = in_c;
    k.w = Matrix(out_c, 9 * in_c);
    k.bias = Matrix(1, out_c);
    return k;
}

void ConvBlock::validate() const {
    if (out_c == 0 || in_c == 0)
        throw ContractError("conv block: channel counts must be positive");
    if (w.rows() != out_c || w.cols() != 9 * in_c)
        throw ShapeError("conv block: weights " + w.shape_str() + " want " +
                         std::to_string(out_c) + "x" + std::to_string(9 * in_c));
    if (bias.rows() != 1 || bias.cols() != out_c)
        throw ShapeError("conv block: bias " + bias.shape_str() + " want 1x" +
                         std::to_string(out_c));
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: lhs " + a.shape_str() + " rhs " + b.shape_str());
    const auto& k = kernels::active();
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* crow = c.row(i);
        const double* arow = a.row(i);
        for (std::size_t p = 0; p < a.cols(); ++p)
            k.axpy(crow, arow[p], b.row(p), b.cols());
    }
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols())
        throw ShapeError("matmul_nt: lhs " + a.shape_str() + " rhs^T " + b.shape_str());
    const auto& k = kernels::active();
    Matrix c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* crow = c.row(i);
        const double* arow = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j)
            crow[j] = k.dot(arow, b.row(j), a.cols());
    }
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows())
        throw ShapeError("matmul_tn: lhs^T " + a.shape_str() + " rhs " + b.shape_str());
    const auto& k = kernels::active();
    Matrix c(a.cols(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* arow = a.row(i);
        const double* brow = b.row(i);
        for (std::size_t p = 0; p < a.cols(); ++p)
            k.axpy(c.row(p), arow[p], brow, b.cols());
    }
    return c;
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            t.at(j, i) = a.at(i, j);
    return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix c(a.rows(), a.cols());
    kernels::active().vadd(c.data(), a.data(), b.data(), a.size());
    return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "sub");
    Matrix c(a.rows(), a.cols());
    kernels::active().vsub(c.data(), a.data(), b.data(), a.size());
    return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "hadamard");
    Matrix c(a.rows(), a.cols());
    kernels::active().vmul(c.data(), a.data(), b.data(), a.size());
    return c;
}

Matrix scale(const Matrix& a, double s) {
    Matrix c = a;
    kernels::active().scale(c.data(), s, c.size());
    return c;
}

Matrix add_rowvec(const Matrix& a, const Matrix& row) {
    if (row.rows() != 1 || row.cols() != a.cols())
        throw ShapeError("add_rowvec: matrix " + a.shape_str() + " row " + row.shape_str());
    Matrix c = a;
    for (std::size_t i = 0; i < c.rows(); ++i)
        kernels::active().axpy(c.row(i), 1.0, row.data(), c.cols());
    return c;
}

Matrix mean_rows(const Matrix& a) {
    if (a.rows() == 0) throw ContractError("mean_rows: empty matrix");
    Matrix m = col_sum(a);
    kernels::active().scale(m.data(), 1.0 / static_cast<double>(a.rows()), m.size());
    return m;
}

Matrix col_sum(const Matrix& a) {
    Matrix m(1, a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        kernels::active().axpy(m.data(), 1.0, a.row(i), a.cols());
    return m;
}

Matrix col_max(const Matrix& a) {
    if (a.rows() == 0) throw ContractError("col_max: empty matrix");
    Matrix m(1, a.cols());
    std::copy(a.row(0), a.row(0) + a.cols(), m.data());
    for (std::size_t i = 1; i < a.rows(); ++i) {
        const double* r = a.row(i);
        double* out = m.data();
        for (std::size_t j = 0; j < a.cols(); ++j)
            if (r[j] > out[j]) out[j] = r[j];
    }
    return m;
}

Matrix broadcast_row(const Matrix& row, std::size_t n) {
    if (row.rows() != 1) throw ShapeError("broadcast_row: want 1xC, got " + row.shape_str());
    Matrix c(n, row.cols());
    for (std::size_t i = 0; i < n; ++i)
        std::copy(row.data(), row.data() + row.cols(), c.row(i));
    return c;
}

Matrix concat_cols(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows())
        throw ShapeError("concat_cols: " + a.shape_str() + " vs " + b.shape_str());
    Matrix c(a.rows(), a.cols() + b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        std::copy(a.row(i), a.row(i) + a.cols(), c.row(i));
        std::copy(b.row(i), b.row(i) + b.cols(), c.row(i) + a.cols());
    }
    return c;
}

Matrix concat_rows(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols())
        throw ShapeError("concat_rows: " + a.shape_str() + " vs " + b.shape_str());
    Matrix c(a.rows() + b.rows(), a.cols());
    std::copy(a.data(), a.data() + a.size(), c.data());
    std::copy(b.data(), b.data() + b.size(), c.data() + a.size());
    return c;
}

Matrix slice_cols(const Matrix& a, std::size_t c0, std::size_t c1) {
    if (c0 >= c1 || c1 > a.cols())
        throw ContractError("slice_cols: range [" + std::to_string(c0) + ", " +
                            std::to_string(c1) + ") of " + a.shape_str());
    Matrix c(a.rows(), c1 - c0);
    for (std::size_t i = 0; i < a.rows(); ++i)
        std::copy(a.row(i) + c0, a.row(i) + c1, c.row(i));
    return c;
}

double mean_all(const Matrix& a) {
    if (a.size() == 0) throw ContractError("mean_all: empty matrix");
    return kernels::active().vsum(a.data(), a.size()) / static_cast<double>(a.size());
}

double sum_all(const Matrix& a) {
    return kernels::active().vsum(a.data(), a.size());
}

Matrix row_softmax(const Matrix& a, double divisor) {
    if (!(divisor > 0.0)) throw ContractError("row_softmax: divisor must be > 0");
    if (a.cols() == 0) throw ContractError("row_softmax: empty rows");
    const auto& k = kernels::active();
    Matrix y(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* x = a.row(i);
        double* out = y.row(i);
        const double m = k.vmax(x, a.cols()) / divisor;
        double sum = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) {
            const double e = std::exp(x[j] / divisor - m);
            out[j] = e;
            sum += e;
        }
        k.scale(out, 1.0 / sum, a.cols());
    }
    return y;
}

Matrix row_unit_normalize(const Matrix& a) {
    const auto& k = kernels::active();
    Matrix y = a;
    for (std::size_t i = 0; i < y.rows(); ++i) {
        const double nrm = std::sqrt(k.dot(y.row(i), y.row(i), y.cols()));
        if (nrm < 1e-12)
            throw DegenerateRowError("row_unit_normalize: row " + std::to_string(i) +
                                         " has norm " + std::to_string(nrm),
                                     i);
        k.scale(y.row(i), 1.0 / nrm, y.cols());
    }
    return y;
}

Matrix row_norms(const Matrix& a) {
    const auto& k = kernels::active();
    Matrix n(a.rows(), 1);
    for (std::size_t i = 0; i < a.rows(); ++i)
        n.at(i, 0) = std::sqrt(k.dot(a.row(i), a.row(i), a.cols()));
    return n;
}

Matrix sigmoid(const Matrix& a) {
    Matrix y(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i)
        y.data()[i] = 1.0 / (1.0 + std::exp(-a.data()[i]));
    return y;
}

double bce_mean(const Matrix& probs, const Matrix& truth) {
    require_same_shape(probs, truth, "bce_mean");
    if (probs.size() == 0) throw ContractError("bce_mean: empty input");
    constexpr double eps = 1e-12;
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = probs.data()[i];
        if (p < 0.0 || p > 1.0)
            throw ContractError("bce_mean: probability outside [0,1] at flat index " +
                                std::to_string(i));
        const double pc = std::clamp(p, eps, 1.0 - eps);
        const double t = truth.data()[i];
        acc -= t * std::log(pc) + (1.0 - t) * std::log(1.0 - pc);
    }
    return acc / static_cast<double>(probs.size());
}

Matrix im2col(const Matrix& x, std::size_t h, std::size_t w) {
    if (x.rows() != h * w)
        throw ShapeError("im2col: pixels " + x.shape_str() + " want rows " +
                         std::to_string(h * w));
    const std::size_t c = x.cols();
    Matrix out(h * w, 9 * c);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xx = 0; xx < w; ++xx) {
            double* orow = out.row(y * w + xx);
            for (int ky = 0; ky < 3; ++ky) {
                const long iy = static_cast<long>(y) + ky - 1;
                for (int kx = 0; kx < 3; ++kx) {
                    const long ix = static_cast<long>(xx) + kx - 1;
                    double* dst = orow + (ky * 3 + kx) * c;
                    if (iy >= 0 && iy < static_cast<long>(h) && ix >= 0 &&
                        ix < static_cast<long>(w)) {
                        const double* src = x.row(static_cast<std::size_t>(iy) * w +
                                                  static_cast<std::size_t>(ix));
                        std::copy(src, src + c, dst);
                    }
                    // else: stays zero (padding)
                }
            }
        }
    }
    return out;
}

Matrix col2im(const Matrix& d, std::size_t h, std::size_t w) {
    if (d.rows() != h * w || d.cols() % 9 != 0)
        throw ShapeError("col2im: patches " + d.shape_str() + " want rows " +
                         std::to_string(h * w) + ", cols divisible by 9");
    const std::size_t c = d.cols() / 9;
    const auto& k = kernels::active();
    Matrix out(h * w, c);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xx = 0; xx < w; ++xx) {
            const double* drow = d.row(y * w + xx);
            for (int ky = 0; ky < 3; ++ky) {
                const long iy = static_cast<long>(y) + ky - 1;
                if (iy < 0 || iy >= static_cast<long>(h)) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const long ix = static_cast<long>(xx) + kx - 1;
                    if (ix < 0 || ix >= static_cast<long>(w)) continue;
                    k.axpy(out.row(static_cast<std::size_t>(iy) * w +
                                   static_cast<std::size_t>(ix)),
                           1.0, drow + (ky * 3 + kx) * c, c);
                }
            }
        }
    }
    return out;
}

Grid conv2d(const Grid& g, const ConvBlock& kb) {
    kb.validate();
    if (g.channels() != kb.in_c)
        throw ShapeError("conv2d: grid " + g.shape_str() + " vs kernel in_c " +
                         std::to_string(kb.in_c));
    const std::size_t h = g.height(), w = g.width();
    Matrix pix(h * w, g.channels(), g.storage());
    Matrix cols = im2col(pix, h, w);
    Matrix out = add_rowvec(matmul_nt(cols, kb.w), kb.bias);
    return matrix_to_grid(std::move(out), h, w);
}

namespace {

struct Tap {
    std::size_t i0, i1;
    double f; // weight of i1; (1 - f) goes to i0
};

Tap tap_for(std::size_t dst, std::size_t in_n, std::size_t out_n) {
    const double r = static_cast<double>(in_n) / static_cast<double>(out_n);
    double src = (static_cast<double>(dst) + 0.5) * r - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t i0 = static_cast<std::size_t>(src);
    if (i0 >= in_n) i0 = in_n - 1;
    const std::size_t i1 = std::min(i0 + 1, in_n - 1);
    return Tap{i0, i1, src - static_cast<double>(i0)};
}

} // namespace

Grid bilinear_resize(const Grid& g, std::size_t oh, std::size_t ow) {
    if (oh == 0 || ow == 0)
        throw ShapeError("bilinear_resize: zero target size " + std::to_string(oh) + "x" +
                         std::to_string(ow));
    if (g.height() == 0 || g.width() == 0)
        throw ShapeError("bilinear_resize: empty source grid " + g.shape_str());
    const std::size_t c = g.channels();
    const auto& k = kernels::active();
    Grid out(oh, ow, c);
    for (std::size_t oy = 0; oy < oh; ++oy) {
        const Tap ty = tap_for(oy, g.height(), oh);
        for (std::size_t ox = 0; ox < ow; ++ox) {
            const Tap tx = tap_for(ox, g.width(), ow);
            double* dst = out.pixel(oy, ox);
            k.axpy(dst, (1.0 - ty.f) * (1.0 - tx.f), g.pixel(ty.i0, tx.i0), c);
            k.axpy(dst, (1.0 - ty.f) * tx.f, g.pixel(ty.i0, tx.i1), c);
            k.axpy(dst, ty.f * (1.0 - tx.f), g.pixel(ty.i1, tx.i0), c);
            k.axpy(dst, ty.f * tx.f, g.pixel(ty.i1, tx.i1), c);
        }
    }
    return out;
}

Grid bilinear_resize_adjoint(const Grid& d, std::size_t ih, std::size_t iw) {
    if (ih == 0 || iw == 0)
        throw ShapeError("bilinear_resize_adjoint: zero source size");
    const std::size_t c = d.channels();
    const auto& k = kernels::active();
    Grid out(ih, iw, c);
    for (std::size_t oy = 0; oy < d.height(); ++oy) {
        const Tap ty = tap_for(oy, ih, d.height());
        for (std::size_t ox = 0; ox < d.width(); ++ox) {
            const Tap tx = tap_for(ox, iw, d.width());
            const double* src = d.pixel(oy, ox);
            k.axpy(out.pixel(ty.i0, tx.i0), (1.0 - ty.f) * (1.0 - tx.f), src, c);
            k.axpy(out.pixel(ty.i0, tx.i1), (1.0 - ty.f) * tx.f, src, c);
            k.axpy(out.pixel(ty.i1, tx.i0), ty.f * (1.0 - tx.f), src, c);
            k.axpy(out.pixel(ty.i1, tx.i1), ty.f * tx.f, src, c);
        }
    }
    return out;
}

} // namespace scseg
