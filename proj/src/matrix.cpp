#include "scseg/matrix.hpp"

#include <cmath>

namespace scseg {

Matrix grid_to_matrix(Grid g) {
    const std::size_t rows = g.height() * g.width();
    const std::size_t cols = g.channels();
    return Matrix(rows, cols, std::move(g.storage()));
}

Grid matrix_to_grid(Matrix m, std::size_t h, std::size_t w) {
    if (m.rows() != h * w)
        throw ShapeError("matrix " + m.shape_str() + " cannot reshape to grid " +
                         std::to_string(h) + "x" + std::to_string(w) + "x" +
                         std::to_string(m.cols()));
    const std::size_t c = m.cols();
    return Grid(h, w, c, std::move(m.storage()));
}

namespace {
void check_finite(const double* p, std::size_t n, const char* what) {
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(p[i]))
            throw EvalError(std::string(what) + ": non-finite value at flat index " +
                            std::to_string(i));
    }
}
} // namespace

void assert_finite(const Matrix& m, const char* what) {
    check_finite(m.data(), m.size(), what);
}

void assert_finite(const Grid& g, const char* what) {
    check_finite(g.data(), g.size(), what);
}

} // namespace scseg
