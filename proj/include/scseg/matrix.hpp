#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "scseg/errors.hpp"

namespace scseg {

/// Dense row-major matrix of doubles. The workhorse value type: token
/// matrices, attention maps, projector weights and conv weight blocks are all
/// stored as (possibly reshaped) matrices.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            throw ShapeError("matrix data size mismatch: " + shape_str() + " needs " +
                             std::to_string(rows_ * cols_) + " values, got " +
                             std::to_string(data_.size()));
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double* row(std::size_t r) { return data_.data() + r * cols_; }
    const double* row(std::size_t r) const { return data_.data() + r * cols_; }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::vector<double>& storage() noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    bool same_shape(const Matrix& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    std::string shape_str() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Dense grid of shape height x width x channels, row-major with channels
/// contiguous per pixel. Memory-layout compatible with a Matrix of shape
/// (height*width) x channels, which makes token<->pixel reshapes free.
class Grid {
public:
    Grid() = default;
    Grid(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
        : h_(h), w_(w), c_(c), data_(h * w * c, fill) {}
    Grid(std::size_t h, std::size_t w, std::size_t c, std::vector<double> data)
        : h_(h), w_(w), c_(c), data_(std::move(data)) {
        if (data_.size() != h_ * w_ * c_)
            throw ShapeError("grid data size mismatch: " + shape_str() + " needs " +
                             std::to_string(h_ * w_ * c_) + " values, got " +
                             std::to_string(data_.size()));
    }

    std::size_t height() const noexcept { return h_; }
    std::size_t width() const noexcept { return w_; }
    std::size_t channels() const noexcept { return c_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& at(std::size_t y, std::size_t x, std::size_t c) {
        return data_[(y * w_ + x) * c_ + c];
    }
    double at(std::size_t y, std::size_t x, std::size_t c) const {
        return data_[(y * w_ + x) * c_ + c];
    }

    double* pixel(std::size_t y, std::size_t x) { return data_.data() + (y * w_ + x) * c_; }
    const double* pixel(std::size_t y, std::size_t x) const {
        return data_.data() + (y * w_ + x) * c_;
    }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::vector<double>& storage() noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    std::string shape_str() const {
        return std::to_string(h_) + "x" + std::to_string(w_) + "x" + std::to_string(c_);
    }

private:
    std::size_t h_ = 0;
    std::size_t w_ = 0;
    std::size_t c_ = 0;
    std::vector<double> data_;
};

/// Reshape helpers; both directions are plain moves of the backing storage.
Matrix grid_to_matrix(Grid g);
Grid matrix_to_grid(Matrix m, std::size_t h, std::size_t w);

/// Throws EvalError if any entry is NaN or infinite.
void assert_finite(const Matrix& m, const char* what);
void assert_finite(const Grid& g, const char* what);

} // namespace scseg
