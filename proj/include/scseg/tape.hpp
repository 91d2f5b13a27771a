#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "scseg/matrix.hpp"

namespace scseg {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    std::size_t rows() const;
    std::size_t cols() const;
};

/// Reverse-mode autodiff over Matrix values. Nodes are appended in strict
/// topological order (every input id precedes its consumer), so the backward
/// sweep is a single reverse walk. Forward values are computed by the same
/// pure functions in ops.hpp that the inference path uses.
class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    struct Node {
        Matrix value;
        Matrix grad; // allocated during backward()
        std::vector<std::size_t> parents;
        Backward backward; // empty for leaves
        const char* op = "leaf";
    };

    /// New input node. Leaves receive gradients like any other node; a leaf
    /// never touched by the output keeps an all-zero gradient.
    Var leaf(Matrix value);

    // Differentiable ops; shapes and errors match their ops.hpp namesakes.
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var hadamard(Var a, Var b);
    Var scale(Var a, double s);
    Var matmul(Var a, Var b);
    Var matmul_nt(Var a, Var b);
    Var add_rowvec(Var a, Var row);
    Var mean_rows(Var a);
    Var broadcast_row(Var row, std::size_t n);
    Var concat_cols(Var a, Var b);
    Var slice_cols(Var a, std::size_t c0, std::size_t c1);
    Var row_softmax(Var a, double divisor);
    Var row_unit_normalize(Var a);
    Var sigmoid(Var a);
    Var mean_all(Var a);

    /// Mean binary cross-entropy against a constant target; returns 1x1.
    Var bce_mean(Var probs, Matrix truth);

    /// Patch extraction / resize with the grid geometry given explicitly;
    /// values stay matrices of shape (h*w) x channels.
    Var im2col(Var x, std::size_t h, std::size_t w);
    Var bilinear_resize(Var x, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow);

    /// Seeds d(out)/d(out) = 1 and accumulates gradients into every node.
    /// out must be 1x1; throws ContractError otherwise.
    void backward(Var out);

    const Matrix& value(Var v) const;
    /// Gradient of the last backward() output with respect to v.
    const Matrix& grad(Var v) const;

    std::size_t node_count() const noexcept { return nodes_.size(); }

private:
    Var push(Matrix value, std::vector<std::size_t> parents, Backward fn, const char* op);
    Matrix& grad_ref(std::size_t id);
    void check(Var v, const char* op) const;

    std::vector<Node> nodes_;
    bool ran_backward_ = false;
};

} // namespace scseg
