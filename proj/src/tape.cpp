#include "scseg/tape.hpp"

#include <algorithm>
#include <cmath>

#include "scseg/kernels.hpp"
#include "scseg/ops.hpp"

namespace scseg {

std::size_t Var::rows() const { return tape->value(*this).rows(); }
std::size_t Var::cols() const { return tape->value(*this).cols(); }

void Tape::check(Var v, const char* op) const {
    if (v.tape != this || v.id >= nodes_.size())
        throw ContractError(std::string(op) + ": var does not belong to this tape");
}

Var Tape::push(Matrix value, std::vector<std::size_t> parents, Backward fn, const char* op) {
    nodes_.push_back(Node{std::move(value), Matrix(), std::move(parents), std::move(fn), op});
    return Var{this, nodes_.size() - 1};
}

Matrix& Tape::grad_ref(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty() && n.value.size() > 0)
        n.grad = Matrix(n.value.rows(), n.value.cols());
    return n.grad;
}

const Matrix& Tape::value(Var v) const {
    check(v, "value");
    return nodes_[v.id].value;
}

const Matrix& Tape::grad(Var v) const {
    check(v, "grad");
    if (!ran_backward_) throw ContractError("grad: backward() has not run");
    return nodes_[v.id].grad;
}

Var Tape::leaf(Matrix value) { return push(std::move(value), {}, Backward(), "leaf"); }

namespace {
void axpy_into(Matrix& dst, double a, const Matrix& src) {
    kernels::active().axpy(dst.data(), a, src.data(), src.size());
}
} // namespace

Var Tape::add(Var a, Var b) {
    check(a, "add");
    check(b, "add");
    return push(scseg::add(nodes_[a.id].value, nodes_[b.id].value), {a.id, b.id},
                [](Tape& t, std::size_t self) {
                    const Matrix& g = t.nodes_[self].grad;
                    axpy_into(t.grad_ref(t.nodes_[self].parents[0]), 1.0, g);
                    axpy_into(t.grad_ref(t.nodes_[self].parents[1]), 1.0, g);
                },
                "add");
}

Var Tape::sub(Var a, Var b) {
    check(a, "sub");
    check(b, "sub");
    return push(scseg::sub(nodes_[a.id].value, nodes_[b.id].value), {a.id, b.id},
                [](Tape& t, std::size_t self) {
                    const Matrix& g = t.nodes_[self].grad;
                    axpy_into(t.grad_ref(t.nodes_[self].parents[0]), 1.0, g);
                    axpy_into(t.grad_ref(t.nodes_[self].parents[1]), -1.0, g);
                },
                "sub");
}

Var Tape::hadamard(Var a, Var b) {
    check(a, "hadamard");
    check(b, "hadamard");
    return push(scseg::hadamard(nodes_[a.id].value, nodes_[b.id].value), {a.id, b.id},
                [](Tape& t, std::size_t self) {
                    const auto& p = t.nodes_[self].parents;
                    const Matrix& g = t.nodes_[self].grad;
                    Matrix da = scseg::hadamard(g, t.nodes_[p[1]].value);
                    Matrix db = scseg::hadamard(g, t.nodes_[p[0]].value);
                    axpy_into(t.grad_ref(p[0]), 1.0, da);
                    axpy_into(t.grad_ref(p[1]), 1.0, db);
                },
                "hadamard");
}

Var Tape::scale(Var a, double s) {
    check(a, "scale");
    return push(scseg::scale(nodes_[a.id].value, s), {a.id},
                [s](Tape& t, std::size_t self) {
                    axpy_into(t.grad_ref(t.nodes_[self].parents[0]), s, t.nodes_[self].grad);
                },
                "scale");
}

Var Tape::matmul(Var a, Var b) {
    check(a, "matmul");
    check(b, "matmul");
    return push(scseg::matmul(nodes_[a.id].value, nodes_[b.id].value), {a.id, b.id},
                [](Tape& t, std::size_t self) {
                    const auto& p = t.nodes_[self].parents;
                    const Matrix& g = t.nodes_[self].grad;
                    Matrix da = scseg::matmul_nt(g, t.nodes_[p[1]].value);
                    Matrix db = scseg::matmul_tn(t.nodes_[p[0]].value, g);
                    axpy_into(t.grad_ref(p[0]), 1.0, da);
                    axpy_into(t.grad_ref(p[1]), 1.0, db);
                },
                "matmul");
}

Var Tape::matmul_nt(Var a, Var b) {
    check(a, "matmul_nt");
    check(b, "matmul_nt");
    return push(scseg::matmul_nt(nodes_[a.id].value, nodes_[b.id].value), {a.id, b.id},
                [](Tape& t, std::size_t self) {
                    const auto& p = t.nodes_[self].parents;
                    const Matrix& g = t.nodes_[self].grad;
                    Matrix da = scseg::matmul(g, t.nodes_[p[1]].value);
                    Matrix db = scseg::matmul_tn(g, t.nodes_[p[0]].value);
                    axpy_into(t.grad_ref(p[0]), 1.0, da);
                    axpy_into(t.grad_ref(p[1]), 1.0, db);
                },
                "matmul_nt");
}

Var Tape::add_rowvec(Var a, Var row) {
    check(a, "add_rowvec");
    check(row, "add_rowvec");
    return push(scseg::add_rowvec(nodes_[a.id].value, nodes_[row.id].value), {a.id, row.id},
                [](Tape& t, std::size_t self) {
                    const auto& p = t.nodes_[self].parents;
                    const Matrix& g = t.nodes_[self].grad;
                    axpy_into(t.grad_ref(p[0]), 1.0, g);
                    Matrix dr = scseg::col_sum(g);
                    axpy_into(t.grad_ref(p[1]), 1.0, dr);
                },
                "add_rowvec");
}

Var Tape::mean_rows(Var a) {
    check(a, "mean_rows");
    const std::size_t n = nodes_[a.id].value.rows();
    return push(scseg::mean_rows(nodes_[a.id].value), {a.id},
                [n](Tape& t, std::size_t self) {
                    const Matrix& g = t.nodes_[self].grad;
                    Matrix da = scseg::broadcast_row(g, n);
                    axpy_into(t.grad_ref(t.nodes_[self].parents[0]),
                              1.0 / static_cast<double>(n), da);
                },
                "mean_rows");
}

Var Tape::broadcast_row(Var row, std::size_t n) {
    check(row, "broadcast_row");
    return push(scseg::broadcast_row(nodes_[row.id].value, n), {row.id},
                [](Tape& t, std::size_t self) {
                    Matrix dr = scseg::col_sum(t.nodes_[self].grad);
                    axpy_into(t.grad_ref(t.nodes_[self].parents[0]), 1.0, dr);
                },
                "broadcast_row");
}

Var Tape::concat_cols(Var a, Var b) {
    check(a, "concat_cols");
    check(b, "concat_cols");
    const std::size_t ca = nodes_[a.id].value.cols();
    return push(scseg::concat_cols(nodes_[a.id].value, nodes_[b.id].value), {a.id, b.id},
                [ca](Tape& t, std::size_t self) {
                    const auto& p = t.nodes_[self].parents;
                    const Matrix& g = t.nodes_[self].grad;
                    Matrix da = scseg::slice_cols(g, 0, ca);
                    Matrix db = scseg::slice_cols(g, ca, g.cols());
                    axpy_into(t.grad_ref(p[0]), 1.0, da);
                    axpy_into(t.grad_ref(p[1]), 1.0, db);
                },
                "concat_cols");
}

Var Tape::slice_cols(Var a, std::size_t c0, std::size_t c1) {
    check(a, "slice_cols");
    return push(scseg::slice_cols(nodes_[a.id].value, c0, c1), {a.id},
                [c0, c1](Tape& t, std::size_t self) {
                    const Matrix& g = t.nodes_[self].grad;
                    Matrix& da = t.grad_ref(t.nodes_[self].parents[0]);
                    for (std::size_t i = 0; i < g.rows(); ++i)
                        kernels::active().axpy(da.row(i) + c0, 1.0, g.row(i), c1 - c0);
                },
                "slice_cols");
}

Var Tape::row_softmax(Var a, double divisor) {
    check(a, "row_softmax");
    return push(scseg::row_softmax(nodes_[a.id].value, divisor), {a.id},
                [divisor](Tape& t, std::size_t self) {
                    const Matrix& y = t.nodes_[self].value;
                    const Matrix& g = t.nodes_[self].grad;
                    Matrix& da = t.grad_ref(t.nodes_[self].parents[0]);
                    const auto& k = kernels::active();
                    for (std::size_t i = 0; i < y.rows(); ++i) {
                        const double gy = k.dot(g.row(i), y.row(i), y.cols());
                        for (std::size_t j = 0; j < y.cols(); ++j)
                            da.row(i)[j] +=
                                y.row(i)[j] * (g.row(i)[j] - gy) / divisor;
                    }
                },
                "row_softmax");
}

Var Tape::row_unit_normalize(Var a) {
    check(a, "row_unit_normalize");
    Matrix norms = scseg::row_norms(nodes_[a.id].value);
    return push(scseg::row_unit_normalize(nodes_[a.id].value), {a.id},
                [norms](Tape& t, std::size_t self) {
                    const Matrix& y = t.nodes_[self].value;
                    const Matrix& g = t.nodes_[self].grad;
                    Matrix& da = t.grad_ref(t.nodes_[self].parents[0]);
                    const auto& k = kernels::active();
                    for (std::size_t i = 0; i < y.rows(); ++i) {
                        const double gy = k.dot(g.row(i), y.row(i), y.cols());
                        const double inv = 1.0 / norms.at(i, 0);
                        for (std::size_t j = 0; j < y.cols(); ++j)
                            da.row(i)[j] += inv * (g.row(i)[j] - gy * y.row(i)[j]);
                    }
                },
                "row_unit_normalize");
}

Var Tape::sigmoid(Var a) {
    check(a, "sigmoid");
    return push(scseg::sigmoid(nodes_[a.id].value), {a.id},
                [](Tape& t, std::size_t self) {
                    const Matrix& y = t.nodes_[self].value;
                    const Matrix& g = t.nodes_[self].grad;
                    Matrix& da = t.grad_ref(t.nodes_[self].parents[0]);
                    for (std::size_t i = 0; i < y.size(); ++i)
                        da.data()[i] += g.data()[i] * y.data()[i] * (1.0 - y.data()[i]);
                },
                "sigmoid");
}

Var Tape::mean_all(Var a) {
    check(a, "mean_all");
    const std::size_t n = nodes_[a.id].value.size();
    Matrix out(1, 1);
    out.at(0, 0) = scseg::mean_all(nodes_[a.id].value);
    return push(std::move(out), {a.id},
                [n](Tape& t, std::size_t self) {
                    const double g = t.nodes_[self].grad.at(0, 0) / static_cast<double>(n);
                    Matrix& da = t.grad_ref(t.nodes_[self].parents[0]);
                    for (std::size_t i = 0; i < da.size(); ++i) da.data()[i] += g;
                },
                "mean_all");
}

Var Tape::bce_mean(Var probs, Matrix truth) {
    check(probs, "bce_mean");
    Matrix out(1, 1);
    out.at(0, 0) = scseg::bce_mean(nodes_[probs.id].value, truth);
    return push(std::move(out), {probs.id},
                [truth](Tape& t, std::size_t self) {
                    constexpr double eps = 1e-12;
                    const double g = t.nodes_[self].grad.at(0, 0);
                    const Matrix& p = t.nodes_[t.nodes_[self].parents[0]].value;
                    Matrix& dp = t.grad_ref(t.nodes_[self].parents[0]);
                    const double inv_n = 1.0 / static_cast<double>(p.size());
                    for (std::size_t i = 0; i < p.size(); ++i) {
                        const double pv = p.data()[i];
                        if (pv <= eps || pv >= 1.0 - eps) continue; // clamped: flat
                        dp.data()[i] +=
                            g * inv_n * (pv - truth.data()[i]) / (pv * (1.0 - pv));
                    }
                },
                "bce_mean");
}

Var Tape::im2col(Var x, std::size_t h, std::size_t w) {
    check(x, "im2col");
    return push(scseg::im2col(nodes_[x.id].value, h, w), {x.id},
                [h, w](Tape& t, std::size_t self) {
                    Matrix dx = scseg::col2im(t.nodes_[self].grad, h, w);
                    axpy_into(t.grad_ref(t.nodes_[self].parents[0]), 1.0, dx);
                },
                "im2col");
}

Var Tape::bilinear_resize(Var x, std::size_t h, std::size_t w, std::size_t oh,
                          std::size_t ow) {
    check(x, "bilinear_resize");
    const std::size_t c = nodes_[x.id].value.cols();
    Grid in(h, w, c, nodes_[x.id].value.storage());
    Matrix out = grid_to_matrix(scseg::bilinear_resize(in, oh, ow));
    return push(std::move(out), {x.id},
                [h, w, oh, ow, c](Tape& t, std::size_t self) {
                    Grid dg(oh, ow, c, t.nodes_[self].grad.storage());
                    Matrix dx = grid_to_matrix(scseg::bilinear_resize_adjoint(dg, h, w));
                    axpy_into(t.grad_ref(t.nodes_[self].parents[0]), 1.0, dx);
                },
                "bilinear_resize");
}

void Tape::backward(Var out) {
    check(out, "backward");
    const Node& o = nodes_[out.id];
    if (o.value.rows() != 1 || o.value.cols() != 1)
        throw ContractError("backward: output must be 1x1, got " + o.value.shape_str());
    for (auto& n : nodes_) {
        n.grad = Matrix(n.value.rows(), n.value.cols());
    }
    nodes_[out.id].grad.at(0, 0) = 1.0;
    ran_backward_ = true;
    for (std::size_t i = out.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.backward) n.backward(*this, i);
    }
}

} // namespace scseg
