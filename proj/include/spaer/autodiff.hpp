#pragma once

#include "spaer/errors.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

// Minimal reverse-mode differentiation over dense float64 matrices. Only the
// operations the attention stack needs are provided.

namespace spaer::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    [[nodiscard]] const Matrix& value() const;
    [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
    [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
};

class Tape {
public:
    Var leaf(Matrix value) { return push(std::move(value), {}); }

    [[nodiscard]] const Matrix& value(Var v) const { return nodes_[v.id].value; }
    [[nodiscard]] const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
    [[nodiscard]] std::size_t size() const { return nodes_.size(); }

    Var matmul(Var a, Var b) {
        check(a.cols() == b.rows(), "matmul");
        return push(value(a) * value(b), [a, b](Tape& t, const Matrix& g) {
            t.accumulate(a, g * t.value(b).transpose());
            t.accumulate(b, t.value(a).transpose() * g);
        });
    }

    Var transpose(Var a) {
        return push(value(a).transpose(), [a](Tape& t, const Matrix& g) { t.accumulate(a, g.transpose()); });
    }

    Var add(Var a, Var b) {
        check(same_shape(a, b), "add");
        return push(value(a) + value(b), [a, b](Tape& t, const Matrix& g) {
            t.accumulate(a, g);
            t.accumulate(b, g);
        });
    }

    Var sub(Var a, Var b) {
        check(same_shape(a, b), "sub");
        return push(value(a) - value(b), [a, b](Tape& t, const Matrix& g) {
            t.accumulate(a, g);
            t.accumulate(b, -g);
        });
    }

    Var hadamard(Var a, Var b) {
        check(same_shape(a, b), "hadamard");
        return push(value(a).cwiseProduct(value(b)), [a, b](Tape& t, const Matrix& g) {
            t.accumulate(a, g.cwiseProduct(t.value(b)));
            t.accumulate(b, g.cwiseProduct(t.value(a)));
        });
    }

    Var scale(Var a, double s) {
        return push(value(a) * s, [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
    }

    /// Multiplies column j of `a` by s(0, j); s is a 1 x cols row vector.
    Var scale_columns(Var a, Var s) {
        check(value(s).rows() == 1 && value(s).cols() == a.cols(), "scale_columns");
        Matrix out = value(a);
        for (Eigen::Index j = 0; j < out.cols(); ++j) out.col(j) *= value(s)(0, j);
        return push(std::move(out), [a, s](Tape& t, const Matrix& g) {
            Matrix ga = g;
            Matrix gs(1, g.cols());
            for (Eigen::Index j = 0; j < g.cols(); ++j) {
                ga.col(j) *= t.value(s)(0, j);
                gs(0, j) = g.col(j).dot(t.value(a).col(j));
            }
            t.accumulate(a, ga);
            t.accumulate(s, gs);
        });
    }

    Var slice_columns(Var a, Eigen::Index start, Eigen::Index count) {
        check(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_columns");
        return push(value(a).middleCols(start, count), [a, start, count](Tape& t, const Matrix& g) {
            Matrix ga = Matrix::Zero(t.value(a).rows(), t.value(a).cols());
            ga.middleCols(start, count) = g;
            t.accumulate(a, ga);
        });
    }

    Var hconcat(const std::vector<Var>& parts) {
        check(!parts.empty(), "hconcat");
        Eigen::Index cols = 0;
        for (Var p : parts) {
            check(p.rows() == parts.front().rows(), "hconcat");
            cols += p.cols();
        }
        Matrix out(parts.front().rows(), cols);
        Eigen::Index at = 0;
        for (Var p : parts) {
            out.middleCols(at, p.cols()) = value(p);
            at += p.cols();
        }
        return push(std::move(out), [parts](Tape& t, const Matrix& g) {
            Eigen::Index offset = 0;
            for (Var p : parts) {
                const Eigen::Index c = t.value(p).cols();
                t.accumulate(p, g.middleCols(offset, c));
                offset += c;
            }
        });
    }

    /// Row-wise softmax with max subtraction.
    Var softmax_rows(Var a) {
        const Matrix& x = value(a);
        Matrix y(x.rows(), x.cols());
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            const double m = x.row(r).maxCoeff();
            y.row(r) = (x.row(r).array() - m).exp().matrix();
            y.row(r) /= y.row(r).sum();
        }
        const std::size_t out_id = nodes_.size();
        return push(std::move(y), [a, out_id](Tape& t, const Matrix& g) {
            const Matrix& yv = t.nodes_[out_id].value;
            Matrix ga(yv.rows(), yv.cols());
            for (Eigen::Index r = 0; r < yv.rows(); ++r) {
                const double inner = g.row(r).dot(yv.row(r));
                ga.row(r) = yv.row(r).cwiseProduct((g.row(r).array() - inner).matrix());
            }
            t.accumulate(a, ga);
        });
    }

    /// Exact GELU: x * Phi(x).
    Var gelu(Var a) {
        const Matrix& x = value(a);
        Matrix y = x.unaryExpr([](double v) { return v * normal_cdf(v); });
        return push(std::move(y), [a](Tape& t, const Matrix& g) {
            const Matrix d = t.value(a).unaryExpr([](double v) { return normal_cdf(v) + v * normal_pdf(v); });
            t.accumulate(a, g.cwiseProduct(d));
        });
    }

    /// 1 x 1 sum of all entries.
    Var sum(Var a) {
        Matrix out(1, 1);
        out(0, 0) = value(a).sum();
        return push(std::move(out), [a](Tape& t, const Matrix& g) {
            t.accumulate(a, Matrix::Constant(t.value(a).rows(), t.value(a).cols(), g(0, 0)));
        });
    }

    /// 1 x 1 sum of squared entries.
    Var sum_squares(Var a) {
        Matrix out(1, 1);
        out(0, 0) = value(a).squaredNorm();
        return push(std::move(out), [a](Tape& t, const Matrix& g) { t.accumulate(a, 2.0 * g(0, 0) * t.value(a)); });
    }

    /// Back-propagates from a 1 x 1 node. Gradients of every node are reset first.
    void backward(Var out) {
        check(out.rows() == 1 && out.cols() == 1, "backward needs a scalar output");
        for (auto& n : nodes_) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
        nodes_[out.id].grad(0, 0) = 1.0;
        for (std::size_t i = out.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.backward) n.backward(*this, n.grad);
        }
    }

private:
    using Backward = std::function<void(Tape&, const Matrix&)>;

    struct Node {
        Matrix value;
        Matrix grad;
        Backward backward;
    };

    static double normal_cdf(double v) { return 0.5 * std::erfc(-v * std::numbers::sqrt2 / 2.0); }
    static double normal_pdf(double v) { return std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi); }

    static void check(bool ok, const char* what) {
        if (!ok) throw ShapeMismatch(std::string("shape mismatch in ") + what);
    }
    bool same_shape(Var a, Var b) const { return a.rows() == b.rows() && a.cols() == b.cols(); }

    Var push(Matrix value, Backward backward) {
        nodes_.push_back(Node{std::move(value), Matrix(), std::move(backward)});
        return Var{this, nodes_.size() - 1};
    }

    void accumulate(Var v, const Matrix& g) { nodes_[v.id].grad += g; }

    std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(*this); }

struct GradientResult {
    double loss = 0.0;
    std::vector<Matrix> grads; ///< one per parameter, same shapes
};

using LossFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Evaluates loss_fn on leaves holding `params` and returns d loss / d params.
inline GradientResult gradient(const LossFn& loss_fn, const std::vector<Matrix>& params) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (const auto& p : params) leaves.push_back(tape.leaf(p));
    const Var loss = loss_fn(tape, leaves);
    tape.backward(loss);
    GradientResult out;
    out.loss = loss.value()(0, 0);
    out.grads.reserve(params.size());
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        const Matrix& g = tape.grad(leaves[i]);
        if (!g.allFinite()) throw NonFiniteGradient("gradient of parameter tensor " + std::to_string(i) + " is not finite");
        out.grads.push_back(g);
    }
    return out;
}

} // namespace spaer::ad
