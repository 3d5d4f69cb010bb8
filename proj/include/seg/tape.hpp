#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "seg/matrix.hpp"

namespace seg {

class Tape;

// Handle to a node recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Matrix& value() const;
    const Matrix& grad() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
};

// Reverse-mode autodiff tape. Each recorded operation carries its own
// hand-derived backward rule; backward() replays them in reverse order.
class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    struct Node {
        Matrix value;
        Matrix grad;
        std::vector<std::size_t> inputs;
        Backward backward;
        bool requires_grad = false;
        bool is_param = false;
        std::string name;
    };

    Var param(Matrix value, std::string name = {}) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = true;
        n.is_param = true;
        n.name = std::move(name);
        nodes_.push_back(std::move(n));
        params_.push_back(nodes_.size() - 1);
        return {this, nodes_.size() - 1};
    }

    Var constant(Matrix value) {
        Node n;
        n.value = std::move(value);
        nodes_.push_back(std::move(n));
        return {this, nodes_.size() - 1};
    }

    Var record(Matrix value, std::vector<Var> inputs, Backward fn) {
        Node n;
        n.value = std::move(value);
        for (const Var& v : inputs) {
            if (v.tape != this) throw std::logic_error("tape: operand recorded on a different tape");
            n.inputs.push_back(v.id);
            n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
        }
        if (n.requires_grad) n.backward = std::move(fn);
        nodes_.push_back(std::move(n));
        return {this, nodes_.size() - 1};
    }

    const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
    const Matrix& grad(std::size_t id) const { return nodes_.at(id).grad; }
    const Node& node(std::size_t id) const { return nodes_.at(id); }
    std::size_t size() const { return nodes_.size(); }
    const std::vector<std::size_t>& params() const { return params_; }

    // Gradient buffer of an input, or nullptr if it does not need one.
    Matrix* grad_of(std::size_t id) {
        Node& n = nodes_[id];
        return n.requires_grad ? &n.grad : nullptr;
    }
    const Matrix& grad_out(std::size_t self) const { return nodes_[self].grad; }
    std::size_t input(std::size_t self, std::size_t k) const { return nodes_[self].inputs[k]; }

    void backward(Var root) {
        if (root.tape != this) throw std::logic_error("tape: backward root from a different tape");
        const Matrix& rv = nodes_[root.id].value;
        if (rv.rows() != 1 || rv.cols() != 1) {
            throw DimensionError("backward: root must be scalar, got " + rv.shape());
        }
        for (Node& n : nodes_) {
            if (n.requires_grad) n.grad = Matrix(n.value.rows(), n.value.cols());
        }
        visit_order_.clear();
        if (!nodes_[root.id].requires_grad) return;
        nodes_[root.id].grad(0, 0) = 1.0;
        for (std::size_t i = root.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || !n.backward) continue;
            visit_order_.push_back(i);
            n.backward(*this, i);
        }
    }

    // Operation ids in the order the last backward() visited them.
    const std::vector<std::size_t>& visit_order() const { return visit_order_; }

    // Kink tracking: nonsmooth ops fold the side of their kink each input
    // lies on into a signature, so a checker can tell when a perturbation
    // crossed a nondifferentiable point.
    void track_kinks(bool on) { track_kinks_ = on; }
    bool tracking_kinks() const { return track_kinks_; }
    void note_kink_side(bool positive) {
        kink_sig_ ^= positive ? 0x9e3779b97f4a7c15ULL : 0x3c6ef372fe94f82bULL;
        kink_sig_ *= 0x100000001b3ULL;
    }
    std::uint64_t kink_signature() const { return kink_sig_; }

private:
    std::vector<Node> nodes_;
    std::vector<std::size_t> params_;
    std::vector<std::size_t> visit_order_;
    bool track_kinks_ = false;
    std::uint64_t kink_sig_ = 0xcbf29ce484222325ULL;
};

inline const Matrix& Var::value() const { return tape->value(id); }
inline const Matrix& Var::grad() const { return tape->grad(id); }

namespace detail {

inline Tape& same_tape(const Var& a, const Var& b) {
    if (a.tape == nullptr || a.tape != b.tape) throw std::logic_error("tape: operands on different tapes");
    return *a.tape;
}

inline void add_into(Matrix& dst, const Matrix& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <class F>
Var unary_elementwise(const Var& x, F f, std::function<double(double, double)> deriv, bool kink) {
    Tape& t = *x.tape;
    const Matrix& xv = x.value();
    Matrix out(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = f(xv[i]);
        if (kink && t.tracking_kinks()) t.note_kink_side(xv[i] > 0.0);
    }
    return t.record(std::move(out), {x}, [deriv](Tape& tp, std::size_t self) {
        const std::size_t in = tp.input(self, 0);
        Matrix* g = tp.grad_of(in);
        if (!g) return;
        const Matrix& xv = tp.value(in);
        const Matrix& yv = tp.value(self);
        const Matrix& go = tp.grad_out(self);
        for (std::size_t i = 0; i < xv.size(); ++i) (*g)[i] += go[i] * deriv(xv[i], yv[i]);
    });
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
    Tape& t = detail::same_tape(a, b);
    require_same_shape(a.value(), b.value(), "add");
    Matrix out = a.value();
    detail::add_into(out, b.value());
    return t.record(std::move(out), {a, b}, [](Tape& tp, std::size_t self) {
        const Matrix& go = tp.grad_out(self);
        for (std::size_t k = 0; k < 2; ++k)
            if (Matrix* g = tp.grad_of(tp.input(self, k))) detail::add_into(*g, go);
    });
}

inline Var sub(const Var& a, const Var& b) {
    Tape& t = detail::same_tape(a, b);
    require_same_shape(a.value(), b.value(), "sub");
    Matrix out = a.value();
    const Matrix& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return t.record(std::move(out), {a, b}, [](Tape& tp, std::size_t self) {
        const Matrix& go = tp.grad_out(self);
        if (Matrix* g = tp.grad_of(tp.input(self, 0))) detail::add_into(*g, go);
        if (Matrix* g = tp.grad_of(tp.input(self, 1)))
            for (std::size_t i = 0; i < go.size(); ++i) (*g)[i] -= go[i];
    });
}

// Hadamard product.
inline Var mul(const Var& a, const Var& b) {
    Tape& t = detail::same_tape(a, b);
    require_same_shape(a.value(), b.value(), "mul");
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    Matrix out(av.rows(), av.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return t.record(std::move(out), {a, b}, [](Tape& tp, std::size_t self) {
        const Matrix& go = tp.grad_out(self);
        const std::size_t ia = tp.input(self, 0);
        const std::size_t ib = tp.input(self, 1);
        const Matrix& av = tp.value(ia);
        const Matrix& bv = tp.value(ib);
        if (Matrix* g = tp.grad_of(ia))
            for (std::size_t i = 0; i < go.size(); ++i) (*g)[i] += go[i] * bv[i];
        if (Matrix* g = tp.grad_of(ib))
            for (std::size_t i = 0; i < go.size(); ++i) (*g)[i] += go[i] * av[i];
    });
}

// Hadamard product with a constant matrix.
inline Var mul_const(const Var& x, const Matrix& c) {
    require_same_shape(x.value(), c, "mul_const");
    const Matrix& xv = x.value();
    Matrix out(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * c[i];
    return x.tape->record(std::move(out), {x}, [c](Tape& tp, std::size_t self) {
        if (Matrix* g = tp.grad_of(tp.input(self, 0))) {
            const Matrix& go = tp.grad_out(self);
            for (std::size_t i = 0; i < go.size(); ++i) (*g)[i] += go[i] * c[i];
        }
    });
}

inline Var scale(const Var& x, double s) {
    const Matrix& xv = x.value();
    Matrix out(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * s;
    return x.tape->record(std::move(out), {x}, [s](Tape& tp, std::size_t self) {
        if (Matrix* g = tp.grad_of(tp.input(self, 0))) {
            const Matrix& go = tp.grad_out(self);
            for (std::size_t i = 0; i < go.size(); ++i) (*g)[i] += go[i] * s;
        }
    });
}

inline Var add_scalar(const Var& x, double s) {
    Matrix out = x.value();
    for (double& v : out.data()) v += s;
    return x.tape->record(std::move(out), {x}, [](Tape& tp, std::size_t self) {
        if (Matrix* g = tp.grad_of(tp.input(self, 0))) detail::add_into(*g, tp.grad_out(self));
    });
}

inline Var one_minus(const Var& x) { return add_scalar(scale(x, -1.0), 1.0); }

inline Var matmul(const Var& a, const Var& b) {
    Tape& t = detail::same_tape(a, b);
    Matrix out = matmul(a.value(), b.value());
    return t.record(std::move(out), {a, b}, [](Tape& tp, std::size_t self) {
        const Matrix& go = tp.grad_out(self);
        const std::size_t ia = tp.input(self, 0);
        const std::size_t ib = tp.input(self, 1);
        const Matrix& av = tp.value(ia);
        const Matrix& bv = tp.value(ib);
        if (Matrix* g = tp.grad_of(ia)) {
            // dA = dOut * B^T
            for (std::size_t i = 0; i < av.rows(); ++i)
                for (std::size_t k = 0; k < av.cols(); ++k)
                    (*g)(i, k) += dot(go.row(i), bv.row(k));
        }
        if (Matrix* g = tp.grad_of(ib)) {
            // dB = A^T * dOut
            for (std::size_t i = 0; i < av.rows(); ++i) {
                auto gorow = go.row(i);
                for (std::size_t k = 0; k < av.cols(); ++k) {
                    const double aik = av(i, k);
                    if (aik == 0.0) continue;
                    auto grow = g->row(k);
                    for (std::size_t j = 0; j < bv.cols(); ++j) grow[j] += aik * gorow[j];
                }
            }
        }
    });
}

// x + r with the 1xC row vector r broadcast over rows.
inline Var add_row(const Var& x, const Var& r) {
    Tape& t = detail::same_tape(x, r);
    const Matrix& xv = x.value();
    const Matrix& rv = r.value();
    if (rv.rows() != 1 || rv.cols() != xv.cols())
        throw DimensionError("add_row: shape mismatch " + xv.shape() + " vs " + rv.shape());
    Matrix out = xv;
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += rv[j];
    return t.record(std::move(out), {x, r}, [](Tape& tp, std::size_t self) {
        const Matrix& go = tp.grad_out(self);
        if (Matrix* g = tp.grad_of(tp.input(self, 0))) detail::add_into(*g, go);
        if (Matrix* g = tp.grad_of(tp.input(self, 1)))
            for (std::size_t i = 0; i < go.rows(); ++i)
                for (std::size_t j = 0; j < go.cols(); ++j) (*g)[j] += go(i, j);
    });
}

// x ⊙ r with the 1xC row vector r broadcast over rows.
inline Var mul_row(const Var& x, const Var& r) {
    Tape& t = detail::same_tape(x, r);
    const Matrix& xv = x.value();
    const Matrix& rv = r.value();
    if (rv.rows() != 1 || rv.cols() != xv.cols())
        throw DimensionError("mul_row: shape mismatch " + xv.shape() + " vs " + rv.shape());
    Matrix out = xv;
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) *= rv[j];
    return t.record(std::move(out), {x, r}, [](Tape& tp, std::size_t self) {
        const Matrix& go = tp.grad_out(self);
        const std::size_t ix = tp.input(self, 0);
        const std::size_t ir = tp.input(self, 1);
        const Matrix& xv = tp.value(ix);
        const Matrix& rv = tp.value(ir);
        if (Matrix* g = tp.grad_of(ix))
            for (std::size_t i = 0; i < go.rows(); ++i)
                for (std::size_t j = 0; j < go.cols(); ++j) (*g)(i, j) += go(i, j) * rv[j];
        if (Matrix* g = tp.grad_of(ir))
            for (std::size_t i = 0; i < go.rows(); ++i)
                for (std::size_t j = 0; j < go.cols(); ++j) (*g)[j] += go(i, j) * xv(i, j);
    });
}

// s * x for a 1x1 variable s.
inline Var scalar_mul(const Var& s, const Var& x) {
    Tape& t = detail::same_tape(s, x);
    const Matrix& sv = s.value();
    if (sv.rows() != 1 || sv.cols() != 1)
        throw DimensionError("scalar_mul: expected 1x1 scale, got " + sv.shape());
    Matrix out = x.value();
    for (double& v : out.data()) v *= sv[0];
    return t.record(std::move(out), {s, x}, [](Tape& tp, std::size_t self) {
        const Matrix& go = tp.grad_out(self);
        const std::size_t is = tp.input(self, 0);
        const std::size_t ix = tp.input(self, 1);
        const double sv = tp.value(is)[0];
        if (Matrix* g = tp.grad_of(is)) (*g)[0] += dot(go.data(), tp.value(ix).data());
        if (Matrix* g = tp.grad_of(ix))
            for (std::size_t i = 0; i < go.size(); ++i) (*g)[i] += go[i] * sv;
    });
}

inline Var relu(const Var& x) {
    return detail::unary_elementwise(
        x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; }, true);
}

inline Var leaky_relu(const Var& x, double slope) {
    return detail::unary_elementwise(
        x, [slope](double v) { return v > 0.0 ? v : slope * v; },
        [slope](double v, double) { return v > 0.0 ? 1.0 : slope; }, true);
}

inline Var sigmoid(const Var& x) {
    return detail::unary_elementwise(
        x,
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); }, false);
}

inline Var concat_cols(const Var& a, const Var& b) {
    Tape& t = detail::same_tape(a, b);
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.rows() != bv.rows())
        throw DimensionError("concat_cols: row mismatch " + av.shape() + " vs " + bv.shape());
    Matrix out(av.rows(), av.cols() + bv.cols());
    for (std::size_t i = 0; i < av.rows(); ++i) {
        auto o = out.row(i);
        std::copy(av.row(i).begin(), av.row(i).end(), o.begin());
        std::copy(bv.row(i).begin(), bv.row(i).end(), o.begin() + static_cast<std::ptrdiff_t>(av.cols()));
    }
    const std::size_t split = av.cols();
    return t.record(std::move(out), {a, b}, [split](Tape& tp, std::size_t self) {
        const Matrix& go = tp.grad_out(self);
        if (Matrix* g = tp.grad_of(tp.input(self, 0)))
            for (std::size_t i = 0; i < go.rows(); ++i)
                for (std::size_t j = 0; j < split; ++j) (*g)(i, j) += go(i, j);
        if (Matrix* g = tp.grad_of(tp.input(self, 1)))
            for (std::size_t i = 0; i < go.rows(); ++i)
                for (std::size_t j = split; j < go.cols(); ++j) (*g)(i, j - split) += go(i, j);
    });
}

// Row selection; repeated indices accumulate on the way back.
inline Var gather_rows(const Var& x, std::vector<std::size_t> idx) {
    const Matrix& xv = x.value();
    Matrix out(idx.size(), xv.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= xv.rows())
            throw DimensionError("gather_rows: index " + std::to_string(idx[i]) + " out of range for " +
                                 xv.shape());
        std::copy(xv.row(idx[i]).begin(), xv.row(idx[i]).end(), out.row(i).begin());
    }
    return x.tape->record(std::move(out), {x}, [idx = std::move(idx)](Tape& tp, std::size_t self) {
        Matrix* g = tp.grad_of(tp.input(self, 0));
        if (!g) return;
        const Matrix& go = tp.grad_out(self);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            auto grow = g->row(idx[i]);
            auto gorow = go.row(i);
            for (std::size_t j = 0; j < go.cols(); ++j) grow[j] += gorow[j];
        }
    });
}

// Row-wise L1 distance, shape rows x 1.
inline Var row_l1(const Var& a, const Var& b) {
    Tape& t = detail::same_tape(a, b);
    require_same_shape(a.value(), b.value(), "l1_distance");
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    Matrix out(av.rows(), 1);
    for (std::size_t i = 0; i < av.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < av.cols(); ++j) {
            const double d = av(i, j) - bv(i, j);
            s += std::abs(d);
            if (t.tracking_kinks()) t.note_kink_side(d > 0.0);
        }
        out(i, 0) = s;
    }
    return t.record(std::move(out), {a, b}, [](Tape& tp, std::size_t self) {
        const Matrix& go = tp.grad_out(self);
        const std::size_t ia = tp.input(self, 0);
        const std::size_t ib = tp.input(self, 1);
        const Matrix& av = tp.value(ia);
        const Matrix& bv = tp.value(ib);
        Matrix* ga = tp.grad_of(ia);
        Matrix* gb = tp.grad_of(ib);
        for (std::size_t i = 0; i < av.rows(); ++i) {
            const double gi = go(i, 0);
            if (gi == 0.0) continue;
            for (std::size_t j = 0; j < av.cols(); ++j) {
                const double d = av(i, j) - bv(i, j);
                const double sg = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                if (ga) (*ga)(i, j) += gi * sg;
                if (gb) (*gb)(i, j) -= gi * sg;
            }
        }
    });
}

// Row-wise cosine, shape rows x 1. Zero rows give 0 with zero gradient.
// Each row divided by its L2 norm; zero rows stay zero.
inline Var row_normalize(const Var& x) {
    Tape& t = *x.tape;
    Matrix out = x.value();
    for (std::size_t i = 0; i < out.rows(); ++i) {
        const double n = l2_norm(out.row(i));
        if (n == 0.0) continue;
        for (double& v : out.row(i)) v /= n;
    }
    return t.record(std::move(out), {x}, [](Tape& tp, std::size_t self) {
        const std::size_t ix = tp.input(self, 0);
        Matrix* gx = tp.grad_of(ix);
        if (!gx) return;
        const Matrix& xv = tp.value(ix);
        const Matrix& yv = tp.value(self);
        const Matrix& go = tp.grad_out(self);
        for (std::size_t i = 0; i < xv.rows(); ++i) {
            const double n = l2_norm(xv.row(i));
            if (n == 0.0) continue;
            const double yg = dot(yv.row(i), go.row(i));
            for (std::size_t j = 0; j < xv.cols(); ++j) (*gx)(i, j) += (go(i, j) - yv(i, j) * yg) / n;
        }
    });
}

inline Var row_cosine(const Var& a, const Var& b) {
    Tape& t = detail::same_tape(a, b);
    require_same_shape(a.value(), b.value(), "cosine");
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    Matrix out(av.rows(), 1);
    for (std::size_t i = 0; i < av.rows(); ++i) {
        const double na = l2_norm(av.row(i));
        const double nb = l2_norm(bv.row(i));
        out(i, 0) = (na == 0.0 || nb == 0.0) ? 0.0 : dot(av.row(i), bv.row(i)) / (na * nb);
    }
    return t.record(std::move(out), {a, b}, [](Tape& tp, std::size_t self) {
        const Matrix& go = tp.grad_out(self);
        const std::size_t ia = tp.input(self, 0);
        const std::size_t ib = tp.input(self, 1);
        const Matrix& av = tp.value(ia);
        const Matrix& bv = tp.value(ib);
        const Matrix& yv = tp.value(self);
        Matrix* ga = tp.grad_of(ia);
        Matrix* gb = tp.grad_of(ib);
        for (std::size_t i = 0; i < av.rows(); ++i) {
            const double na = l2_norm(av.row(i));
            const double nb = l2_norm(bv.row(i));
            if (na == 0.0 || nb == 0.0) continue;
            const double c = yv(i, 0);
            const double gi = go(i, 0);
            for (std::size_t j = 0; j < av.cols(); ++j) {
                if (ga) (*ga)(i, j) += gi * (bv(i, j) / (na * nb) - c * av(i, j) / (na * na));
                if (gb) (*gb)(i, j) += gi * (av(i, j) / (na * nb) - c * bv(i, j) / (nb * nb));
            }
        }
    });
}

inline Var sum(const Var& x) {
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    return x.tape->record(Matrix::scalar(s), {x}, [](Tape& tp, std::size_t self) {
        Matrix* g = tp.grad_of(tp.input(self, 0));
        if (!g) return;
        const double go = tp.grad_out(self)[0];
        for (double& v : g->data()) v += go;
    });
}

}  // namespace seg
