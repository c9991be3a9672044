#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "medgraph/array.hpp"

namespace medgraph {

// Handle into the tape. Cheap to copy; only valid for the tape that made it.
struct Var {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

namespace detail {

inline double stable_sigmoid(double x) {
    if (x >= 0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

inline double stable_softplus(double x) {
    // log(1 + e^x) without overflow
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

// phi(x) = expm1(x)/x, phi(0) = 1; the normalized integral kernel of the
// exp-affine intensity. Series branch keeps the w_t -> 0 limit exact.
inline double phi(double x) {
    if (std::abs(x) < 1e-5) return 1.0 + x / 2.0 + x * x / 6.0;
    return std::expm1(x) / x;
}

inline double phi_prime(double x) {
    if (std::abs(x) < 1e-4) return 0.5 + x / 3.0 + x * x / 8.0;
    return (std::exp(x) * (x - 1.0) + 1.0) / (x * x);
}

}  // namespace detail

// Reverse-mode tape over dense arrays. Rebuilt per minibatch; single-threaded.
class Tape {
  public:
    struct Node {
        Array val;
        Array grad;
        std::function<void(Tape&)> back;  // empty for leaves
    };

    std::vector<Node> nodes;

    void clear() { nodes.clear(); }
    size_t size() const { return nodes.size(); }

    Var leaf(Array v) {
        if (!v.all_finite()) throw std::runtime_error("tape leaf: non-finite value");
        return push(std::move(v), {});
    }

    const Array& val(Var x) const { return nodes[x.idx].val; }
    Array& grad(Var x) { return nodes[x.idx].grad; }

    // ---- primitives ----

    Var matmul(Var a, Var b) {
        Array out = matmul_value(val(a), val(b));
        return push(std::move(out), [a, b, o = next_idx()](Tape& t) {
            const Array& g = t.nodes[o].grad;
            // dA = g * B^T, dB = A^T * g
            accumulate(t.grad(a), matmul_value(g, transpose_value(t.val(b))));
            accumulate(t.grad(b), matmul_value(transpose_value(t.val(a)), g));
        });
    }

    Var transpose(Var a) {
        return push(transpose_value(val(a)), [a, o = next_idx()](Tape& t) {
            accumulate(t.grad(a), transpose_value(t.nodes[o].grad));
        });
    }

    Var add(Var a, Var b) {
        check_same_shape(val(a), val(b), "add");
        Array out = val(a);
        const Array& bv = val(b);
        for (size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
        return push(std::move(out), [a, b, o = next_idx()](Tape& t) {
            accumulate(t.grad(a), t.nodes[o].grad);
            accumulate(t.grad(b), t.nodes[o].grad);
        });
    }

    Var sub(Var a, Var b) {
        check_same_shape(val(a), val(b), "sub");
        Array out = val(a);
        const Array& bv = val(b);
        for (size_t i = 0; i < out.size(); ++i) out.data[i] -= bv.data[i];
        return push(std::move(out), [a, b, o = next_idx()](Tape& t) {
            const Array& g = t.nodes[o].grad;
            accumulate(t.grad(a), g);
            Array& gb = t.grad(b);
            for (size_t i = 0; i < g.size(); ++i) gb.data[i] -= g.data[i];
        });
    }

    Var mul(Var a, Var b) {
        check_same_shape(val(a), val(b), "mul");
        Array out = val(a);
        const Array& bv = val(b);
        for (size_t i = 0; i < out.size(); ++i) out.data[i] *= bv.data[i];
        return push(std::move(out), [a, b, o = next_idx()](Tape& t) {
            const Array& g = t.nodes[o].grad;
            const Array& av = t.val(a);
            const Array& bv2 = t.val(b);
            Array& ga = t.grad(a);
            Array& gb = t.grad(b);
            for (size_t i = 0; i < g.size(); ++i) {
                ga.data[i] += g.data[i] * bv2.data[i];
                gb.data[i] += g.data[i] * av.data[i];
            }
        });
    }

    Var scale(Var a, double s) {
        Array out = val(a);
        for (double& x : out.data) x *= s;
        return push(std::move(out), [a, s, o = next_idx()](Tape& t) {
            const Array& g = t.nodes[o].grad;
            Array& ga = t.grad(a);
            for (size_t i = 0; i < g.size(); ++i) ga.data[i] += s * g.data[i];
        });
    }

    Var add_const(Var a, double c) {
        Array out = val(a);
        for (double& x : out.data) x += c;
        return push(std::move(out), [a, o = next_idx()](Tape& t) {
            accumulate(t.grad(a), t.nodes[o].grad);
        });
    }

    Var exp(Var a) {
        Array out = val(a);
        for (double& x : out.data) x = std::exp(x);
        if (!out.all_finite()) throw std::runtime_error("exp: overflow to non-finite value");
        return push(std::move(out), [a, o = next_idx()](Tape& t) {
            const Array& g = t.nodes[o].grad;
            const Array& y = t.nodes[o].val;
            Array& ga = t.grad(a);
            for (size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * y.data[i];
        });
    }

    Var log(Var a) {
        Array out = val(a);
        for (double& x : out.data) x = std::log(x);
        return push(std::move(out), [a, o = next_idx()](Tape& t) {
            const Array& g = t.nodes[o].grad;
            const Array& xv = t.val(a);
            Array& ga = t.grad(a);
            for (size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] / xv.data[i];
        });
    }

    Var sqrt(Var a) {
        Array out = val(a);
        for (double& x : out.data) x = std::sqrt(x);
        return push(std::move(out), [a, o = next_idx()](Tape& t) {
            const Array& g = t.nodes[o].grad;
            const Array& y = t.nodes[o].val;
            Array& ga = t.grad(a);
            for (size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * 0.5 / y.data[i];
        });
    }

    // subgradient at 0 is 0
    Var relu(Var a) {
        Array out = val(a);
        for (double& x : out.data) x = x > 0 ? x : 0.0;
        return push(std::move(out), [a, o = next_idx()](Tape& t) {
            const Array& g = t.nodes[o].grad;
            const Array& xv = t.val(a);
            Array& ga = t.grad(a);
            for (size_t i = 0; i < g.size(); ++i)
                if (xv.data[i] > 0) ga.data[i] += g.data[i];
        });
    }

    // alpha = 1
    Var elu(Var a) {
        Array out = val(a);
        for (double& x : out.data) x = x >= 0 ? x : std::expm1(x);
        return push(std::move(out), [a, o = next_idx()](Tape& t) {
            const Array& g = t.nodes[o].grad;
            const Array& xv = t.val(a);
            Array& ga = t.grad(a);
            for (size_t i = 0; i < g.size(); ++i) {
                double d = xv.data[i] >= 0 ? 1.0 : std::exp(xv.data[i]);
                ga.data[i] += g.data[i] * d;
            }
        });
    }

    // elu(x) + 1; the negative branch evaluates exp(x) directly so the
    // result stays strictly positive instead of rounding to zero
    Var elu_plus_one(Var a) {
        Array out = val(a);
        for (double& x : out.data) x = x >= 0 ? x + 1.0 : std::exp(x);
        return push(std::move(out), [a, o = next_idx()](Tape& t) {
            const Array& g = t.nodes[o].grad;
            const Array& xv = t.val(a);
            Array& ga = t.grad(a);
            for (size_t i = 0; i < g.size(); ++i) {
                double d = xv.data[i] >= 0 ? 1.0 : std::exp(xv.data[i]);
                ga.data[i] += g.data[i] * d;
            }
        });
    }

    Var sigmoid(Var a) {
        Array out = val(a);
        for (double& x : out.data) x = detail::stable_sigmoid(x);
        return push(std::move(out), [a, o = next_idx()](Tape& t) {
            const Array& g = t.nodes[o].grad;
            const Array& y = t.nodes[o].val;
            Array& ga = t.grad(a);
            for (size_t i = 0; i < g.size(); ++i)
                ga.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
        });
    }

    Var softplus(Var a) {
        Array out = val(a);
        for (double& x : out.data) x = detail::stable_softplus(x);
        return push(std::move(out), [a, o = next_idx()](Tape& t) {
            const Array& g = t.nodes[o].grad;
            const Array& xv = t.val(a);
            Array& ga = t.grad(a);
            for (size_t i = 0; i < g.size(); ++i)
                ga.data[i] += g.data[i] * detail::stable_sigmoid(xv.data[i]);
        });
    }

    // column vector -> probability vector
    Var softmax(Var a) {
        const Array& xv = val(a);
        if (xv.cols != 1) throw std::runtime_error("softmax: expected column vector, got " + xv.shape_str());
        Array out = xv;
        double mx = *std::max_element(out.data.begin(), out.data.end());
        double z = 0.0;
        for (double& x : out.data) {
            x = std::exp(x - mx);
            z += x;
        }
        for (double& x : out.data) x /= z;
        return push(std::move(out), [a, o = next_idx()](Tape& t) {
            const Array& g = t.nodes[o].grad;
            const Array& y = t.nodes[o].val;
            double gy = 0.0;
            for (size_t i = 0; i < g.size(); ++i) gy += g.data[i] * y.data[i];
            Array& ga = t.grad(a);
            for (size_t i = 0; i < g.size(); ++i)
                ga.data[i] += y.data[i] * (g.data[i] - gy);
        });
    }

    Var sum(Var a) {
        double s = 0.0;
        for (double x : val(a).data) s += x;
        return push(Array::scalar(s), [a, o = next_idx()](Tape& t) {
            double g = t.nodes[o].grad.data[0];
            Array& ga = t.grad(a);
            for (double& x : ga.data) x += g;
        });
    }

    // stack two column vectors
    Var concat(Var a, Var b) {
        const Array& av = val(a);
        const Array& bv = val(b);
        if (av.cols != 1 || bv.cols != 1)
            throw std::runtime_error("concat: expected column vectors, got " + av.shape_str() + " and " + bv.shape_str());
        Array out(av.rows + bv.rows, 1);
        std::copy(av.data.begin(), av.data.end(), out.data.begin());
        std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + av.rows);
        int na = av.rows;
        return push(std::move(out), [a, b, na, o = next_idx()](Tape& t) {
            const Array& g = t.nodes[o].grad;
            Array& ga = t.grad(a);
            Array& gb = t.grad(b);
            for (int i = 0; i < na; ++i) ga.data[i] += g.data[i];
            for (size_t i = na; i < g.size(); ++i) gb.data[i - na] += g.data[i];
        });
    }

    // contiguous rows [start, start+len) of a column vector
    Var slice(Var a, int start, int len) {
        const Array& av = val(a);
        if (av.cols != 1 || start < 0 || len < 0 || start + len > av.rows)
            throw std::runtime_error("slice: bad range [" + std::to_string(start) + ", " +
                                     std::to_string(start + len) + ") of " + av.shape_str());
        Array out(len, 1);
        std::copy(av.data.begin() + start, av.data.begin() + start + len, out.data.begin());
        return push(std::move(out), [a, start, len, o = next_idx()](Tape& t) {
            const Array& g = t.nodes[o].grad;
            Array& ga = t.grad(a);
            for (int i = 0; i < len; ++i) ga.data[start + i] += g.data[i];
        });
    }

    // clamp with straight-through gradient inside (lo, hi), zero outside
    Var clip(Var a, double lo, double hi) {
        Array out = val(a);
        for (double& x : out.data) x = std::min(std::max(x, lo), hi);
        return push(std::move(out), [a, lo, hi, o = next_idx()](Tape& t) {
            const Array& g = t.nodes[o].grad;
            const Array& xv = t.val(a);
            Array& ga = t.grad(a);
            for (size_t i = 0; i < g.size(); ++i)
                if (xv.data[i] > lo && xv.data[i] < hi) ga.data[i] += g.data[i];
        });
    }

    Var dot(Var a, Var b) { return sum(mul(a, b)); }

    Var squared_norm(Var a) { return sum(mul(a, a)); }

    // log f*(t_last + delta) for the exp-affine intensity
    //   lambda*(t) = exp(a + w (t - t_last) + b), with a, w, b scalar nodes.
    // Closed form: a + b + w*delta - exp(a+b) * delta * phi(w*delta),
    // which is exact for all w including the w -> 0 constant-intensity limit.
    Var pp_log_density(Var a, Var w, Var b, double delta) {
        double av = val(a).item(), wv = val(w).item(), bv = val(b).item();
        double eab = std::exp(av + bv);
        double x = wv * delta;
        double out = av + bv + wv * delta - eab * delta * detail::phi(x);
        return push(Array::scalar(out), [a, w, b, delta, o = next_idx()](Tape& t) {
            double g = t.nodes[o].grad.data[0];
            double av2 = t.val(a).item(), wv2 = t.val(w).item(), bv2 = t.val(b).item();
            double eab2 = std::exp(av2 + bv2);
            double x2 = wv2 * delta;
            double dab = 1.0 - eab2 * delta * detail::phi(x2);
            double dw = delta - eab2 * delta * delta * detail::phi_prime(x2);
            t.grad(a).data[0] += g * dab;
            t.grad(b).data[0] += g * dab;
            t.grad(w).data[0] += g * dw;
        });
    }

    // ---- reverse sweep ----

    void zero_grad() {
        for (auto& n : nodes) n.grad.fill(0.0);
    }

    void backward(Var loss) {
        const Array& lv = val(loss);
        if (!lv.is_scalar()) throw std::runtime_error("backward: loss must be scalar, got " + lv.shape_str());
        if (!std::isfinite(lv.item())) throw std::runtime_error("backward: non-finite loss");
        zero_grad();
        nodes[loss.idx].grad.data[0] = 1.0;
        for (int i = loss.idx; i >= 0; --i)
            if (nodes[i].back) nodes[i].back(*this);
    }

  private:
    int next_idx() const { return static_cast<int>(nodes.size()); }

    Var push(Array v, std::function<void(Tape&)> back) {
        Node n;
        n.grad = Array(v.rows, v.cols);
        n.val = std::move(v);
        n.back = std::move(back);
        nodes.push_back(std::move(n));
        return Var{static_cast<int>(nodes.size()) - 1};
    }

    static void accumulate(Array& dst, const Array& src) {
        check_same_shape(dst, src, "grad accumulate");
        for (size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
    }
};

}  // namespace medgraph
