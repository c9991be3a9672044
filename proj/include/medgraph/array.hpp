#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace medgraph {

// Dense row-major matrix of doubles. Scalars are 1x1, column vectors n x 1.
struct Array {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Array() = default;
    Array(int r, int c, double fill = 0.0) : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {
        if (r < 0 || c < 0) throw std::invalid_argument("Array: negative shape");
    }

    static Array scalar(double v) {
        Array a(1, 1);
        a.data[0] = v;
        return a;
    }
    static Array vector(const std::vector<double>& v) {
        Array a(static_cast<int>(v.size()), 1);
        a.data = v;
        return a;
    }

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    size_t size() const { return data.size(); }
    bool same_shape(const Array& o) const { return rows == o.rows && cols == o.cols; }
    bool is_scalar() const { return rows == 1 && cols == 1; }

    double item() const {
        if (!is_scalar()) throw std::runtime_error("Array::item on shape " + shape_str());
        return data[0];
    }

    std::string shape_str() const {
        return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
    }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (double x : data)
            if (!std::isfinite(x)) return false;
        return true;
    }

    double max_abs() const {
        double m = 0.0;
        for (double x : data) m = std::max(m, std::abs(x));
        return m;
    }
};

inline void check_same_shape(const Array& a, const Array& b, const char* op) {
    if (!a.same_shape(b))
        throw std::runtime_error(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

// C = A * B, naive but cache-friendly (ikj order).
inline Array matmul_value(const Array& a, const Array& b) {
    if (a.cols != b.rows)
        throw std::runtime_error("matmul: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Array c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = &a.data[static_cast<size_t>(i) * a.cols];
        double* crow = &c.data[static_cast<size_t>(i) * c.cols];
        for (int k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = &b.data[static_cast<size_t>(k) * b.cols];
            for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

inline Array transpose_value(const Array& a) {
    Array t(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

// Glorot-style uniform init, used for all weight matrices.
inline Array glorot_init(int rows, int cols, std::mt19937_64& rng) {
    double limit = std::sqrt(6.0 / (rows + cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Array a(rows, cols);
    for (double& x : a.data) x = dist(rng);
    return a;
}

}  // namespace medgraph
