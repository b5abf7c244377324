#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace ou {

// Dense row-major matrix of doubles. Weight matrices are stored out×in, so
// a row holds the fan-in of one output unit.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

    double* row(int r) { return a.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return a.data() + static_cast<size_t>(r) * cols; }

    size_t size() const { return a.size(); }
    void zero() { std::fill(a.begin(), a.end(), 0.0); }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

// y = W x for one vector x (len = W.cols), y len = W.rows.
inline void matvec(const Matrix& w, const double* x, double* y) {
    for (int o = 0; o < w.rows; ++o) {
        const double* wr = w.row(o);
        double acc = 0.0;
        for (int i = 0; i < w.cols; ++i) acc += wr[i] * x[i];
        y[o] = acc;
    }
}

// x += W^T y (gradient to the input of matvec).
inline void matvec_t_accum(const Matrix& w, const double* y, double* x) {
    for (int o = 0; o < w.rows; ++o) {
        const double g = y[o];
        if (g == 0.0) continue;
        const double* wr = w.row(o);
        for (int i = 0; i < w.cols; ++i) x[i] += wr[i] * g;
    }
}

// dW += y ⊗ x (gradient to the weights of matvec).
inline void outer_accum(Matrix& dw, const double* y, const double* x) {
    for (int o = 0; o < dw.rows; ++o) {
        const double g = y[o];
        if (g == 0.0) continue;
        double* wr = dw.row(o);
        for (int i = 0; i < dw.cols; ++i) wr[i] += g * x[i];
    }
}

}  // namespace ou
