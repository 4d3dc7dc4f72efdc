#pragma once

#include <cstddef>
#include <vector>

#include "dmn/errors.hpp"

namespace dmn {

// Dense row-major matrix of doubles. The storage type for density matrices,
// filter banks and network weights.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }

    std::size_t size() const { return data.size(); }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

// Eigendecomposition of a symmetric matrix. Eigenvalues sorted descending,
// eigenvectors stored as columns of an orthonormal matrix, sign fixed so the
// largest-magnitude component of each vector is positive.
struct Spectrum {
    std::vector<double> eigenvalues;
    Matrix eigenvectors;  // column mu = eigenvector for eigenvalues[mu]

    std::size_t dim() const { return eigenvalues.size(); }

    std::vector<double> eigenvector(std::size_t mu) const {
        std::vector<double> v(eigenvectors.rows);
        for (std::size_t i = 0; i < eigenvectors.rows; ++i) v[i] = eigenvectors.at(i, mu);
        return v;
    }
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
double frobenius_norm(const Matrix& m);
double trace(const Matrix& m);

double dot(const std::vector<double>& u, const std::vector<double>& v);
double norm2(const std::vector<double>& v);
// v += alpha * u
void axpy(double alpha, const std::vector<double>& u, std::vector<double>& v);

// Cyclic Jacobi eigensolver for symmetric matrices. Input is symmetrized by
// averaging; asymmetry beyond 1e-9 * max|m| is rejected. Converges when the
// off-diagonal Frobenius mass drops below 1e-12 * ||m||_F, capped at 100
// sweeps. Output ordering and signs are deterministic.
Spectrum symmetric_eig(const Matrix& m);

bool all_finite(const Matrix& m);

}  // namespace dmn
