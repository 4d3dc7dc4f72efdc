#include "dmn/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dmn {

bool all_finite(const Matrix& m) {
    for (double x : m.data)
        if (!std::isfinite(x)) return false;
    return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw dimension_error("matmul: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                              " times " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
    Matrix c(a.rows, b.cols);
    // i-k-j order: each c(i,j) still accumulates its terms in ascending k,
    // so the result is bitwise equal to the naive triple loop.
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* crow = c.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) t.at(j, i) = m.at(i, j);
    return t;
}

double frobenius_norm(const Matrix& m) {
    double s = 0.0;
    for (double x : m.data) s += x * x;
    return std::sqrt(s);
}

double trace(const Matrix& m) {
    if (m.rows != m.cols) throw dimension_error("trace: matrix not square");
    double s = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i) s += m.at(i, i);
    return s;
}

double dot(const std::vector<double>& u, const std::vector<double>& v) {
    if (u.size() != v.size()) throw dimension_error("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
    return s;
}

double norm2(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

void axpy(double alpha, const std::vector<double>& u, std::vector<double>& v) {
    if (u.size() != v.size()) throw dimension_error("axpy: length mismatch");
    for (std::size_t i = 0; i < u.size(); ++i) v[i] += alpha * u[i];
}

namespace {

std::size_t argmax_abs_column(const Matrix& vecs, std::size_t col) {
    std::size_t best = 0;
    double best_abs = -1.0;
    for (std::size_t i = 0; i < vecs.rows; ++i) {
        const double a = std::fabs(vecs.at(i, col));
        if (a > best_abs) {
            best_abs = a;
            best = i;
        }
    }
    return best;
}

}  // namespace

Spectrum symmetric_eig(const Matrix& m) {
    if (m.rows != m.cols)
        throw dimension_error("symmetric_eig: matrix not square (" + std::to_string(m.rows) +
                              "x" + std::to_string(m.cols) + ")");
    if (!all_finite(m)) throw numeric_error("symmetric_eig: non-finite entries");
    const std::size_t n = m.rows;

    double max_abs = 0.0;
    double max_asym = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            max_abs = std::max(max_abs, std::fabs(m.at(i, j)));
            max_asym = std::max(max_asym, std::fabs(m.at(i, j) - m.at(j, i)));
        }
    if (max_asym > 1e-9 * max_abs)
        throw numeric_error("symmetric_eig: input asymmetry exceeds tolerance");

    // Symmetrize by averaging, then run cyclic Jacobi sweeps on A.
    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) a.at(i, j) = 0.5 * (m.at(i, j) + m.at(j, i));
    Matrix v = Matrix::identity(n);

    const double norm = frobenius_norm(a);
    const double off_tol = 1e-12 * norm;

    for (int sweep = 0; sweep < 100 && n > 1; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * a.at(p, q) * a.at(p, q);
        if (std::sqrt(off) <= off_tol) break;

        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a.at(p, q);
                if (apq == 0.0) continue;
                const double app = a.at(p, p);
                const double aqq = a.at(q, q);
                const double theta = (aqq - app) / (2.0 * apq);
                // Smaller-angle root, computed stably for large |theta|.
                const double t = (theta >= 0.0)
                                     ? 1.0 / (theta + std::sqrt(theta * theta + 1.0))
                                     : 1.0 / (theta - std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;

                for (std::size_t i = 0; i < n; ++i) {
                    const double aip = a.at(i, p);
                    const double aiq = a.at(i, q);
                    a.at(i, p) = c * aip - s * aiq;
                    a.at(i, q) = s * aip + c * aiq;
                }
                for (std::size_t j = 0; j < n; ++j) {
                    const double apj = a.at(p, j);
                    const double aqj = a.at(q, j);
                    a.at(p, j) = c * apj - s * aqj;
                    a.at(q, j) = s * apj + c * aqj;
                }
                a.at(p, q) = 0.0;
                a.at(q, p) = 0.0;

                for (std::size_t i = 0; i < n; ++i) {
                    const double vip = v.at(i, p);
                    const double viq = v.at(i, q);
                    v.at(i, p) = c * vip - s * viq;
                    v.at(i, q) = s * vip + c * viq;
                }
            }
        }
    }

    std::vector<double> lambda(n);
    for (std::size_t i = 0; i < n; ++i) lambda[i] = a.at(i, i);

    // Descending order; near-equal eigenvalues are ordered by the first index
    // of the largest-magnitude eigenvector component so the output is stable.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    double lam_scale = 0.0;
    for (double l : lambda) lam_scale = std::max(lam_scale, std::fabs(l));
    const double tie_tol = 1e-12 * lam_scale;
    std::vector<std::size_t> peak(n);
    for (std::size_t i = 0; i < n; ++i) peak[i] = argmax_abs_column(v, i);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        if (std::fabs(lambda[x] - lambda[y]) > tie_tol) return lambda[x] > lambda[y];
        return peak[x] < peak[y];
    });

    Spectrum out;
    out.eigenvalues.resize(n);
    out.eigenvectors = Matrix(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t src = order[k];
        out.eigenvalues[k] = lambda[src];
        const double flip = (v.at(peak[src], src) < 0.0) ? -1.0 : 1.0;
        // Renormalize: Jacobi keeps columns orthonormal to machine precision,
        // this just pins the unit-norm invariant exactly.
        double nrm = 0.0;
        for (std::size_t i = 0; i < n; ++i) nrm += v.at(i, src) * v.at(i, src);
        nrm = std::sqrt(nrm);
        const double scale = (nrm > 0.0) ? flip / nrm : flip;
        for (std::size_t i = 0; i < n; ++i) out.eigenvectors.at(i, k) = v.at(i, src) * scale;
    }
    return out;
}

}  // namespace dmn
