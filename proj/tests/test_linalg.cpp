#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "dmn/matrix.hpp"
#include "dmn/rng.hpp"

using dmn::Matrix;
using dmn::Spectrum;

namespace {

Matrix random_symmetric(std::size_t n, dmn::rng& gen, double scale = 1.0) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            const double x = scale * (2.0 * gen.next_unit() - 1.0);
            m.at(i, j) = x;
            m.at(j, i) = x;
        }
    return m;
}

// Oracle: naive i-j-k triple loop, ascending k.
Matrix matmul_naive(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.cols; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) s += a.at(i, k) * b.at(k, j);
            c.at(i, j) = s;
        }
    return c;
}

// Oracle: characteristic polynomial coefficients via Faddeev-LeVerrier,
// roots via Durand-Kerner on the monic polynomial. Fully independent of the
// Jacobi path under test.
std::vector<double> charpoly_coeffs(const Matrix& m) {
    const std::size_t n = m.rows;
    std::vector<double> c(n + 1, 0.0);
    c[n] = 1.0;  // monic: lambda^n + c[n-1] lambda^(n-1) + ... + c[0]
    Matrix mk = Matrix::identity(n);
    for (std::size_t k = 1; k <= n; ++k) {
        mk = matmul_naive(m, mk);
        const double ck = -dmn::trace(mk) / static_cast<double>(k);
        c[n - k] = ck;
        for (std::size_t i = 0; i < n; ++i) mk.at(i, i) += ck;
    }
    return c;
}

std::vector<double> polynomial_real_roots(const std::vector<double>& coeffs) {
    const std::size_t deg = coeffs.size() - 1;
    std::vector<std::complex<double>> z(deg);
    // Standard Durand-Kerner start: powers of a non-real point.
    const std::complex<double> seed(0.4, 0.9);
    std::complex<double> acc(1.0, 0.0);
    for (std::size_t i = 0; i < deg; ++i) {
        acc *= seed;
        z[i] = acc;
    }
    auto eval = [&](std::complex<double> x) {
        std::complex<double> p(0.0, 0.0);
        for (std::size_t k = coeffs.size(); k-- > 0;) p = p * x + coeffs[k];
        return p;
    };
    for (int iter = 0; iter < 500; ++iter) {
        double moved = 0.0;
        for (std::size_t i = 0; i < deg; ++i) {
            std::complex<double> denom(1.0, 0.0);
            for (std::size_t j = 0; j < deg; ++j)
                if (j != i) denom *= (z[i] - z[j]);
            const std::complex<double> delta = eval(z[i]) / denom;
            z[i] -= delta;
            moved = std::max(moved, std::abs(delta));
        }
        if (moved < 1e-14) break;
    }
    std::vector<double> roots(deg);
    for (std::size_t i = 0; i < deg; ++i) roots[i] = z[i].real();
    std::sort(roots.begin(), roots.end(), std::greater<double>());
    return roots;
}

double reconstruction_error(const Matrix& m, const Spectrum& s) {
    const std::size_t n = m.rows;
    Matrix rec(n, n);
    for (std::size_t mu = 0; mu < n; ++mu)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                rec.at(i, j) +=
                    s.eigenvalues[mu] * s.eigenvectors.at(i, mu) * s.eigenvectors.at(j, mu);
    double diff = 0.0;
    for (std::size_t i = 0; i < rec.size(); ++i) {
        const double d = rec.data[i] - m.data[i];
        diff += d * d;
    }
    return std::sqrt(diff);
}

double max_orthonormality_defect(const Spectrum& s) {
    const std::size_t n = s.dim();
    double worst = 0.0;
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a; b < n; ++b) {
            double d = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                d += s.eigenvectors.at(i, a) * s.eigenvectors.at(i, b);
            const double target = (a == b) ? 1.0 : 0.0;
            worst = std::max(worst, std::fabs(d - target));
        }
    return worst;
}

}  // namespace

TEST_CASE("matmul dimensions and hand examples") {
    Matrix a(2, 2);
    a.at(0, 0) = 1;
    a.at(0, 1) = 2;
    a.at(1, 0) = 3;
    a.at(1, 1) = 4;
    Matrix b(2, 1);
    b.at(0, 0) = 0;
    b.at(1, 0) = 1;
    const Matrix c = dmn::matmul(a, b);
    CHECK(c.rows == 2);
    CHECK(c.cols == 1);
    CHECK(c.at(0, 0) == 2.0);
    CHECK(c.at(1, 0) == 4.0);

    const Matrix i3 = Matrix::identity(3);
    dmn::rng gen(11);
    Matrix r(3, 4);
    for (auto& x : r.data) x = gen.next_unit();
    const Matrix ir = dmn::matmul(i3, r);
    for (std::size_t k = 0; k < r.size(); ++k) CHECK(ir.data[k] == r.data[k]);

    CHECK_THROWS_AS(dmn::matmul(Matrix(2, 3), Matrix(2, 3)), dmn::dimension_error);
}

TEST_CASE("matmul matches naive triple loop bitwise") {
    dmn::rng gen(42);
    Matrix a(7, 5);
    Matrix b(5, 3);
    for (auto& x : a.data) x = 2.0 * gen.next_unit() - 1.0;
    for (auto& x : b.data) x = 2.0 * gen.next_unit() - 1.0;
    const Matrix fast = dmn::matmul(a, b);
    const Matrix slow = matmul_naive(a, b);
    for (std::size_t k = 0; k < fast.size(); ++k) CHECK(fast.data[k] == slow.data[k]);
}

TEST_CASE("matmul associativity on well-conditioned inputs") {
    dmn::rng gen(7);
    Matrix a(6, 6), b(6, 6), c(6, 6);
    for (auto& x : a.data) x = 2.0 * gen.next_unit() - 1.0;
    for (auto& x : b.data) x = 2.0 * gen.next_unit() - 1.0;
    for (auto& x : c.data) x = 2.0 * gen.next_unit() - 1.0;
    const Matrix lhs = dmn::matmul(dmn::matmul(a, b), c);
    const Matrix rhs = dmn::matmul(a, dmn::matmul(b, c));
    for (std::size_t k = 0; k < lhs.size(); ++k)
        CHECK(lhs.data[k] == doctest::Approx(rhs.data[k]).epsilon(1e-12));
}

TEST_CASE("vector helpers") {
    std::vector<double> e1 = {1.0, 0.0, 0.0};
    CHECK(dmn::dot(e1, e1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(dmn::norm2(std::vector<double>{0.0, 0.0}) == 0.0);
    CHECK(dmn::norm2(std::vector<double>{3.0, 4.0}) == doctest::Approx(5.0));
    std::vector<double> v = {1.0, 1.0};
    dmn::axpy(2.0, std::vector<double>{1.0, -1.0}, v);
    CHECK(v[0] == 3.0);
    CHECK(v[1] == -1.0);
    CHECK_THROWS_AS(dmn::dot(e1, v), dmn::dimension_error);
    CHECK(dmn::frobenius_norm(Matrix(3, 3)) == 0.0);
}

TEST_CASE("symmetric_eig identity and diagonal") {
    const Spectrum si = dmn::symmetric_eig(Matrix::identity(3));
    for (double l : si.eigenvalues) CHECK(l == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(max_orthonormality_defect(si) <= 1e-8);
    // sign rule: largest-magnitude component of each vector positive
    for (std::size_t mu = 0; mu < 3; ++mu) {
        double best = 0.0;
        for (std::size_t i = 0; i < 3; ++i)
            if (std::fabs(si.eigenvectors.at(i, mu)) > std::fabs(best))
                best = si.eigenvectors.at(i, mu);
        CHECK(best > 0.0);
    }

    Matrix d(3, 3);
    d.at(0, 0) = 4.0;
    d.at(1, 1) = 1.0;
    d.at(2, 2) = 0.0;
    const Spectrum sd = dmn::symmetric_eig(d);
    CHECK(sd.eigenvalues[0] == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(sd.eigenvalues[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sd.eigenvalues[2] == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    // canonical axes
    CHECK(sd.eigenvectors.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sd.eigenvectors.at(1, 1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sd.eigenvectors.at(2, 2) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("symmetric_eig matches characteristic-polynomial oracle") {
    dmn::rng gen(90210);
    const Matrix m = random_symmetric(5, gen);
    const Spectrum s = dmn::symmetric_eig(m);
    const std::vector<double> oracle = polynomial_real_roots(charpoly_coeffs(m));
    REQUIRE(oracle.size() == 5);
    for (std::size_t i = 0; i < 5; ++i)
        CHECK(s.eigenvalues[i] == doctest::Approx(oracle[i]).epsilon(1e-8));
}

TEST_CASE("symmetric_eig error paths") {
    CHECK_THROWS_AS(dmn::symmetric_eig(Matrix(2, 3)), dmn::dimension_error);
    Matrix bad(2, 2);
    bad.at(0, 1) = std::nan("");
    bad.at(1, 0) = std::nan("");
    CHECK_THROWS_AS(dmn::symmetric_eig(bad), dmn::numeric_error);
    Matrix asym(2, 2);
    asym.at(0, 1) = 1.0;
    asym.at(1, 0) = 0.5;
    CHECK_THROWS_AS(dmn::symmetric_eig(asym), dmn::numeric_error);
}

TEST_CASE("symmetric_eig determinism") {
    dmn::rng gen(5150);
    const Matrix m = random_symmetric(8, gen);
    const Spectrum a = dmn::symmetric_eig(m);
    const Spectrum b = dmn::symmetric_eig(m);
    for (std::size_t i = 0; i < a.eigenvalues.size(); ++i)
        CHECK(a.eigenvalues[i] == b.eigenvalues[i]);
    for (std::size_t k = 0; k < a.eigenvectors.size(); ++k)
        CHECK(a.eigenvectors.data[k] == b.eigenvectors.data[k]);
}

TEST_CASE("eigensolver invariants on random symmetric matrices") {
    dmn::rng gen(2024);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = 2 + gen.next_below(19);
        const Matrix m = random_symmetric(n, gen, 3.0);
        const Spectrum s = dmn::symmetric_eig(m);
        const double nrm = dmn::frobenius_norm(m);
        CHECK(reconstruction_error(m, s) <= 1e-8 * std::max(nrm, 1e-30));
        CHECK(max_orthonormality_defect(s) <= 1e-8);
        double lsum = 0.0;
        for (double l : s.eigenvalues) lsum += l;
        CHECK(lsum == doctest::Approx(dmn::trace(m)).epsilon(1e-8));
        for (std::size_t i = 0; i + 1 < s.eigenvalues.size(); ++i)
            CHECK(s.eigenvalues[i] >= s.eigenvalues[i + 1] - 1e-10 * std::max(1.0, nrm));
    }
}

TEST_CASE("PSD matrices have no significantly negative eigenvalues") {
    dmn::rng gen(99);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t n = 3 + gen.next_below(10);
        Matrix g(n + 2, n);
        for (auto& x : g.data) x = 2.0 * gen.next_unit() - 1.0;
        const Matrix psd = dmn::matmul(dmn::transpose(g), g);
        const Spectrum s = dmn::symmetric_eig(psd);
        const double lmax = s.eigenvalues.front();
        CHECK(s.eigenvalues.back() >= -1e-10 * lmax);
    }
}
