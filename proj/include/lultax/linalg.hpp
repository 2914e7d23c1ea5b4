#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

namespace lultax {

// Small dense helpers for the cone machinery. Dimensions here are tiny
// (d <= 8 plus a handful of constraints), so plain Gaussian elimination
// with partial pivoting is both adequate and bit-reproducible.

using vec = std::vector<double>;

inline double dot(const vec& a, const vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const vec& a) { return dot(a, a); }

inline double norm(const vec& a) { return std::sqrt(norm2(a)); }

inline void axpy(double c, const vec& x, vec& y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += c * x[i];
}

inline vec scaled(const vec& x, double c) {
    vec r(x);
    for (double& v : r) v *= c;
    return r;
}

inline vec add(const vec& a, const vec& b) {
    vec r(a);
    for (std::size_t i = 0; i < b.size(); ++i) r[i] += b[i];
    return r;
}

inline vec sub(const vec& a, const vec& b) {
    vec r(a);
    for (std::size_t i = 0; i < b.size(); ++i) r[i] -= b[i];
    return r;
}

inline double inf_norm(const vec& a) {
    double m = 0.0;
    for (double v : a) m = std::max(m, std::abs(v));
    return m;
}

// Row-major dense matrix, sized at construction.
struct matrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> a;

    matrix() = default;
    matrix(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
};

// Solves a possibly rectangular system M x = rhs, returning a solution only
// when the system is consistent AND determined (rank == cols). Used by the
// vertex enumeration to extract basic solutions.
inline std::optional<vec> solve_unique(matrix M, vec rhs, double tol = 1e-10) {
    const std::size_t m = M.rows, n = M.cols;
    std::vector<std::size_t> pivot_row(n, m);
    std::size_t r = 0;
    for (std::size_t c = 0; c < n && r < m; ++c) {
        std::size_t piv = r;
        double best = std::abs(M(r, c));
        for (std::size_t i = r + 1; i < m; ++i) {
            double v = std::abs(M(i, c));
            if (v > best) { best = v; piv = i; }
        }
        if (best <= tol) continue;
        if (piv != r) {
            for (std::size_t j = 0; j < n; ++j) std::swap(M(piv, j), M(r, j));
            std::swap(rhs[piv], rhs[r]);
        }
        for (std::size_t i = 0; i < m; ++i) {
            if (i == r) continue;
            double f = M(i, c) / M(r, c);
            if (f == 0.0) continue;
            for (std::size_t j = c; j < n; ++j) M(i, j) -= f * M(r, j);
            rhs[i] -= f * rhs[r];
        }
        pivot_row[c] = r;
        ++r;
    }
    for (std::size_t c = 0; c < n; ++c)
        if (pivot_row[c] == m) return std::nullopt; // underdetermined
    // Consistency of the zeroed-out rows.
    for (std::size_t i = r; i < m; ++i)
        if (std::abs(rhs[i]) > 1e-8) return std::nullopt;
    vec x(n, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t i = pivot_row[c];
        x[c] = rhs[i] / M(i, c);
    }
    return x;
}

// Returns some exact solution of a consistent system (pivotless variables
// are set to zero), or nullopt when the system is inconsistent. Handles the
// singular KKT systems that arise when equality constraints are redundant on
// a coordinate-restricted subspace.
inline std::optional<vec> solve_any(matrix M, vec rhs, double tol = 1e-10) {
    const std::size_t m = M.rows, n = M.cols;
    std::vector<std::size_t> pivot_row(n, m);
    std::size_t r = 0;
    for (std::size_t c = 0; c < n && r < m; ++c) {
        std::size_t piv = r;
        double best = std::abs(M(r, c));
        for (std::size_t i = r + 1; i < m; ++i) {
            double v = std::abs(M(i, c));
            if (v > best) { best = v; piv = i; }
        }
        if (best <= tol) continue;
        if (piv != r) {
            for (std::size_t j = 0; j < n; ++j) std::swap(M(piv, j), M(r, j));
            std::swap(rhs[piv], rhs[r]);
        }
        for (std::size_t i = 0; i < m; ++i) {
            if (i == r) continue;
            double f = M(i, c) / M(r, c);
            if (f == 0.0) continue;
            for (std::size_t j = c; j < n; ++j) M(i, j) -= f * M(r, j);
            rhs[i] -= f * rhs[r];
        }
        pivot_row[c] = r;
        ++r;
    }
    for (std::size_t i = r; i < m; ++i)
        if (std::abs(rhs[i]) > 1e-8) return std::nullopt;
    vec x(n, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
        if (pivot_row[c] == m) continue; // free variable, set to zero
        std::size_t i = pivot_row[c];
        double s = rhs[i];
        for (std::size_t j = c + 1; j < n; ++j)
            if (pivot_row[j] == m && M(i, j) != 0.0) s -= M(i, j) * x[j];
        x[c] = s / M(i, c);
    }
    return x;
}

// Rank of a small matrix by row elimination; used to decide whether a
// candidate active set pins down a unique basic solution.
inline std::size_t rank_of(matrix A, double tol = 1e-10) {
    std::size_t r = 0;
    for (std::size_t c = 0; c < A.cols && r < A.rows; ++c) {
        std::size_t piv = r;
        double best = std::abs(A(r, c));
        for (std::size_t i = r + 1; i < A.rows; ++i) {
            double v = std::abs(A(i, c));
            if (v > best) { best = v; piv = i; }
        }
        if (best <= tol) continue;
        if (piv != r)
            for (std::size_t j = 0; j < A.cols; ++j) std::swap(A(piv, j), A(r, j));
        for (std::size_t i = r + 1; i < A.rows; ++i) {
            double f = A(i, c) / A(r, c);
            if (f == 0.0) continue;
            for (std::size_t j = c; j < A.cols; ++j) A(i, j) -= f * A(r, j);
        }
        ++r;
    }
    return r;
}

} // namespace lultax
