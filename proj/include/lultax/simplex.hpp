#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "lultax/errors.hpp"
#include "lultax/linalg.hpp"

namespace lultax {

// Dense two-phase simplex with Bland's rule, for the tiny feasibility LPs of
// the cone analysis (d <= 8 variables, a handful of constraints). Maximizes
// c.x subject to A x <= b, x >= 0.

enum class lp_status { optimal, infeasible, unbounded };

struct lp_result {
    lp_status status = lp_status::infeasible;
    vec x;
    double objective = 0.0;
};

namespace detail {

struct tableau {
    std::size_t rows = 0, cols = 0; // cols includes rhs
    std::vector<double> t;
    std::vector<std::size_t> basis;

    double& at(std::size_t i, std::size_t j) { return t[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return t[i * cols + j]; }
    double rhs(std::size_t i) const { return at(i, cols - 1); }
};

inline void pivot(tableau& tab, std::size_t pr, std::size_t pc) {
    const double pv = tab.at(pr, pc);
    for (std::size_t j = 0; j < tab.cols; ++j) tab.at(pr, j) /= pv;
    for (std::size_t i = 0; i < tab.rows; ++i) {
        if (i == pr) continue;
        double f = tab.at(i, pc);
        if (f == 0.0) continue;
        for (std::size_t j = 0; j < tab.cols; ++j) tab.at(i, j) -= f * tab.at(pr, j);
    }
    tab.basis[pr] = pc;
}

// Maximize cost over the current basic feasible tableau. Returns false when
// unbounded. Bland's rule keeps it finite. Columns >= eligible never enter
// (used to lock out artificials in phase 2).
inline bool simplex_core(tableau& tab, const vec& cost, std::size_t eligible,
                         double tol = 1e-9) {
    const std::size_t nvars = tab.cols - 1;
    for (std::size_t iter = 0; iter < 100000; ++iter) {
        // reduced costs r_j = cost_j - sum_i cost_{basis_i} * tab(i, j)
        std::size_t enter = nvars;
        for (std::size_t j = 0; j < eligible; ++j) {
            double r = cost[j];
            for (std::size_t i = 0; i < tab.rows; ++i) {
                double cb = cost[tab.basis[i]];
                if (cb != 0.0) r -= cb * tab.at(i, j);
            }
            if (r > tol) { enter = j; break; } // Bland: first improving index
        }
        if (enter == nvars) return true; // optimal
        std::size_t leave = tab.rows;
        double best_ratio = 0.0;
        for (std::size_t i = 0; i < tab.rows; ++i) {
            double a = tab.at(i, enter);
            if (a <= tol) continue;
            double ratio = tab.rhs(i) / a;
            if (leave == tab.rows || ratio < best_ratio - 1e-15 ||
                (std::abs(ratio - best_ratio) <= 1e-15 && tab.basis[i] < tab.basis[leave])) {
                leave = i;
                best_ratio = ratio;
            }
        }
        if (leave == tab.rows) return false; // unbounded
        pivot(tab, leave, enter);
    }
    fail(errc::diverged, "simplex failed to terminate");
}

} // namespace detail

inline lp_result solve_lp_max(const matrix& A, const vec& b, const vec& c) {
    const std::size_t m = A.rows, n = A.cols;
    std::size_t n_art = 0;
    for (std::size_t i = 0; i < m; ++i)
        if (b[i] < 0.0) ++n_art;

    const std::size_t total = n + m + n_art;
    detail::tableau tab;
    tab.rows = m;
    tab.cols = total + 1;
    tab.t.assign(tab.rows * tab.cols, 0.0);
    tab.basis.assign(m, 0);

    std::size_t art = n + m;
    for (std::size_t i = 0; i < m; ++i) {
        double sign = b[i] < 0.0 ? -1.0 : 1.0;
        for (std::size_t j = 0; j < n; ++j) tab.at(i, j) = sign * A(i, j);
        tab.at(i, n + i) = sign; // slack
        tab.at(i, tab.cols - 1) = sign * b[i];
        if (b[i] < 0.0) {
            tab.at(i, art) = 1.0;
            tab.basis[i] = art;
            ++art;
        } else {
            tab.basis[i] = n + i;
        }
    }

    if (n_art > 0) {
        vec phase1(total, 0.0);
        for (std::size_t j = n + m; j < total; ++j) phase1[j] = -1.0;
        if (!detail::simplex_core(tab, phase1, total))
            fail(errc::diverged, "phase-1 LP unbounded");
        double infeas = 0.0;
        for (std::size_t i = 0; i < m; ++i)
            if (tab.basis[i] >= n + m) infeas += tab.rhs(i);
        if (infeas > 1e-8) return {lp_status::infeasible, {}, 0.0};
        // Pivot lingering artificials out where possible.
        for (std::size_t i = 0; i < m; ++i) {
            if (tab.basis[i] < n + m) continue;
            for (std::size_t j = 0; j < n + m; ++j) {
                if (std::abs(tab.at(i, j)) > 1e-9) {
                    detail::pivot(tab, i, j);
                    break;
                }
            }
        }
    }

    vec cost(total, 0.0);
    for (std::size_t j = 0; j < n; ++j) cost[j] = c[j];
    if (!detail::simplex_core(tab, cost, n + m)) return {lp_status::unbounded, {}, 0.0};

    lp_result res;
    res.status = lp_status::optimal;
    res.x.assign(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        if (tab.basis[i] < n) res.x[tab.basis[i]] = tab.rhs(i);
    res.objective = dot(res.x, c);
    return res;
}

} // namespace lultax
