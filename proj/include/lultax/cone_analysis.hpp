#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "lultax/errors.hpp"
#include "lultax/linalg.hpp"
#include "lultax/simplex.hpp"
#include "lultax/strategy.hpp"
#include "lultax/tax_engine.hpp"
#include "lultax/tree.hpp"

namespace lultax {

inline constexpr int max_cone_dim = 8;
inline constexpr double na_margin = 1e-6;

namespace detail {

// One row per child: S_{t+1} - (1 + r_{t+1}) S_t.
inline matrix excess_matrix(const scenario_tree& tree, int node_id) {
    const node& n = tree.at(node_id);
    if (n.children.empty())
        fail(errc::unknown_node, "node " + std::to_string(n.input_id) + " is terminal");
    matrix E(n.children.size(), static_cast<std::size_t>(tree.num_assets));
    for (std::size_t c = 0; c < n.children.size(); ++c) {
        const node& ch = tree.at(n.children[c]);
        for (int j = 0; j < tree.num_assets; ++j)
            E(c, static_cast<std::size_t>(j)) =
                ch.prices[static_cast<std::size_t>(j)] -
                (1.0 + ch.rate) * n.prices[static_cast<std::size_t>(j)];
    }
    return E;
}

inline void require_dim(const scenario_tree& tree) {
    if (tree.num_assets > max_cone_dim)
        fail(errc::dimension_cap_exceeded,
             "cone analysis supports d <= " + std::to_string(max_cone_dim));
}

// Keeps a maximal independent subset of rows (tiny matrices only).
inline matrix independent_rows(const matrix& E, double tol = 1e-10) {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < E.rows; ++i) {
        matrix probe(keep.size() + 1, E.cols);
        for (std::size_t k = 0; k < keep.size(); ++k)
            for (std::size_t j = 0; j < E.cols; ++j) probe(k, j) = E(keep[k], j);
        for (std::size_t j = 0; j < E.cols; ++j) probe(keep.size(), j) = E(i, j);
        if (rank_of(probe, tol) == keep.size() + 1) keep.push_back(i);
    }
    matrix R(keep.size(), E.cols);
    for (std::size_t k = 0; k < keep.size(); ++k)
        for (std::size_t j = 0; j < E.cols; ++j) R(k, j) = E(keep[k], j);
    return R;
}

inline bool near_duplicate(const std::vector<vec>& pts, const vec& v, double tol = 1e-9) {
    for (const vec& p : pts)
        if (inf_norm(sub(p, v)) <= tol) return true;
    return false;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Reversible cone R_t = {beta >= 0 : <beta, S_{t+1} - (1+r)S_t> = 0 a.s.}
// Generators are the vertices of the cross-section {beta in R_t, sum beta = 1}.

inline std::vector<vec> reversible_cone(const scenario_tree& tree, int node_id) {
    detail::require_dim(tree);
    const matrix E = detail::excess_matrix(tree, node_id);
    const std::size_t d = static_cast<std::size_t>(tree.num_assets);
    std::vector<vec> gens;
    for (std::size_t mask = 1; mask < (std::size_t{1} << d); ++mask) {
        std::vector<std::size_t> support;
        for (std::size_t j = 0; j < d; ++j)
            if (mask & (std::size_t{1} << j)) support.push_back(j);
        matrix M(E.rows + 1, support.size());
        vec rhs(E.rows + 1, 0.0);
        for (std::size_t k = 0; k < support.size(); ++k) M(0, k) = 1.0;
        rhs[0] = 1.0;
        for (std::size_t r = 0; r < E.rows; ++r)
            for (std::size_t k = 0; k < support.size(); ++k) M(r + 1, k) = E(r, support[k]);
        auto sol = solve_unique(M, rhs);
        if (!sol) continue;
        bool ok = true;
        for (double v : *sol)
            if (v < -1e-9) { ok = false; break; }
        if (!ok) continue;
        vec g(d, 0.0);
        for (std::size_t k = 0; k < support.size(); ++k)
            g[support[k]] = std::max(0.0, (*sol)[k]);
        // verify equalities to the reporting tolerance
        for (std::size_t r = 0; r < E.rows; ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += E(r, j) * g[j];
            if (std::abs(s) > 1e-10) { ok = false; break; }
        }
        if (ok && !detail::near_duplicate(gens, g)) gens.push_back(g);
    }
    return gens;
}

// ---------------------------------------------------------------------------
// Least-norm decomposition beta = p + q with p in R_t, q >= 0 and |q| minimal
// among all q' >= 0 with beta - q' in R_t. Solved as the projection of beta
// onto {p : E p = 0, 0 <= p <= beta} by enumerating the active sets of the
// box constraints (d <= 8).

struct decomposition {
    vec reversible;    // p
    vec nonreversible; // q = beta - p
};

inline decomposition decompose(const scenario_tree& tree, int node_id, vec beta) {
    detail::require_dim(tree);
    const std::size_t d = static_cast<std::size_t>(tree.num_assets);
    if (beta.size() != d) fail(errc::dimension_mismatch, "beta has wrong dimension");
    for (double& b : beta) {
        if (b < -1e-9) fail(errc::dimension_mismatch, "beta must be nonnegative");
        if (b < 0.0) b = 0.0;
    }
    const matrix E = detail::independent_rows(detail::excess_matrix(tree, node_id));
    const std::size_t me = E.rows;

    if (me == 0) {
        // every nonnegative vector is reversible: p = beta, q = 0
        return {beta, vec(d, 0.0)};
    }

    // state per coordinate: 0 = fixed at 0, 1 = fixed at beta_i, 2 = free
    std::vector<int> state(d, 0);
    vec best_p;
    double best_obj = 0.0;
    bool have = false;

    const double scale = std::max(1.0, inf_norm(beta));
    const double feas_tol = 1e-9 * scale;

    std::vector<std::size_t> free_idx;
    while (true) {
        // evaluate current active set
        free_idx.clear();
        bool degenerate_dup = false;
        for (std::size_t i = 0; i < d; ++i) {
            if (state[i] == 2) free_idx.push_back(i);
            if (state[i] == 1 && beta[i] == 0.0) degenerate_dup = true; // same as state 0
        }
        if (!degenerate_dup) {
            vec p(d, 0.0);
            for (std::size_t i = 0; i < d; ++i)
                if (state[i] == 1) p[i] = beta[i];
            bool solved = true;
            if (!free_idx.empty()) {
                // KKT system for min |beta - p|^2 over the free coordinates
                // subject to E p = 0:  [I A^T; A 0] [pF; nu] = [bF; -E p_fix]
                const std::size_t f = free_idx.size();
                matrix K(f + me, f + me);
                vec rhs(f + me, 0.0);
                for (std::size_t i = 0; i < f; ++i) {
                    K(i, i) = 1.0;
                    rhs[i] = beta[free_idx[i]];
                    for (std::size_t r = 0; r < me; ++r) {
                        K(i, f + r) = E(r, free_idx[i]);
                        K(f + r, i) = E(r, free_idx[i]);
                    }
                }
                for (std::size_t r = 0; r < me; ++r) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < d; ++i) s += E(r, i) * p[i];
                    rhs[f + r] = -s;
                }
                // The KKT matrix can be singular (redundant equalities on the
                // restricted subspace); solve_any still produces an exact
                // stationary point or reports inconsistency.
                auto sol = solve_any(K, rhs);
                if (!sol)
                    solved = false;
                else
                    for (std::size_t i = 0; i < f; ++i) p[free_idx[i]] = (*sol)[i];
            }
            if (solved) {
                bool feasible = true;
                for (std::size_t i = 0; i < d; ++i)
                    if (p[i] < -feas_tol || p[i] > beta[i] + feas_tol) { feasible = false; break; }
                if (feasible) {
                    for (std::size_t r = 0; r < me && feasible; ++r) {
                        double s = 0.0;
                        for (std::size_t i = 0; i < d; ++i) s += E(r, i) * p[i];
                        if (std::abs(s) > feas_tol) feasible = false;
                    }
                }
                if (feasible) {
                    double obj = 0.0;
                    for (std::size_t i = 0; i < d; ++i) {
                        double qi = beta[i] - p[i];
                        obj += qi * qi;
                    }
                    if (!have || obj < best_obj - 1e-15 * scale * scale) {
                        best_obj = obj;
                        best_p = p;
                        have = true;
                    }
                }
            }
        }
        // next active-set assignment (ternary counter)
        std::size_t i = 0;
        while (i < d) {
            if (++state[i] <= 2) break;
            state[i] = 0;
            ++i;
        }
        if (i == d) break;
    }
    if (!have)
        fail(errc::qp_infeasible, "no feasible active set at node " + std::to_string(node_id));

    vec q(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        best_p[i] = std::min(std::max(best_p[i], 0.0), beta[i]);
        q[i] = beta[i] - best_p[i];
    }
    return {best_p, q};
}

inline bool is_purely_nonreversible(const scenario_tree& tree, int node_id, const vec& beta) {
    decomposition dec = decompose(tree, node_id, beta);
    return norm(sub(dec.nonreversible, beta)) <= 1e-9 * (1.0 + norm(beta));
}

// q_t applied to the aggregate holdings of a strategy at a node.
inline vec q_projection(const scenario_tree& tree, const strategy& s, int node_id) {
    return decompose(tree, node_id, s.aggregate_holdings(tree, node_id)).nonreversible;
}

// ---------------------------------------------------------------------------
// No-arbitrage check: a node admits a one-period arbitrage iff some beta >= 0
// with sum beta = 1 has all child excess returns >= 0 and total >= na_margin.

struct na_violation {
    int node_id = 0;
    vec certificate;
};

struct na_report {
    bool holds = true;
    std::optional<na_violation> violation;
};

inline std::optional<vec> node_arbitrage(const scenario_tree& tree, int node_id) {
    const matrix E = detail::excess_matrix(tree, node_id);
    const std::size_t d = static_cast<std::size_t>(tree.num_assets);
    const std::size_t m = E.rows;
    // max sum_c <beta, dS_c>  s.t.  -<beta, dS_c> <= 0, sum beta <= 1,
    //                               -sum beta <= -1, beta >= 0
    matrix A(m + 2, d);
    vec b(m + 2, 0.0);
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < d; ++j) A(r, j) = -E(r, j);
    for (std::size_t j = 0; j < d; ++j) {
        A(m, j) = 1.0;
        A(m + 1, j) = -1.0;
    }
    b[m] = 1.0;
    b[m + 1] = -1.0;
    vec c(d, 0.0);
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < d; ++j) c[j] += E(r, j);
    lp_result lp = solve_lp_max(A, b, c);
    if (lp.status != lp_status::optimal || lp.objective < na_margin) return std::nullopt;
    // Scale so the best child excess return clears the reporting margin.
    double best = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += E(r, j) * lp.x[j];
        best = std::max(best, s);
    }
    vec cert = lp.x;
    if (best > 0.0 && best < na_margin) cert = scaled(cert, na_margin / best);
    return cert;
}

inline na_report check_na(const scenario_tree& tree) {
    detail::require_dim(tree);
    na_report rep;
    for (const node& n : tree.nodes) {
        if (n.children.empty()) continue;
        if (auto cert = node_arbitrage(tree, n.id)) {
            rep.holds = false;
            rep.violation = na_violation{n.id, *cert};
            return rep;
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Admissible polytope A_t = {beta >= 0 : q(beta) = beta,
//                            1 + r_c + <beta, dS_c> >= 0 for all children}.
// The linear part is described by halfspaces <normal, beta> + offset >= 0;
// the nonreversibility constraint is enforced by post-filtering vertices.

struct halfspace {
    vec normal;
    double offset = 0.0;
};

struct admissible_polytope_t {
    std::vector<halfspace> halfspaces;
    std::vector<vec> vertices;            // vertices of the linear relaxation
    std::vector<vec> admissible_vertices; // those with q(v) = v
    double radius = 0.0;                  // certified bound on |beta| over A_t
};

inline admissible_polytope_t admissible_polytope(const scenario_tree& tree, int node_id) {
    detail::require_dim(tree);
    if (node_arbitrage(tree, node_id))
        fail(errc::unbounded_admissible_set,
             "one-period arbitrage at node " + std::to_string(tree.at(node_id).input_id));
    const node& n = tree.at(node_id);
    const matrix E = detail::excess_matrix(tree, node_id);
    const std::size_t d = static_cast<std::size_t>(tree.num_assets);
    const std::size_t m = E.rows;

    admissible_polytope_t out;
    for (std::size_t j = 0; j < d; ++j) {
        halfspace h;
        h.normal.assign(d, 0.0);
        h.normal[j] = 1.0;
        out.halfspaces.push_back(std::move(h));
    }
    for (std::size_t r = 0; r < m; ++r) {
        halfspace h;
        h.normal.assign(d, 0.0);
        for (std::size_t j = 0; j < d; ++j) h.normal[j] = E(r, j);
        h.offset = 1.0 + tree.at(n.children[r]).rate;
        out.halfspaces.push_back(std::move(h));
    }

    // Vertex enumeration: pick d constraints to be tight, solve, filter.
    const std::size_t nc = out.halfspaces.size();
    if (nc >= d) {
        std::vector<std::size_t> idx(d);
        for (std::size_t j = 0; j < d; ++j) idx[j] = j;
        bool more = true;
        while (more) {
            matrix M(d, d);
            vec rhs(d, 0.0);
            for (std::size_t k = 0; k < d; ++k) {
                const halfspace& h = out.halfspaces[idx[k]];
                for (std::size_t j = 0; j < d; ++j) M(k, j) = h.normal[j];
                rhs[k] = -h.offset;
            }
            if (auto sol = solve_unique(M, rhs)) {
                bool feasible = true;
                for (const halfspace& h : out.halfspaces) {
                    if (dot(h.normal, *sol) + h.offset < -1e-9) { feasible = false; break; }
                }
                if (feasible && !detail::near_duplicate(out.vertices, *sol)) {
                    vec v = *sol;
                    for (double& vi : v) vi = std::max(0.0, vi);
                    out.vertices.push_back(v);
                }
            }
            // next d-combination of {0..nc-1}
            more = false;
            for (std::size_t k = d; k-- > 0;) {
                if (idx[k] < nc - d + k) {
                    ++idx[k];
                    for (std::size_t l = k + 1; l < d; ++l) idx[l] = idx[l - 1] + 1;
                    more = true;
                    break;
                }
            }
        }
    }

    for (const vec& v : out.vertices) {
        out.radius = std::max(out.radius, norm(v));
        if (is_purely_nonreversible(tree, node_id, v)) out.admissible_vertices.push_back(v);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Norm-max basis of A_t: Y^k maximizes |beta| over A_t, later vectors repeat
// the construction on the projection orthogonal to the previous maximizer.
// Every beta in A_t writes as sum lambda_i Y^i with |lambda_i| <= 2^{i-1}.

struct norm_max_basis_t {
    // basis[i] is Y^{i+1}; leading entries are zero vectors when the
    // admissible set spans fewer than d directions.
    std::vector<vec> basis;
    // internal projection data, kept for reconstruction
    std::vector<vec> picked_orig;      // in discovery order (Y^d first)
    std::vector<std::vector<vec>> chain; // chain[j][L] = level-L projection of pick j
};

namespace detail {
inline bool lex_less(const vec& a, const vec& b) {
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] < b[i] - 1e-12) return true;
        if (a[i] > b[i] + 1e-12) return false;
    }
    return false;
}
} // namespace detail

inline norm_max_basis_t norm_max_basis(const scenario_tree& tree, int node_id) {
    const std::size_t d = static_cast<std::size_t>(tree.num_assets);
    admissible_polytope_t poly = admissible_polytope(tree, node_id);

    struct cand {
        vec point; // current projection
        vec orig;
    };
    std::vector<cand> cands;
    for (const vec& v : poly.admissible_vertices) cands.push_back({v, v});

    norm_max_basis_t out;
    std::vector<vec> pms; // projected maximizers per level
    double first_max = 0.0;
    for (std::size_t level = 0; level < d; ++level) {
        double best = 0.0;
        std::size_t best_i = cands.size();
        for (std::size_t i = 0; i < cands.size(); ++i) {
            double n2 = norm2(cands[i].point);
            if (best_i == cands.size() || n2 > best + 1e-15) {
                best = n2;
                best_i = i;
            } else if (std::abs(n2 - best) <= 1e-15 &&
                       detail::lex_less(cands[best_i].point, cands[i].point)) {
                best_i = i; // lexicographically larger wins ties
            }
        }
        // Directions whose extent is dominated by projection roundoff are
        // treated as exhausted (the basis is zero-padded there).
        double floor2 = std::max(1e-24, 1e-18 * first_max);
        if (best_i == cands.size() || best <= floor2) break;
        if (level == 0) first_max = best;
        vec pm = cands[best_i].point;
        pms.push_back(pm);
        out.picked_orig.push_back(cands[best_i].orig);
        const double pm2 = norm2(pm);
        for (cand& c : cands) {
            double lam = dot(c.point, pm) / pm2;
            axpy(-lam, pm, c.point);
        }
    }

    const std::size_t k = out.picked_orig.size();
    out.basis.assign(d, vec(d, 0.0));
    for (std::size_t j = 0; j < k; ++j) out.basis[d - 1 - j] = out.picked_orig[j];

    // projection chains for reconstruction: chain[j][L], L <= j
    out.chain.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
        vec y = out.picked_orig[j];
        for (std::size_t L = 0; L <= j; ++L) {
            out.chain[j].push_back(y);
            if (L < j) {
                double lam = dot(y, pms[L]) / norm2(pms[L]);
                axpy(-lam, pms[L], y);
            }
        }
    }
    return out;
}

// Coefficients lambda (indexed like basis: lambda[i] multiplies Y^{i+1})
// reconstructing beta in A_t; |lambda[i]| <= 2^i by the basis construction.
inline vec reconstruct_in_basis(const norm_max_basis_t& b, const vec& beta) {
    const std::size_t d = b.basis.size();
    const std::size_t k = b.picked_orig.size();
    vec mu(k, 0.0); // discovery order
    vec x = beta;
    std::vector<double> proj_coeff(k, 0.0);
    for (std::size_t L = 0; L < k; ++L) {
        const vec& pm = b.chain[L][L];
        proj_coeff[L] = dot(x, pm) / norm2(pm);
        axpy(-proj_coeff[L], pm, x);
    }
    for (std::size_t L = k; L-- > 0;) {
        double c = proj_coeff[L];
        for (std::size_t j = L + 1; j < k; ++j) {
            const vec& xjL = b.chain[j][L];
            c -= mu[j] * (dot(xjL, b.chain[L][L]) / norm2(b.chain[L][L]));
        }
        mu[L] = c;
    }
    vec lambda(d, 0.0);
    for (std::size_t j = 0; j < k; ++j) lambda[d - 1 - j] = mu[j];
    return lambda;
}

// ---------------------------------------------------------------------------
// Dominating strategy: invests fraction q_t(beta_hat) of current wealth each
// period with capital (2^{d+1}-1)^T x; its frictionless terminal wealth
// dominates that of every strategy with capital x and nonnegative wealth.

struct dominating_result {
    double x_hat = 0.0;
    strategy s;
    std::vector<vec> beta_hat;   // per node (empty for terminal nodes)
    std::vector<vec> q_beta_hat; // purely nonreversible part actually held
    std::vector<double> wealth;  // V^0_t(x_hat, N_hat) per node
};

inline dominating_result dominating_strategy(const scenario_tree& tree, double x) {
    detail::require_dim(tree);
    if (!(x > 0.0)) fail(errc::parse_error, "dominating strategy requires x > 0");
    na_report na = check_na(tree);
    if (!na.holds)
        fail(errc::arbitrage_detected,
             "arbitrage at node " + std::to_string(tree.at(na.violation->node_id).input_id));

    const std::size_t d = static_cast<std::size_t>(tree.num_assets);
    const double mult = std::pow(2.0, static_cast<double>(d) + 1.0) - 1.0;

    dominating_result out;
    out.x_hat = std::pow(mult, tree.horizon) * x;
    out.s = strategy::zero(tree);
    out.beta_hat.assign(tree.nodes.size(), {});
    out.q_beta_hat.assign(tree.nodes.size(), {});
    out.wealth.assign(tree.nodes.size(), 0.0);

    for (const node& n : tree.nodes) {
        const std::size_t i = static_cast<std::size_t>(n.id);
        if (n.parent < 0) {
            out.wealth[i] = out.x_hat;
        } else {
            const std::size_t p = static_cast<std::size_t>(n.parent);
            const node& pn = tree.at(n.parent);
            double gain = 0.0;
            const vec& hold = out.q_beta_hat[p];
            for (std::size_t j = 0; j < d; ++j)
                gain += hold[j] * out.wealth[p] *
                        (n.prices[j] - (1.0 + n.rate) * pn.prices[j]);
            out.wealth[i] = out.wealth[p] * (1.0 + n.rate) + gain;
        }
        if (n.children.empty()) continue;
        norm_max_basis_t basis = norm_max_basis(tree, n.id);
        vec bh(d, 0.0);
        double w = 1.0;
        for (std::size_t bi = 0; bi < basis.basis.size(); ++bi) {
            axpy(w / mult, basis.basis[bi], bh);
            w *= 2.0;
        }
        out.beta_hat[i] = bh;
        out.q_beta_hat[i] = decompose(tree, n.id, bh).nonreversible;
        for (std::size_t j = 0; j < d; ++j) {
            double qty = out.q_beta_hat[i][j] * out.wealth[i];
            if (qty != 0.0) out.s.set(n.id, n.time, static_cast<int>(j), qty);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Per-node cone report for inspection / CLI output.

struct node_cone_report {
    int node_id = 0;
    std::vector<vec> generators;
    std::optional<vec> arbitrage;
    std::vector<halfspace> halfspaces;
    double radius = 0.0;
    std::vector<vec> basis;
};

struct cone_report {
    std::vector<node_cone_report> nodes; // interior nodes in canonical order
};

inline cone_report analyze_tree(const scenario_tree& tree) {
    detail::require_dim(tree);
    cone_report rep;
    for (const node& n : tree.nodes) {
        if (n.children.empty()) continue;
        node_cone_report r;
        r.node_id = n.id;
        r.generators = reversible_cone(tree, n.id);
        r.arbitrage = node_arbitrage(tree, n.id);
        if (!r.arbitrage) {
            admissible_polytope_t poly = admissible_polytope(tree, n.id);
            r.halfspaces = std::move(poly.halfspaces);
            r.radius = poly.radius;
            r.basis = norm_max_basis(tree, n.id).basis;
        }
        rep.nodes.push_back(std::move(r));
    }
    return rep;
}

} // namespace lultax
