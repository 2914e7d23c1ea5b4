#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "lultax/cone_analysis.hpp"
#include "lultax/errors.hpp"
#include "lultax/strategy.hpp"
#include "lultax/tax_engine.hpp"
#include "lultax/tree.hpp"

namespace lultax {

// ---------------------------------------------------------------------------
// Wash-sale transform: period by period, every lot whose price at time u has
// fallen strictly below its basis is sold and repurchased into the time-u
// lot. Ties (S_u == S_i) keep the lot. The result realizes losses and its
// after-tax wealth dominates the input leafwise for every initial capital.

inline strategy wash_sale_transform(const scenario_tree& tree, const strategy& input) {
    strategy cur = input;
    for (int u = 1; u <= tree.horizon - 1; ++u) {
        strategy next = strategy::zero(tree);
        for (const node& n : tree.nodes) {
            const int t = n.time;
            const auto& ls = cur.lots[static_cast<std::size_t>(n.id)];
            if (t < u) {
                next.lots[static_cast<std::size_t>(n.id)] = ls;
                continue;
            }
            for (const lot& l : ls) {
                const int i = l.buy_time;
                if (i > u) {
                    next.set(n.id, i, l.asset, next.qty(n.id, i, l.asset) + l.qty);
                } else if (i == u) {
                    next.set(n.id, u, l.asset, next.qty(n.id, u, l.asset) + l.qty);
                } else {
                    double price_u = tree.ancestor_price(n.id, u, l.asset);
                    double basis = tree.ancestor_price(n.id, i, l.asset);
                    if (price_u >= basis)
                        next.set(n.id, i, l.asset, next.qty(n.id, i, l.asset) + l.qty);
                    else
                        next.set(n.id, u, l.asset, next.qty(n.id, u, l.asset) + l.qty);
                }
            }
        }
        next.prune();
        cur = std::move(next);
    }
    return cur;
}

// ---------------------------------------------------------------------------
// Immediate realization: sell everything each period and rebuy the purely
// nonreversible part of the aggregate position. Preserves the frictionless
// wealth process.

inline strategy immediate_realization(const scenario_tree& tree, const strategy& input) {
    strategy out = strategy::zero(tree);
    for (const node& n : tree.nodes) {
        if (n.children.empty()) continue;
        vec q = q_projection(tree, input, n.id);
        for (int j = 0; j < tree.num_assets; ++j)
            if (q[static_cast<std::size_t>(j)] > 0.0)
                out.set(n.id, n.time, j, q[static_cast<std::size_t>(j)]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stopped strategy N^{(tau)}_{i,t} = N_{i,t} 1_{tau > t}.

inline strategy stop_strategy(const scenario_tree& tree, const strategy& input,
                              const stopping_time& tau) {
    validate_stopping_time(tree, tau);
    strategy out = strategy::zero(tree);
    for (const node& n : tree.nodes)
        if (tau.active(tree, n.id))
            out.lots[static_cast<std::size_t>(n.id)] = input.lots[static_cast<std::size_t>(n.id)];
    return out;
}

// ---------------------------------------------------------------------------
// Loss bound L_t(N) = ((-x) v 0 + sum_{s<t} <q_s(sum_i N_{i,s}), S_s>) (1+rbar)^T.
// Known one step ahead; for loss-realizing strategies V^alpha(x, N) >= -L_T.

struct loss_bound_t {
    double r_bar = 0.0;
    std::vector<double> bound; // L_t per node
};

inline loss_bound_t loss_bound(const scenario_tree& tree, const strategy& s, double x,
                               double r_bar) {
    for (const node& n : tree.nodes) {
        for (double p : n.prices)
            if (p < 0.0)
                fail(errc::negative_price_forbidden,
                     "negative price at node " + std::to_string(n.input_id));
        if (n.time >= 1 && n.rate > r_bar + 1e-12)
            fail(errc::rate_bound_violated, "rate " + std::to_string(n.rate) + " at node " +
                                                std::to_string(n.input_id) + " exceeds bound " +
                                                std::to_string(r_bar));
    }
    const double growth = std::pow(1.0 + r_bar, tree.horizon);
    const double base = std::max(-x, 0.0);
    loss_bound_t out;
    out.r_bar = r_bar;
    out.bound.assign(tree.nodes.size(), 0.0);
    std::vector<double> accum(tree.nodes.size(), 0.0);
    for (const node& n : tree.nodes) {
        const std::size_t i = static_cast<std::size_t>(n.id);
        if (n.parent >= 0) {
            const std::size_t p = static_cast<std::size_t>(n.parent);
            const node& pn = tree.at(n.parent);
            vec q = q_projection(tree, s, pn.id);
            accum[i] = accum[p] + dot(q, pn.prices);
        }
        out.bound[i] = (base + accum[i]) * growth;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalized one-period strategy beta_t = q_t(sum_i N_{i,t}) / V^0_t, with
// beta = 0 where the frictionless wealth vanishes. Verifies the product
// representation of the wealth process.

struct normalized_result {
    std::vector<vec> beta;             // per node; empty at terminal nodes
    std::vector<double> frictionless;  // V^0_t per node
};

inline constexpr double wealth_zero_tol = 1e-12;

inline normalized_result normalized_strategy(const scenario_tree& tree, const strategy& s,
                                             double x) {
    tax_ledger led = evaluate(tree, s, x, 0.0);
    normalized_result out;
    out.frictionless = led.frictionless;
    out.beta.assign(tree.nodes.size(), {});
    for (const node& n : tree.nodes) {
        const std::size_t i = static_cast<std::size_t>(n.id);
        double v0 = led.frictionless[i];
        if (v0 < -wealth_zero_tol * std::max(1.0, std::abs(x)))
            fail(errc::negative_wealth_encountered,
                 "V^0 = " + std::to_string(v0) + " at node " + std::to_string(n.input_id));
        if (n.children.empty()) continue;
        if (std::abs(v0) <= wealth_zero_tol) {
            out.beta[i].assign(static_cast<std::size_t>(tree.num_assets), 0.0);
            continue;
        }
        vec q = q_projection(tree, s, n.id);
        out.beta[i] = scaled(q, 1.0 / v0);
    }
    // product identity check
    for (const node& n : tree.nodes) {
        const std::size_t i = static_cast<std::size_t>(n.id);
        double prod = x;
        const auto& path = tree.paths[i];
        for (std::size_t k = 1; k < path.size(); ++k) {
            const node& cur = tree.at(path[k]);
            const node& prev = tree.at(path[k - 1]);
            const vec& b = out.beta[static_cast<std::size_t>(prev.id)];
            double drift = 0.0;
            for (int j = 0; j < tree.num_assets; ++j)
                drift += b[static_cast<std::size_t>(j)] *
                         (cur.prices[static_cast<std::size_t>(j)] -
                          (1.0 + cur.rate) * prev.prices[static_cast<std::size_t>(j)]);
            prod *= 1.0 + cur.rate + drift;
        }
        double v0 = led.frictionless[i];
        if (std::abs(prod - v0) > 1e-9 * std::max({1.0, std::abs(v0), std::abs(x)}))
            fail(errc::engine_inconsistency,
                 "product identity off at node " + std::to_string(n.input_id) + " (" +
                     std::to_string(prod) + " vs " + std::to_string(v0) + ")");
    }
    return out;
}

} // namespace lultax
