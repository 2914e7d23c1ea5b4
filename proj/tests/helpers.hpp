#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "lultax/cone_analysis.hpp"
#include "lultax/errors.hpp"
#include "lultax/rng.hpp"
#include "lultax/strategy.hpp"
#include "lultax/tax_engine.hpp"
#include "lultax/tree.hpp"

namespace testutil {

using namespace lultax;

inline scenario_tree one_period(const vec& initial,
                                const std::vector<std::pair<double, vec>>& children,
                                double rate) {
    raw_tree raw;
    raw.horizon = 1;
    raw.num_assets = static_cast<int>(initial.size());
    raw_node root;
    root.id = 0;
    root.time = 0;
    root.prices = initial;
    raw.nodes.push_back(root);
    std::int64_t next = 1;
    for (const auto& [p, S] : children) {
        raw_node n;
        n.id = next++;
        n.time = 1;
        n.has_parent = true;
        n.parent = 0;
        n.prob = p;
        n.prices = S;
        n.rate = rate;
        raw.nodes.push_back(std::move(n));
    }
    return validate_tree(raw);
}

// d = 1, S0 = 1, children {2, 0.5} equally likely, r = 0.
inline scenario_tree binary_up_down() {
    return one_period({1.0}, {{0.5, {2.0}}, {0.5, {0.5}}}, 0.0);
}

// Random tree with positive prices and nonnegative rates. Not necessarily
// arbitrage-free.
inline scenario_tree random_tree(rng& gen, int horizon, int max_branch, int d,
                                 double max_rate = 0.1) {
    raw_tree raw;
    raw.horizon = horizon;
    raw.num_assets = d;
    raw_node root;
    root.id = 0;
    root.time = 0;
    for (int j = 0; j < d; ++j) root.prices.push_back(0.5 + 1.5 * gen.uniform());
    raw.nodes.push_back(root);
    std::vector<std::size_t> frontier{0};
    std::int64_t next = 1;
    for (int t = 1; t <= horizon; ++t) {
        std::vector<std::size_t> nxt;
        for (std::size_t pi : frontier) {
            int branch = 1 + static_cast<int>(gen.below(static_cast<std::uint64_t>(max_branch)));
            vec probs;
            double sum = 0.0;
            for (int b = 0; b < branch; ++b) {
                probs.push_back(0.1 + gen.uniform());
                sum += probs.back();
            }
            for (int b = 0; b < branch; ++b) {
                raw_node n;
                n.id = next++;
                n.time = t;
                n.has_parent = true;
                n.parent = raw.nodes[pi].id;
                n.prob = probs[static_cast<std::size_t>(b)] / sum;
                n.rate = max_rate * gen.uniform();
                for (int j = 0; j < d; ++j) {
                    double excess = 0.9 * (gen.uniform() - 0.45);
                    n.prices.push_back(raw.nodes[pi].prices[static_cast<std::size_t>(j)] *
                                       (1.0 + n.rate + excess));
                }
                nxt.push_back(raw.nodes.size());
                raw.nodes.push_back(std::move(n));
            }
        }
        frontier = std::move(nxt);
    }
    return validate_tree(raw);
}

// Arbitrage-free by construction: every interior node gets one child whose
// excess return is strictly negative in every asset, so no nonnegative
// position has nonnegative one-period gains in all states.
inline scenario_tree random_na_tree(rng& gen, int horizon, int max_branch, int d,
                                    double max_rate = 0.1) {
    raw_tree raw;
    raw.horizon = horizon;
    raw.num_assets = d;
    raw_node root;
    root.id = 0;
    root.time = 0;
    for (int j = 0; j < d; ++j) root.prices.push_back(0.5 + 1.5 * gen.uniform());
    raw.nodes.push_back(root);
    std::vector<std::size_t> frontier{0};
    std::int64_t next = 1;
    for (int t = 1; t <= horizon; ++t) {
        std::vector<std::size_t> nxt;
        for (std::size_t pi : frontier) {
            int branch = 1 + static_cast<int>(gen.below(static_cast<std::uint64_t>(max_branch)));
            std::uint64_t down_child = gen.below(static_cast<std::uint64_t>(branch));
            vec probs;
            double sum = 0.0;
            for (int b = 0; b < branch; ++b) {
                probs.push_back(0.1 + gen.uniform());
                sum += probs.back();
            }
            for (int b = 0; b < branch; ++b) {
                raw_node n;
                n.id = next++;
                n.time = t;
                n.has_parent = true;
                n.parent = raw.nodes[pi].id;
                n.prob = probs[static_cast<std::size_t>(b)] / sum;
                n.rate = max_rate * gen.uniform();
                const bool down = static_cast<std::uint64_t>(b) == down_child;
                for (int j = 0; j < d; ++j) {
                    double excess = down ? -(0.02 + 0.35 * gen.uniform())
                                         : 0.9 * (gen.uniform() - 0.45);
                    n.prices.push_back(raw.nodes[pi].prices[static_cast<std::size_t>(j)] *
                                       (1.0 + n.rate + excess));
                }
                nxt.push_back(raw.nodes.size());
                raw.nodes.push_back(std::move(n));
            }
        }
        frontier = std::move(nxt);
    }
    scenario_tree t = validate_tree(raw);
    if (!check_na(t).holds) fail(errc::diverged, "constructed tree admits arbitrage");
    return t;
}

// Random strategy rescaled so the frictionless terminal wealth is
// nonnegative at every leaf (V^0 is affine in N for fixed x).
inline strategy random_admissible(const scenario_tree& tree, rng& gen, double x,
                                  double scale = 1.0) {
    strategy s = sample_strategy(tree, gen.raw(), scale);
    tax_ledger with = evaluate(tree, s, x, 0.0);
    tax_ledger bank = evaluate(tree, strategy::zero(tree), x, 0.0);
    double c = 1.0;
    for (int leaf : tree.leaves()) {
        double v = with.bank[static_cast<std::size_t>(leaf)];
        double b = bank.bank[static_cast<std::size_t>(leaf)];
        if (v < 0.0) c = std::min(c, 0.95 * b / (b - v));
    }
    return c < 1.0 ? scale_strategy(s, c) : s;
}

// Definition-level reference: recomputes G, Pi and eta along one path from
// the displayed formulas with dense blocks, independent of the engine's
// incremental bookkeeping.
inline double naive_terminal(const scenario_tree& tree, const strategy& s, double x, double alpha,
                             int leaf) {
    const auto& path = tree.paths[static_cast<std::size_t>(leaf)];
    const int T = static_cast<int>(path.size()) - 1;
    const int d = tree.num_assets;
    auto qty = [&](int i, int t, int j) {
        return s.qty(path[static_cast<std::size_t>(t)], i, j);
    };
    auto price = [&](int t, int j) {
        return tree.at(path[static_cast<std::size_t>(t)]).prices[static_cast<std::size_t>(j)];
    };
    auto rate = [&](int t) { return tree.at(path[static_cast<std::size_t>(t)]).rate; };

    std::vector<double> eta(static_cast<std::size_t>(T) + 1, 0.0);
    std::vector<double> G(static_cast<std::size_t>(T) + 1, 0.0);
    std::vector<double> Pi(static_cast<std::size_t>(T) + 1, 0.0);
    double eta_prev = x;
    for (int t = 0; t <= T; ++t) {
        // G_t from scratch per the definition
        double g = 0.0;
        for (int u = 1; u <= t; ++u) {
            g += eta[static_cast<std::size_t>(u - 1)] * rate(u);
            for (int i = 0; i < u; ++i)
                for (int j = 0; j < d; ++j)
                    g += (qty(i, u - 1, j) - qty(i, u, j)) * (price(u, j) - price(i, j));
        }
        G[static_cast<std::size_t>(t)] = g;
        double m = 0.0;
        for (int u = 0; u <= t; ++u) m = std::max(m, G[static_cast<std::size_t>(u)]);
        Pi[static_cast<std::size_t>(t)] = alpha * m;
        double trade = 0.0;
        for (int j = 0; j < d; ++j) {
            for (int i = 0; i < t; ++i) trade += (qty(i, t - 1, j) - qty(i, t, j)) * price(t, j);
            trade -= qty(t, t, j) * price(t, j);
        }
        double e = eta_prev + (t >= 1 ? rate(t) * eta_prev : 0.0) + trade -
                   (t >= 1 ? Pi[static_cast<std::size_t>(t)] - Pi[static_cast<std::size_t>(t - 1)]
                           : 0.0);
        eta[static_cast<std::size_t>(t)] = e;
        eta_prev = e;
    }
    return eta[static_cast<std::size_t>(T)];
}

template <typename F>
inline errc caught_kind(F&& fn) {
    try {
        fn();
    } catch (const error& e) {
        return e.kind();
    }
    throw std::runtime_error("expected a lultax error");
}

} // namespace testutil
