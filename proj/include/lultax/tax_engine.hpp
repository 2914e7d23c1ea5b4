#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lultax/errors.hpp"
#include "lultax/strategy.hpp"
#include "lultax/tree.hpp"

namespace lultax {

inline double money_tol(double x) { return 1e-10 * std::max(1.0, std::abs(x)); }

// Per-node wealth and tax processes for one (tree, N, x, alpha) evaluation.
// `taxes` is cumulative (Pi_t), `bank` is the post-tax post-trade balance
// (eta_t), `frictionless` is the alpha = 0 wealth process V^0_t.
struct tax_ledger {
    double x = 0.0;
    double alpha = 0.0;
    std::vector<double> gains;        // G_t
    std::vector<double> running_max;  // max_{u<=t} G_u
    std::vector<double> taxes;        // Pi_t
    std::vector<double> bank;         // eta_t
    std::vector<double> frictionless; // V^0_t

    // Terminal after-tax wealth per leaf, aligned with tree.leaves().
    std::vector<double> terminal_wealth(const scenario_tree& tree) const {
        std::vector<double> v;
        v.reserve(tree.leaves().size());
        for (int id : tree.leaves()) v.push_back(bank[static_cast<std::size_t>(id)]);
        return v;
    }

    double expected_terminal(const scenario_tree& tree) const {
        double e = 0.0;
        for (int id : tree.leaves())
            e += tree.at(id).path_prob * bank[static_cast<std::size_t>(id)];
        return e;
    }
};

namespace detail {

// Rule-independent cash flows at a node: realized stock P&L against exact lot
// bases, and the net trade cash hitting the bank account.
struct node_flow {
    double stock_gain = 0.0;
    double trade_cash = 0.0;
};

inline std::vector<node_flow> compute_flows(const scenario_tree& tree, const strategy& s) {
    std::vector<node_flow> flows(tree.nodes.size());
    for (const node& n : tree.nodes) {
        node_flow& f = flows[static_cast<std::size_t>(n.id)];
        const auto& ls = s.lots[static_cast<std::size_t>(n.id)];
        if (n.parent < 0) {
            for (const lot& l : ls)
                f.trade_cash -= l.qty * n.prices[static_cast<std::size_t>(l.asset)];
            continue;
        }
        const auto& pls = s.lots[static_cast<std::size_t>(n.parent)];
        auto ia = pls.begin();
        auto ib = ls.begin();
        auto handle = [&](int buy_time, int asset, double parent_qty, double node_qty) {
            double price = n.prices[static_cast<std::size_t>(asset)];
            if (buy_time == n.time) {
                f.trade_cash -= node_qty * price; // fresh purchase
                return;
            }
            double sold = parent_qty - node_qty;
            if (sold == 0.0) return;
            double basis = tree.ancestor_price(n.id, buy_time, asset);
            f.stock_gain += sold * (price - basis);
            f.trade_cash += sold * price;
        };
        while (ia != pls.end() || ib != ls.end()) {
            if (ib == ls.end() || (ia != pls.end() && lot_key_less(*ia, *ib))) {
                handle(ia->buy_time, ia->asset, ia->qty, 0.0);
                ++ia;
            } else if (ia == pls.end() || lot_key_less(*ib, *ia)) {
                handle(ib->buy_time, ib->asset, 0.0, ib->qty);
                ++ib;
            } else {
                handle(ia->buy_time, ia->asset, ia->qty, ib->qty);
                ++ia;
                ++ib;
            }
        }
    }
    return flows;
}

inline void require_alpha(double alpha) {
    if (!(alpha >= 0.0 && alpha < 1.0))
        fail(errc::parse_error, "alpha must lie in [0,1), got " + std::to_string(alpha));
}

} // namespace detail

// ---------------------------------------------------------------------------
// evaluate: LUL wealth via the self-financing recursion, cross-checked
// against the closed form eta_t = x + G_t - Pi_t - sum_i <N_{i,t}, S_i>.

inline tax_ledger evaluate(const scenario_tree& tree, const strategy& s, double x, double alpha,
                           bool cross_check = true) {
    detail::require_alpha(alpha);
    if (s.lots.size() != tree.nodes.size())
        fail(errc::dimension_mismatch, "strategy does not match tree");
    const auto flows = detail::compute_flows(tree, s);

    tax_ledger led;
    led.x = x;
    led.alpha = alpha;
    const std::size_t n_nodes = tree.nodes.size();
    led.gains.assign(n_nodes, 0.0);
    led.running_max.assign(n_nodes, 0.0);
    led.taxes.assign(n_nodes, 0.0);
    led.bank.assign(n_nodes, 0.0);
    led.frictionless.assign(n_nodes, 0.0);

    for (const node& n : tree.nodes) {
        const std::size_t i = static_cast<std::size_t>(n.id);
        const detail::node_flow& f = flows[i];
        if (n.parent < 0) {
            led.gains[i] = 0.0;
            led.running_max[i] = 0.0;
            led.taxes[i] = 0.0;
            led.bank[i] = x + f.trade_cash; // time 0 is pure trading
            led.frictionless[i] = x;
        } else {
            const std::size_t p = static_cast<std::size_t>(n.parent);
            const node& pn = tree.nodes[p];
            led.gains[i] = led.gains[p] + led.bank[p] * n.rate + f.stock_gain;
            led.running_max[i] = std::max(led.running_max[p], led.gains[i]);
            led.taxes[i] = alpha * led.running_max[i];
            led.bank[i] =
                led.bank[p] * (1.0 + n.rate) + f.trade_cash - (led.taxes[i] - led.taxes[p]);
            double drift = 0.0;
            for (int j = 0; j < tree.num_assets; ++j) {
                double hold = 0.0;
                for (const lot& l : s.lots[p])
                    if (l.asset == j) hold += l.qty;
                drift += hold * (n.prices[static_cast<std::size_t>(j)] -
                                 (1.0 + n.rate) * pn.prices[static_cast<std::size_t>(j)]);
            }
            led.frictionless[i] = led.frictionless[p] * (1.0 + n.rate) + drift;
        }
        if (cross_check) {
            double basis_value = 0.0;
            for (const lot& l : s.lots[i])
                basis_value += l.qty * tree.ancestor_price(n.id, l.buy_time, l.asset);
            double closed_form = x + led.gains[i] - led.taxes[i] - basis_value;
            if (std::abs(closed_form - led.bank[i]) > money_tol(x))
                fail(errc::engine_inconsistency,
                     "bank recursion and closed form disagree at node " +
                         std::to_string(n.input_id) + " (" + std::to_string(led.bank[i]) +
                         " vs " + std::to_string(closed_form) + ")");
        }
    }
    return led;
}

// Accumulated realized P&L per node. G is computed jointly with eta because
// its increments carry taxed bank interest.
inline std::vector<double> realized_gains(const scenario_tree& tree, const strategy& s, double x,
                                          double alpha) {
    return evaluate(tree, s, x, alpha).gains;
}

// Pi_t = alpha * max_{u<=t} G_u along each path, for an externally supplied G.
inline std::vector<double> lul_tax_stream(const scenario_tree& tree, const std::vector<double>& gains,
                                          double alpha) {
    detail::require_alpha(alpha);
    if (gains.size() != tree.nodes.size())
        fail(errc::dimension_mismatch, "gains vector does not match tree");
    std::vector<double> run(tree.nodes.size(), 0.0);
    std::vector<double> pi(tree.nodes.size(), 0.0);
    for (const node& n : tree.nodes) {
        const std::size_t i = static_cast<std::size_t>(n.id);
        if (n.parent < 0)
            run[i] = std::max(0.0, gains[i]);
        else
            run[i] = std::max(run[static_cast<std::size_t>(n.parent)], gains[i]);
        pi[i] = alpha * run[i];
    }
    return pi;
}

// ---------------------------------------------------------------------------
// Artificial linear tax rules: taxes (possibly negative) are settled as
// alpha * G_{tau_t}, where tau is an adapted nondecreasing schedule.

struct tax_rule {
    std::vector<int> value; // per canonical node id, tau_t in {0..t}

    static tax_rule never(const scenario_tree& tree) {
        tax_rule r;
        r.value.assign(tree.nodes.size(), 0);
        return r;
    }
};

inline void validate_tax_rule(const scenario_tree& tree, const tax_rule& rule) {
    if (rule.value.size() != tree.nodes.size())
        fail(errc::invalid_tax_rule, "rule covers " + std::to_string(rule.value.size()) + " nodes");
    for (const node& n : tree.nodes) {
        int v = rule.value[static_cast<std::size_t>(n.id)];
        if (v < 0 || v > n.time)
            fail(errc::invalid_tax_rule,
                 "tau = " + std::to_string(v) + " at node " + std::to_string(n.input_id) +
                     " (time " + std::to_string(n.time) + ")");
        if (n.parent >= 0) {
            int pv = rule.value[static_cast<std::size_t>(n.parent)];
            if (v < pv)
                fail(errc::invalid_tax_rule,
                     "tau decreases along the path at node " + std::to_string(n.input_id));
        }
        if (v >= 1) {
            int anc = tree.paths[static_cast<std::size_t>(n.id)][static_cast<std::size_t>(v)];
            if (rule.value[static_cast<std::size_t>(anc)] != v)
                fail(errc::invalid_tax_rule,
                     "tau_{tau_t} != tau_t at node " + std::to_string(n.input_id));
        }
    }
}

struct rule_wealth {
    std::vector<double> gains; // G under the rule
    std::vector<double> taxes; // Pi^{(tau)}_t = alpha * G_{tau_t}
    std::vector<double> bank;  // eta^{(tau)}_t

    std::vector<double> terminal_wealth(const scenario_tree& tree) const {
        std::vector<double> v;
        v.reserve(tree.leaves().size());
        for (int id : tree.leaves()) v.push_back(bank[static_cast<std::size_t>(id)]);
        return v;
    }
};

inline rule_wealth linear_rule_wealth(const scenario_tree& tree, const strategy& s, double x,
                                      double alpha, const tax_rule& rule) {
    detail::require_alpha(alpha);
    validate_tax_rule(tree, rule);
    const auto flows = detail::compute_flows(tree, s);
    rule_wealth rw;
    rw.gains.assign(tree.nodes.size(), 0.0);
    rw.taxes.assign(tree.nodes.size(), 0.0);
    rw.bank.assign(tree.nodes.size(), 0.0);
    for (const node& n : tree.nodes) {
        const std::size_t i = static_cast<std::size_t>(n.id);
        if (n.parent < 0) {
            rw.bank[i] = x + flows[i].trade_cash;
            continue;
        }
        const std::size_t p = static_cast<std::size_t>(n.parent);
        rw.gains[i] = rw.gains[p] + rw.bank[p] * n.rate + flows[i].stock_gain;
        int v = rule.value[i];
        double settled =
            v == 0 ? 0.0
                   : rw.gains[static_cast<std::size_t>(
                         tree.paths[i][static_cast<std::size_t>(v)])];
        rw.taxes[i] = alpha * settled;
        rw.bank[i] = rw.bank[p] * (1.0 + n.rate) + flows[i].trade_cash - (rw.taxes[i] - rw.taxes[p]);
    }
    return rw;
}

// ---------------------------------------------------------------------------
// min over tax rules
//
// Along a fixed path, a valid schedule is determined by the set of times at
// which accumulated gains are settled, so the leafwise minimum over adapted
// rules equals a minimum over subsets of {1..T} per leaf.

struct min_rules_result {
    std::vector<double> leaf_min;   // aligned with tree.leaves()
    std::uint64_t rules_scanned = 0;
};

inline min_rules_result min_over_tax_rules(const scenario_tree& tree, const strategy& s, double x,
                                           double alpha, std::uint64_t cap = 1000000) {
    detail::require_alpha(alpha);
    const int T = tree.horizon;
    const std::uint64_t per_leaf = std::uint64_t{1} << T;
    const std::uint64_t total = per_leaf * tree.leaves().size();
    if (total > cap)
        fail(errc::enumeration_cap_exceeded,
             std::to_string(total) + " rules exceed cap " + std::to_string(cap));

    const auto flows = detail::compute_flows(tree, s);
    min_rules_result res;
    res.rules_scanned = total;
    res.leaf_min.reserve(tree.leaves().size());

    std::vector<double> rate(static_cast<std::size_t>(T) + 1, 0.0);
    std::vector<double> sg(static_cast<std::size_t>(T) + 1, 0.0);
    std::vector<double> cash(static_cast<std::size_t>(T) + 1, 0.0);
    std::vector<double> G(static_cast<std::size_t>(T) + 1, 0.0);

    for (int leaf : tree.leaves()) {
        const auto& path = tree.paths[static_cast<std::size_t>(leaf)];
        for (int t = 0; t <= T; ++t) {
            const node& n = tree.at(path[static_cast<std::size_t>(t)]);
            rate[static_cast<std::size_t>(t)] = n.rate;
            sg[static_cast<std::size_t>(t)] = flows[static_cast<std::size_t>(n.id)].stock_gain;
            cash[static_cast<std::size_t>(t)] = flows[static_cast<std::size_t>(n.id)].trade_cash;
        }
        double best = 0.0;
        bool first = true;
        for (std::uint64_t mask = 0; mask < per_leaf; ++mask) {
            double eta = x + cash[0];
            double pi_prev = 0.0;
            int last_settle = 0;
            G[0] = 0.0;
            for (int t = 1; t <= T; ++t) {
                G[static_cast<std::size_t>(t)] = G[static_cast<std::size_t>(t - 1)] +
                                                 eta * rate[static_cast<std::size_t>(t)] +
                                                 sg[static_cast<std::size_t>(t)];
                if (mask & (std::uint64_t{1} << (t - 1))) last_settle = t;
                double pi = alpha * G[static_cast<std::size_t>(last_settle)];
                eta = eta * (1.0 + rate[static_cast<std::size_t>(t)]) +
                      cash[static_cast<std::size_t>(t)] - (pi - pi_prev);
                pi_prev = pi;
            }
            if (first || eta < best) {
                best = eta;
                first = false;
            }
        }
        res.leaf_min.push_back(best);
    }
    return res;
}

} // namespace lultax
