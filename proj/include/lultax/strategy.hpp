#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lultax/errors.hpp"
#include "lultax/rng.hpp"
#include "lultax/tree.hpp"

namespace lultax {

// N_{i,t,j}: shares of asset `asset` bought at `buy_time` still held after
// trading at the node's time. Assets are 0-based internally, 1-based in the
// JSON interchange format.
struct lot {
    int buy_time = 0;
    int asset = 0;
    double qty = 0.0;
};

inline bool lot_key_less(const lot& a, const lot& b) {
    return a.buy_time != b.buy_time ? a.buy_time < b.buy_time : a.asset < b.asset;
}

// Adapted lot-level strategy. Lots are stored sparsely per node; dense
// (i, j) blocks are reconstructed on demand.
struct strategy {
    std::vector<std::vector<lot>> lots; // indexed by canonical node id

    static strategy zero(const scenario_tree& tree) {
        strategy s;
        s.lots.resize(tree.nodes.size());
        return s;
    }

    double qty(int node_id, int buy_time, int asset) const {
        const auto& ls = lots[static_cast<std::size_t>(node_id)];
        lot probe{buy_time, asset, 0.0};
        auto it = std::lower_bound(ls.begin(), ls.end(), probe, lot_key_less);
        if (it != ls.end() && it->buy_time == buy_time && it->asset == asset) return it->qty;
        return 0.0;
    }

    void set(int node_id, int buy_time, int asset, double q) {
        auto& ls = lots[static_cast<std::size_t>(node_id)];
        lot entry{buy_time, asset, q};
        auto it = std::lower_bound(ls.begin(), ls.end(), entry, lot_key_less);
        if (it != ls.end() && it->buy_time == buy_time && it->asset == asset) {
            it->qty = q;
        } else if (q != 0.0) {
            ls.insert(it, entry);
        }
    }

    // Drops zero entries; canonical sparse form.
    void prune() {
        for (auto& ls : lots)
            ls.erase(std::remove_if(ls.begin(), ls.end(), [](const lot& l) { return l.qty == 0.0; }),
                     ls.end());
    }

    // Aggregate holdings sum_i N_{i,t,j} at a node.
    vec aggregate_holdings(const scenario_tree& tree, int node_id) const {
        vec h(static_cast<std::size_t>(tree.num_assets), 0.0);
        for (const lot& l : lots[static_cast<std::size_t>(node_id)])
            h[static_cast<std::size_t>(l.asset)] += l.qty;
        return h;
    }

    // Dense (t+1) x d block of N_{i,t,j} at a node.
    std::vector<double> dense_block(const scenario_tree& tree, int node_id) const {
        const node& n = tree.at(node_id);
        std::vector<double> block(static_cast<std::size_t>((n.time + 1) * tree.num_assets), 0.0);
        for (const lot& l : lots[static_cast<std::size_t>(node_id)])
            block[static_cast<std::size_t>(l.buy_time * tree.num_assets + l.asset)] = l.qty;
        return block;
    }
};

inline constexpr double sell_down_tol = 1e-9;

inline strategy validate_strategy(const scenario_tree& tree, const strategy& s) {
    if (s.lots.size() != tree.nodes.size())
        fail(errc::tree_mismatch, "strategy covers " + std::to_string(s.lots.size()) +
                                      " nodes, tree has " + std::to_string(tree.nodes.size()));
    for (const node& n : tree.nodes) {
        const auto& ls = s.lots[static_cast<std::size_t>(n.id)];
        for (const lot& l : ls) {
            if (l.asset < 0 || l.asset >= tree.num_assets || l.buy_time < 0)
                fail(errc::dimension_mismatch, "lot (" + std::to_string(l.buy_time) + "," +
                                                   std::to_string(l.asset + 1) + ") at node " +
                                                   std::to_string(n.input_id));
            if (l.buy_time > n.time)
                fail(errc::dimension_mismatch, "lot bought at " + std::to_string(l.buy_time) +
                                                   " held at time " + std::to_string(n.time) +
                                                   " (node " + std::to_string(n.input_id) + ")");
            if (l.qty < 0.0)
                fail(errc::negative_lot, "N_{" + std::to_string(l.buy_time) + "," +
                                             std::to_string(n.time) + "," +
                                             std::to_string(l.asset + 1) + "} = " +
                                             std::to_string(l.qty) + " at node " +
                                             std::to_string(n.input_id));
            if (n.time == tree.horizon && l.qty > 0.0)
                fail(errc::not_liquidated_at_t,
                     "node " + std::to_string(n.input_id) + " still holds lot (" +
                         std::to_string(l.buy_time) + "," + std::to_string(l.asset + 1) + ")");
        }
        if (n.parent < 0) continue;
        // Monotone sell-down against the parent, over the union of lot keys.
        const auto& pls = s.lots[static_cast<std::size_t>(n.parent)];
        for (const lot& l : ls) {
            if (l.buy_time == n.time) continue; // fresh purchase
            double parent_qty = s.qty(n.parent, l.buy_time, l.asset);
            if (l.qty > parent_qty + sell_down_tol * std::max(1.0, parent_qty))
                fail(errc::sell_down_violated,
                     "node " + std::to_string(n.input_id) + " lot (" + std::to_string(l.buy_time) +
                         "," + std::to_string(l.asset + 1) + "): " + std::to_string(l.qty) +
                         " > parent " + std::to_string(parent_qty));
        }
        (void)pls;
    }
    return s;
}

// Uniformly random admissible strategy: purchases ~ U[0, scale] per
// node/asset, an independent surviving fraction per (lot, child), forced
// liquidation at T. Deterministic in `seed`.
inline strategy sample_strategy(const scenario_tree& tree, std::uint64_t seed, double scale) {
    rng gen(seed);
    strategy s = strategy::zero(tree);
    for (const node& n : tree.nodes) {
        if (n.parent >= 0 && n.time <= tree.horizon) {
            const auto parent_lots = s.lots[static_cast<std::size_t>(n.parent)];
            for (const lot& pl : parent_lots) {
                if (n.time == tree.horizon) continue; // liquidation, no draw
                double f = gen.uniform();
                double q = pl.qty * f;
                if (q > 0.0) s.set(n.id, pl.buy_time, pl.asset, q);
            }
        }
        if (n.time < tree.horizon) {
            for (int j = 0; j < tree.num_assets; ++j) {
                double q = gen.uniform() * scale;
                if (q > 0.0) s.set(n.id, n.time, j, q);
            }
        }
    }
    return s;
}

inline strategy convex_combine(const strategy& a, const strategy& b, double lambda) {
    if (a.lots.size() != b.lots.size())
        fail(errc::tree_mismatch, "strategies live on different trees");
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw std::invalid_argument("convex_combine: lambda outside [0,1]");
    strategy out;
    out.lots.resize(a.lots.size());
    for (std::size_t n = 0; n < a.lots.size(); ++n) {
        const auto& la = a.lots[n];
        const auto& lb = b.lots[n];
        auto ia = la.begin();
        auto ib = lb.begin();
        auto& dst = out.lots[n];
        while (ia != la.end() || ib != lb.end()) {
            if (ib == lb.end() || (ia != la.end() && lot_key_less(*ia, *ib))) {
                double q = lambda * ia->qty;
                if (q != 0.0) dst.push_back({ia->buy_time, ia->asset, q});
                ++ia;
            } else if (ia == la.end() || lot_key_less(*ib, *ia)) {
                double q = (1.0 - lambda) * ib->qty;
                if (q != 0.0) dst.push_back({ib->buy_time, ib->asset, q});
                ++ib;
            } else {
                double q = lambda * ia->qty + (1.0 - lambda) * ib->qty;
                if (q != 0.0) dst.push_back({ia->buy_time, ia->asset, q});
                ++ia;
                ++ib;
            }
        }
    }
    return out;
}

inline strategy scale_strategy(const strategy& a, double c) {
    strategy out = a;
    for (auto& ls : out.lots)
        for (lot& l : ls) l.qty *= c;
    out.prune();
    return out;
}

// ---------------------------------------------------------------------------
// Stopping times
//
// `value[n] <= time(n)` means the stopping time fired at value[n] on this
// path; larger values mean "not yet", so {tau > t} is decided by the node.

struct stopping_time {
    std::vector<int> value; // per canonical node id

    bool active(const scenario_tree& tree, int node_id) const {
        return value[static_cast<std::size_t>(node_id)] > tree.at(node_id).time;
    }

    static stopping_time constant(const scenario_tree& tree, int k) {
        stopping_time tau;
        tau.value.assign(tree.nodes.size(), k);
        return tau;
    }
};

inline void validate_stopping_time(const scenario_tree& tree, const stopping_time& tau) {
    if (tau.value.size() != tree.nodes.size())
        fail(errc::invalid_stopping_time, "stopping time covers " +
                                              std::to_string(tau.value.size()) + " nodes");
    for (const node& n : tree.nodes) {
        int v = tau.value[static_cast<std::size_t>(n.id)];
        if (v < 0 || v > tree.horizon)
            fail(errc::invalid_stopping_time,
                 "value " + std::to_string(v) + " at node " + std::to_string(n.input_id));
        if (n.parent >= 0) {
            int pv = tau.value[static_cast<std::size_t>(n.parent)];
            int pt = tree.at(n.parent).time;
            if (pv <= pt && v != pv)
                fail(errc::invalid_stopping_time,
                     "node " + std::to_string(n.input_id) + " changes a reached value");
            if (pv > pt && v < n.time)
                fail(errc::invalid_stopping_time,
                     "node " + std::to_string(n.input_id) + " stops in the past");
        }
    }
}

// ---------------------------------------------------------------------------
// JSON interchange
// strategy:  [{"node":id,"lots":[{"i":int,"j":int,"qty":float}]}]  (j 1-based)
// stopping:  [{"node":id,"tau":int}]

namespace detail {
inline int resolve_input_id(const scenario_tree& tree, std::int64_t input_id) {
    for (const node& n : tree.nodes)
        if (n.input_id == input_id) return n.id;
    fail(errc::unknown_node, "node id " + std::to_string(input_id) + " not in tree");
}
} // namespace detail

inline strategy strategy_from_json(const nlohmann::json& j, const scenario_tree& tree,
                                   bool lax = false) {
    if (!j.is_array()) fail(errc::parse_error, "strategy document must be an array");
    strategy s = strategy::zero(tree);
    try {
        for (const auto& ej : j) {
            for (const auto& [key, _] : ej.items())
                if (key != "node" && key != "lots" && !lax)
                    fail(errc::parse_error, "unknown strategy field '" + key + "'");
            int nid = detail::resolve_input_id(tree, ej.at("node").get<std::int64_t>());
            for (const auto& lj : ej.at("lots")) {
                for (const auto& [key, _] : lj.items())
                    if (key != "i" && key != "j" && key != "qty" && !lax)
                        fail(errc::parse_error, "unknown lot field '" + key + "'");
                int i = lj.at("i").get<int>();
                int j1 = lj.at("j").get<int>();
                double q = lj.at("qty").get<double>();
                if (j1 < 1 || j1 > tree.num_assets)
                    fail(errc::dimension_mismatch, "asset index " + std::to_string(j1));
                s.set(nid, i, j1 - 1, q);
            }
        }
    } catch (const error&) {
        throw;
    } catch (const std::exception& e) {
        fail(errc::parse_error, e.what());
    }
    return s;
}

inline nlohmann::json strategy_to_json(const scenario_tree& tree, const strategy& s) {
    nlohmann::json out = nlohmann::json::array();
    for (const node& n : tree.nodes) {
        const auto& ls = s.lots[static_cast<std::size_t>(n.id)];
        bool any = false;
        for (const lot& l : ls)
            if (l.qty != 0.0) any = true;
        if (!any) continue;
        nlohmann::json lots = nlohmann::json::array();
        for (const lot& l : ls)
            if (l.qty != 0.0)
                lots.push_back({{"i", l.buy_time}, {"j", l.asset + 1}, {"qty", l.qty}});
        out.push_back({{"node", n.input_id}, {"lots", std::move(lots)}});
    }
    return out;
}

inline strategy load_strategy_file(const std::string& path, const scenario_tree& tree,
                                   bool lax = false) {
    std::ifstream in(path);
    if (!in) fail(errc::parse_error, "cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        fail(errc::parse_error, std::string("invalid JSON in ") + path + ": " + e.what());
    }
    return strategy_from_json(j, tree, lax);
}

inline stopping_time stopping_time_from_json(const nlohmann::json& j, const scenario_tree& tree) {
    if (!j.is_array()) fail(errc::parse_error, "stopping time document must be an array");
    stopping_time tau;
    tau.value.assign(tree.nodes.size(), tree.horizon);
    try {
        for (const auto& ej : j) {
            int nid = detail::resolve_input_id(tree, ej.at("node").get<std::int64_t>());
            tau.value[static_cast<std::size_t>(nid)] = ej.at("tau").get<int>();
        }
    } catch (const error&) {
        throw;
    } catch (const std::exception& e) {
        fail(errc::parse_error, e.what());
    }
    return tau;
}

inline nlohmann::json stopping_time_to_json(const scenario_tree& tree, const stopping_time& tau) {
    nlohmann::json out = nlohmann::json::array();
    for (const node& n : tree.nodes)
        out.push_back({{"node", n.input_id}, {"tau", tau.value[static_cast<std::size_t>(n.id)]}});
    return out;
}

} // namespace lultax
