#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lultax/errors.hpp"
#include "lultax/linalg.hpp"

namespace lultax {

inline constexpr double prob_tol = 1e-12;

// One market state. `rate` is the interest earned over (t-1, t] and lives on
// the node reached at t; it is unused at the root. `input_id` preserves the
// id the node carried in the source file, `id` is the canonical index.
struct node {
    int id = 0;
    std::int64_t input_id = 0;
    int time = 0;
    int parent = -1;
    std::vector<int> children;
    double prob = 1.0; // transition probability from the parent
    vec prices;        // S_t, one entry per asset
    double rate = 0.0; // r_t
    double path_prob = 1.0;
};

// Finite filtered market: every node at time t < T branches, nodes at T are
// leaves. Immutable after validation.
struct scenario_tree {
    int horizon = 0;    // T
    int num_assets = 0; // d
    std::vector<node> nodes;
    std::vector<std::vector<int>> levels; // node ids per time layer
    std::vector<std::vector<int>> paths;  // paths[n] = ancestors root..n

    const node& at(int id) const {
        if (id < 0 || id >= static_cast<int>(nodes.size()))
            fail(errc::unknown_node, "node id " + std::to_string(id));
        return nodes[static_cast<std::size_t>(id)];
    }

    int root() const { return 0; }

    const std::vector<int>& leaves() const { return levels.back(); }

    // Price of asset j at the time-s ancestor of `id` (lot basis lookup).
    double ancestor_price(int id, int s, int j) const {
        const auto& p = paths[static_cast<std::size_t>(id)];
        return nodes[static_cast<std::size_t>(p[static_cast<std::size_t>(s)])]
            .prices[static_cast<std::size_t>(j)];
    }
};

// Unvalidated structure as parsed from a file or assembled by a builder.
struct raw_node {
    std::int64_t id = 0;
    int time = 0;
    bool has_parent = false;
    std::int64_t parent = 0;
    double prob = 1.0;
    vec prices;
    double rate = 0.0;
};

struct raw_tree {
    int horizon = 0;
    int num_assets = 0;
    std::vector<raw_node> nodes;
};

struct validate_options {
    bool require_nonneg_prices = false;
};

// ---------------------------------------------------------------------------
// validate_tree

inline scenario_tree validate_tree(const raw_tree& raw, validate_options opts = {}) {
    if (raw.num_assets < 1)
        fail(errc::parse_error, "asset count d must be >= 1");
    if (raw.horizon < 1)
        fail(errc::parse_error, "horizon T must be >= 1");
    if (raw.nodes.empty())
        fail(errc::parse_error, "tree has no nodes");

    std::map<std::int64_t, std::size_t> by_id;
    for (std::size_t i = 0; i < raw.nodes.size(); ++i) {
        if (!by_id.emplace(raw.nodes[i].id, i).second)
            fail(errc::parse_error, "duplicate node id " + std::to_string(raw.nodes[i].id));
    }

    // Parent existence and cycle walk before any time-based reasoning.
    for (const auto& n : raw.nodes) {
        if (!n.has_parent) continue;
        std::int64_t cur = n.id;
        std::size_t steps = 0;
        while (true) {
            auto it = by_id.find(cur);
            const raw_node& c = raw.nodes[it->second];
            if (!c.has_parent) break;
            auto pit = by_id.find(c.parent);
            if (pit == by_id.end())
                fail(errc::unknown_node,
                     "node " + std::to_string(c.id) + " references missing parent " +
                         std::to_string(c.parent));
            if (++steps > raw.nodes.size())
                fail(errc::cycle_detected, "parent chain through node " + std::to_string(n.id));
            cur = c.parent;
        }
    }

    std::size_t root_idx = raw.nodes.size();
    for (std::size_t i = 0; i < raw.nodes.size(); ++i) {
        const raw_node& n = raw.nodes[i];
        if (!n.has_parent) {
            if (n.time != 0)
                fail(errc::time_gap, "parentless node " + std::to_string(n.id) + " at time " +
                                         std::to_string(n.time));
            if (root_idx != raw.nodes.size())
                fail(errc::parse_error, "multiple roots (node " + std::to_string(n.id) + ")");
            root_idx = i;
        } else {
            const raw_node& p = raw.nodes[by_id.at(n.parent)];
            if (p.time != n.time - 1)
                fail(errc::time_gap, "node " + std::to_string(n.id) + " at time " +
                                         std::to_string(n.time) + " has parent at time " +
                                         std::to_string(p.time));
        }
        if (n.time < 0 || n.time > raw.horizon)
            fail(errc::time_gap,
                 "node " + std::to_string(n.id) + " outside horizon at time " + std::to_string(n.time));
        if (n.prices.size() != static_cast<std::size_t>(raw.num_assets))
            fail(errc::dimension_mismatch,
                 "node " + std::to_string(n.id) + " carries " + std::to_string(n.prices.size()) +
                     " prices, expected " + std::to_string(raw.num_assets));
        for (double s : n.prices) {
            if (!std::isfinite(s))
                fail(errc::parse_error, "non-finite price at node " + std::to_string(n.id));
            if (opts.require_nonneg_prices && s < 0.0)
                fail(errc::negative_price_forbidden,
                     "negative price at node " + std::to_string(n.id));
        }
        if (n.time >= 1 && n.rate < 0.0)
            fail(errc::negative_rate, "node " + std::to_string(n.id) + " has rate " +
                                          std::to_string(n.rate));
        if (!std::isfinite(n.rate) || !std::isfinite(n.prob))
            fail(errc::parse_error, "non-finite field at node " + std::to_string(n.id));
    }
    if (root_idx == raw.nodes.size())
        fail(errc::time_gap, "no root node at time 0");

    // Group children by parent in input order.
    std::map<std::int64_t, std::vector<std::size_t>> kids;
    for (std::size_t i = 0; i < raw.nodes.size(); ++i)
        if (raw.nodes[i].has_parent) kids[raw.nodes[i].parent].push_back(i);

    for (auto& [pid, ks] : kids)
        std::sort(ks.begin(), ks.end(), [&](std::size_t a, std::size_t b) {
            return raw.nodes[a].id < raw.nodes[b].id;
        });

    // Branching and probability normalization.
    std::vector<double> norm_prob(raw.nodes.size(), 1.0);
    for (const auto& n : raw.nodes) {
        auto it = kids.find(n.id);
        const bool has_kids = it != kids.end() && !it->second.empty();
        if (n.time < raw.horizon && !has_kids)
            fail(errc::time_gap, "node " + std::to_string(n.id) + " at time " +
                                     std::to_string(n.time) + " has no children");
        if (n.time == raw.horizon && has_kids)
            fail(errc::time_gap, "terminal node " + std::to_string(n.id) + " has children");
        if (!has_kids) continue;
        double sum = 0.0;
        for (std::size_t ci : it->second) {
            double p = raw.nodes[ci].prob;
            if (p <= 0.0)
                fail(errc::probability_not_normalized,
                     "non-positive transition probability into node " +
                         std::to_string(raw.nodes[ci].id));
            sum += p;
        }
        if (std::abs(sum - 1.0) > prob_tol)
            fail(errc::probability_not_normalized,
                 "child probabilities of node " + std::to_string(n.id) + " sum to " +
                     std::to_string(sum));
        for (std::size_t ci : it->second) norm_prob[ci] = raw.nodes[ci].prob / sum;
    }

    // Canonical (time, breadth) order: BFS with siblings sorted by input id.
    scenario_tree tree;
    tree.horizon = raw.horizon;
    tree.num_assets = raw.num_assets;
    std::vector<std::size_t> order;
    order.reserve(raw.nodes.size());
    order.push_back(root_idx);
    for (std::size_t q = 0; q < order.size(); ++q) {
        auto it = kids.find(raw.nodes[order[q]].id);
        if (it == kids.end()) continue;
        for (std::size_t ci : it->second) order.push_back(ci);
    }
    if (order.size() != raw.nodes.size())
        fail(errc::cycle_detected, "unreachable nodes present");

    std::map<std::int64_t, int> canon;
    for (std::size_t k = 0; k < order.size(); ++k)
        canon[raw.nodes[order[k]].id] = static_cast<int>(k);

    tree.nodes.resize(order.size());
    tree.levels.assign(static_cast<std::size_t>(raw.horizon) + 1, {});
    tree.paths.resize(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
        const raw_node& rn = raw.nodes[order[k]];
        node& n = tree.nodes[k];
        n.id = static_cast<int>(k);
        n.input_id = rn.id;
        n.time = rn.time;
        n.parent = rn.has_parent ? canon.at(rn.parent) : -1;
        n.prob = rn.has_parent ? norm_prob[order[k]] : 1.0;
        n.prices = rn.prices;
        n.rate = rn.time >= 1 ? rn.rate : 0.0;
        tree.levels[static_cast<std::size_t>(n.time)].push_back(n.id);
        if (n.parent >= 0) {
            node& p = tree.nodes[static_cast<std::size_t>(n.parent)];
            p.children.push_back(n.id);
            n.path_prob = p.path_prob * n.prob;
            tree.paths[k] = tree.paths[static_cast<std::size_t>(n.parent)];
        } else {
            n.path_prob = 1.0;
        }
        tree.paths[k].push_back(n.id);
    }
    return tree;
}

inline raw_tree to_raw(const scenario_tree& tree) {
    raw_tree raw;
    raw.horizon = tree.horizon;
    raw.num_assets = tree.num_assets;
    for (const node& n : tree.nodes) {
        raw_node rn;
        rn.id = n.input_id;
        rn.time = n.time;
        rn.has_parent = n.parent >= 0;
        rn.parent = n.parent >= 0 ? tree.nodes[static_cast<std::size_t>(n.parent)].input_id : 0;
        rn.prob = n.prob;
        rn.prices = n.prices;
        rn.rate = n.rate;
        raw.nodes.push_back(std::move(rn));
    }
    return raw;
}

inline std::vector<int> path_prefix(const scenario_tree& tree, int id) {
    if (id < 0 || id >= static_cast<int>(tree.nodes.size()))
        fail(errc::unknown_node, "node id " + std::to_string(id));
    return tree.paths[static_cast<std::size_t>(id)];
}

// Lint, not an error: rates are usually known one period ahead, i.e. equal
// across siblings. Returns the parents whose children disagree.
inline std::vector<int> rate_predictability_lint(const scenario_tree& tree) {
    std::vector<int> offenders;
    for (const node& n : tree.nodes) {
        if (n.children.size() < 2) continue;
        double first = tree.at(n.children.front()).rate;
        for (int c : n.children)
            if (tree.at(c).rate != first) {
                offenders.push_back(n.id);
                break;
            }
    }
    return offenders;
}

// ---------------------------------------------------------------------------
// Builders

// Deterministic chain: prices[t] holds the d prices at time t.
inline scenario_tree build_chain(const std::vector<vec>& prices, const vec& rates) {
    raw_tree raw;
    raw.horizon = static_cast<int>(prices.size()) - 1;
    raw.num_assets = static_cast<int>(prices.front().size());
    for (std::size_t t = 0; t < prices.size(); ++t) {
        raw_node n;
        n.id = static_cast<std::int64_t>(t);
        n.time = static_cast<int>(t);
        n.has_parent = t > 0;
        n.parent = static_cast<std::int64_t>(t) - 1;
        n.prob = 1.0;
        n.prices = prices[t];
        n.rate = t > 0 ? rates[t] : 0.0;
        raw.nodes.push_back(std::move(n));
    }
    return validate_tree(raw);
}

// One i.i.d. branching outcome: gross price factors per asset plus the
// probability of the branch.
struct lattice_outcome {
    double prob = 1.0;
    vec gross_factors; // S_{t+1,j} = S_{t,j} * gross_factors[j]
};

// Expands an i.i.d. lattice spec into an explicit (non-recombining) tree.
inline scenario_tree build_iid_lattice(int horizon, const vec& initial_prices,
                                       const std::vector<lattice_outcome>& outcomes,
                                       double rate) {
    raw_tree raw;
    raw.horizon = horizon;
    raw.num_assets = static_cast<int>(initial_prices.size());
    raw_node root;
    root.id = 0;
    root.time = 0;
    root.prices = initial_prices;
    raw.nodes.push_back(root);
    std::vector<std::size_t> frontier{0};
    std::int64_t next_id = 1;
    for (int t = 1; t <= horizon; ++t) {
        std::vector<std::size_t> next;
        for (std::size_t pi : frontier) {
            for (const lattice_outcome& o : outcomes) {
                raw_node n;
                n.id = next_id++;
                n.time = t;
                n.has_parent = true;
                n.parent = raw.nodes[pi].id;
                n.prob = o.prob;
                n.rate = rate;
                n.prices = raw.nodes[pi].prices;
                for (std::size_t j = 0; j < n.prices.size(); ++j)
                    n.prices[j] *= o.gross_factors[j];
                next.push_back(raw.nodes.size());
                raw.nodes.push_back(std::move(n));
            }
        }
        frontier = std::move(next);
    }
    return validate_tree(raw);
}

// ---------------------------------------------------------------------------
// JSON interchange
// {"T":int,"d":int,"nodes":[{"id","time","parent","prob","S":[...],"r":float}]}

inline raw_tree tree_from_json(const nlohmann::json& j, bool lax = false) {
    if (!j.is_object()) fail(errc::parse_error, "tree document must be an object");
    for (const auto& [key, _] : j.items()) {
        if (key != "T" && key != "d" && key != "nodes" && !lax)
            fail(errc::parse_error, "unknown tree field '" + key + "'");
    }
    if (!j.contains("T") || !j.contains("d") || !j.contains("nodes"))
        fail(errc::parse_error, "tree document requires T, d and nodes");
    raw_tree raw;
    try {
        raw.horizon = j.at("T").get<int>();
        raw.num_assets = j.at("d").get<int>();
        for (const auto& nj : j.at("nodes")) {
            for (const auto& [key, _] : nj.items()) {
                if (key != "id" && key != "time" && key != "parent" && key != "prob" &&
                    key != "S" && key != "r" && !lax)
                    fail(errc::parse_error, "unknown node field '" + key + "'");
            }
            raw_node n;
            n.id = nj.at("id").get<std::int64_t>();
            n.time = nj.at("time").get<int>();
            if (nj.contains("parent") && !nj.at("parent").is_null()) {
                n.has_parent = true;
                n.parent = nj.at("parent").get<std::int64_t>();
            }
            if (nj.contains("prob")) n.prob = nj.at("prob").get<double>();
            n.prices = nj.at("S").get<vec>();
            if (nj.contains("r")) n.rate = nj.at("r").get<double>();
            raw.nodes.push_back(std::move(n));
        }
    } catch (const error&) {
        throw;
    } catch (const std::exception& e) {
        fail(errc::parse_error, e.what());
    }
    return raw;
}

inline nlohmann::json tree_to_json(const scenario_tree& tree) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const node& n : tree.nodes) {
        nlohmann::json nj;
        nj["id"] = n.input_id;
        nj["time"] = n.time;
        if (n.parent >= 0)
            nj["parent"] = tree.nodes[static_cast<std::size_t>(n.parent)].input_id;
        else
            nj["parent"] = nullptr;
        nj["prob"] = n.prob;
        nj["S"] = n.prices;
        nj["r"] = n.rate;
        nodes.push_back(std::move(nj));
    }
    return nlohmann::json{{"T", tree.horizon}, {"d", tree.num_assets}, {"nodes", std::move(nodes)}};
}

inline scenario_tree load_tree_file(const std::string& path, bool lax = false,
                                    validate_options opts = {}) {
    std::ifstream in(path);
    if (!in) fail(errc::parse_error, "cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        fail(errc::parse_error, std::string("invalid JSON in ") + path + ": " + e.what());
    }
    return validate_tree(tree_from_json(j, lax), opts);
}

} // namespace lultax
