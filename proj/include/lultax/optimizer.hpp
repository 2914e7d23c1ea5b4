#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "lultax/cone_analysis.hpp"
#include "lultax/errors.hpp"
#include "lultax/rng.hpp"
#include "lultax/strategy.hpp"
#include "lultax/tax_engine.hpp"
#include "lultax/tree.hpp"

namespace lultax {

// ---------------------------------------------------------------------------
// Utility functions: -inf on negative wealth, nondecreasing and concave on
// the positive half-line. The linear-log blend is what the non-uniqueness
// reproduction calibrates.

struct utility {
    enum class kind { log, power, linear, linear_log_blend };
    kind k = kind::log;
    double gamma = 0.5;   // power exponent, gamma < 1, gamma != 0
    double blend_w = 0.0; // weight of ln(x) in x + w ln(x)

    static utility log_utility() { return {kind::log, 0.0, 0.0}; }
    static utility power_utility(double g) {
        if (!(g < 1.0) || g == 0.0)
            fail(errc::parse_error, "power utility requires gamma < 1, gamma != 0");
        return {kind::power, g, 0.0};
    }
    static utility linear_utility() { return {kind::linear, 0.0, 0.0}; }
    static utility blend_utility(double w) {
        if (w < 0.0) fail(errc::parse_error, "blend weight must be nonnegative");
        return {kind::linear_log_blend, 0.0, w};
    }

    double value(double x) const {
        constexpr double ninf = -std::numeric_limits<double>::infinity();
        if (x < 0.0) return ninf;
        switch (k) {
            case kind::log: return x == 0.0 ? ninf : std::log(x);
            case kind::power:
                if (x == 0.0) return gamma > 0.0 ? 0.0 : ninf;
                return std::pow(x, gamma) / gamma;
            case kind::linear: return x;
            case kind::linear_log_blend: return x == 0.0 ? ninf : x + blend_w * std::log(x);
        }
        return ninf;
    }

    // derivative on (0, inf)
    double derivative(double x) const {
        switch (k) {
            case kind::log: return 1.0 / x;
            case kind::power: return std::pow(x, gamma - 1.0);
            case kind::linear: return 1.0;
            case kind::linear_log_blend: return 1.0 + blend_w / x;
        }
        return 0.0;
    }

    const char* name() const {
        switch (k) {
            case kind::log: return "log";
            case kind::power: return "power";
            case kind::linear: return "linear";
            case kind::linear_log_blend: return "linear_log_blend";
        }
        return "?";
    }
};

// ---------------------------------------------------------------------------
// Decision variables: per-node purchases N_{t,t,j} plus a surviving fraction
// in [0,1] per inherited (lot, child) pair. Lots derive multiplicatively, so
// projection onto the constraints is coordinatewise clipping.

namespace detail {

struct var_layout {
    // purchase variable index per (node, asset); -1 where absent
    std::vector<std::vector<int>> buy;
    // fraction variable index per node per inherited lot slot (i * d + j)
    std::vector<std::vector<int>> frac;
    std::size_t count = 0;
    std::vector<double> lo, hi; // box bounds
};

inline var_layout build_layout(const scenario_tree& tree, std::size_t max_vars) {
    var_layout lay;
    lay.buy.assign(tree.nodes.size(), {});
    lay.frac.assign(tree.nodes.size(), {});
    const int d = tree.num_assets;
    for (const node& n : tree.nodes) {
        const std::size_t i = static_cast<std::size_t>(n.id);
        if (n.time >= 1 && n.time < tree.horizon) {
            lay.frac[i].assign(static_cast<std::size_t>(n.time * d), -1);
            for (int slot = 0; slot < n.time * d; ++slot) {
                lay.frac[i][static_cast<std::size_t>(slot)] = static_cast<int>(lay.count++);
                lay.lo.push_back(0.0);
                lay.hi.push_back(1.0);
            }
        }
        if (n.time < tree.horizon) {
            lay.buy[i].assign(static_cast<std::size_t>(d), -1);
            for (int j = 0; j < d; ++j) {
                lay.buy[i][static_cast<std::size_t>(j)] = static_cast<int>(lay.count++);
                lay.lo.push_back(0.0);
                lay.hi.push_back(std::numeric_limits<double>::infinity());
            }
        }
    }
    if (lay.count > max_vars)
        fail(errc::too_many_variables,
             std::to_string(lay.count) + " decision variables exceed " + std::to_string(max_vars));
    return lay;
}

inline strategy theta_to_strategy(const scenario_tree& tree, const var_layout& lay,
                                  const std::vector<double>& theta) {
    strategy s = strategy::zero(tree);
    const int d = tree.num_assets;
    for (const node& n : tree.nodes) {
        const std::size_t i = static_cast<std::size_t>(n.id);
        if (n.parent >= 0 && n.time < tree.horizon) {
            for (const lot& pl : s.lots[static_cast<std::size_t>(n.parent)]) {
                int slot = pl.buy_time * d + pl.asset;
                int v = lay.frac[i][static_cast<std::size_t>(slot)];
                double q = pl.qty * theta[static_cast<std::size_t>(v)];
                if (q > 0.0) s.set(n.id, pl.buy_time, pl.asset, q);
            }
        }
        if (n.time < tree.horizon) {
            for (int j = 0; j < d; ++j) {
                double q = theta[static_cast<std::size_t>(lay.buy[i][static_cast<std::size_t>(j)])];
                if (q > 0.0) s.set(n.id, n.time, j, q);
            }
        }
    }
    return s;
}

// Forward pass with tangents: lots, G, running max and eta all carry
// d/dtheta vectors. The running max takes the earliest-achieving-index
// convention, so ties keep the older tangent.
struct forward_result {
    std::vector<double> leaf_value;          // V^alpha per leaf
    std::vector<std::vector<double>> leaf_grad;
    double min_leaf = 0.0;
};

inline forward_result forward_with_tangents(const scenario_tree& tree, const var_layout& lay,
                                            const std::vector<double>& theta, double x,
                                            double alpha) {
    const int d = tree.num_assets;
    const std::size_t nv = lay.count;
    const std::size_t nn = tree.nodes.size();

    struct lot_state {
        double qty;
        std::vector<double> grad;
    };
    // per node: dense lot slots (i * d + j) for i <= t
    std::vector<std::vector<lot_state>> lots(nn);
    std::vector<double> G(nn, 0.0), M(nn, 0.0), eta(nn, 0.0);
    std::vector<std::vector<double>> dG(nn), dM(nn), dEta(nn);

    forward_result out;
    out.min_leaf = std::numeric_limits<double>::infinity();

    for (const node& n : tree.nodes) {
        const std::size_t i = static_cast<std::size_t>(n.id);
        const int t = n.time;
        lots[i].assign(static_cast<std::size_t>((t + 1) * d), lot_state{0.0, {}});
        for (auto& ls : lots[i]) ls.grad.assign(nv, 0.0);

        if (n.parent >= 0 && t < tree.horizon) {
            const auto& pl = lots[static_cast<std::size_t>(n.parent)];
            for (int slot = 0; slot < t * d; ++slot) {
                const lot_state& src = pl[static_cast<std::size_t>(slot)];
                if (src.qty == 0.0) {
                    bool zero_grad = true;
                    for (double g : src.grad)
                        if (g != 0.0) { zero_grad = false; break; }
                    if (zero_grad) continue;
                }
                int v = lay.frac[i][static_cast<std::size_t>(slot)];
                double f = theta[static_cast<std::size_t>(v)];
                lot_state& dst = lots[i][static_cast<std::size_t>(slot)];
                dst.qty = src.qty * f;
                for (std::size_t g = 0; g < nv; ++g) dst.grad[g] = src.grad[g] * f;
                dst.grad[static_cast<std::size_t>(v)] += src.qty;
            }
        }
        if (t < tree.horizon) {
            for (int j = 0; j < d; ++j) {
                int v = lay.buy[i][static_cast<std::size_t>(j)];
                lot_state& dst = lots[i][static_cast<std::size_t>(t * d + j)];
                dst.qty = theta[static_cast<std::size_t>(v)];
                dst.grad[static_cast<std::size_t>(v)] += 1.0;
            }
        }

        dG[i].assign(nv, 0.0);
        dM[i].assign(nv, 0.0);
        dEta[i].assign(nv, 0.0);

        if (n.parent < 0) {
            double cash = x;
            std::vector<double> dcash(nv, 0.0);
            for (int j = 0; j < d; ++j) {
                const lot_state& b = lots[i][static_cast<std::size_t>(j)];
                cash -= b.qty * n.prices[static_cast<std::size_t>(j)];
                for (std::size_t g = 0; g < nv; ++g)
                    dcash[g] -= b.grad[g] * n.prices[static_cast<std::size_t>(j)];
            }
            eta[i] = cash;
            dEta[i] = std::move(dcash);
            continue;
        }

        const std::size_t p = static_cast<std::size_t>(n.parent);
        double sg = 0.0, cash = 0.0;
        std::vector<double> dsg(nv, 0.0), dcash(nv, 0.0);
        const auto& pl = lots[p];
        for (int slot = 0; slot < t * d; ++slot) {
            const lot_state& a = pl[static_cast<std::size_t>(slot)];
            const lot_state& b = lots[i][static_cast<std::size_t>(slot)];
            int bt = slot / d, j = slot % d;
            double price = n.prices[static_cast<std::size_t>(j)];
            double basis = tree.ancestor_price(n.id, bt, j);
            double sold = a.qty - b.qty;
            sg += sold * (price - basis);
            cash += sold * price;
            for (std::size_t g = 0; g < nv; ++g) {
                double dsold = a.grad[g] - b.grad[g];
                dsg[g] += dsold * (price - basis);
                dcash[g] += dsold * price;
            }
        }
        if (t < tree.horizon) {
            for (int j = 0; j < d; ++j) {
                const lot_state& b = lots[i][static_cast<std::size_t>(t * d + j)];
                cash -= b.qty * n.prices[static_cast<std::size_t>(j)];
                for (std::size_t g = 0; g < nv; ++g)
                    dcash[g] -= b.grad[g] * n.prices[static_cast<std::size_t>(j)];
            }
        }

        G[i] = G[p] + eta[p] * n.rate + sg;
        for (std::size_t g = 0; g < nv; ++g) dG[i][g] = dG[p][g] + dEta[p][g] * n.rate + dsg[g];
        if (G[i] > M[p]) {
            M[i] = G[i];
            dM[i] = dG[i];
        } else {
            M[i] = M[p];
            dM[i] = dM[p];
        }
        eta[i] = eta[p] * (1.0 + n.rate) + cash - alpha * (M[i] - M[p]);
        for (std::size_t g = 0; g < nv; ++g)
            dEta[i][g] =
                dEta[p][g] * (1.0 + n.rate) + dcash[g] - alpha * (dM[i][g] - dM[p][g]);

        if (n.children.empty()) {
            out.leaf_value.push_back(eta[i]);
            out.leaf_grad.push_back(dEta[i]);
            out.min_leaf = std::min(out.min_leaf, eta[i]);
        }
        // free parent lot tangents when no longer needed? kept: trees are tiny
    }
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------

struct optimize_config {
    int iters = 5000;
    std::uint64_t seed = 0;
    int restarts = 8; // the fraction parametrization admits local maxima

    double barrier0 = 1e-2;
    std::size_t max_vars = 4096;
    int polish_iters = 2000;
};

struct optimization_result {
    double value = 0.0;
    strategy best;
    std::vector<double> leaf_wealth;
    int iterations = 0;
    double final_step = 0.0;
    double supergradient_norm = 0.0;
    double feasibility_margin = 0.0;
};

namespace detail {

struct objective_eval {
    double value = -std::numeric_limits<double>::infinity();
    double min_leaf = 0.0;
    bool feasible = false;
};

inline objective_eval eval_objective(const scenario_tree& tree, const var_layout& lay,
                                     const std::vector<double>& theta, double x, double alpha,
                                     const utility& U) {
    strategy s = theta_to_strategy(tree, lay, theta);
    tax_ledger led = evaluate(tree, s, x, alpha, false);
    objective_eval ev;
    ev.min_leaf = std::numeric_limits<double>::infinity();
    double val = 0.0;
    for (int leaf : tree.leaves()) {
        double v = led.bank[static_cast<std::size_t>(leaf)];
        ev.min_leaf = std::min(ev.min_leaf, v);
        val += tree.at(leaf).path_prob * U.value(v);
    }
    ev.value = val;
    ev.feasible = ev.min_leaf >= 0.0 && std::isfinite(val);
    return ev;
}

inline void project_box(const var_layout& lay, std::vector<double>& theta) {
    for (std::size_t v = 0; v < lay.count; ++v)
        theta[v] = std::min(std::max(theta[v], lay.lo[v]), lay.hi[v]);
}

} // namespace detail

inline optimization_result maximize_utility(const scenario_tree& tree, double x, double alpha,
                                            const utility& U, optimize_config cfg = {}) {
    detail::require_alpha(alpha);
    if (!(x > 0.0)) fail(errc::parse_error, "maximize_utility requires x > 0");
    na_report na = check_na(tree);
    if (!na.holds)
        fail(errc::arbitrage_detected,
             "arbitrage at node " + std::to_string(tree.at(na.violation->node_id).input_id));

    const detail::var_layout lay = detail::build_layout(tree, cfg.max_vars);
    const std::size_t nv = lay.count;
    rng gen(cfg.seed);

    std::vector<double> best_theta;
    double best_value = -std::numeric_limits<double>::infinity();
    int total_iters = 0;
    double last_step = 0.0, last_gnorm = 0.0;

    double mean_price = 0.0;
    for (double p : tree.at(0).prices) mean_price += p;
    mean_price = std::max(1e-9, mean_price / tree.num_assets);

    for (int restart = 0; restart < std::max(1, cfg.restarts); ++restart) {
        std::vector<double> theta(nv, 0.0);
        if (restart > 0) {
            for (std::size_t v = 0; v < nv; ++v) {
                bool is_frac = std::isfinite(lay.hi[v]);
                theta[v] = is_frac ? gen.uniform() : gen.uniform() * 0.3 * x / mean_price;
            }
        } else {
            // N = 0 with full holding fractions: feasible for x > 0
            for (std::size_t v = 0; v < nv; ++v) theta[v] = std::isfinite(lay.hi[v]) ? 1.0 : 0.0;
        }
        detail::objective_eval cur = detail::eval_objective(tree, lay, theta, x, alpha, U);
        if (!cur.feasible) {
            // pull purchases toward zero until feasible
            for (int shrink = 0; shrink < 64 && !cur.feasible; ++shrink) {
                for (std::size_t v = 0; v < nv; ++v)
                    if (!std::isfinite(lay.hi[v])) theta[v] *= 0.5;
                cur = detail::eval_objective(tree, lay, theta, x, alpha, U);
            }
            if (!cur.feasible) continue;
        }
        if (cur.value > best_value) {
            best_value = cur.value;
            best_theta = theta;
        }

        double step_c = 0.0;
        for (int k = 1; k <= cfg.iters; ++k) {
            double mu = cfg.barrier0 / k;
            detail::forward_result fw = detail::forward_with_tangents(tree, lay, theta, x, alpha);
            if (fw.min_leaf <= 0.0) break; // barrier undefined; restart ends
            std::vector<double> grad(nv, 0.0);
            const auto& leaves = tree.leaves();
            for (std::size_t li = 0; li < leaves.size(); ++li) {
                double p = tree.at(leaves[li]).path_prob;
                double v = fw.leaf_value[li];
                double w = p * (U.derivative(v) + mu / v);
                const auto& g = fw.leaf_grad[li];
                for (std::size_t vv = 0; vv < nv; ++vv) grad[vv] += w * g[vv];
            }
            double gnorm = 0.0;
            for (double g : grad) gnorm += g * g;
            gnorm = std::sqrt(gnorm);
            last_gnorm = gnorm;
            if (gnorm < 1e-14) break;

            if (step_c == 0.0) {
                // 10-point line search fixes the step constant
                double best_c = 1e-4, best_v = -std::numeric_limits<double>::infinity();
                for (int pt = 0; pt < 10; ++pt) {
                    double c = std::pow(10.0, -4.0 + 5.0 * pt / 9.0) * (1.0 + x / mean_price);
                    std::vector<double> cand = theta;
                    for (std::size_t vv = 0; vv < nv; ++vv) cand[vv] += c * grad[vv] / gnorm;
                    detail::project_box(lay, cand);
                    auto ev = detail::eval_objective(tree, lay, cand, x, alpha, U);
                    if (ev.feasible && ev.value > best_v) {
                        best_v = ev.value;
                        best_c = c;
                    }
                }
                step_c = best_c;
            }

            double step = step_c / std::sqrt(static_cast<double>(k));
            std::vector<double> cand;
            for (int halve = 0; halve < 50; ++halve) {
                cand = theta;
                for (std::size_t vv = 0; vv < nv; ++vv) cand[vv] += step * grad[vv] / gnorm;
                detail::project_box(lay, cand);
                auto ev = detail::eval_objective(tree, lay, cand, x, alpha, U);
                if (ev.min_leaf > 0.0 && std::isfinite(ev.value)) {
                    theta = cand;
                    if (ev.value > best_value) {
                        best_value = ev.value;
                        best_theta = theta;
                    }
                    break;
                }
                step *= 0.5;
            }
            last_step = step;
            ++total_iters;
        }
    }
    if (best_theta.empty()) fail(errc::diverged, "no feasible iterate found");

    // Monotone polish from the best iterate: projected supergradient with a
    // backtracking step, no barrier.
    {
        std::vector<double> theta = best_theta;
        double step = std::max(last_step, 1e-6);
        detail::objective_eval cur = detail::eval_objective(tree, lay, theta, x, alpha, U);
        for (int k = 0; k < cfg.polish_iters && step > 1e-13; ++k) {
            detail::forward_result fw = detail::forward_with_tangents(tree, lay, theta, x, alpha);
            if (fw.min_leaf <= 0.0) break;
            std::vector<double> grad(nv, 0.0);
            const auto& leaves = tree.leaves();
            for (std::size_t li = 0; li < leaves.size(); ++li) {
                double p = tree.at(leaves[li]).path_prob;
                double w = p * U.derivative(fw.leaf_value[li]);
                for (std::size_t vv = 0; vv < nv; ++vv) grad[vv] += w * fw.leaf_grad[li][vv];
            }
            double gnorm = 0.0;
            for (double g : grad) gnorm += g * g;
            gnorm = std::sqrt(gnorm);
            if (gnorm < 1e-14) break;
            std::vector<double> cand = theta;
            for (std::size_t vv = 0; vv < nv; ++vv) cand[vv] += step * grad[vv] / gnorm;
            detail::project_box(lay, cand);
            auto ev = detail::eval_objective(tree, lay, cand, x, alpha, U);
            if (ev.feasible && ev.value > cur.value + 1e-15) {
                theta = cand;
                cur = ev;
                step *= 1.3;
            } else {
                step *= 0.5;
            }
        }
        if (cur.value > best_value) {
            best_value = cur.value;
            best_theta = theta;
        }
    }

    // Powell direction-set polish: supergradient steps stall on the kink
    // ridges of the running-max tax term; conjugate directions built from
    // whole-sweep displacements follow them.
    {
        std::vector<double> theta = best_theta;
        double cur = best_value;
        auto phi = [&](const std::vector<double>& th) {
            auto ev = detail::eval_objective(tree, lay, th, x, alpha, U);
            return ev.feasible ? ev.value : -std::numeric_limits<double>::infinity();
        };
        // maximize along theta + t * dir over the box-feasible t-range
        auto line_max = [&](std::vector<double>& th, const vec& dir, double span) {
            double t_lo = -span, t_hi = span;
            for (std::size_t v = 0; v < nv; ++v) {
                if (dir[v] > 1e-15) {
                    t_lo = std::max(t_lo, (lay.lo[v] - th[v]) / dir[v]);
                    if (std::isfinite(lay.hi[v])) t_hi = std::min(t_hi, (lay.hi[v] - th[v]) / dir[v]);
                } else if (dir[v] < -1e-15) {
                    t_hi = std::min(t_hi, (lay.lo[v] - th[v]) / dir[v]);
                    if (std::isfinite(lay.hi[v])) t_lo = std::max(t_lo, (lay.hi[v] - th[v]) / dir[v]);
                }
            }
            if (t_hi <= t_lo) return 0.0;
            const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
            auto at = [&](double t) {
                std::vector<double> probe = th;
                for (std::size_t v = 0; v < nv; ++v) probe[v] += t * dir[v];
                detail::project_box(lay, probe);
                return phi(probe);
            };
            double a0 = t_lo, b0 = t_hi;
            double c0 = b0 - gr * (b0 - a0), d0 = a0 + gr * (b0 - a0);
            double fc = at(c0), fd = at(d0);
            for (int it = 0; it < 70 && b0 - a0 > 1e-13 * span; ++it) {
                if (fc > fd) {
                    b0 = d0; d0 = c0; fd = fc;
                    c0 = b0 - gr * (b0 - a0);
                    fc = at(c0);
                } else {
                    a0 = c0; c0 = d0; fc = fd;
                    d0 = a0 + gr * (b0 - a0);
                    fd = at(d0);
                }
            }
            double t = 0.5 * (a0 + b0);
            double ft = at(t);
            if (ft > cur) {
                for (std::size_t v = 0; v < nv; ++v) th[v] += t * dir[v];
                detail::project_box(lay, th);
                cur = ft;
                return t;
            }
            return 0.0;
        };

        const double span = 2.0 * (1.0 + x / mean_price);
        std::vector<vec> dirs(nv, vec(nv, 0.0));
        for (std::size_t v = 0; v < nv; ++v) dirs[v][v] = 1.0;
        for (int iter = 0; iter < 40; ++iter) {
            double before = cur;
            std::vector<double> start = theta;
            std::size_t biggest = 0;
            double biggest_gain = 0.0;
            for (std::size_t v = 0; v < nv; ++v) {
                double prev = cur;
                line_max(theta, dirs[v], span);
                if (cur - prev > biggest_gain) {
                    biggest_gain = cur - prev;
                    biggest = v;
                }
            }
            vec net(nv, 0.0);
            double net_norm = 0.0;
            for (std::size_t v = 0; v < nv; ++v) {
                net[v] = theta[v] - start[v];
                net_norm += net[v] * net[v];
            }
            net_norm = std::sqrt(net_norm);
            if (net_norm > 1e-14) {
                for (double& dv : net) dv /= net_norm;
                line_max(theta, net, span);
                dirs[biggest] = net; // replace the direction of largest gain
            }
            if (cur <= before + 1e-13 * (1.0 + std::abs(before))) break;
        }
        if (cur > best_value) {
            best_value = cur;
            best_theta = theta;
        }
    }

    // Feasibility polish: rescale purchases toward N = 0 (feasible for x > 0).
    strategy s = detail::theta_to_strategy(tree, lay, best_theta);
    tax_ledger led = evaluate(tree, s, x, alpha, false);
    double min_leaf = std::numeric_limits<double>::infinity();
    for (int leaf : tree.leaves())
        min_leaf = std::min(min_leaf, led.bank[static_cast<std::size_t>(leaf)]);
    if (min_leaf < 0.0) {
        double scale = 1.0;
        for (int shrink = 0; shrink < 64 && min_leaf < 0.0; ++shrink) {
            scale *= 0.5;
            std::vector<double> theta = best_theta;
            for (std::size_t v = 0; v < nv; ++v)
                if (!std::isfinite(lay.hi[v])) theta[v] *= scale;
            s = detail::theta_to_strategy(tree, lay, theta);
            led = evaluate(tree, s, x, alpha, false);
            min_leaf = std::numeric_limits<double>::infinity();
            for (int leaf : tree.leaves())
                min_leaf = std::min(min_leaf, led.bank[static_cast<std::size_t>(leaf)]);
        }
    }

    optimization_result res;
    res.best = validate_strategy(tree, s);
    res.leaf_wealth = led.terminal_wealth(tree);
    res.feasibility_margin = min_leaf;
    res.iterations = total_iters;
    res.final_step = last_step;
    res.supergradient_norm = last_gnorm;
    double val = 0.0;
    const auto& leaves = tree.leaves();
    for (std::size_t li = 0; li < leaves.size(); ++li)
        val += tree.at(leaves[li]).path_prob * U.value(std::max(0.0, res.leaf_wealth[li]));
    res.value = val;
    if (!std::isfinite(res.value)) fail(errc::diverged, "objective not finite at the optimum");
    return res;
}

// ---------------------------------------------------------------------------
// Brute-force oracle: exhaustive grid over the same decision variables.

struct grid_spec {
    double h = 1e-3;                      // grid resolution
    double purchase_bound_multiple = 3.0; // purchases scan [0, m*x/S_j]
    std::uint64_t max_evals = 50000000;
};

struct brute_force_result {
    double value = -std::numeric_limits<double>::infinity();
    strategy best;
};

inline brute_force_result brute_force_utility(const scenario_tree& tree, double x, double alpha,
                                              const utility& U, grid_spec grid = {}) {
    detail::require_alpha(alpha);
    const detail::var_layout lay = detail::build_layout(tree, 6);
    const std::size_t nv = lay.count;

    std::vector<double> lo(nv, 0.0), hi(nv, 1.0);
    std::vector<std::uint64_t> steps(nv, 0);
    std::uint64_t total = 1;
    for (const node& n : tree.nodes) {
        const std::size_t i = static_cast<std::size_t>(n.id);
        if (n.time < tree.horizon && !lay.buy[i].empty()) {
            for (int j = 0; j < tree.num_assets; ++j) {
                std::size_t v = static_cast<std::size_t>(lay.buy[i][static_cast<std::size_t>(j)]);
                hi[v] = std::max(0.0, grid.purchase_bound_multiple * x /
                                          std::max(1e-9, n.prices[static_cast<std::size_t>(j)]));
            }
        }
    }
    for (std::size_t v = 0; v < nv; ++v) {
        steps[v] = static_cast<std::uint64_t>(std::ceil((hi[v] - lo[v]) / grid.h)) + 1;
        if (steps[v] < 2) steps[v] = 2;
        total *= steps[v];
        if (total > grid.max_evals)
            fail(errc::too_many_variables, "grid of " + std::to_string(total) +
                                               " points exceeds max_evals");
    }

    brute_force_result best;
    std::vector<std::uint64_t> counter(nv, 0);
    std::vector<double> theta(nv, 0.0);
    for (std::uint64_t it = 0; it < total; ++it) {
        for (std::size_t v = 0; v < nv; ++v)
            theta[v] = lo[v] + (hi[v] - lo[v]) * static_cast<double>(counter[v]) /
                                   static_cast<double>(steps[v] - 1);
        strategy s = detail::theta_to_strategy(tree, lay, theta);
        tax_ledger led = evaluate(tree, s, x, alpha, false);
        double val = 0.0;
        for (int leaf : tree.leaves()) {
            double v = led.bank[static_cast<std::size_t>(leaf)];
            if (v < 0.0) {
                val = -std::numeric_limits<double>::infinity();
                break;
            }
            val += tree.at(leaf).path_prob * U.value(v);
        }
        if (val > best.value) {
            best.value = val;
            best.best = std::move(s);
        }
        for (std::size_t v = 0; v < nv; ++v) {
            if (++counter[v] < steps[v]) break;
            counter[v] = 0;
        }
    }
    if (!std::isfinite(best.value))
        fail(errc::infeasible, "no feasible grid point (value -inf everywhere)");
    return best;
}

// ---------------------------------------------------------------------------
// Finiteness transfer: u^alpha(x) and u^0(x) are finite together. On finite
// trees both always are; the check reports the domination chain built from
// the frictionless optimizer (halved, taxed at a flat (1-alpha)^{xi_t}).

struct finiteness_report {
    double u_alpha = 0.0;
    double u_zero = 0.0;
    double step2_value = 0.0; // E[U((1-alpha)^T V^0(x, N*/2))]
    bool ordering_ok = false; // u_alpha <= u_zero + tol
    bool step2_ok = false;    // step2_value <= u_alpha + tol
    bool chain_leafwise_ok = false;
};

inline finiteness_report finiteness_transfer_check(const scenario_tree& tree, double x,
                                                   double alpha, const utility& U,
                                                   optimize_config cfg = {}) {
    finiteness_report rep;
    optimization_result at_alpha = maximize_utility(tree, x, alpha, U, cfg);
    optimization_result at_zero = maximize_utility(tree, x, 0.0, U, cfg);
    rep.u_alpha = at_alpha.value;
    rep.u_zero = at_zero.value;
    rep.ordering_ok = rep.u_alpha <= rep.u_zero + 1e-8;

    strategy half = scale_strategy(at_zero.best, 0.5);
    tax_ledger led0 = evaluate(tree, half, x, 0.0);

    // xi_t counts times with nonnegative frictionless wealth along the path
    std::vector<int> xi(tree.nodes.size(), 0);
    for (const node& n : tree.nodes) {
        const std::size_t i = static_cast<std::size_t>(n.id);
        if (n.parent < 0)
            xi[i] = 0;
        else
            xi[i] = xi[static_cast<std::size_t>(n.parent)] +
                    (led0.frictionless[i] >= 0.0 ? 1 : 0);
    }
    strategy tilde = strategy::zero(tree);
    for (const node& n : tree.nodes) {
        if (n.children.empty()) continue;
        vec agg = half.aggregate_holdings(tree, n.id);
        double damp = std::pow(1.0 - alpha, xi[static_cast<std::size_t>(n.id)]);
        for (int j = 0; j < tree.num_assets; ++j) {
            double q = damp * agg[static_cast<std::size_t>(j)];
            if (q > 0.0) tilde.set(n.id, n.time, j, q);
        }
    }
    tax_ledger led_tilde = evaluate(tree, tilde, x, alpha);
    const double factor = std::pow(1.0 - alpha, tree.horizon);
    double step2 = 0.0;
    bool leafwise = true;
    for (int leaf : tree.leaves()) {
        const std::size_t i = static_cast<std::size_t>(leaf);
        double bound = factor * led0.bank[i]; // V^0(x, N*/2) at the leaf
        step2 += tree.at(leaf).path_prob * U.value(std::max(0.0, bound));
        if (led_tilde.bank[i] < bound - 1e-8 * std::max(1.0, std::abs(bound))) leafwise = false;
    }
    rep.step2_value = step2;
    rep.step2_ok = rep.step2_value <= rep.u_alpha + 1e-6;
    rep.chain_leafwise_ok = leafwise;
    return rep;
}

} // namespace lultax
