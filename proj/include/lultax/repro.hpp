#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lultax/errors.hpp"
#include "lultax/optimizer.hpp"
#include "lultax/strategy.hpp"
#include "lultax/tax_engine.hpp"
#include "lultax/tree.hpp"

namespace lultax {

// ---------------------------------------------------------------------------
// Non-uniqueness of maximizers: deterministic first period, a two-state
// split revealed at time 2, and a parameter pair (a, b) tuned so that the
// leveraged family N^lambda and the restructured family tilde-N^lambda
// produce identical after-tax wealth for every lambda.

struct nonuniqueness_instance {
    double alpha = 0.0;
    double r = 0.0;
    double r_low = 0.0; // the b solving the tax-deferral indifference equation
    double a = 0.0;
    double b = 0.0;
    double slope = 0.0; // residual slope of f at (a, b)
    scenario_tree tree; // 6 nodes: 0-1-(2,3)-(4,5); state split at time 2
};

namespace detail {

inline double nu_g(double a, double r) {
    return ((1.0 + a) * (1.0 - r) - (1.0 + r) * (1.0 + r)) /
           ((1.0 + a) * (1.0 - r) - (1.0 + a) * (1.0 + r));
}

inline double nu_L(double a, double r) {
    return 2.0 * r + r * r - (1.0 + a) * r * nu_g(a, r);
}

// Slope of the wealth-difference function f on omega_1: gains from the three
// investment intervals 0->3, 1->2 and 1->3.
inline double nu_slope(double a, double b, double r, double alpha) {
    const double g = nu_g(a, r);
    const double L = nu_L(a, r);
    const double ratio = L / ((1.0 + a) * 4.0 * r);
    const double A =
        (1.0 - alpha) * ((1.0 + a) * (1.0 + 4.0 * r) * (1.0 + b) - std::pow(1.0 + r, 3));
    const double B = (1.0 - alpha) * (1.0 + a) *
                     ((1.0 + 4.0 * r) * (1.0 + r) - (1.0 + r) * (1.0 + r));
    const double C = (1.0 - alpha) * (1.0 + a) *
                     ((1.0 + 4.0 * r) * (1.0 + b) - (1.0 + r) * (1.0 + r));
    return A + ratio * B + (-g - ratio) * C;
}

} // namespace detail

inline nonuniqueness_instance build_nonuniqueness(double alpha, double r, double tol = 1e-12) {
    if (!(alpha > 0.0 && alpha < 1.0 / 9.0))
        fail(errc::parse_error, "alpha must lie in (0, 1/9)");
    if (!(r > 0.0 && r < 1.0 / 3.0)) fail(errc::parse_error, "r must lie in (0, 1/3)");

    nonuniqueness_instance inst;
    inst.alpha = alpha;
    inst.r = r;
    // equality case of (1+4r)(1+b)(1-alpha) + alpha = (1+(1-alpha)4r)(1+(1-alpha)r)
    inst.r_low = ((1.0 + (1.0 - alpha) * 4.0 * r) * (1.0 + (1.0 - alpha) * r) - alpha) /
                     ((1.0 + 4.0 * r) * (1.0 - alpha)) -
                 1.0;
    if (!(inst.r_low > (1.0 - alpha) * r && inst.r_low < r))
        fail(errc::no_root_in_bracket,
             "r_low = " + std::to_string(inst.r_low) + " outside ((1-alpha)r, r)");

    // bisect a in (r_low, r) with b = r_low + r - a until the slope vanishes
    double lo = inst.r_low, hi = r;
    double slo = detail::nu_slope(lo, inst.r_low + r - lo, r, alpha);
    double shi = detail::nu_slope(hi, inst.r_low + r - hi, r, alpha);
    if (!(slo < 0.0 && shi > 0.0))
        fail(errc::no_root_in_bracket, "slope does not change sign over (r_low, r)");
    for (int it = 0; it < 200 && hi - lo > tol * std::max(1.0, r); ++it) {
        double mid = 0.5 * (lo + hi);
        double smid = detail::nu_slope(mid, inst.r_low + r - mid, r, alpha);
        if (smid < 0.0)
            lo = mid;
        else
            hi = mid;
    }
    inst.a = 0.5 * (lo + hi);
    inst.b = inst.r_low + r - inst.a;
    inst.slope = detail::nu_slope(inst.a, inst.b, r, alpha);

    const double a = inst.a, b = inst.b;
    raw_tree raw;
    raw.horizon = 3;
    raw.num_assets = 1;
    auto push = [&](std::int64_t id, int time, bool hp, std::int64_t parent, double prob,
                    double S) {
        raw_node n;
        n.id = id;
        n.time = time;
        n.has_parent = hp;
        n.parent = parent;
        n.prob = prob;
        n.prices = {S};
        n.rate = time >= 1 ? r : 0.0;
        raw.nodes.push_back(std::move(n));
    };
    push(0, 0, false, 0, 1.0, 1.0);
    push(1, 1, true, 0, 1.0, 1.0 + a);
    push(2, 2, true, 1, 0.5, (1.0 + a) * (1.0 + 4.0 * r)); // omega_1
    push(3, 2, true, 1, 0.5, (1.0 + a) * (1.0 - r));       // omega_2
    push(4, 3, true, 2, 1.0, (1.0 + a) * (1.0 + 4.0 * r) * (1.0 + b));
    push(5, 3, true, 3, 1.0, 0.0);
    inst.tree = validate_tree(raw);
    return inst;
}

// N^lambda: one share bought at 0, lambda-1 more on credit at time 1; on
// omega_1 a quarter of the time-1 lot is sold at time 2.
inline strategy nonuniqueness_family(const nonuniqueness_instance& inst, double lambda) {
    if (lambda < 0.0) fail(errc::parse_error, "lambda must be nonnegative");
    strategy s = strategy::zero(inst.tree);
    if (lambda >= 1.0) {
        s.set(0, 0, 0, 1.0);
        s.set(1, 0, 0, 1.0);
        if (lambda > 1.0) s.set(1, 1, 0, lambda - 1.0);
        s.set(2, 0, 0, 1.0);
        if (lambda > 1.0) s.set(2, 1, 0, 0.75 * (lambda - 1.0));
    } else if (lambda > 0.0) {
        s.set(0, 0, 0, lambda);
        s.set(1, 0, 0, lambda);
        s.set(2, 0, 0, lambda);
    }
    return s;
}

// tilde-N^lambda: more shares bought at time 0, fewer at time 1, chosen so
// the realized-loss pool lets the full time-1 lot go at time 2 on omega_1.
inline strategy nonuniqueness_family_tilde(const nonuniqueness_instance& inst, double lambda) {
    if (lambda < 1.0) return nonuniqueness_family(inst, lambda);
    const double g = detail::nu_g(inst.a, inst.r);
    const double L = detail::nu_L(inst.a, inst.r);
    const double w =
        0.75 * (lambda - 1.0) / (g + L / ((1.0 + inst.a) * 4.0 * inst.r));
    const double n00 = 1.0 + w;
    const double n11 = (lambda - 1.0) - w * g;
    if (n11 < -1e-12) fail(errc::no_root_in_bracket, "tilde strategy leaves the cone");
    strategy s = strategy::zero(inst.tree);
    s.set(0, 0, 0, n00);
    s.set(1, 0, 0, n00);
    if (n11 > 0.0) s.set(1, 1, 0, n11);
    s.set(2, 0, 0, n00); // time-1 lot (lower book profit) fully liquidated
    return s;
}

struct nonuniqueness_report {
    nonuniqueness_instance instance;
    double v1 = 0.0, v2 = 0.0;  // V^alpha(1, N^2) at omega_1 / omega_2
    double y1 = 0.0, y2 = 0.0;  // d/dlambda at lambda = 2
    utility calibrated;          // U with 1/2 y1 U'(v1) + 1/2 y2 U'(v2) = 0
    double balance = 0.0;        // residual of the first-order balance
    double lambda_star = 2.0;
    double u_star = 0.0;         // max over the one-parameter family
    double value_N = 0.0;        // E[U(V(N^lambda*))]
    double value_tilde = 0.0;    // E[U(V(tilde-N^lambda*))]
    double value_mid = 0.0;      // midpoint of the two strategies
    double optimizer_value = 0.0;
    bool distinct = false;
};

namespace detail {

inline double family_value(const nonuniqueness_instance& inst, const utility& U, double lambda,
                           bool tilde) {
    strategy s =
        tilde ? nonuniqueness_family_tilde(inst, lambda) : nonuniqueness_family(inst, lambda);
    tax_ledger led = evaluate(inst.tree, s, 1.0, inst.alpha);
    double val = 0.0;
    for (int leaf : inst.tree.leaves())
        val += inst.tree.at(leaf).path_prob * U.value(led.bank[static_cast<std::size_t>(leaf)]);
    return val;
}

inline double golden_max(const std::function<double(double)>& f, double lo, double hi,
                         double tol = 1e-12) {
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = lo, b = hi;
    double c = b - gr * (b - a), d = a + gr * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > tol) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - gr * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + gr * (b - a);
            fd = f(d);
        }
    }
    return 0.5 * (a + b);
}

} // namespace detail

inline nonuniqueness_report verify_nonuniqueness(const nonuniqueness_instance& inst,
                                                 optimize_config cfg = {}) {
    nonuniqueness_report rep;
    rep.instance = inst;

    tax_ledger led2 = evaluate(inst.tree, nonuniqueness_family(inst, 2.0), 1.0, inst.alpha);
    rep.v1 = led2.bank[4];
    rep.v2 = led2.bank[5];

    const double h = 1e-6;
    auto leaf_vals = [&](double lambda) {
        tax_ledger led = evaluate(inst.tree, nonuniqueness_family(inst, lambda), 1.0, inst.alpha);
        return std::pair<double, double>(led.bank[4], led.bank[5]);
    };
    auto [v1p, v2p] = leaf_vals(2.0 + h);
    auto [v1m, v2m] = leaf_vals(2.0 - h);
    rep.y1 = (v1p - v1m) / (2.0 * h);
    rep.y2 = (v2p - v2m) / (2.0 * h);

    const double rho = -rep.y2 / rep.y1;
    if (rho > 0.0 && rho < 1.0 && rho * rep.v1 > rep.v2) {
        // U(x) = x + w ln x with U'(v1)/U'(v2) = rho
        double w = rep.v1 * rep.v2 * (1.0 - rho) / (rho * rep.v1 - rep.v2);
        rep.calibrated = utility::blend_utility(w);
    } else {
        rep.calibrated = utility::log_utility();
    }
    rep.balance = 0.5 * rep.y1 * rep.calibrated.derivative(rep.v1) +
                  0.5 * rep.y2 * rep.calibrated.derivative(rep.v2);

    // The attainable set reduces to the one-parameter family; its utility is
    // concave in lambda, so a line search certifies the optimal value.
    double lambda_max = 0.5 * (1.0 + 1.0 / inst.r) - 1e-9; // V(omega_2) > 0
    auto fval = [&](double lam) { return detail::family_value(inst, rep.calibrated, lam, false); };
    rep.lambda_star = detail::golden_max(fval, 0.0, lambda_max);
    rep.u_star = fval(rep.lambda_star);

    const double ls = rep.lambda_star;
    rep.value_N = fval(ls);
    rep.value_tilde = detail::family_value(inst, rep.calibrated, ls, true);
    strategy mid = convex_combine(nonuniqueness_family(inst, ls),
                                  nonuniqueness_family_tilde(inst, ls), 0.5);
    tax_ledger led_mid = evaluate(inst.tree, mid, 1.0, inst.alpha);
    rep.value_mid = 0.0;
    for (int leaf : inst.tree.leaves())
        rep.value_mid +=
            inst.tree.at(leaf).path_prob * rep.calibrated.value(led_mid.bank[static_cast<std::size_t>(leaf)]);

    optimization_result opt = maximize_utility(inst.tree, 1.0, inst.alpha, rep.calibrated, cfg);
    rep.optimizer_value = opt.value;

    strategy sN = nonuniqueness_family(inst, ls);
    strategy sT = nonuniqueness_family_tilde(inst, ls);
    double diff = 0.0;
    for (std::size_t n = 0; n < sN.lots.size(); ++n)
        for (int i = 0; i <= inst.tree.at(static_cast<int>(n)).time; ++i)
            diff = std::max(diff, std::abs(sN.qty(static_cast<int>(n), i, 0) -
                                           sT.qty(static_cast<int>(n), i, 0)));
    rep.distinct = diff > 1e-9;
    return rep;
}

// ---------------------------------------------------------------------------
// Non-closedness example: truncation of the Y-indexed tree in which the
// strategies N^n defer all taxes except where the rate vanishes afterwards,
// giving the pathwise identity V^alpha(1, N^n) = (1-alpha) V^0(1, N^n) + alpha.

struct nonclosedness_instance {
    double r = 0.0;
    double alpha = 0.0;
    int truncation = 0; // n
    double p1 = 0.5, p2 = 0.5;
    std::vector<double> c; // c[k - 3] for k = 3..n
    scenario_tree tree;
    // canonical ids of the level-1 node per k, for strategy construction
    std::vector<int> level1;
    std::vector<int> level2_up; // Z2 = c_k
};

inline double nonclosedness_ck(int k, double r) {
    return (k - 2) * (2.0 * r + r * r) / (k * (1.0 + r));
}

inline nonclosedness_instance build_nonclosedness(double r, double alpha, int n, double p1 = 0.5,
                                                  double p2 = 0.5) {
    if (n < 3) fail(errc::invalid_truncation, "truncation must be >= 3, got " + std::to_string(n));
    if (!(r > 0.0)) fail(errc::parse_error, "r must be positive");
    detail::require_alpha(alpha);
    if (alpha == 0.0) {
        // allowed: identities degenerate to V^0 = V^0
    }
    if (!(p1 > 0.0 && p1 < 1.0 && p2 > 0.0 && p2 < 1.0))
        fail(errc::parse_error, "branch probabilities must lie in (0,1)");

    nonclosedness_instance inst;
    inst.r = r;
    inst.alpha = alpha;
    inst.truncation = n;
    inst.p1 = p1;
    inst.p2 = p2;

    raw_tree raw;
    raw.horizon = 3;
    raw.num_assets = 1;
    double z = 0.0;
    for (int k = 3; k <= n; ++k) z += std::pow(2.0, 2 - k);

    std::int64_t next = 0;
    auto push = [&](int time, bool hp, std::int64_t parent, double prob, double S, double rate) {
        raw_node nn;
        nn.id = next++;
        nn.time = time;
        nn.has_parent = hp;
        nn.parent = parent;
        nn.prob = prob;
        nn.prices = {S};
        nn.rate = rate;
        raw.nodes.push_back(std::move(nn));
        return nn.id;
    };
    std::int64_t root = push(0, false, 0, 1.0, 1.0, 0.0);
    std::vector<std::int64_t> l1_ids, l2up_ids;
    for (int k = 3; k <= n; ++k) {
        double ck = nonclosedness_ck(k, r);
        inst.c.push_back(ck);
        double pk = std::pow(2.0, 2 - k) / z;
        std::int64_t yk = push(1, true, root, pk, 1.0 + r, r);
        l1_ids.push_back(yk);
        double s2_up = (1.0 + r) * (1.0 + r + ck);
        double s2_dn = (1.0 + r) * (1.0 + r - r / k);
        std::int64_t up = push(2, true, yk, p1, s2_up, r);
        l2up_ids.push_back(up);
        std::int64_t dn = push(2, true, yk, 1.0 - p1, s2_dn, r);
        push(3, true, up, p2, s2_up * (1.0 + r + ck), r);
        push(3, true, up, 1.0 - p2, s2_up * (1.0 + r - r / k), r);
        push(3, true, dn, 1.0, 0.0, 0.0); // Z3 = -1-r, rate vanishes
    }
    inst.tree = validate_tree(raw, {.require_nonneg_prices = true});
    for (std::int64_t id : l1_ids) inst.level1.push_back(detail::resolve_input_id(inst.tree, id));
    for (std::int64_t id : l2up_ids)
        inst.level2_up.push_back(detail::resolve_input_id(inst.tree, id));
    return inst;
}

// N^m on the truncated tree: m shares at time 0, Y 1_{Y<=m} after time 1,
// Y/2 1_{Y<=m, Z2>0} after time 2.
inline strategy nonclosedness_strategy(const nonclosedness_instance& inst, int m) {
    if (m < 0 || m > inst.truncation)
        fail(errc::invalid_truncation,
             "strategy level " + std::to_string(m) + " outside [0, n]");
    strategy s = strategy::zero(inst.tree);
    if (m == 0) return s;
    s.set(inst.tree.root(), 0, 0, static_cast<double>(m));
    for (std::size_t idx = 0; idx < inst.level1.size(); ++idx) {
        int k = 3 + static_cast<int>(idx);
        if (k > m) continue;
        s.set(inst.level1[idx], 0, 0, static_cast<double>(k));
        s.set(inst.level2_up[idx], 0, 0, 0.5 * k);
    }
    return s;
}

struct nonclosedness_report {
    double max_identity_error = 0.0; // c_k identity residual
    double max_relation_error = 0.0; // wealth relation residual over leaves
    double log_expectation = 0.0;    // E[ln(V^alpha(1, N^n) - alpha)]
};

inline nonclosedness_report verify_nonclosedness(const nonclosedness_instance& inst) {
    nonclosedness_report rep;
    const double r = inst.r;
    for (int k = 3; k <= inst.truncation; ++k) {
        double ck = inst.c[static_cast<std::size_t>(k - 3)];
        double lhs = (k - 1) * (2.0 * r + r * r);
        double rhs = 0.5 * k * (2.0 * r + ck + r * r + r * ck);
        rep.max_identity_error = std::max(rep.max_identity_error, std::abs(lhs - rhs));
    }
    strategy sn = nonclosedness_strategy(inst, inst.truncation);
    tax_ledger led = evaluate(inst.tree, sn, 1.0, inst.alpha);
    rep.log_expectation = 0.0;
    for (int leaf : inst.tree.leaves()) {
        const std::size_t i = static_cast<std::size_t>(leaf);
        double va = led.bank[i];
        double v0 = led.frictionless[i];
        double rel = std::abs(va - ((1.0 - inst.alpha) * v0 + inst.alpha));
        rep.max_relation_error = std::max(rep.max_relation_error, rel);
        rep.log_expectation += inst.tree.at(leaf).path_prob * std::log(va - inst.alpha);
    }
    return rep;
}

} // namespace lultax
