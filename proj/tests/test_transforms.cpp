#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "lultax/transforms.hpp"

using namespace lultax;
using testutil::caught_kind;

namespace {

// d = 2 chain: asset 1 rises and is sold at 1, asset 2 sinks and is held.
scenario_tree two_asset_chain() {
    return build_chain({{1.0, 1.0}, {1.5, 0.5}, {1.5, 0.5}}, {0.0, 0.0, 0.0});
}

strategy hold_loser(const scenario_tree& t) {
    strategy s = strategy::zero(t);
    s.set(0, 0, 0, 1.0);
    s.set(0, 0, 1, 1.0);
    s.set(1, 0, 1, 1.0);
    return s;
}

} // namespace

TEST_CASE("wash sale turns 1.75 into 2.00 on the two-asset chain") {
    scenario_tree t = two_asset_chain();
    strategy n = hold_loser(t);
    REQUIRE(evaluate(t, n, 2.0, 0.5).bank[2] == Catch::Approx(1.75).margin(1e-12));
    strategy washed = wash_sale_transform(t, n);
    REQUIRE(evaluate(t, washed, 2.0, 0.5).bank[2] == Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("wash sale is the identity without underwater lots") {
    scenario_tree t = build_chain({{1.0}, {1.2}, {1.4}}, {0.0, 0.0, 0.0});
    strategy n = strategy::zero(t);
    n.set(0, 0, 0, 1.0);
    n.set(1, 0, 0, 1.0);
    strategy washed = wash_sale_transform(t, n);
    for (const node& nd : t.nodes)
        for (int i = 0; i <= nd.time; ++i)
            REQUIRE(washed.qty(nd.id, i, 0) == n.qty(nd.id, i, 0));
}

TEST_CASE("washed strategies hold no lot below basis") {
    rng gen(79);
    for (int rep = 0; rep < 60; ++rep) {
        scenario_tree t = testutil::random_tree(gen, 3, 3, 2);
        strategy washed = wash_sale_transform(t, sample_strategy(t, gen.raw(), 1.5));
        REQUIRE_NOTHROW(validate_strategy(t, washed));
        for (const node& nd : t.nodes)
            for (const lot& l : washed.lots[static_cast<std::size_t>(nd.id)]) {
                if (l.qty == 0.0 || l.buy_time == nd.time) continue;
                double basis = t.ancestor_price(nd.id, l.buy_time, l.asset);
                double now = nd.prices[static_cast<std::size_t>(l.asset)];
                REQUIRE(basis <= now);
            }
    }
}

TEST_CASE("wash-sale dominance over random instances") {
    rng gen(83);
    for (int rep = 0; rep < 100; ++rep) {
        scenario_tree t = testutil::random_tree(gen, 3, 3, 2);
        strategy n = sample_strategy(t, gen.raw(), 1.5);
        strategy washed = wash_sale_transform(t, n);
        double x = -1.0 + 3.0 * gen.uniform();
        double alpha = 0.5 * gen.uniform();
        tax_ledger before = evaluate(t, n, x, alpha);
        tax_ledger after = evaluate(t, washed, x, alpha);
        for (int leaf : t.leaves()) {
            auto i = static_cast<std::size_t>(leaf);
            REQUIRE(after.bank[i] >= before.bank[i] - 1e-10);
        }
    }
}

TEST_CASE("immediate realization keeps aggregate holdings on non-redundant chains") {
    scenario_tree t = build_chain({{1.0}, {1.2}, {1.5}}, {0.0, 0.0, 0.0});
    strategy n = strategy::zero(t);
    n.set(0, 0, 0, 1.0);
    n.set(1, 0, 0, 1.0);
    strategy hat = immediate_realization(t, n);
    REQUIRE(hat.qty(0, 0, 0) == Catch::Approx(1.0).margin(1e-10));
    REQUIRE(hat.qty(1, 1, 0) == Catch::Approx(1.0).margin(1e-10));
    REQUIRE(hat.qty(1, 0, 0) == 0.0);
}

TEST_CASE("immediate realization strips reversible components") {
    // children with excess (1,-1) and (-1,1): holding (2,1) strips to (1,0)
    raw_tree raw;
    raw.horizon = 2;
    raw.num_assets = 2;
    raw.nodes.push_back({0, 0, false, 0, 1.0, {1.0, 1.0}, 0.0});
    raw.nodes.push_back({1, 1, true, 0, 0.5, {2.0, 0.0}, 0.0});
    raw.nodes.push_back({2, 1, true, 0, 0.5, {0.0, 2.0}, 0.0});
    raw.nodes.push_back({3, 2, true, 1, 1.0, {2.0, 0.0}, 0.0});
    raw.nodes.push_back({4, 2, true, 2, 1.0, {0.0, 2.0}, 0.0});
    scenario_tree t = validate_tree(raw);
    strategy n = strategy::zero(t);
    n.set(0, 0, 0, 2.0);
    n.set(0, 0, 1, 1.0);
    strategy hat = immediate_realization(t, n);
    REQUIRE(hat.qty(0, 0, 0) == Catch::Approx(1.0).margin(1e-9));
    REQUIRE(hat.qty(0, 0, 1) == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("immediate realization preserves the frictionless wealth") {
    rng gen(89);
    for (int rep = 0; rep < 60; ++rep) {
        scenario_tree t = testutil::random_tree(gen, 3, 3, 2);
        strategy n = sample_strategy(t, gen.raw(), 1.5);
        strategy hat = immediate_realization(t, n);
        double x = 2.0 * gen.uniform();
        tax_ledger a = evaluate(t, n, x, 0.0);
        tax_ledger b = evaluate(t, hat, x, 0.0);
        for (int leaf : t.leaves()) {
            auto i = static_cast<std::size_t>(leaf);
            REQUIRE(b.bank[i] ==
                    Catch::Approx(a.bank[i]).margin(1e-9 * std::max(1.0, std::abs(a.bank[i]))));
        }
    }
    // zero maps to zero
    scenario_tree t = testutil::binary_up_down();
    strategy hat = immediate_realization(t, strategy::zero(t));
    for (const auto& ls : hat.lots) REQUIRE(ls.empty());
}

TEST_CASE("stopped strategies zero holdings from the stop on") {
    scenario_tree t = build_chain({{1.0}, {1.1}, {1.2}, {1.3}}, {0.0, 0.0, 0.0, 0.0});
    strategy n = strategy::zero(t);
    n.set(0, 0, 0, 1.0);
    n.set(1, 0, 0, 1.0);
    n.set(2, 0, 0, 1.0);

    strategy full = stop_strategy(t, n, stopping_time::constant(t, 3));
    for (int id = 0; id < 3; ++id) REQUIRE(full.qty(id, 0, 0) == 1.0);

    strategy none = stop_strategy(t, n, stopping_time::constant(t, 0));
    for (const auto& ls : none.lots) REQUIRE(ls.empty());

    // stop at the first time the price exceeds 1.15: prices 1.0, 1.1, 1.2, 1.3
    // fire at t = 2, encoded on the time-2 node and inherited below
    stopping_time tau;
    tau.value = {3, 3, 2, 2};
    validate_stopping_time(t, tau);
    strategy stopped = stop_strategy(t, n, tau);
    REQUIRE(stopped.qty(0, 0, 0) == 1.0);
    REQUIRE(stopped.qty(1, 0, 0) == 1.0);
    REQUIRE(stopped.qty(2, 0, 0) == 0.0);
}

TEST_CASE("loss bound closed forms") {
    scenario_tree t = build_chain({{1.0}, {1.0}, {1.0}}, {0.0, 0.1, 0.1});
    loss_bound_t lb = loss_bound(t, strategy::zero(t), 1.0, 0.1);
    for (double v : lb.bound) REQUIRE(v == 0.0);

    loss_bound_t neg = loss_bound(t, strategy::zero(t), -1.0, 0.1);
    for (double v : neg.bound) REQUIRE(v == Catch::Approx(1.21).margin(1e-12));

    REQUIRE(caught_kind([&] { loss_bound(t, strategy::zero(t), 1.0, 0.05); }) ==
            errc::rate_bound_violated);
}

TEST_CASE("loss bound is nondecreasing along paths and stops consistently") {
    rng gen(97);
    for (int rep = 0; rep < 40; ++rep) {
        scenario_tree t = testutil::random_tree(gen, 3, 2, 2);
        strategy n = sample_strategy(t, gen.raw(), 1.0);
        double x = -1.0 + 3.0 * gen.uniform();
        loss_bound_t lb = loss_bound(t, n, x, 0.1);
        for (const node& nd : t.nodes)
            if (nd.parent >= 0)
                REQUIRE(lb.bound[static_cast<std::size_t>(nd.id)] >=
                        lb.bound[static_cast<std::size_t>(nd.parent)] - 1e-12);

        // L_t(N^{(tau)}) = L_{t ^ tau}(N)
        int k = static_cast<int>(gen.below(static_cast<std::uint64_t>(t.horizon + 1)));
        stopping_time tau = stopping_time::constant(t, k);
        strategy stopped = stop_strategy(t, n, tau);
        loss_bound_t lbs = loss_bound(t, stopped, x, 0.1);
        for (const node& nd : t.nodes) {
            int tcap = std::min(nd.time, k);
            int anc = t.paths[static_cast<std::size_t>(nd.id)][static_cast<std::size_t>(tcap)];
            REQUIRE(lbs.bound[static_cast<std::size_t>(nd.id)] ==
                    Catch::Approx(lb.bound[static_cast<std::size_t>(anc)]).margin(1e-9));
        }
    }
}

TEST_CASE("wash of a stopped strategy respects the loss bound guarantee") {
    rng gen(101);
    for (int rep = 0; rep < 40; ++rep) {
        scenario_tree t = testutil::random_tree(gen, 3, 2, 2);
        strategy n = sample_strategy(t, gen.raw(), 1.0);
        double x = -0.5 + 2.0 * gen.uniform();
        double alpha = 0.5 * gen.uniform();
        int k = static_cast<int>(gen.below(static_cast<std::uint64_t>(t.horizon + 1)));
        strategy stopped = stop_strategy(t, n, stopping_time::constant(t, k));
        strategy washed = wash_sale_transform(t, stopped);
        loss_bound_t lb = loss_bound(t, washed, x, 0.1);
        tax_ledger led = evaluate(t, washed, x, alpha);
        for (int leaf : t.leaves()) {
            auto i = static_cast<std::size_t>(leaf);
            REQUIRE(led.bank[i] >= -lb.bound[i] - 1e-9);
        }
    }
}

TEST_CASE("normalized strategy weights and the product identity") {
    // all-in buy and hold on a rising chain
    scenario_tree t = build_chain({{1.0}, {1.2}, {1.5}}, {0.0, 0.0, 0.0});
    strategy n = strategy::zero(t);
    n.set(0, 0, 0, 1.0);
    n.set(1, 0, 0, 1.0);
    normalized_result nr = normalized_strategy(t, n, 1.0);
    REQUIRE(nr.beta[0][0] == Catch::Approx(1.0).margin(1e-12));          // 1 share / wealth 1
    REQUIRE(nr.beta[1][0] == Catch::Approx(1.0 / 1.2).margin(1e-12));    // 1 share / wealth 1.2

    // zero strategy: beta == 0 and V^0 is the bank account
    scenario_tree tb = build_chain({{1.0}, {1.0}, {1.0}}, {0.0, 0.05, 0.05});
    normalized_result nb = normalized_strategy(tb, strategy::zero(tb), 1.0);
    REQUIRE(nb.beta[0][0] == 0.0);
    REQUIRE(nb.frictionless[2] == Catch::Approx(1.1025).margin(1e-12));
}

TEST_CASE("product identity holds for random admissible strategies") {
    rng gen(103);
    for (int rep = 0; rep < 50; ++rep) {
        scenario_tree t = testutil::random_na_tree(gen, 3, 2, 2);
        double x = 0.5 + gen.uniform();
        strategy n = testutil::random_admissible(t, gen, x);
        REQUIRE_NOTHROW(normalized_strategy(t, n, x)); // identity verified inside
    }
}

TEST_CASE("normalized strategy flags negative wealth") {
    scenario_tree t = build_chain({{1.0}, {0.2}, {0.2}}, {0.0, 0.0, 0.0});
    strategy n = strategy::zero(t);
    n.set(0, 0, 0, 5.0); // wealth 1 -> 1 + 5*(0.2-1) < 0
    n.set(1, 0, 0, 5.0);
    REQUIRE(caught_kind([&] { normalized_strategy(t, n, 1.0); }) ==
            errc::negative_wealth_encountered);
}
