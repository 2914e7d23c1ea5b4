#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "lultax/optimizer.hpp"
#include "lultax/transforms.hpp"

using namespace lultax;
using testutil::caught_kind;

TEST_CASE("binary log problem: weight one half, value from the first-order condition") {
    scenario_tree t = testutil::binary_up_down();
    optimization_result res = maximize_utility(t, 1.0, 0.0, utility::log_utility());
    REQUIRE(res.best.qty(0, 0, 0) == Catch::Approx(0.5).margin(1e-3));
    REQUIRE(res.value == Catch::Approx(0.0588915178).margin(1e-4));
    REQUIRE(res.feasibility_margin >= -1e-8);
    REQUIRE_NOTHROW(validate_strategy(t, res.best));
}

TEST_CASE("deterministic equal-after-tax tree: bank and stock tie") {
    const double s2 = (1.1664 - 0.2) / 0.8; // (1+a)^2 from the indifference equation
    scenario_tree t = build_chain({{1.0}, {std::sqrt(s2)}, {s2}}, {0.0, 0.1, 0.1});
    const utility U = utility::log_utility();
    optimization_result res = maximize_utility(t, 1.0, 0.2, U);
    REQUIRE(res.value == Catch::Approx(std::log(1.1664)).margin(1e-6));

    strategy stock = strategy::zero(t);
    stock.set(0, 0, 0, 1.0);
    stock.set(1, 0, 0, 1.0);
    tax_ledger led = evaluate(t, stock, 1.0, 0.2);
    REQUIRE(led.bank[2] == Catch::Approx(1.1664).margin(1e-10));
}

TEST_CASE("linear utility beats the bank account") {
    rng gen(107);
    for (int rep = 0; rep < 10; ++rep) {
        scenario_tree t = testutil::random_na_tree(gen, 2, 2, 1);
        optimization_result res = maximize_utility(t, 1.0, 0.0, utility::linear_utility());
        tax_ledger bank = evaluate(t, strategy::zero(t), 1.0, 0.0);
        REQUIRE(res.value >= bank.expected_terminal(t) - 1e-7);
    }
}

TEST_CASE("optimizer refuses arbitrage trees") {
    scenario_tree arb = testutil::one_period({1.0}, {{0.5, {2.0}}, {0.5, {1.0}}}, 0.0);
    REQUIRE(caught_kind([&] {
                maximize_utility(arb, 1.0, 0.0, utility::log_utility());
            }) == errc::arbitrage_detected);
}

TEST_CASE("brute force oracle on the binary log problem") {
    scenario_tree t = testutil::binary_up_down();
    brute_force_result bf = brute_force_utility(t, 1.0, 0.0, utility::log_utility(), {1e-3, 3.0});
    REQUIRE(bf.value == Catch::Approx(0.0588915178).margin(2e-3));
}

TEST_CASE("brute force finds the bank on a replicating tree") {
    scenario_tree t = testutil::one_period({1.0}, {{1.0, {1.05}}}, 0.05);
    brute_force_result bf =
        brute_force_utility(t, 1.0, 0.0, utility::log_utility(), {0.01, 2.0});
    REQUIRE(bf.value == Catch::Approx(std::log(1.05)).margin(1e-9));
}

TEST_CASE("brute force reports infeasible problems") {
    scenario_tree t = testutil::binary_up_down();
    REQUIRE(caught_kind([&] {
                brute_force_utility(t, -1.0, 0.0, utility::log_utility(), {0.25, 1.0});
            }) == errc::infeasible);
}

TEST_CASE("brute force refuses more than six variables") {
    rng gen(109);
    scenario_tree t = testutil::random_na_tree(gen, 3, 2, 2);
    REQUIRE(caught_kind([&] {
                brute_force_utility(t, 1.0, 0.0, utility::log_utility(), {0.1, 2.0});
            }) == errc::too_many_variables);
}

TEST_CASE("optimizer agrees with the oracle on small instances") {
    rng gen(113);
    optimize_config cfg;
    cfg.iters = 2000;
    for (int rep = 0; rep < 8; ++rep) {
        scenario_tree t = testutil::random_na_tree(gen, 1, 3, 1); // one purchase variable
        double alpha = (rep % 3) * 0.25;
        optimization_result res = maximize_utility(t, 1.0, alpha, utility::log_utility(), cfg);
        brute_force_result bf =
            brute_force_utility(t, 1.0, alpha, utility::log_utility(), {1e-3, 4.0});
        REQUIRE(std::abs(res.value - bf.value) <= 5e-3);
    }
}

TEST_CASE("objective is midpoint concave in the strategy") {
    rng gen(127);
    const utility U = utility::log_utility();
    int done = 0;
    while (done < 30) {
        scenario_tree t = testutil::random_tree(gen, 2, 2, 2);
        double alpha = 0.5 * gen.uniform();
        strategy a = testutil::random_admissible(t, gen, 1.0, 0.4);
        strategy b = testutil::random_admissible(t, gen, 1.0, 0.4);
        auto value_of = [&](const strategy& s) {
            tax_ledger led = evaluate(t, s, 1.0, alpha);
            double v = 0.0;
            for (int leaf : t.leaves())
                v += t.at(leaf).path_prob * U.value(led.bank[static_cast<std::size_t>(leaf)]);
            return v;
        };
        double va = value_of(a), vb = value_of(b);
        if (!std::isfinite(va) || !std::isfinite(vb)) continue;
        double vm = value_of(convex_combine(a, b, 0.5));
        REQUIRE(vm >= 0.5 * (va + vb) - 1e-8);
        ++done;
    }
}

TEST_CASE("optimizer value dominates hand-constructed strategies") {
    rng gen(131);
    for (int rep = 0; rep < 6; ++rep) {
        scenario_tree t = testutil::random_na_tree(gen, 2, 2, 1);
        double alpha = 0.25;
        const utility U = utility::log_utility();
        optimization_result res = maximize_utility(t, 1.0, alpha, U);

        auto value_of = [&](const strategy& s) {
            tax_ledger led = evaluate(t, s, 1.0, alpha);
            double v = 0.0;
            for (int leaf : t.leaves())
                v += t.at(leaf).path_prob * U.value(led.bank[static_cast<std::size_t>(leaf)]);
            return v;
        };
        REQUIRE(res.value >= value_of(strategy::zero(t)) - 1e-6);

        // small buy-and-hold, its wash-enhanced variant, and a feasible sample
        strategy bh = strategy::zero(t);
        for (const node& n : t.nodes)
            if (n.time < t.horizon) bh.set(n.id, 0, 0, 0.2);
        double vbh = value_of(bh);
        if (std::isfinite(vbh)) {
            REQUIRE(res.value >= vbh - 1e-6);
            REQUIRE(res.value >= value_of(wash_sale_transform(t, bh)) - 1e-6);
        }
    }
}

TEST_CASE("optimum is first-order stable under the wash-sale transform") {
    rng gen(137);
    for (int rep = 0; rep < 5; ++rep) {
        scenario_tree t = testutil::random_na_tree(gen, 2, 2, 1);
        const utility U = utility::log_utility();
        optimization_result res = maximize_utility(t, 1.0, 0.25, U);
        strategy washed = wash_sale_transform(t, res.best);
        tax_ledger led = evaluate(t, washed, 1.0, 0.25);
        double v = 0.0;
        for (int leaf : t.leaves())
            v += t.at(leaf).path_prob * U.value(led.bank[static_cast<std::size_t>(leaf)]);
        REQUIRE(v <= res.value + 1e-6);
    }
}

TEST_CASE("optimizer never exceeds the frictionless optimum") {
    rng gen(139);
    for (int rep = 0; rep < 5; ++rep) {
        scenario_tree t = testutil::random_na_tree(gen, 2, 2, 1);
        const utility U = utility::log_utility();
        optimization_result taxed = maximize_utility(t, 1.0, 0.3, U);
        optimization_result free0 = maximize_utility(t, 1.0, 0.0, U);
        REQUIRE(taxed.value <= free0.value + 1e-6);
    }
}

TEST_CASE("finiteness transfer report on random instances") {
    rng gen(149);
    for (int rep = 0; rep < 4; ++rep) {
        scenario_tree t = testutil::random_na_tree(gen, 2, 2, 1);
        finiteness_report rep_a =
            finiteness_transfer_check(t, 1.0, 0.25, utility::log_utility());
        REQUIRE(rep_a.ordering_ok);
        REQUIRE(rep_a.step2_ok);
        REQUIRE(rep_a.chain_leafwise_ok);
        REQUIRE(std::isfinite(rep_a.u_alpha));
        REQUIRE(std::isfinite(rep_a.u_zero));
    }
    // alpha = 0: the two problems coincide
    scenario_tree t = testutil::binary_up_down();
    finiteness_report rep0 = finiteness_transfer_check(t, 1.0, 0.0, utility::log_utility());
    REQUIRE(rep0.u_alpha == Catch::Approx(rep0.u_zero).margin(1e-7));
}

TEST_CASE("power and blend utilities expose concave curvature") {
    utility p = utility::power_utility(0.5);
    REQUIRE(p.value(4.0) == Catch::Approx(4.0));
    REQUIRE(p.value(-1.0) == -std::numeric_limits<double>::infinity());
    utility pn = utility::power_utility(-1.0);
    REQUIRE(pn.value(0.0) == -std::numeric_limits<double>::infinity());
    REQUIRE(caught_kind([] { utility::power_utility(1.5); }) == errc::parse_error);
    utility b = utility::blend_utility(0.5);
    REQUIRE(b.derivative(2.0) == Catch::Approx(1.25));
}
