#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "lultax/cone_analysis.hpp"
#include "lultax/repro.hpp"

using namespace lultax;
using testutil::caught_kind;

namespace {

// d = 2 node whose children have excess returns (1,-1) and (-1,1):
// the reversible cone is spanned by (1,1).
scenario_tree crossed_pair() {
    return testutil::one_period({1.0, 1.0}, {{0.5, {2.0, 0.0}}, {0.5, {0.0, 2.0}}}, 0.0);
}

} // namespace

TEST_CASE("reversible cone is trivial under mixed one-asset returns") {
    scenario_tree t = testutil::one_period({1.0}, {{0.5, {2.0}}, {0.5, {0.5}}}, 0.0);
    REQUIRE(reversible_cone(t, 0).empty());
}

TEST_CASE("crossed excess returns produce the diagonal cone") {
    scenario_tree t = crossed_pair();
    auto gens = reversible_cone(t, 0);
    REQUIRE(gens.size() == 1);
    REQUIRE(gens[0][0] == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(gens[0][1] == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("a stock replicating the bank is reversible") {
    scenario_tree t = testutil::one_period({1.0}, {{1.0, {1.0}}}, 0.0);
    auto gens = reversible_cone(t, 0);
    REQUIRE(gens.size() == 1);
    REQUIRE(gens[0][0] == Catch::Approx(1.0));
}

TEST_CASE("decompose returns q = beta when the cone is trivial") {
    scenario_tree t = testutil::one_period({1.0}, {{0.5, {2.0}}, {0.5, {0.5}}}, 0.0);
    decomposition dec = decompose(t, 0, {0.7});
    REQUIRE(dec.reversible[0] == 0.0);
    REQUIRE(dec.nonreversible[0] == Catch::Approx(0.7));
}

TEST_CASE("decompose strips the reversible diagonal") {
    scenario_tree t = crossed_pair();
    decomposition dec = decompose(t, 0, {2.0, 1.0});
    REQUIRE(dec.reversible[0] == Catch::Approx(1.0).margin(1e-10));
    REQUIRE(dec.reversible[1] == Catch::Approx(1.0).margin(1e-10));
    REQUIRE(dec.nonreversible[0] == Catch::Approx(1.0).margin(1e-10));
    REQUIRE(dec.nonreversible[1] == Catch::Approx(0.0).margin(1e-10));

    decomposition zero = decompose(t, 0, {0.0, 0.0});
    REQUIRE(zero.reversible == vec{0.0, 0.0});
    REQUIRE(zero.nonreversible == vec{0.0, 0.0});
}

TEST_CASE("decomposition invariants on random nodes") {
    rng gen(59);
    int tested = 0;
    while (tested < 60) {
        scenario_tree t = testutil::random_tree(gen, 1, 3, 1 + static_cast<int>(gen.below(4)));
        const int d = t.num_assets;
        vec beta;
        for (int j = 0; j < d; ++j) beta.push_back(2.0 * gen.uniform());
        decomposition dec = decompose(t, 0, beta);
        // exact split
        for (int j = 0; j < d; ++j)
            REQUIRE(dec.reversible[static_cast<std::size_t>(j)] +
                        dec.nonreversible[static_cast<std::size_t>(j)] ==
                    Catch::Approx(beta[static_cast<std::size_t>(j)]).margin(1e-10));
        // p lies in the reversible cone
        for (int c : t.at(0).children) {
            const node& ch = t.at(c);
            double drift = 0.0;
            for (int j = 0; j < d; ++j)
                drift += dec.reversible[static_cast<std::size_t>(j)] *
                         (ch.prices[static_cast<std::size_t>(j)] -
                          (1.0 + ch.rate) * t.at(0).prices[static_cast<std::size_t>(j)]);
            REQUIRE(std::abs(drift) <= 1e-8);
        }
        // positive homogeneity of q
        for (double mu : {0.5, 2.0}) {
            decomposition sc = decompose(t, 0, scaled(beta, mu));
            for (int j = 0; j < d; ++j)
                REQUIRE(sc.nonreversible[static_cast<std::size_t>(j)] ==
                        Catch::Approx(mu * dec.nonreversible[static_cast<std::size_t>(j)])
                            .margin(1e-8));
        }
        // minimality against random competitors beta' >= 0 with beta-beta' in R
        auto gens = reversible_cone(t, 0);
        for (int comp = 0; comp < 20; ++comp) {
            vec p(static_cast<std::size_t>(d), 0.0);
            for (const vec& g : gens) axpy(gen.uniform(), g, p);
            double cmax = 1.0;
            for (int j = 0; j < d; ++j)
                if (p[static_cast<std::size_t>(j)] > 1e-15)
                    cmax = std::min(cmax, beta[static_cast<std::size_t>(j)] /
                                              p[static_cast<std::size_t>(j)]);
            vec pfeas = scaled(p, cmax * gen.uniform());
            vec competitor = sub(beta, pfeas);
            REQUIRE(norm(dec.nonreversible) <= norm(competitor) + 1e-9);
        }
        ++tested;
    }
}

TEST_CASE("purely nonreversible classification") {
    scenario_tree t = crossed_pair();
    REQUIRE(!is_purely_nonreversible(t, 0, {2.0, 1.0}));
    REQUIRE(!is_purely_nonreversible(t, 0, {1.0, 1.0})); // a generator itself
    decomposition dec = decompose(t, 0, {2.0, 1.0});
    REQUIRE(is_purely_nonreversible(t, 0, dec.nonreversible)); // idempotence
}

TEST_CASE("check_na on one-period fixtures") {
    scenario_tree mixed = testutil::one_period({1.0}, {{0.5, {2.0}}, {0.5, {0.5}}}, 0.0);
    REQUIRE(check_na(mixed).holds);

    scenario_tree arb = testutil::one_period({1.0}, {{0.5, {2.0}}, {0.5, {1.0}}}, 0.0);
    na_report rep = check_na(arb);
    REQUIRE(!rep.holds);
    REQUIRE(rep.violation->node_id == 0);
    const vec& cert = rep.violation->certificate;
    REQUIRE(cert[0] > 0.0);
    // certificate invariant: nonnegative excess everywhere, one clears 1e-6
    double best = 0.0;
    for (int c : arb.at(0).children) {
        double excess = cert[0] * (arb.at(c).prices[0] - arb.at(0).prices[0]);
        REQUIRE(excess >= -1e-10);
        best = std::max(best, excess);
    }
    REQUIRE(best >= 1e-6);
}

TEST_CASE("the truncated nonclosedness tree satisfies NA") {
    nonclosedness_instance inst = build_nonclosedness(0.1, 0.25, 6);
    REQUIRE(check_na(inst.tree).holds);
}

TEST_CASE("admissible polytope of the up/down node is [0, 2]") {
    scenario_tree t = testutil::binary_up_down();
    admissible_polytope_t poly = admissible_polytope(t, 0);
    REQUIRE(poly.radius == Catch::Approx(2.0).margin(1e-9));
    bool has_zero = false, has_two = false;
    for (const vec& v : poly.admissible_vertices) {
        if (std::abs(v[0]) < 1e-12) has_zero = true;
        if (std::abs(v[0] - 2.0) < 1e-9) has_two = true;
    }
    REQUIRE(has_zero);
    REQUIRE(has_two);
}

TEST_CASE("admissible polytope refuses arbitrage nodes") {
    scenario_tree arb = testutil::one_period({1.0}, {{0.5, {2.0}}, {0.5, {1.0}}}, 0.0);
    REQUIRE(caught_kind([&] { admissible_polytope(arb, 0); }) ==
            errc::unbounded_admissible_set);
}

TEST_CASE("norm max basis on the interval and the empty set") {
    scenario_tree t = testutil::binary_up_down();
    norm_max_basis_t basis = norm_max_basis(t, 0);
    REQUIRE(basis.basis.size() == 1);
    REQUIRE(basis.basis[0][0] == Catch::Approx(2.0).margin(1e-9));

    // replicating stock: admissible set beyond {0} is reversible, basis empty
    scenario_tree flat = testutil::one_period({1.0}, {{1.0, {1.0}}}, 0.0);
    norm_max_basis_t none = norm_max_basis(flat, 0);
    REQUIRE(none.picked_orig.empty());
    for (const vec& y : none.basis) REQUIRE(norm(y) == 0.0);
}

TEST_CASE("basis reconstruction bounds |lambda_i| <= 2^{i-1}") {
    rng gen(61);
    int done = 0;
    while (done < 25) {
        scenario_tree t = testutil::random_na_tree(gen, 1, 3, 2);
        norm_max_basis_t basis = norm_max_basis(t, 0);
        if (basis.picked_orig.empty()) continue;
        for (int samp = 0; samp < 8; ++samp) {
            // sample beta in A_t: scale a q-projection to keep factors >= 0
            vec raw;
            for (int j = 0; j < t.num_assets; ++j) raw.push_back(gen.uniform());
            vec q = decompose(t, 0, raw).nonreversible;
            double smax = std::numeric_limits<double>::infinity();
            for (int c : t.at(0).children) {
                const node& ch = t.at(c);
                double drift = 0.0;
                for (int j = 0; j < t.num_assets; ++j)
                    drift += q[static_cast<std::size_t>(j)] *
                             (ch.prices[static_cast<std::size_t>(j)] -
                              (1.0 + ch.rate) * t.at(0).prices[static_cast<std::size_t>(j)]);
                if (drift < 0.0) smax = std::min(smax, (1.0 + ch.rate) / (-drift));
            }
            if (!std::isfinite(smax)) smax = 3.0;
            vec beta = scaled(q, smax * gen.uniform());
            vec lambda = reconstruct_in_basis(basis, beta);
            vec rebuilt(static_cast<std::size_t>(t.num_assets), 0.0);
            double bound = 1.0;
            for (std::size_t i = 0; i < basis.basis.size(); ++i) {
                REQUIRE(std::abs(lambda[i]) <= bound + 1e-8);
                axpy(lambda[i], basis.basis[i], rebuilt);
                bound *= 2.0;
            }
            REQUIRE(inf_norm(sub(rebuilt, beta)) <= 1e-8);
        }
        (void)poly;
        ++done;
    }
}

TEST_CASE("per-child boundedness estimate for basis vectors") {
    rng gen(67);
    for (int rep = 0; rep < 25; ++rep) {
        scenario_tree t = testutil::random_na_tree(gen, 1, 3, 2);
        norm_max_basis_t basis = norm_max_basis(t, 0);
        for (const vec& y : basis.basis) {
            for (int c : t.at(0).children) {
                const node& ch = t.at(c);
                double drift = 0.0;
                for (int j = 0; j < t.num_assets; ++j)
                    drift += y[static_cast<std::size_t>(j)] *
                             (ch.prices[static_cast<std::size_t>(j)] -
                              (1.0 + ch.rate) * t.at(0).prices[static_cast<std::size_t>(j)]);
                REQUIRE(std::abs(drift) <= 2.0 * (1.0 + ch.rate) + drift + 1e-9);
            }
        }
    }
}

TEST_CASE("dominating strategy closed case: wealth {5x, 2x} from 3x") {
    scenario_tree t = testutil::binary_up_down();
    dominating_result dom = dominating_strategy(t, 1.0);
    REQUIRE(dom.x_hat == Catch::Approx(3.0).margin(1e-12));
    REQUIRE(dom.beta_hat[0][0] == Catch::Approx(2.0 / 3.0).margin(1e-12));
    REQUIRE(dom.wealth[1] == Catch::Approx(5.0).margin(1e-9));
    REQUIRE(dom.wealth[2] == Catch::Approx(2.0).margin(1e-9));
    // engine agrees with the forward wealth
    tax_ledger led = evaluate(t, dom.s, dom.x_hat, 0.0);
    REQUIRE(led.bank[1] == Catch::Approx(5.0).margin(1e-9));
    REQUIRE(led.bank[2] == Catch::Approx(2.0).margin(1e-9));
}

TEST_CASE("bank account is dominated") {
    rng gen(71);
    for (int rep = 0; rep < 20; ++rep) {
        scenario_tree t = testutil::random_na_tree(gen, 2, 2, 1);
        dominating_result dom = dominating_strategy(t, 1.0);
        tax_ledger bank = evaluate(t, strategy::zero(t), 1.0, 0.0);
        for (int leaf : t.leaves()) {
            auto i = static_cast<std::size_t>(leaf);
            REQUIRE(bank.bank[i] <= dom.wealth[i] + 1e-9 * std::max(1.0, dom.wealth[i]));
        }
    }
}

TEST_CASE("domination sweep over random admissible strategies") {
    rng gen(73);
    for (int rep = 0; rep < 10; ++rep) {
        scenario_tree t = testutil::random_na_tree(gen, 2, 2, 2);
        double x = 0.5 + gen.uniform();
        dominating_result dom = dominating_strategy(t, x);
        for (int k = 0; k < 50; ++k) {
            strategy n = testutil::random_admissible(t, gen, x);
            tax_ledger led = evaluate(t, n, x, 0.0);
            for (int leaf : t.leaves()) {
                auto i = static_cast<std::size_t>(leaf);
                REQUIRE(led.bank[i] <=
                        dom.wealth[i] + 1e-9 * std::max(1.0, std::abs(dom.wealth[i])));
            }
        }
    }
}

TEST_CASE("dominating strategy requires no arbitrage") {
    scenario_tree arb = testutil::one_period({1.0}, {{0.5, {2.0}}, {0.5, {1.0}}}, 0.0);
    REQUIRE(caught_kind([&] { dominating_strategy(arb, 1.0); }) == errc::arbitrage_detected);
}
