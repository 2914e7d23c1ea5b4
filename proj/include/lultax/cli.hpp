#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lultax/cone_analysis.hpp"
#include "lultax/errors.hpp"
#include "lultax/optimizer.hpp"
#include "lultax/repro.hpp"
#include "lultax/strategy.hpp"
#include "lultax/tax_engine.hpp"
#include "lultax/transforms.hpp"
#include "lultax/tree.hpp"
#include "lultax/version.hpp"

namespace lultax::cli {

inline std::string fmt12(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

inline std::string fnv1a64_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return "missing";
    std::uint64_t h = 1469598103934665603ull;
    char c;
    while (in.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline nlohmann::json report_envelope(const std::vector<std::pair<std::string, std::string>>& inputs,
                                      nlohmann::json result) {
    nlohmann::json inp = nlohmann::json::object();
    for (const auto& [name, path] : inputs)
        inp[name] = {{"path", path}, {"fnv1a64", fnv1a64_file(path)}};
    return nlohmann::json{
        {"tool", "lultax"}, {"version", version}, {"inputs", std::move(inp)},
        {"result", std::move(result)}};
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) fail(errc::parse_error, "cannot write " + path);
    out << j.dump(2) << "\n";
}

inline nlohmann::json vec_json(const vec& v) {
    nlohmann::json a = nlohmann::json::array();
    for (double x : v) a.push_back(x);
    return a;
}

// Parses "0.5,1.25" into a vector.
inline vec parse_csv_doubles(const std::string& text) {
    vec out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            fail(errc::parse_error, "bad number '" + item + "'");
        }
    }
    return out;
}

inline utility parse_utility(const std::string& text) {
    if (text == "log") return utility::log_utility();
    if (text == "linear") return utility::linear_utility();
    if (text.rfind("pow:", 0) == 0) {
        try {
            return utility::power_utility(std::stod(text.substr(4)));
        } catch (const error&) {
            throw;
        } catch (const std::exception&) {
            fail(errc::parse_error, "bad power exponent in '" + text + "'");
        }
    }
    fail(errc::parse_error, "unknown utility '" + text + "' (log | pow:<gamma> | linear)");
}

inline int worker_cap() {
    if (const char* env = std::getenv("LULTAX_THREADS")) {
        int v = std::atoi(env);
        if (v >= 1) return v;
    }
    return 1;
}

// Executes one invocation. Returns the process exit code: 0 success,
// 1 domain condition (arbitrage, infeasible), 2 input error.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"scenario-tree capital-gains engine with limited use of losses"};
    app.require_subcommand(1);
    bool lax = false;
    app.add_flag("--lax", lax, "accept unknown JSON fields");
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "chatty output");

    std::string tree_path, strategy_path, tau_path, out_path, report_path;
    double x = 1.0, alpha = 0.0;
    std::uint64_t cap = 1000000;
    std::string kind, utility_name = "log", beta_csv;
    std::int64_t node_id = 0;
    int iters = 5000, truncation = 6;
    std::uint64_t seed = 0;
    double rr = 0.1;

    auto* c_eval = app.add_subcommand("evaluate", "after-tax wealth of a strategy");
    c_eval->add_option("--tree", tree_path)->required();
    c_eval->add_option("--strategy", strategy_path)->required();
    c_eval->add_option("--x", x);
    c_eval->add_option("--alpha", alpha);
    c_eval->add_option("--report", report_path);

    auto* c_min = app.add_subcommand("min-rules", "minimum over linear tax rules");
    c_min->add_option("--tree", tree_path)->required();
    c_min->add_option("--strategy", strategy_path)->required();
    c_min->add_option("--x", x);
    c_min->add_option("--alpha", alpha);
    c_min->add_option("--cap", cap);
    c_min->add_option("--report", report_path);

    auto* c_tr = app.add_subcommand("transform", "wash | realize | stop strategy transforms");
    c_tr->add_option("--kind", kind)->required();
    c_tr->add_option("--tree", tree_path)->required();
    c_tr->add_option("--strategy", strategy_path)->required();
    c_tr->add_option("--tau", tau_path);
    c_tr->add_option("-o,--out", out_path)->required();

    auto* c_na = app.add_subcommand("check-na", "no-arbitrage verdict with certificate");
    c_na->add_option("--tree", tree_path)->required();

    auto* c_dec = app.add_subcommand("decompose", "reversible / purely nonreversible split");
    c_dec->add_option("--tree", tree_path)->required();
    c_dec->add_option("--node", node_id)->required();
    c_dec->add_option("--beta", beta_csv)->required();

    auto* c_dom = app.add_subcommand("dominate", "dominating strategy with inflated capital");
    c_dom->add_option("--tree", tree_path)->required();
    c_dom->add_option("--x", x);
    c_dom->add_option("-o,--out", out_path);

    auto* c_opt = app.add_subcommand("optimize", "maximize expected terminal utility");
    c_opt->add_option("--tree", tree_path)->required();
    c_opt->add_option("--x", x);
    c_opt->add_option("--alpha", alpha);
    c_opt->add_option("--utility", utility_name);
    c_opt->add_option("--iters", iters);
    c_opt->add_option("--seed", seed);
    c_opt->add_option("-o,--out", out_path);

    auto* c_repro = app.add_subcommand("repro", "rebuild the worked examples");
    c_repro->require_subcommand(1);
    double re_alpha = 0.05, re_r = 0.2;
    auto* c_nu = c_repro->add_subcommand("nonuniqueness", "two maximizers, equal value");
    c_nu->add_option("--alpha", re_alpha);
    c_nu->add_option("--r", re_r);
    c_nu->add_option("-o,--out", out_path);
    double nc_alpha = 0.25;
    auto* c_ncl = c_repro->add_subcommand("nonclosedness", "truncated tax-deferral family");
    c_ncl->add_option("--r", rr);
    c_ncl->add_option("--n", truncation);
    c_ncl->add_option("--alpha", nc_alpha);
    c_ncl->add_option("-o,--out", out_path);

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) { // --help
            out << app.help();
            return 0;
        }
        err << "error: " << e.what() << "\n";
        return 2;
    }
    (void)worker_cap();

    try {
        if (*c_eval) {
            scenario_tree tree = load_tree_file(tree_path, lax);
            if (verbose)
                for (int id : rate_predictability_lint(tree))
                    err << "lint: children of node " << tree.at(id).input_id
                        << " carry different rates\n";
            strategy s = validate_strategy(tree, load_strategy_file(strategy_path, tree, lax));
            tax_ledger led = evaluate(tree, s, x, alpha);
            for (int leaf : tree.leaves())
                out << "leaf " << tree.at(leaf).input_id << "  V^alpha = "
                    << fmt12(led.bank[static_cast<std::size_t>(leaf)]) << "\n";
            out << "E[V^alpha] = " << fmt12(led.expected_terminal(tree)) << "\n";
            if (!report_path.empty()) {
                nlohmann::json res;
                res["x"] = x;
                res["alpha"] = alpha;
                nlohmann::json per_node = nlohmann::json::array();
                for (const node& n : tree.nodes)
                    per_node.push_back({{"node", n.input_id},
                                        {"G", led.gains[static_cast<std::size_t>(n.id)]},
                                        {"Pi", led.taxes[static_cast<std::size_t>(n.id)]},
                                        {"eta", led.bank[static_cast<std::size_t>(n.id)]},
                                        {"V0", led.frictionless[static_cast<std::size_t>(n.id)]}});
                res["ledger"] = std::move(per_node);
                write_json(report_path, report_envelope({{"tree", tree_path},
                                                         {"strategy", strategy_path}},
                                                        std::move(res)));
            }
            return 0;
        }
        if (*c_min) {
            scenario_tree tree = load_tree_file(tree_path, lax);
            strategy s = validate_strategy(tree, load_strategy_file(strategy_path, tree, lax));
            min_rules_result mr = min_over_tax_rules(tree, s, x, alpha, cap);
            tax_ledger led = evaluate(tree, s, x, alpha);
            double worst = 0.0;
            const auto& leaves = tree.leaves();
            for (std::size_t i = 0; i < leaves.size(); ++i) {
                double engine = led.bank[static_cast<std::size_t>(leaves[i])];
                worst = std::max(worst, std::abs(engine - mr.leaf_min[i]));
                out << "leaf " << tree.at(leaves[i]).input_id << "  min over rules = "
                    << fmt12(mr.leaf_min[i]) << "\n";
            }
            out << "rules scanned = " << mr.rules_scanned << "\n";
            out << "max |min - V^alpha| = " << fmt12(worst) << "\n";
            if (!report_path.empty()) {
                nlohmann::json res;
                res["rules_scanned"] = mr.rules_scanned;
                res["max_abs_gap"] = worst;
                nlohmann::json lm = nlohmann::json::array();
                for (std::size_t i = 0; i < leaves.size(); ++i)
                    lm.push_back({{"leaf", tree.at(leaves[i]).input_id},
                                  {"min", mr.leaf_min[i]}});
                res["leaf_min"] = std::move(lm);
                write_json(report_path, report_envelope({{"tree", tree_path},
                                                         {"strategy", strategy_path}},
                                                        std::move(res)));
            }
            return 0;
        }
        if (*c_tr) {
            scenario_tree tree = load_tree_file(tree_path, lax);
            strategy s = validate_strategy(tree, load_strategy_file(strategy_path, tree, lax));
            strategy result;
            if (kind == "wash") {
                result = wash_sale_transform(tree, s);
            } else if (kind == "realize") {
                result = immediate_realization(tree, s);
            } else if (kind == "stop") {
                if (tau_path.empty())
                    fail(errc::parse_error, "--tau required for the stop transform");
                std::ifstream in(tau_path);
                if (!in) fail(errc::parse_error, "cannot open " + tau_path);
                nlohmann::json tj;
                try {
                    in >> tj;
                } catch (const std::exception& e) {
                    fail(errc::parse_error, std::string("invalid JSON: ") + e.what());
                }
                result = stop_strategy(tree, s, stopping_time_from_json(tj, tree));
            } else {
                fail(errc::parse_error, "unknown transform kind '" + kind + "'");
            }
            validate_strategy(tree, result);
            write_json(out_path, strategy_to_json(tree, result));
            std::size_t lots = 0;
            for (const auto& ls : result.lots) lots += ls.size();
            out << "transform " << kind << ": wrote " << out_path << " (" << lots << " lots)\n";
            return 0;
        }
        if (*c_na) {
            scenario_tree tree = load_tree_file(tree_path, lax);
            na_report rep = check_na(tree);
            if (rep.holds) {
                out << "NA holds\n";
                return 0;
            }
            const node& n = tree.at(rep.violation->node_id);
            out << "arbitrage at node " << n.input_id << " (time " << n.time << "), beta = [";
            for (std::size_t j = 0; j < rep.violation->certificate.size(); ++j)
                out << (j ? ", " : "") << fmt12(rep.violation->certificate[j]);
            out << "]\n";
            return 1;
        }
        if (*c_dec) {
            scenario_tree tree = load_tree_file(tree_path, lax);
            int nid = detail::resolve_input_id(tree, node_id);
            vec beta = parse_csv_doubles(beta_csv);
            decomposition dec = decompose(tree, nid, beta);
            out << "p = [";
            for (std::size_t j = 0; j < dec.reversible.size(); ++j)
                out << (j ? ", " : "") << fmt12(dec.reversible[j]);
            out << "]\nq = [";
            for (std::size_t j = 0; j < dec.nonreversible.size(); ++j)
                out << (j ? ", " : "") << fmt12(dec.nonreversible[j]);
            out << "]\npurely nonreversible: "
                << (is_purely_nonreversible(tree, nid, beta) ? "yes" : "no") << "\n";
            return 0;
        }
        if (*c_dom) {
            scenario_tree tree = load_tree_file(tree_path, lax);
            dominating_result dom = dominating_strategy(tree, x);
            out << "x_hat = " << fmt12(dom.x_hat) << "\n";
            for (const node& n : tree.nodes) {
                if (n.children.empty()) continue;
                out << "node " << n.input_id << "  beta_hat = [";
                const vec& b = dom.beta_hat[static_cast<std::size_t>(n.id)];
                for (std::size_t j = 0; j < b.size(); ++j) out << (j ? ", " : "") << fmt12(b[j]);
                out << "]\n";
            }
            if (!out_path.empty()) {
                nlohmann::json res;
                res["x_hat"] = dom.x_hat;
                res["strategy"] = strategy_to_json(tree, dom.s);
                nlohmann::json betas = nlohmann::json::array();
                for (const node& n : tree.nodes) {
                    if (n.children.empty()) continue;
                    betas.push_back({{"node", n.input_id},
                                     {"beta_hat", vec_json(dom.beta_hat[static_cast<std::size_t>(n.id)])},
                                     {"q_beta_hat",
                                      vec_json(dom.q_beta_hat[static_cast<std::size_t>(n.id)])}});
                }
                res["beta"] = std::move(betas);
                write_json(out_path, report_envelope({{"tree", tree_path}}, std::move(res)));
            }
            return 0;
        }
        if (*c_opt) {
            scenario_tree tree = load_tree_file(tree_path, lax);
            utility U = parse_utility(utility_name);
            optimize_config cfg;
            cfg.iters = iters;
            cfg.seed = seed;
            optimization_result res = maximize_utility(tree, x, alpha, U, cfg);
            out << "value = " << fmt12(res.value) << "\n";
            out << "feasibility margin = " << fmt12(res.feasibility_margin) << "\n";
            out << "iterations = " << res.iterations
                << ", final step = " << fmt12(res.final_step)
                << ", supergradient norm = " << fmt12(res.supergradient_norm) << "\n";
            if (!out_path.empty()) {
                nlohmann::json rj;
                rj["value"] = res.value;
                rj["alpha"] = alpha;
                rj["x"] = x;
                rj["utility"] = utility_name;
                rj["feasibility_margin"] = res.feasibility_margin;
                rj["iterations"] = res.iterations;
                rj["final_step"] = res.final_step;
                rj["supergradient_norm"] = res.supergradient_norm;
                rj["strategy"] = strategy_to_json(tree, res.best);
                nlohmann::json lw = nlohmann::json::array();
                const auto& leaves = tree.leaves();
                for (std::size_t i = 0; i < leaves.size(); ++i)
                    lw.push_back({{"leaf", tree.at(leaves[i]).input_id},
                                  {"V", res.leaf_wealth[i]}});
                rj["leaf_wealth"] = std::move(lw);
                write_json(out_path, report_envelope({{"tree", tree_path}}, std::move(rj)));
            }
            return 0;
        }
        if (*c_nu) {
            nonuniqueness_instance inst = build_nonuniqueness(re_alpha, re_r);
            nonuniqueness_report rep = verify_nonuniqueness(inst);
            out << "solved a = " << fmt12(inst.a) << ", b = " << fmt12(inst.b)
                << " (r_low = " << fmt12(inst.r_low) << ", slope residual = "
                << fmt12(inst.slope) << ")\n";
            out << "V^alpha(1, N^2) = (" << fmt12(rep.v1) << ", " << fmt12(rep.v2) << ")\n";
            out << "calibrated utility: " << rep.calibrated.name()
                << " (w = " << fmt12(rep.calibrated.blend_w) << "), first-order balance = "
                << fmt12(rep.balance) << "\n";
            out << "lambda* = " << fmt12(rep.lambda_star) << ", u* = " << fmt12(rep.u_star)
                << "\n";
            out << "value(N) = " << fmt12(rep.value_N) << ", value(tilde N) = "
                << fmt12(rep.value_tilde) << ", value(midpoint) = " << fmt12(rep.value_mid)
                << "\n";
            out << "optimizer value = " << fmt12(rep.optimizer_value) << ", distinct maximizers: "
                << (rep.distinct ? "yes" : "no") << "\n";
            if (!out_path.empty()) {
                nlohmann::json rj;
                rj["alpha"] = re_alpha;
                rj["r"] = re_r;
                rj["a"] = inst.a;
                rj["b"] = inst.b;
                rj["r_low"] = inst.r_low;
                rj["slope_residual"] = inst.slope;
                rj["v1"] = rep.v1;
                rj["v2"] = rep.v2;
                rj["y1"] = rep.y1;
                rj["y2"] = rep.y2;
                rj["blend_weight"] = rep.calibrated.blend_w;
                rj["first_order_balance"] = rep.balance;
                rj["lambda_star"] = rep.lambda_star;
                rj["u_star"] = rep.u_star;
                rj["value_N"] = rep.value_N;
                rj["value_tilde"] = rep.value_tilde;
                rj["value_midpoint"] = rep.value_mid;
                rj["optimizer_value"] = rep.optimizer_value;
                rj["distinct"] = rep.distinct;
                write_json(out_path, report_envelope({}, std::move(rj)));
            }
            return 0;
        }
        if (*c_ncl) {
            nonclosedness_instance inst = build_nonclosedness(rr, nc_alpha, truncation);
            nonclosedness_report rep = verify_nonclosedness(inst);
            for (int k = 3; k <= inst.truncation; ++k)
                out << "c_" << k << " = " << fmt12(inst.c[static_cast<std::size_t>(k - 3)])
                    << "\n";
            out << "max c_k identity residual = " << fmt12(rep.max_identity_error) << "\n";
            out << "max wealth relation residual = " << fmt12(rep.max_relation_error) << "\n";
            out << "E[ln(V^alpha - alpha)] = " << fmt12(rep.log_expectation) << "\n";
            if (!out_path.empty()) {
                nlohmann::json rj;
                rj["r"] = rr;
                rj["alpha"] = nc_alpha;
                rj["n"] = inst.truncation;
                rj["c"] = vec_json(inst.c);
                rj["max_identity_residual"] = rep.max_identity_error;
                rj["max_relation_residual"] = rep.max_relation_error;
                rj["log_expectation"] = rep.log_expectation;
                write_json(out_path, report_envelope({}, std::move(rj)));
            }
            return 0;
        }
    } catch (const error& e) {
        err << "error: " << e.what() << "\n";
        return e.is_input_error() ? 2 : 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    err << "error: no subcommand\n";
    return 2;
}

} // namespace lultax::cli
