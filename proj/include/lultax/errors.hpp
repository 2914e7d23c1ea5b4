#pragma once

#include <stdexcept>
#include <string>

namespace lultax {

// Error kinds mirror the failure modes of the library operations. Domain
// errors (arbitrage, infeasibility) are distinguished from input errors so
// the CLI can map them to different exit codes.
enum class errc {
    // tree validation / lookup
    cycle_detected,
    probability_not_normalized,
    negative_rate,
    time_gap,
    unknown_node,
    parse_error,
    // strategy validation
    negative_lot,
    sell_down_violated,
    not_liquidated_at_t,
    tree_mismatch,
    dimension_mismatch,
    // tax engine
    engine_inconsistency,
    invalid_tax_rule,
    enumeration_cap_exceeded,
    // transforms
    invalid_stopping_time,
    rate_bound_violated,
    negative_price_forbidden,
    negative_wealth_encountered,
    // cone analysis
    dimension_cap_exceeded,
    qp_infeasible,
    unbounded_admissible_set,
    // optimizer
    arbitrage_detected,
    diverged,
    too_many_variables,
    infeasible,
    // repro
    no_root_in_bracket,
    invalid_truncation,
};

inline const char* errc_name(errc c) {
    switch (c) {
        case errc::cycle_detected: return "CycleDetected";
        case errc::probability_not_normalized: return "ProbabilityNotNormalized";
        case errc::negative_rate: return "NegativeRate";
        case errc::time_gap: return "TimeGap";
        case errc::unknown_node: return "UnknownNode";
        case errc::parse_error: return "ParseError";
        case errc::negative_lot: return "NegativeLot";
        case errc::sell_down_violated: return "SellDownViolated";
        case errc::not_liquidated_at_t: return "NotLiquidatedAtT";
        case errc::tree_mismatch: return "TreeMismatch";
        case errc::dimension_mismatch: return "DimensionMismatch";
        case errc::engine_inconsistency: return "EngineInconsistency";
        case errc::invalid_tax_rule: return "InvalidTaxRule";
        case errc::enumeration_cap_exceeded: return "EnumerationCapExceeded";
        case errc::invalid_stopping_time: return "InvalidStoppingTime";
        case errc::rate_bound_violated: return "RateBoundViolated";
        case errc::negative_price_forbidden: return "NegativePriceForbidden";
        case errc::negative_wealth_encountered: return "NegativeWealthEncountered";
        case errc::dimension_cap_exceeded: return "DimensionCapExceeded";
        case errc::qp_infeasible: return "QPInfeasible";
        case errc::unbounded_admissible_set: return "UnboundedAdmissibleSet";
        case errc::arbitrage_detected: return "ArbitrageDetected";
        case errc::diverged: return "Diverged";
        case errc::too_many_variables: return "TooManyVariables";
        case errc::infeasible: return "Infeasible";
        case errc::no_root_in_bracket: return "NoRootInBracket";
        case errc::invalid_truncation: return "InvalidTruncation";
    }
    return "UnknownError";
}

class error : public std::runtime_error {
public:
    error(errc kind, const std::string& what)
        : std::runtime_error(std::string(errc_name(kind)) + ": " + what), kind_(kind) {}

    errc kind() const noexcept { return kind_; }

    // Input errors are problems with user-supplied data; everything else is a
    // domain condition detected on structurally valid inputs.
    bool is_input_error() const noexcept {
        switch (kind_) {
            case errc::cycle_detected:
            case errc::probability_not_normalized:
            case errc::negative_rate:
            case errc::time_gap:
            case errc::unknown_node:
            case errc::parse_error:
            case errc::negative_lot:
            case errc::sell_down_violated:
            case errc::not_liquidated_at_t:
            case errc::tree_mismatch:
            case errc::dimension_mismatch:
            case errc::invalid_tax_rule:
            case errc::invalid_stopping_time:
            case errc::invalid_truncation:
                return true;
            default:
                return false;
        }
    }

private:
    errc kind_;
};

[[noreturn]] inline void fail(errc kind, const std::string& what) {
    throw error(kind, what);
}

} // namespace lultax
