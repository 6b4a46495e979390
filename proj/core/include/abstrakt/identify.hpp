#pragma once

#include "abstrakt/abstraction.hpp"
#include "abstrakt/graphs.hpp"
#include "abstrakt/valuation.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace abstrakt {

// A lookup argument: a fixed value, or (when empty) the value currently bound to the
// variable by an enclosing sum or by the query.
struct Slot {
    std::string var;
    std::optional<std::string> value;
    bool operator==(const Slot&) const = default;
};

struct Estimand {
    enum class Kind { Prob, Sum, Product, Ratio };
    Kind kind = Kind::Prob;
    std::vector<Slot> vars, given;  // Prob
    std::string bound;               // Sum
    std::vector<Estimand> children;  // Sum: 1, Product: n, Ratio: 2

    static Estimand prob(std::vector<Slot> vars, std::vector<Slot> given = {});
    static Estimand sum(std::string var, Estimand body);
    static Estimand product(std::vector<Estimand> factors);
    static Estimand ratio(Estimand num, Estimand den);

    bool references(const std::string& var) const;  // free occurrence
    bool operator==(const Estimand&) const = default;
};

std::string estimand_text(const Estimand& e);
std::string estimand_json(const Estimand& e);  // JSON tree
Estimand estimand_from_json(const std::string& text);

// Replaces free occurrences by fixed values.
Estimand substitute(const Estimand& e, const std::map<std::string, std::string>& values);
Estimand simplify(const Estimand& e);

// Exact value over an observational joint. Unbound variables raise UnboundVariable.
Rational evaluate_estimand(const Estimand& e, const DistributionTable& obs);

struct EffectQuery {
    std::vector<std::pair<std::string, std::string>> outcome;
    std::vector<std::pair<std::string, std::string>> intervention;
    std::vector<std::pair<std::string, std::string>> conditioning;
    // Conditioning read in the unintervened world; only allowed for unaffected variables.
    bool conditioning_natural = false;
};

// Single-term interventional query with point outcomes. Anything else is UnsupportedQuery.
EffectQuery effect_query(const CounterfactualQuery& q, const std::vector<VariableDecl>& decls);
std::string effect_query_text(const EffectQuery& q);

// Available data: one entry per dataset, listing the intervened variables. Only the
// observational dataset (a single empty entry) is supported.
using DataCollection = std::vector<std::vector<std::string>>;

struct IdDecision {
    bool identifiable = false;
    Estimand estimand;                 // meaningful when identifiable
    std::string witness;               // when not
    std::vector<std::string> hedge_f;  // node sets of the failing hedge
    std::vector<std::string> hedge_f_prime;
};

IdDecision identify_effect(const Diagram& g, const EffectQuery& q, const DataCollection& data = {{}});

// τ-ID: a low query is translated first; a high query (is_high) is used as is.
IdDecision abstract_identify(const ClusterMap& cm, const ClusterDiagram& g_proj, const CounterfactualQuery& q,
                             bool is_high, const DataCollection& data = {{}});

}  // namespace abstrakt
