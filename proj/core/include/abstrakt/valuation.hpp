#pragma once

#include "abstrakt/scm.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace abstrakt {

struct ClusterMap;

struct HardAtom {
    int var = 0;
    int value = 0;
    auto operator<=>(const HardAtom&) const = default;
};

struct SoftAtom {
    int family = 0;
    int label = 0;
    auto operator<=>(const SoftAtom&) const = default;
};

// Outcome event on a set of variables; `allowed` is kept sorted.
struct OutcomeConstraint {
    std::vector<int> vars;
    std::vector<Tuple> allowed;
};

struct Term {
    std::vector<OutcomeConstraint> outcomes;
    std::vector<HardAtom> hard;
    std::vector<SoftAtom> soft;
};

// Stochastic intervention on a group of variables. Each label names a support (fiber);
// the distribution over the fiber may depend on a context made of endogenous values in
// the same world and exogenous values of the unit. One draw is made per
// (family, label, context class) and unit, and shared by every world that needs it.
struct SoftFamily {
    std::string target;
    std::vector<int> members;
    std::vector<std::string> labels;
    std::vector<std::vector<Tuple>> fibers;
    std::map<Tuple, int> label_of;
    // When set, worlds that leave the members alone replace their natural value by a
    // draw at the natural value's label.
    bool resample_natural = false;
    std::vector<int> context_vars;
    std::vector<int> context_exo;          // exogenous slots
    std::map<Tuple, int> context_class;    // raw context -> class; empty means one class (0)
    std::map<std::pair<int, int>, std::vector<Rational>> table;  // (label, class) -> fiber distribution
    bool resolved = false;
};

struct CounterfactualQuery {
    std::vector<Term> terms;
    std::vector<Term> conditioning;
    std::vector<SoftFamily> families;
    // Set by lower_query: lossy clusters are read through their disambiguation draw.
    bool projected = false;
};

struct DistributionTable {
    std::vector<VariableDecl> variables;
    std::map<Tuple, Rational> entries;

    Rational at(const Tuple& t) const;
    Rational total() const;
    int index(const std::string& name) const;  // throws UnknownVariable
};

struct World {
    std::vector<HardAtom> hard;
    std::vector<SoftAtom> soft;
    auto operator<=>(const World&) const = default;
};

std::vector<int> evaluate_unit(const DiscreteScm& scm, const std::vector<int>& u, const std::vector<HardAtom>& hard);

Rational prob_query(const DiscreteScm& scm, const CounterfactualQuery& q);

DistributionTable joint_distribution(const DiscreteScm& scm, const std::vector<int>& vars,
                                     const std::vector<HardAtom>& hard = {});

DistributionTable marginal_pushforward(const DistributionTable& table, const ClusterMap& cm);

// Joint law of the full endogenous assignments of several worlds sharing each unit.
std::map<std::vector<Tuple>, Rational> world_joint(const DiscreteScm& scm, const std::vector<World>& worlds,
                                                   const std::vector<SoftFamily>& families = {});

Term point_term(const std::vector<std::pair<int, int>>& outcome, std::vector<HardAtom> hard = {});

}  // namespace abstrakt
