#pragma once

#include "abstrakt/rational.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace abstrakt {

// Value tuples are stored as domain indices.
using Tuple = std::vector<int>;

struct VariableDecl {
    std::string name;
    std::vector<std::string> domain;

    int size() const { return static_cast<int>(domain.size()); }
    int value_index(const std::string& value) const;  // -1 when absent
};

struct ExogenousBlock {
    std::string name;
    std::vector<VariableDecl> members;
    // Blocks produced by abstraction may be conditional on earlier blocks.
    std::vector<int> given;
    // Row-major: given-block combination first, then the member tuple.
    std::vector<Rational> table;

    std::uint64_t member_states() const;
};

struct ExoRef {
    int block = 0;
    int member = 0;
    auto operator<=>(const ExoRef&) const = default;
};

struct Mechanism {
    int variable = 0;
    std::vector<int> endo_parents;
    std::vector<ExoRef> exo_parents;
    // Mixed radix over endo parent domains then exo parent domains, first parent most significant.
    std::vector<int> table;
};

class DiscreteScm {
public:
    DiscreteScm() = default;
    DiscreteScm(std::vector<VariableDecl> endogenous, std::vector<ExogenousBlock> blocks,
                std::vector<Mechanism> mechanisms);

    const std::vector<VariableDecl>& endogenous() const { return endo_; }
    const std::vector<ExogenousBlock>& blocks() const { return blocks_; }
    const std::vector<Mechanism>& mechanisms() const { return mechs_; }
    const Mechanism& mechanism(int var) const { return mechs_[var]; }

    int num_vars() const { return static_cast<int>(endo_.size()); }
    std::optional<int> find_variable(const std::string& name) const;
    int variable(const std::string& name) const;  // throws UnknownVariable
    std::optional<int> find_block(const std::string& name) const;
    int block(const std::string& name) const;

    // Flattened exogenous assignment: one slot per member, blocks in declaration order.
    int exo_count() const { return static_cast<int>(slot_ref_.size()); }
    int exo_slot(ExoRef r) const { return block_offset_[r.block] + r.member; }
    ExoRef exo_ref(int slot) const { return slot_ref_[slot]; }
    const VariableDecl& exo_decl(int slot) const;
    std::string exo_name(int slot) const;  // "block.member"
    int block_offset(int b) const { return block_offset_[b]; }

    const std::vector<int>& topo_order() const { return topo_; }
    std::uint64_t exo_state_count() const;

    int evaluate(int var, const int* endo, const int* exo) const;
    std::size_t mechanism_row(int var, const int* endo, const int* exo) const;

private:
    std::vector<VariableDecl> endo_;
    std::vector<ExogenousBlock> blocks_;
    std::vector<Mechanism> mechs_;
    std::vector<int> block_offset_;
    std::vector<ExoRef> slot_ref_;
    std::vector<int> topo_;
    std::vector<std::vector<std::size_t>> strides_;
};

// Row index of a tuple under mixed radix (first position most significant).
std::size_t tuple_index(const Tuple& t, const std::vector<int>& radix);
Tuple index_tuple(std::size_t index, const std::vector<int>& radix);
std::uint64_t radix_product(const std::vector<int>& radix);

// Visits every exogenous state with positive probability. The `_over` form
// restricts the enumeration to some blocks (closed under `given`); other slots stay -1.
using UnitVisitor = std::function<void(const std::vector<int>& u, const Rational& weight)>;
void for_each_unit(const DiscreteScm& scm, const UnitVisitor& visit);
void for_each_unit_over(const DiscreteScm& scm, const std::vector<int>& blocks, const UnitVisitor& visit);

// Probability of a block row given the current assignment of its given blocks.
Rational block_row_prob(const DiscreteScm& scm, int block, const std::vector<int>& u);

struct Diagram {
    std::vector<std::string> nodes;
    std::set<std::pair<int, int>> directed;
    std::set<std::pair<int, int>> bidirected;  // first < second

    int size() const { return static_cast<int>(nodes.size()); }
    std::optional<int> find(const std::string& name) const;
    int node(const std::string& name) const;  // throws UnknownVariable
    void add_directed(int from, int to) { directed.emplace(from, to); }
    void add_bidirected(int a, int b);
    bool has_bidirected(int a, int b) const;
    std::vector<int> parents(int v) const;
    std::vector<int> children(int v) const;
    std::vector<int> neighbors(int v) const;  // bidirected
    bool operator==(const Diagram& other) const = default;
};

Diagram induce_diagram(const DiscreteScm& scm);
std::vector<int> topological_order(const Diagram& g);

// Exogenous blocks a variable depends on: read blocks plus everything they are conditional on.
std::set<int> exogenous_closure(const DiscreteScm& scm, int var);

}  // namespace abstrakt
