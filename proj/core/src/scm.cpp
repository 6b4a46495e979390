#include "abstrakt/scm.hpp"

#include "abstrakt/error.hpp"

#include <algorithm>
#include <map>
#include <queue>

namespace abstrakt {

int VariableDecl::value_index(const std::string& value) const {
    for (int i = 0; i < size(); ++i)
        if (domain[i] == value) return i;
    return -1;
}

std::uint64_t ExogenousBlock::member_states() const {
    std::uint64_t n = 1;
    for (auto& m : members) n = sat_mul(n, static_cast<std::uint64_t>(m.size()));
    return n;
}

std::size_t tuple_index(const Tuple& t, const std::vector<int>& radix) {
    std::size_t idx = 0;
    for (std::size_t i = 0; i < radix.size(); ++i) idx = idx * radix[i] + t[i];
    return idx;
}

Tuple index_tuple(std::size_t index, const std::vector<int>& radix) {
    Tuple t(radix.size());
    for (std::size_t i = radix.size(); i-- > 0;) {
        t[i] = static_cast<int>(index % radix[i]);
        index /= radix[i];
    }
    return t;
}

std::uint64_t radix_product(const std::vector<int>& radix) {
    std::uint64_t n = 1;
    for (int r : radix) n = sat_mul(n, static_cast<std::uint64_t>(r));
    return n;
}

namespace {

void check_decl(const VariableDecl& d, const std::string& what) {
    if (d.name.empty()) throw Error(ErrorKind::DomainMismatch, what + " has an empty name");
    if (d.domain.empty()) throw Error(ErrorKind::DomainMismatch, what + " '" + d.name + "' has an empty domain");
    std::set<std::string> seen(d.domain.begin(), d.domain.end());
    if (seen.size() != d.domain.size())
        throw Error(ErrorKind::DomainMismatch, what + " '" + d.name + "' has repeated domain values");
}

std::vector<int> block_radix(const ExogenousBlock& b) {
    std::vector<int> r;
    for (auto& m : b.members) r.push_back(m.size());
    return r;
}

}  // namespace

DiscreteScm::DiscreteScm(std::vector<VariableDecl> endogenous, std::vector<ExogenousBlock> blocks,
                         std::vector<Mechanism> mechanisms)
    : endo_(std::move(endogenous)), blocks_(std::move(blocks)) {
    std::set<std::string> names;
    for (auto& v : endo_) {
        check_decl(v, "endogenous variable");
        if (!names.insert(v.name).second)
            throw Error(ErrorKind::DomainMismatch, "duplicate endogenous variable '" + v.name + "'");
    }

    std::set<std::string> block_names;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        auto& blk = blocks_[b];
        if (!block_names.insert(blk.name).second)
            throw Error(ErrorKind::DomainMismatch, "duplicate exogenous block '" + blk.name + "'");
        if (blk.members.empty())
            throw Error(ErrorKind::DomainMismatch, "block '" + blk.name + "' has no members");
        std::set<std::string> mnames;
        for (auto& m : blk.members) {
            check_decl(m, "exogenous member");
            if (!mnames.insert(m.name).second)
                throw Error(ErrorKind::DomainMismatch, "duplicate member '" + m.name + "' in block '" + blk.name + "'");
        }
        std::uint64_t given_states = 1;
        for (int g : blk.given) {
            if (g < 0 || g >= static_cast<int>(b))
                throw Error(ErrorKind::UnknownVariable, "block '" + blk.name + "' is conditional on an undeclared or later block");
            given_states = sat_mul(given_states, blocks_[g].member_states());
        }
        auto states = blk.member_states();
        if (blk.table.size() != sat_mul(given_states, states))
            throw Error(ErrorKind::DomainMismatch, "block '" + blk.name + "' table does not cover its member product");
        for (std::uint64_t gc = 0; gc < given_states; ++gc) {
            Rational total = 0;
            for (std::uint64_t i = 0; i < states; ++i) {
                auto& p = blk.table[gc * states + i];
                if (p < 0) throw Error(ErrorKind::NonNormalizedBlock, "block '" + blk.name + "' has a negative probability");
                total += p;
            }
            if (total != 1)
                throw Error(ErrorKind::NonNormalizedBlock,
                            "block '" + blk.name + "' sums to " + to_string(total) + " instead of 1");
        }
        block_offset_.push_back(static_cast<int>(slot_ref_.size()));
        for (std::size_t m = 0; m < blk.members.size(); ++m)
            slot_ref_.push_back(ExoRef{static_cast<int>(b), static_cast<int>(m)});
    }

    mechs_.assign(endo_.size(), Mechanism{});
    std::vector<bool> have(endo_.size(), false);
    for (auto& m : mechanisms) {
        if (m.variable < 0 || m.variable >= num_vars())
            throw Error(ErrorKind::UnknownVariable, "mechanism for an undeclared variable");
        if (have[m.variable])
            throw Error(ErrorKind::PartialMechanism, "two mechanisms for '" + endo_[m.variable].name + "'");
        have[m.variable] = true;
        mechs_[m.variable] = std::move(m);
    }
    for (int v = 0; v < num_vars(); ++v)
        if (!have[v]) throw Error(ErrorKind::PartialMechanism, "no mechanism for '" + endo_[v].name + "'");

    strides_.resize(endo_.size());
    for (int v = 0; v < num_vars(); ++v) {
        auto& m = mechs_[v];
        std::vector<int> radix;
        for (int p : m.endo_parents) {
            if (p < 0 || p >= num_vars())
                throw Error(ErrorKind::UnknownVariable, "mechanism of '" + endo_[v].name + "' reads an undeclared parent");
            radix.push_back(endo_[p].size());
        }
        for (auto& r : m.exo_parents) {
            if (r.block < 0 || r.block >= static_cast<int>(blocks_.size()) || r.member < 0 ||
                r.member >= static_cast<int>(blocks_[r.block].members.size()))
                throw Error(ErrorKind::UnknownVariable, "mechanism of '" + endo_[v].name + "' reads an undeclared exogenous member");
            radix.push_back(blocks_[r.block].members[r.member].size());
        }
        std::set<int> ep(m.endo_parents.begin(), m.endo_parents.end());
        std::set<ExoRef> xp(m.exo_parents.begin(), m.exo_parents.end());
        if (ep.size() != m.endo_parents.size() || xp.size() != m.exo_parents.size() || ep.count(v))
            throw Error(ErrorKind::DomainMismatch, "mechanism of '" + endo_[v].name + "' lists a parent twice or itself");
        auto rows = radix_product(radix);
        if (m.table.size() != rows)
            throw Error(ErrorKind::PartialMechanism, "mechanism of '" + endo_[v].name + "' has " +
                                                         std::to_string(m.table.size()) + " rows, expected " + std::to_string(rows));
        for (int out : m.table)
            if (out < 0 || out >= endo_[v].size())
                throw Error(ErrorKind::DomainMismatch, "mechanism of '" + endo_[v].name + "' outputs a value outside its domain");
        auto& st = strides_[v];
        st.assign(radix.size(), 1);
        for (std::size_t i = radix.size(); i-- > 1;) st[i - 1] = st[i] * radix[i];
    }

    topo_ = topological_order(induce_diagram(*this));
}

std::optional<int> DiscreteScm::find_variable(const std::string& name) const {
    for (int i = 0; i < num_vars(); ++i)
        if (endo_[i].name == name) return i;
    return std::nullopt;
}

int DiscreteScm::variable(const std::string& name) const {
    if (auto v = find_variable(name)) return *v;
    throw Error(ErrorKind::UnknownVariable, "unknown endogenous variable '" + name + "'");
}

std::optional<int> DiscreteScm::find_block(const std::string& name) const {
    for (int i = 0; i < static_cast<int>(blocks_.size()); ++i)
        if (blocks_[i].name == name) return i;
    return std::nullopt;
}

int DiscreteScm::block(const std::string& name) const {
    if (auto b = find_block(name)) return *b;
    throw Error(ErrorKind::UnknownVariable, "unknown exogenous block '" + name + "'");
}

const VariableDecl& DiscreteScm::exo_decl(int slot) const {
    auto r = slot_ref_[slot];
    return blocks_[r.block].members[r.member];
}

std::string DiscreteScm::exo_name(int slot) const {
    auto r = slot_ref_[slot];
    return blocks_[r.block].name + "." + blocks_[r.block].members[r.member].name;
}

std::uint64_t DiscreteScm::exo_state_count() const {
    std::uint64_t n = 1;
    for (auto& b : blocks_) n = sat_mul(n, b.member_states());
    return n;
}

std::size_t DiscreteScm::mechanism_row(int var, const int* endo, const int* exo) const {
    auto& m = mechs_[var];
    auto& st = strides_[var];
    std::size_t row = 0, k = 0;
    for (int p : m.endo_parents) row += st[k++] * endo[p];
    for (auto& r : m.exo_parents) row += st[k++] * exo[block_offset_[r.block] + r.member];
    return row;
}

int DiscreteScm::evaluate(int var, const int* endo, const int* exo) const {
    return mechs_[var].table[mechanism_row(var, endo, exo)];
}

Rational block_row_prob(const DiscreteScm& scm, int b, const std::vector<int>& u) {
    auto& blk = scm.blocks()[b];
    std::size_t gc = 0;
    for (int g : blk.given) {
        auto& gb = scm.blocks()[g];
        Tuple t(gb.members.size());
        for (std::size_t m = 0; m < t.size(); ++m) t[m] = u[scm.block_offset(g) + m];
        gc = gc * gb.member_states() + tuple_index(t, block_radix(gb));
    }
    Tuple own(blk.members.size());
    for (std::size_t m = 0; m < own.size(); ++m) own[m] = u[scm.block_offset(b) + m];
    return blk.table[gc * blk.member_states() + tuple_index(own, block_radix(blk))];
}

void for_each_unit(const DiscreteScm& scm, const UnitVisitor& visit) {
    std::vector<int> all;
    for (int b = 0; b < static_cast<int>(scm.blocks().size()); ++b) all.push_back(b);
    for_each_unit_over(scm, all, visit);
}

void for_each_unit_over(const DiscreteScm& scm, const std::vector<int>& blocks_in, const UnitVisitor& visit) {
    std::vector<int> blocks = blocks_in;
    std::sort(blocks.begin(), blocks.end());
    blocks.erase(std::unique(blocks.begin(), blocks.end()), blocks.end());
    for (int b : blocks)
        for (int g : scm.blocks()[b].given)
            if (!std::binary_search(blocks.begin(), blocks.end(), g))
                throw Error(ErrorKind::UnsupportedModel, "block subset is not closed under conditioning");

    std::vector<int> u(scm.exo_count(), -1);
    std::vector<Rational> weight(blocks.size() + 1);
    weight[0] = 1;
    // Rows per block are walked in canonical order; zero-probability rows are skipped.
    std::function<void(std::size_t)> rec = [&](std::size_t k) {
        if (k == blocks.size()) {
            visit(u, weight[k]);
            return;
        }
        int b = blocks[k];
        auto& blk = scm.blocks()[b];
        auto radix = block_radix(blk);
        std::size_t gc = 0;
        for (int g : blk.given) {
            auto& gb = scm.blocks()[g];
            Tuple t(gb.members.size());
            for (std::size_t m = 0; m < t.size(); ++m) t[m] = u[scm.block_offset(g) + m];
            gc = gc * gb.member_states() + tuple_index(t, block_radix(gb));
        }
        auto states = blk.member_states();
        for (std::uint64_t i = 0; i < states; ++i) {
            auto& p = blk.table[gc * states + i];
            if (p == 0) continue;
            auto t = index_tuple(i, radix);
            for (std::size_t m = 0; m < t.size(); ++m) u[scm.block_offset(b) + m] = t[m];
            weight[k + 1] = weight[k] * p;
            rec(k + 1);
        }
        for (std::size_t m = 0; m < blk.members.size(); ++m) u[scm.block_offset(b) + m] = -1;
    };
    rec(0);
}

std::optional<int> Diagram::find(const std::string& name) const {
    for (int i = 0; i < size(); ++i)
        if (nodes[i] == name) return i;
    return std::nullopt;
}

int Diagram::node(const std::string& name) const {
    if (auto v = find(name)) return *v;
    throw Error(ErrorKind::UnknownVariable, "unknown node '" + name + "'");
}

void Diagram::add_bidirected(int a, int b) {
    if (a == b) return;
    bidirected.emplace(std::min(a, b), std::max(a, b));
}

bool Diagram::has_bidirected(int a, int b) const {
    return bidirected.count({std::min(a, b), std::max(a, b)}) > 0;
}

std::vector<int> Diagram::parents(int v) const {
    std::vector<int> out;
    for (auto& [a, b] : directed)
        if (b == v) out.push_back(a);
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<int> Diagram::children(int v) const {
    std::vector<int> out;
    for (auto& [a, b] : directed)
        if (a == v) out.push_back(b);
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<int> Diagram::neighbors(int v) const {
    std::vector<int> out;
    for (auto& [a, b] : bidirected) {
        if (a == v) out.push_back(b);
        if (b == v) out.push_back(a);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::set<int> exogenous_closure(const DiscreteScm& scm, int var) {
    std::set<int> out;
    std::vector<int> stack;
    for (auto& r : scm.mechanism(var).exo_parents) stack.push_back(r.block);
    while (!stack.empty()) {
        int b = stack.back();
        stack.pop_back();
        if (!out.insert(b).second) continue;
        for (int g : scm.blocks()[b].given) stack.push_back(g);
    }
    return out;
}

Diagram induce_diagram(const DiscreteScm& scm) {
    Diagram g;
    for (auto& v : scm.endogenous()) g.nodes.push_back(v.name);
    std::vector<std::set<int>> closure;
    for (int v = 0; v < scm.num_vars(); ++v) {
        for (int p : scm.mechanism(v).endo_parents) g.add_directed(p, v);
        closure.push_back(exogenous_closure(scm, v));
    }
    for (int a = 0; a < scm.num_vars(); ++a)
        for (int b = a + 1; b < scm.num_vars(); ++b)
            for (int blk : closure[a])
                if (closure[b].count(blk)) {
                    g.add_bidirected(a, b);
                    break;
                }
    return g;
}

std::vector<int> topological_order(const Diagram& g) {
    int n = g.size();
    std::vector<int> indeg(n, 0);
    std::vector<std::vector<int>> out(n);
    for (auto& [a, b] : g.directed) {
        if (a == b) throw Error(ErrorKind::CyclicDependencies, "self-loop on '" + g.nodes[a] + "'");
        out[a].push_back(b);
        ++indeg[b];
    }
    std::priority_queue<int, std::vector<int>, std::greater<int>> ready;
    for (int v = 0; v < n; ++v)
        if (indeg[v] == 0) ready.push(v);
    std::vector<int> order;
    while (!ready.empty()) {
        int v = ready.top();
        ready.pop();
        order.push_back(v);
        for (int w : out[v])
            if (--indeg[w] == 0) ready.push(w);
    }
    if (static_cast<int>(order.size()) != n) {
        std::string names;
        for (int v = 0; v < n; ++v)
            if (indeg[v] > 0) names += (names.empty() ? "" : ", ") + g.nodes[v];
        throw Error(ErrorKind::CyclicDependencies, "cycle among: " + names);
    }
    return order;
}

}  // namespace abstrakt
