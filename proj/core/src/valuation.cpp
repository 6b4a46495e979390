#include "abstrakt/valuation.hpp"

#include "abstrakt/abstraction.hpp"
#include "abstrakt/error.hpp"

#include <algorithm>
#include <functional>
#include <queue>
#include <set>

namespace abstrakt {

Rational DistributionTable::at(const Tuple& t) const {
    auto it = entries.find(t);
    return it == entries.end() ? Rational(0) : it->second;
}

Rational DistributionTable::total() const {
    Rational s = 0;
    for (auto& [k, p] : entries) s += p;
    return s;
}

int DistributionTable::index(const std::string& name) const {
    for (int i = 0; i < static_cast<int>(variables.size()); ++i)
        if (variables[i].name == name) return i;
    throw Error(ErrorKind::UnknownVariable, "table has no variable '" + name + "'");
}

Term point_term(const std::vector<std::pair<int, int>>& outcome, std::vector<HardAtom> hard) {
    Term t;
    for (auto& [v, x] : outcome) t.outcomes.push_back(OutcomeConstraint{{v}, {{x}}});
    t.hard = std::move(hard);
    return t;
}

namespace {

struct DrawKey {
    int family, label, cls;
    bool operator==(const DrawKey&) const = default;
};

struct Step {
    int family = -1;           // -1: single variable
    std::vector<int> vars;     // topological order
};

struct PreparedWorld {
    std::vector<int> hard;     // per variable, -1 when free
    std::vector<int> soft;     // per family, label or -1
};

class Engine {
public:
    using Visit = std::function<void(const std::vector<std::vector<int>>&, const Rational&)>;

    Engine(const DiscreteScm& scm, const std::vector<World>& worlds, const std::vector<SoftFamily>& fams)
        : scm_(scm), fams_(fams) {
        int n = scm.num_vars();
        member_of_.assign(n, -1);
        for (int f = 0; f < static_cast<int>(fams.size()); ++f) {
            auto& fam = fams[f];
            if (fam.members.empty()) throw Error(ErrorKind::InvalidQuery, "soft intervention with no targets");
            for (int v : fam.members) {
                if (v < 0 || v >= n) throw Error(ErrorKind::UnknownVariable, "soft intervention targets an unknown variable");
                if (member_of_[v] >= 0)
                    throw Error(ErrorKind::InvalidQuery, "soft interventions '" + fams[member_of_[v]].target + "' and '" +
                                                             fam.target + "' overlap");
                member_of_[v] = f;
            }
        }
        build_steps();
        for (auto& w : worlds) {
            PreparedWorld pw{std::vector<int>(n, -1), std::vector<int>(fams.size(), -1)};
            for (auto& h : w.hard) {
                if (h.var < 0 || h.var >= n) throw Error(ErrorKind::UnknownVariable, "intervention on an unknown variable");
                if (h.value < 0 || h.value >= scm.endogenous()[h.var].size())
                    throw Error(ErrorKind::DomainMismatch, "intervention value outside the domain of '" + scm.endogenous()[h.var].name + "'");
                if (pw.hard[h.var] >= 0 && pw.hard[h.var] != h.value)
                    throw Error(ErrorKind::InvalidQuery, "conflicting interventions on '" + scm.endogenous()[h.var].name + "'");
                pw.hard[h.var] = h.value;
            }
            for (auto& s : w.soft) {
                if (s.family < 0 || s.family >= static_cast<int>(fams.size()))
                    throw Error(ErrorKind::InvalidQuery, "soft atom refers to an unknown family");
                auto& fam = fams[s.family];
                if (s.label < 0 || s.label >= static_cast<int>(fam.labels.size()))
                    throw Error(ErrorKind::InvalidQuery, "soft atom label out of range for '" + fam.target + "'");
                if (pw.soft[s.family] >= 0 && pw.soft[s.family] != s.label)
                    throw Error(ErrorKind::InvalidQuery, "conflicting soft interventions on '" + fam.target + "'");
                for (int v : fam.members)
                    if (pw.hard[v] >= 0)
                        throw Error(ErrorKind::InvalidQuery, "'" + scm.endogenous()[v].name + "' is both hard- and soft-intervened");
                pw.soft[s.family] = s.label;
            }
            worlds_.push_back(std::move(pw));
        }
        for (auto& fam : fams) {
            bool needs_table = false;
            for (auto& f : fam.fibers)
                if (f.size() > 1) needs_table = true;
            if (needs_table && !fam.resolved)
                throw Error(ErrorKind::InvalidQuery, "soft intervention on '" + fam.target + "' has no distribution attached");
        }
    }

    std::uint64_t size_estimate() const {
        std::uint64_t n = scm_.exo_state_count();
        for (int f = 0; f < static_cast<int>(fams_.size()); ++f) {
            std::uint64_t widest = 1;
            for (auto& fib : fams_[f].fibers) widest = std::max<std::uint64_t>(widest, fib.size());
            bool used = fams_[f].resample_natural;
            for (auto& w : worlds_) used = used || w.soft[f] >= 0;
            if (!used) continue;
            for (std::size_t k = 0; k < worlds_.size(); ++k) n = sat_mul(n, widest);
        }
        return n;
    }

    void run(const Visit& visit) {
        vals_.assign(worlds_.size(), std::vector<int>(scm_.num_vars(), -1));
        for_each_unit(scm_, [&](const std::vector<int>& u, const Rational& w) {
            keys_.clear();
            picks_.clear();
            explore(u, w, visit);
        });
    }

private:
    void build_steps() {
        // Families must occupy a contiguous stretch of the evaluation order.
        int n = scm_.num_vars();
        std::vector<int> group(n);
        int ng = 0;
        std::vector<int> group_family;
        std::vector<int> fam_group(fams_.size(), -1);
        for (int v = 0; v < n; ++v) {
            int f = member_of_[v];
            if (f >= 0) {
                if (fam_group[f] < 0) {
                    fam_group[f] = ng++;
                    group_family.push_back(f);
                }
                group[v] = fam_group[f];
            } else {
                group[v] = ng++;
                group_family.push_back(-1);
            }
        }
        std::vector<std::set<int>> out(ng);
        std::vector<int> indeg(ng, 0);
        for (int v = 0; v < n; ++v)
            for (int p : scm_.mechanism(v).endo_parents)
                if (group[p] != group[v] && out[group[p]].insert(group[v]).second) ++indeg[group[v]];
        std::priority_queue<int, std::vector<int>, std::greater<int>> ready;
        for (int g = 0; g < ng; ++g)
            if (indeg[g] == 0) ready.push(g);
        std::vector<int> pos(n);
        for (int i = 0; i < n; ++i) pos[scm_.topo_order()[i]] = i;
        while (!ready.empty()) {
            int g = ready.top();
            ready.pop();
            Step s;
            s.family = group_family[g];
            for (int v = 0; v < n; ++v)
                if (group[v] == g) s.vars.push_back(v);
            std::sort(s.vars.begin(), s.vars.end(), [&](int a, int b) { return pos[a] < pos[b]; });
            steps_.push_back(std::move(s));
            for (int h : out[g])
                if (--indeg[h] == 0) ready.push(h);
        }
        if (static_cast<int>(steps_.size()) != ng)
            throw Error(ErrorKind::InvalidQuery, "a soft intervention target is not a contiguous block of the causal order");
    }

    int context_class(const SoftFamily& fam, const std::vector<int>& vals, const std::vector<int>& u) const {
        if (fam.context_class.empty()) return 0;
        Tuple raw;
        for (int v : fam.context_vars) {
            if (vals[v] < 0)
                throw Error(ErrorKind::InvalidQuery, "context of '" + fam.target + "' is evaluated after it");
            raw.push_back(vals[v]);
        }
        for (int s : fam.context_exo) raw.push_back(u[s]);
        auto it = fam.context_class.find(raw);
        if (it == fam.context_class.end())
            throw Error(ErrorKind::InvalidQuery, "context of '" + fam.target + "' is not covered by its table");
        return it->second;
    }

    // Returns the fiber index, or -1 after recording the missing draw in need_.
    int draw(int f, int label, int cls) {
        if (fams_[f].fibers[label].size() == 1) return 0;
        DrawKey k{f, label, cls};
        for (std::size_t i = 0; i < keys_.size(); ++i)
            if (keys_[i] == k) return picks_[i];
        need_ = k;
        return -1;
    }

    bool eval_world(const PreparedWorld& w, const std::vector<int>& u, std::vector<int>& vals) {
        std::fill(vals.begin(), vals.end(), -1);
        const int* exo = u.data();
        for (auto& step : steps_) {
            if (step.family < 0) {
                int v = step.vars[0];
                vals[v] = w.hard[v] >= 0 ? w.hard[v] : scm_.evaluate(v, vals.data(), exo);
                continue;
            }
            auto& fam = fams_[step.family];
            bool any_hard = false;
            for (int v : step.vars) any_hard = any_hard || w.hard[v] >= 0;
            int label = w.soft[step.family];
            if (any_hard || label < 0) {
                for (int v : step.vars) vals[v] = w.hard[v] >= 0 ? w.hard[v] : scm_.evaluate(v, vals.data(), exo);
                if (any_hard || !fam.resample_natural) continue;
                Tuple natural;
                for (int v : fam.members) natural.push_back(vals[v]);
                label = fam.label_of.at(natural);
            }
            int idx = draw(step.family, label, context_class(fam, vals, u));
            if (idx < 0) return false;
            auto& t = fam.fibers[label][idx];
            for (std::size_t k = 0; k < fam.members.size(); ++k) vals[fam.members[k]] = t[k];
        }
        return true;
    }

    void explore(const std::vector<int>& u, const Rational& weight, const Visit& visit) {
        for (std::size_t i = 0; i < worlds_.size(); ++i) {
            if (eval_world(worlds_[i], u, vals_[i])) continue;
            auto k = need_;
            auto& fam = fams_[k.family];
            auto it = fam.table.find({k.label, k.cls});
            if (it == fam.table.end())
                throw Error(ErrorKind::ImpossibleContext, "no disambiguation distribution for '" + fam.target + "=" +
                                                              fam.labels[k.label] + "' in a reachable context");
            auto& dist = it->second;
            for (std::size_t j = 0; j < dist.size(); ++j) {
                if (dist[j] == 0) continue;
                keys_.push_back(k);
                picks_.push_back(static_cast<int>(j));
                explore(u, weight * dist[j], visit);
                keys_.pop_back();
                picks_.pop_back();
            }
            return;
        }
        visit(vals_, weight);
    }

    const DiscreteScm& scm_;
    const std::vector<SoftFamily>& fams_;
    std::vector<int> member_of_;
    std::vector<Step> steps_;
    std::vector<PreparedWorld> worlds_;
    std::vector<std::vector<int>> vals_;
    std::vector<DrawKey> keys_;
    std::vector<int> picks_;
    DrawKey need_{0, 0, 0};
};

void check_families(const DiscreteScm& scm, const std::vector<SoftFamily>& fams) {
    for (auto& fam : fams) {
        if (fam.labels.size() != fam.fibers.size())
            throw Error(ErrorKind::InvalidQuery, "soft intervention on '" + fam.target + "' is malformed");
        for (auto& fib : fam.fibers) {
            if (fib.empty()) throw Error(ErrorKind::InvalidQuery, "soft intervention on '" + fam.target + "' has an empty support");
            for (auto& t : fib) {
                if (t.size() != fam.members.size())
                    throw Error(ErrorKind::InvalidQuery, "soft intervention support tuple has the wrong arity");
                for (std::size_t k = 0; k < t.size(); ++k)
                    if (t[k] < 0 || t[k] >= scm.endogenous()[fam.members[k]].size())
                        throw Error(ErrorKind::DomainMismatch, "soft intervention support outside the target domain");
            }
        }
        for (auto& [key, dist] : fam.table) {
            if (key.first < 0 || key.first >= static_cast<int>(fam.fibers.size()) ||
                dist.size() != fam.fibers[key.first].size())
                throw Error(ErrorKind::InvalidQuery, "soft intervention table of '" + fam.target + "' is malformed");
            Rational s = 0;
            for (auto& p : dist) {
                if (p < 0) throw Error(ErrorKind::InvalidQuery, "negative soft intervention probability");
                s += p;
            }
            if (s != 1) throw Error(ErrorKind::InvalidQuery, "soft intervention distribution of '" + fam.target + "' does not sum to 1");
        }
    }
}

void check_term(const DiscreteScm& scm, const Term& t, const std::vector<SoftFamily>& fams) {
    std::set<int> intervened;
    for (auto& h : t.hard) intervened.insert(h.var);
    for (auto& s : t.soft)
        if (s.family >= 0 && s.family < static_cast<int>(fams.size()))
            for (int v : fams[s.family].members) intervened.insert(v);
    for (auto& oc : t.outcomes) {
        if (oc.vars.empty()) throw Error(ErrorKind::InvalidQuery, "empty outcome");
        for (int v : oc.vars) {
            if (v < 0 || v >= scm.num_vars()) throw Error(ErrorKind::UnknownVariable, "outcome on an unknown variable");
            if (intervened.count(v))
                throw Error(ErrorKind::InvalidQuery, "'" + scm.endogenous()[v].name + "' is both intervened and an outcome in one term");
        }
        for (auto& a : oc.allowed) {
            if (a.size() != oc.vars.size()) throw Error(ErrorKind::InvalidQuery, "outcome tuple has the wrong arity");
            for (std::size_t k = 0; k < a.size(); ++k)
                if (a[k] < 0 || a[k] >= scm.endogenous()[oc.vars[k]].size())
                    throw Error(ErrorKind::DomainMismatch, "outcome value outside the domain of '" + scm.endogenous()[oc.vars[k]].name + "'");
        }
    }
}

World world_of(const Term& t) {
    World w{t.hard, t.soft};
    std::sort(w.hard.begin(), w.hard.end());
    w.hard.erase(std::unique(w.hard.begin(), w.hard.end()), w.hard.end());
    std::sort(w.soft.begin(), w.soft.end());
    w.soft.erase(std::unique(w.soft.begin(), w.soft.end()), w.soft.end());
    return w;
}

bool satisfied(const Term& t, const std::vector<int>& vals) {
    Tuple key;
    for (auto& oc : t.outcomes) {
        key.clear();
        for (int v : oc.vars) key.push_back(vals[v]);
        if (!std::binary_search(oc.allowed.begin(), oc.allowed.end(), key)) return false;
    }
    return true;
}

}  // namespace

std::vector<int> evaluate_unit(const DiscreteScm& scm, const std::vector<int>& u, const std::vector<HardAtom>& hard) {
    if (static_cast<int>(u.size()) != scm.exo_count())
        throw Error(ErrorKind::IncompleteAssignment, "exogenous assignment has " + std::to_string(u.size()) +
                                                         " entries, expected " + std::to_string(scm.exo_count()));
    for (int s = 0; s < scm.exo_count(); ++s)
        if (u[s] < 0 || u[s] >= scm.exo_decl(s).size())
            throw Error(ErrorKind::IncompleteAssignment, "exogenous member '" + scm.exo_name(s) + "' is unassigned or out of range");
    std::vector<int> fixed(scm.num_vars(), -1);
    for (auto& h : hard) {
        if (h.var < 0 || h.var >= scm.num_vars()) throw Error(ErrorKind::UnknownVariable, "intervention on an unknown variable");
        if (h.value < 0 || h.value >= scm.endogenous()[h.var].size())
            throw Error(ErrorKind::DomainMismatch, "intervention value outside the domain of '" + scm.endogenous()[h.var].name + "'");
        fixed[h.var] = h.value;
    }
    std::vector<int> vals(scm.num_vars(), -1);
    for (int v : scm.topo_order()) vals[v] = fixed[v] >= 0 ? fixed[v] : scm.evaluate(v, vals.data(), u.data());
    return vals;
}

Rational prob_query(const DiscreteScm& scm, const CounterfactualQuery& q) {
    if (q.terms.empty()) throw Error(ErrorKind::InvalidQuery, "query has no terms");
    check_families(scm, q.families);
    for (auto& t : q.terms) check_term(scm, t, q.families);
    for (auto& t : q.conditioning) {
        if (t.outcomes.empty()) throw Error(ErrorKind::InvalidQuery, "empty conditioning term");
        check_term(scm, t, q.families);
    }

    std::vector<World> worlds;
    auto world_index = [&](const Term& t) {
        auto w = world_of(t);
        for (std::size_t i = 0; i < worlds.size(); ++i)
            if (worlds[i] == w) return static_cast<int>(i);
        worlds.push_back(w);
        return static_cast<int>(worlds.size() - 1);
    };
    std::vector<int> term_world, cond_world;
    for (auto& t : q.terms) term_world.push_back(world_index(t));
    for (auto& t : q.conditioning) cond_world.push_back(world_index(t));
    std::vector<Term> terms = q.terms, conds = q.conditioning;
    for (auto* ts : {&terms, &conds})
        for (auto& t : *ts)
            for (auto& oc : t.outcomes) std::sort(oc.allowed.begin(), oc.allowed.end());

    Engine engine(scm, worlds, q.families);
    check_budget(engine.size_estimate(), "query evaluation");
    Rational num = 0, den = 0;
    engine.run([&](const std::vector<std::vector<int>>& vals, const Rational& w) {
        for (std::size_t i = 0; i < conds.size(); ++i)
            if (!satisfied(conds[i], vals[cond_world[i]])) return;
        den += w;
        for (std::size_t i = 0; i < terms.size(); ++i)
            if (!satisfied(terms[i], vals[term_world[i]])) return;
        num += w;
    });
    if (q.conditioning.empty()) return num;
    if (den == 0) throw Error(ErrorKind::ZeroConditioning, "conditioning event has probability 0");
    return num / den;
}

std::map<std::vector<Tuple>, Rational> world_joint(const DiscreteScm& scm, const std::vector<World>& worlds,
                                                   const std::vector<SoftFamily>& families) {
    check_families(scm, families);
    Engine engine(scm, worlds, families);
    check_budget(engine.size_estimate(), "counterfactual joint");
    std::map<std::vector<Tuple>, Rational> out;
    engine.run([&](const std::vector<std::vector<int>>& vals, const Rational& w) { out[vals] += w; });
    return out;
}

DistributionTable joint_distribution(const DiscreteScm& scm, const std::vector<int>& vars, const std::vector<HardAtom>& hard) {
    DistributionTable table;
    for (int v : vars) {
        if (v < 0 || v >= scm.num_vars()) throw Error(ErrorKind::UnknownVariable, "joint over an unknown variable");
        table.variables.push_back(scm.endogenous()[v]);
    }
    std::vector<World> worlds{World{hard, {}}};
    Engine engine(scm, worlds, {});
    check_budget(engine.size_estimate(), "joint distribution");
    Tuple key(vars.size());
    engine.run([&](const std::vector<std::vector<int>>& vals, const Rational& w) {
        for (std::size_t k = 0; k < vars.size(); ++k) key[k] = vals[0][vars[k]];
        table.entries[key] += w;
    });
    return table;
}

DistributionTable marginal_pushforward(const DistributionTable& table, const ClusterMap& cm) {
    // Positions of each covered cluster's members inside the table.
    std::vector<int> covered;
    std::vector<std::vector<int>> positions;
    std::vector<bool> used(table.variables.size(), false);
    for (int c = 0; c < cm.size(); ++c) {
        std::vector<int> pos;
        for (int m : cm.clusters[c].members) {
            int found = -1;
            for (std::size_t i = 0; i < table.variables.size(); ++i)
                if (table.variables[i].name == cm.low[m].name) found = static_cast<int>(i);
            pos.push_back(found);
        }
        int hits = static_cast<int>(std::count_if(pos.begin(), pos.end(), [](int p) { return p >= 0; }));
        if (hits == 0) continue;
        if (hits != static_cast<int>(pos.size()))
            throw Error(ErrorKind::NotClusterUnion, "table covers cluster '" + cm.clusters[c].name + "' only partially");
        for (int p : pos) used[p] = true;
        covered.push_back(c);
        positions.push_back(pos);
    }
    for (std::size_t i = 0; i < used.size(); ++i)
        if (!used[i]) throw Error(ErrorKind::NotClusterUnion, "'" + table.variables[i].name + "' belongs to no cluster");

    DistributionTable out;
    for (int c : covered) out.variables.push_back(cm.clusters[c].high_decl());
    for (auto& [key, p] : table.entries) {
        Tuple hk;
        for (std::size_t k = 0; k < covered.size(); ++k) {
            Tuple part;
            for (int pos : positions[k]) part.push_back(key[pos]);
            hk.push_back(cm.clusters[covered[k]].label_of.at(part));
        }
        out.entries[hk] += p;
    }
    return out;
}

}  // namespace abstrakt
