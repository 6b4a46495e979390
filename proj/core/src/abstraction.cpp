#include "abstrakt/abstraction.hpp"

#include "abstrakt/error.hpp"
#include "abstrakt/projection.hpp"
#include "json_util.hpp"

#include <algorithm>
#include <functional>
#include <set>

namespace abstrakt {

using detail::json;

bool Cluster::lossy() const {
    for (auto& f : fibers)
        if (f.size() > 1) return true;
    return false;
}

std::vector<VariableDecl> ClusterMap::high_decls() const {
    std::vector<VariableDecl> out;
    for (auto& c : clusters) out.push_back(c.high_decl());
    return out;
}

std::optional<int> ClusterMap::find_cluster(const std::string& name) const {
    for (int i = 0; i < size(); ++i)
        if (clusters[i].name == name) return i;
    return std::nullopt;
}

int ClusterMap::cluster(const std::string& name) const {
    auto c = find_cluster(name);
    if (!c) throw Error(ErrorKind::UnknownVariable, "unknown cluster '" + name + "'");
    return *c;
}

bool ClusterMap::covers_all() const {
    return std::all_of(cluster_of.begin(), cluster_of.end(), [](int c) { return c >= 0; });
}

std::vector<int> ClusterMap::clustered_vars() const {
    std::vector<int> out;
    for (int v = 0; v < static_cast<int>(cluster_of.size()); ++v)
        if (cluster_of[v] >= 0) out.push_back(v);
    return out;
}

namespace {

std::vector<int> member_radix(const std::vector<VariableDecl>& low, const std::vector<int>& members) {
    std::vector<int> r;
    for (int m : members) r.push_back(low[m].size());
    return r;
}

std::string tuple_text(const std::vector<VariableDecl>& low, const std::vector<int>& members, const Tuple& t) {
    std::string s = "(";
    for (std::size_t k = 0; k < t.size(); ++k) s += (k ? "," : "") + low[members[k]].domain[t[k]];
    return s + ")";
}

// Variables reachable from `from` by directed edges.
std::vector<bool> descendants(const Diagram& g, const std::vector<int>& from) {
    std::vector<std::vector<int>> out(g.size());
    for (auto& [a, b] : g.directed) out[a].push_back(b);
    std::vector<bool> seen(g.size(), false);
    std::vector<int> stack = from;
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        for (int w : out[v])
            if (!seen[w]) {
                seen[w] = true;
                stack.push_back(w);
            }
    }
    return seen;
}

// Cluster-level edges, following paths through unclustered variables.
std::set<std::pair<int, int>> lifted_edges(const Diagram& g, const ClusterMap& cm) {
    std::vector<std::vector<int>> out(g.size());
    for (auto& [a, b] : g.directed) out[a].push_back(b);
    std::set<std::pair<int, int>> edges;
    for (int v = 0; v < g.size(); ++v) {
        int cv = cm.cluster_of[v];
        if (cv < 0) continue;
        std::vector<bool> seen(g.size(), false);
        std::vector<int> stack{v};
        while (!stack.empty()) {
            int x = stack.back();
            stack.pop_back();
            for (int w : out[x]) {
                if (seen[w]) continue;
                seen[w] = true;
                if (cm.cluster_of[w] < 0)
                    stack.push_back(w);
                else if (cm.cluster_of[w] != cv)
                    edges.emplace(cv, cm.cluster_of[w]);
            }
        }
    }
    return edges;
}

std::vector<int> cluster_topo(int n, const std::set<std::pair<int, int>>& edges) {
    Diagram g;
    for (int i = 0; i < n; ++i) g.nodes.push_back(std::to_string(i));
    g.directed = edges;
    return topological_order(g);
}

}  // namespace

std::vector<ClusterSpec> parse_cluster_doc(const std::string& text) {
    auto doc = detail::parse_json(text);
    std::vector<ClusterSpec> out;
    for (auto& jc : detail::need(doc, "clusters", "cluster document")) {
        ClusterSpec c;
        c.name = detail::value_text(detail::need(jc, "name", "cluster"));
        std::string where = "cluster '" + c.name + "'";
        c.members = detail::value_list(detail::need(jc, "members", where));
        if (jc.contains("values")) {
            for (auto& part : jc.at("values")) {
                auto label = detail::value_text(detail::need(part, "label", where + " part"));
                std::vector<std::vector<std::string>> tuples;
                for (auto& t : detail::need(part, "tuples", where + " part '" + label + "'")) {
                    if (t.is_array())
                        tuples.push_back(detail::value_list(t));
                    else
                        tuples.push_back({detail::value_text(t)});
                }
                c.values.emplace_back(label, std::move(tuples));
            }
        }
        out.push_back(std::move(c));
    }
    return out;
}

ClusterMap validate_clusters(const DiscreteScm& scm, const std::string& text) {
    return validate_clusters(scm, parse_cluster_doc(text));
}

ClusterMap validate_clusters(const DiscreteScm& scm, const std::vector<ClusterSpec>& raw) {
    auto cm = cluster_map_over(scm.endogenous(), raw);
    check_admissible(induce_diagram(scm), cm);
    return cm;
}

ClusterMap cluster_map_over(const std::vector<VariableDecl>& low, const std::vector<ClusterSpec>& raw) {
    ClusterMap cm;
    cm.low = low;
    cm.cluster_of.assign(low.size(), -1);
    std::set<std::string> names;
    for (auto& spec : raw) {
        std::string where = "cluster '" + spec.name + "'";
        if (spec.name.empty()) throw Error(ErrorKind::NotPartition, "cluster with an empty name");
        if (!names.insert(spec.name).second) throw Error(ErrorKind::NotPartition, "duplicate cluster name '" + spec.name + "'");
        if (spec.members.empty()) throw Error(ErrorKind::NotPartition, where + " has no members");
        Cluster c;
        c.name = spec.name;
        int ci = cm.size();
        for (auto& m : spec.members) {
            int v = -1;
            for (int k = 0; k < static_cast<int>(low.size()); ++k)
                if (low[k].name == m) v = k;
            if (v < 0) throw Error(ErrorKind::UnknownVariable, where + " lists unknown variable '" + m + "'");
            if (cm.cluster_of[v] >= 0)
                throw Error(ErrorKind::NotPartition, "'" + m + "' appears in more than one cluster");
            cm.cluster_of[v] = ci;
            c.members.push_back(v);
        }
        auto radix = member_radix(cm.low, c.members);
        auto states = radix_product(radix);
        check_budget(states, where + " value product");
        std::vector<int> owner(states, -1);
        if (spec.values.empty()) {
            // One label per tuple.
            for (std::size_t i = 0; i < states; ++i) {
                auto t = index_tuple(i, radix);
                std::string label;
                for (std::size_t k = 0; k < t.size(); ++k) label += (k ? "," : "") + cm.low[c.members[k]].domain[t[k]];
                owner[i] = static_cast<int>(c.labels.size());
                c.labels.push_back(label);
                c.fibers.push_back({t});
            }
        } else {
            std::set<std::string> labels;
            for (auto& [label, tuples] : spec.values) {
                if (!labels.insert(label).second)
                    throw Error(ErrorKind::IncompleteValuePartition, where + " repeats label '" + label + "'");
                if (tuples.empty())
                    throw Error(ErrorKind::IncompleteValuePartition, where + " label '" + label + "' has no tuples");
                int li = static_cast<int>(c.labels.size());
                c.labels.push_back(label);
                std::vector<Tuple> fiber;
                for (auto& tv : tuples) {
                    if (tv.size() != c.members.size())
                        throw Error(ErrorKind::DomainMismatch, where + " label '" + label + "' has a tuple of the wrong arity");
                    Tuple t;
                    for (std::size_t k = 0; k < tv.size(); ++k) {
                        int x = cm.low[c.members[k]].value_index(tv[k]);
                        if (x < 0)
                            throw Error(ErrorKind::DomainMismatch, where + ": '" + tv[k] + "' is not a value of '" +
                                                                       cm.low[c.members[k]].name + "'");
                        t.push_back(x);
                    }
                    auto idx = tuple_index(t, radix);
                    if (owner[idx] >= 0)
                        throw Error(ErrorKind::IncompleteValuePartition,
                                    where + ": tuple " + tuple_text(cm.low, c.members, t) + " is listed twice");
                    owner[idx] = li;
                    fiber.push_back(t);
                }
                std::sort(fiber.begin(), fiber.end());
                c.fibers.push_back(std::move(fiber));
            }
            for (std::size_t i = 0; i < states; ++i)
                if (owner[i] < 0)
                    throw Error(ErrorKind::IncompleteValuePartition, where + ": tuple " +
                                                                         tuple_text(cm.low, c.members, index_tuple(i, radix)) +
                                                                         " has no label");
        }
        for (int l = 0; l < static_cast<int>(c.fibers.size()); ++l)
            for (auto& t : c.fibers[l]) c.label_of[t] = l;
        cm.clusters.push_back(std::move(c));
    }
    if (cm.clusters.empty()) throw Error(ErrorKind::NotPartition, "no clusters given");
    return cm;
}

void check_admissible(const Diagram& g, const ClusterMap& cm) {
    for (auto& c : cm.clusters) {
        std::set<int> members(c.members.begin(), c.members.end());
        std::vector<int> outside;
        for (auto& [a, b] : g.directed)
            if (members.count(a) && !members.count(b)) outside.push_back(b);
        auto reach = descendants(g, outside);
        for (int v : outside) reach[v] = true;
        for (int m : c.members)
            if (reach[m])
                throw Error(ErrorKind::InadmissibleClustering, "cluster '" + c.name + "': '" + g.nodes[m] +
                                                                   "' is reachable through a variable outside the cluster");
    }
    try {
        cluster_topo(cm.size(), lifted_edges(g, cm));
    } catch (const Error&) {
        throw Error(ErrorKind::InadmissibleClustering, "clusters admit no topological order");
    }
}

std::string cluster_doc_json(const ClusterMap& cm) {
    json doc;
    doc["clusters"] = json::array();
    for (auto& c : cm.clusters) {
        json jc;
        jc["name"] = c.name;
        jc["members"] = json::array();
        for (int m : c.members) jc["members"].push_back(cm.low[m].name);
        jc["values"] = json::array();
        for (std::size_t l = 0; l < c.labels.size(); ++l) {
            json part;
            part["label"] = c.labels[l];
            part["tuples"] = json::array();
            for (auto& t : c.fibers[l]) {
                json jt = json::array();
                for (std::size_t k = 0; k < t.size(); ++k) jt.push_back(cm.low[c.members[k]].domain[t[k]]);
                part["tuples"].push_back(jt);
            }
            jc["values"].push_back(part);
        }
        doc["clusters"].push_back(jc);
    }
    return doc.dump(2) + "\n";
}

ClusterMap identity_clusters(const DiscreteScm& scm) {
    std::vector<ClusterSpec> specs;
    for (auto& v : scm.endogenous()) {
        ClusterSpec s;
        s.name = v.name;
        s.members = {v.name};
        for (auto& x : v.domain) s.values.push_back({x, {{x}}});
        specs.push_back(std::move(s));
    }
    return validate_clusters(scm, specs);
}

ClusterMap rebase(const ClusterMap& cm, const DiscreteScm& target) {
    ClusterMap out;
    out.low = target.endogenous();
    out.cluster_of.assign(target.num_vars(), -1);
    for (int ci = 0; ci < cm.size(); ++ci) {
        Cluster c = cm.clusters[ci];
        for (auto& m : c.members) {
            int v = target.variable(cm.low[m].name);
            if (target.endogenous()[v].domain != cm.low[m].domain)
                throw Error(ErrorKind::DomainMismatch, "'" + cm.low[m].name + "' has a different domain in the target model");
            out.cluster_of[v] = ci;
            m = v;
        }
        out.clusters.push_back(std::move(c));
    }
    return out;
}

ClusteredModel clustered_model(const DiscreteScm& scm, const ClusterMap& cm) {
    if (cm.covers_all()) return ClusteredModel{scm, cm};
    auto projected = project_full(scm, cm.clustered_vars());
    return ClusteredModel{projected, rebase(cm, projected)};
}

Assignment apply_tau(const ClusterMap& cm, const Assignment& low) {
    Assignment high;
    for (auto& [v, x] : low) {
        if (v < 0 || v >= static_cast<int>(cm.cluster_of.size()))
            throw Error(ErrorKind::UnknownVariable, "assignment to an unknown variable");
        if (cm.cluster_of[v] < 0)
            throw Error(ErrorKind::NotClusterUnion, "'" + cm.low[v].name + "' belongs to no cluster");
    }
    std::set<int> touched;
    for (auto& [v, x] : low) touched.insert(cm.cluster_of[v]);
    for (int ci : touched) {
        auto& c = cm.clusters[ci];
        Tuple t;
        for (int m : c.members) {
            auto it = low.find(m);
            if (it == low.end())
                throw Error(ErrorKind::NotClusterUnion, "assignment covers cluster '" + c.name + "' only partially");
            t.push_back(it->second);
        }
        auto lt = c.label_of.find(t);
        if (lt == c.label_of.end()) throw Error(ErrorKind::DomainMismatch, "value outside the domain of cluster '" + c.name + "'");
        high[ci] = lt->second;
    }
    return high;
}

std::vector<Assignment> preimage(const ClusterMap& cm, const Assignment& high) {
    std::vector<Assignment> out{Assignment{}};
    for (auto& [ci, label] : high) {
        if (ci < 0 || ci >= cm.size()) throw Error(ErrorKind::UnknownVariable, "unknown cluster index");
        auto& c = cm.clusters[ci];
        if (label < 0 || label >= static_cast<int>(c.labels.size()))
            throw Error(ErrorKind::UnknownHighValue, "cluster '" + c.name + "' has no value with index " + std::to_string(label));
        std::vector<Assignment> next;
        check_budget(sat_mul(out.size(), c.fibers[label].size()), "preimage");
        for (auto& a : out)
            for (auto& t : c.fibers[label]) {
                auto b = a;
                for (std::size_t k = 0; k < t.size(); ++k) b[c.members[k]] = t[k];
                next.push_back(std::move(b));
            }
        out = std::move(next);
    }
    return out;
}

namespace {

// First positive-probability row of each block, in block order, keeping slots already set.
void fill_default_unit(const DiscreteScm& scm, std::vector<int>& u) {
    for (int b = 0; b < static_cast<int>(scm.blocks().size()); ++b) {
        auto& blk = scm.blocks()[b];
        int off = scm.block_offset(b);
        if (u[off] >= 0) continue;
        std::vector<int> radix;
        for (auto& m : blk.members) radix.push_back(m.size());
        auto n = radix_product(radix);
        for (std::size_t i = 0; i < n; ++i) {
            auto t = index_tuple(i, radix);
            for (std::size_t k = 0; k < t.size(); ++k) u[off + k] = t[k];
            if (block_row_prob(scm, b, u) > 0) break;
        }
    }
}

struct AicSearch {
    const DiscreteScm& scm;  // clustered model
    const ClusterMap& cm;
    std::vector<std::vector<int>> cluster_order;  // members of each cluster in evaluation order

    AicSearch(const DiscreteScm& s, const ClusterMap& c) : scm(s), cm(c) {
        cluster_order.resize(cm.size());
        for (int v : scm.topo_order())
            if (cm.cluster_of[v] >= 0) cluster_order[cm.cluster_of[v]].push_back(v);
    }

    // Evaluates cluster j's members from external parent values and u; returns its label.
    int child_label(int j, const std::vector<int>& u, std::vector<int>& vals) const {
        for (int v : cluster_order[j]) vals[v] = scm.evaluate(v, vals.data(), u.data());
        Tuple t;
        for (int m : cm.clusters[j].members) t.push_back(vals[m]);
        return cm.clusters[j].label_of.at(t);
    }

    std::optional<AicWitness> search(int i, int j) const {
        auto& ci = cm.clusters[i];
        std::set<int> ext_set;
        for (int v : cm.clusters[j].members)
            for (int p : scm.mechanism(v).endo_parents)
                if (cm.cluster_of[p] != j) ext_set.insert(p);
        std::vector<int> from_i, others;
        for (int p : ext_set) (cm.cluster_of[p] == i ? from_i : others).push_back(p);
        if (from_i.empty()) return std::nullopt;

        // Distinct projections of each fiber onto the parents read by the child.
        std::vector<int> pos;
        for (int p : from_i)
            pos.push_back(static_cast<int>(std::find(ci.members.begin(), ci.members.end(), p) - ci.members.begin()));
        std::vector<std::pair<Tuple, Tuple>> pairs;
        for (auto& fiber : ci.fibers) {
            std::set<Tuple> proj;
            for (auto& t : fiber) {
                Tuple p;
                for (int k : pos) p.push_back(t[k]);
                proj.insert(p);
            }
            std::vector<Tuple> ps(proj.begin(), proj.end());
            for (std::size_t a = 0; a < ps.size(); ++a)
                for (std::size_t b = a + 1; b < ps.size(); ++b) pairs.emplace_back(ps[a], ps[b]);
        }
        if (pairs.empty()) return std::nullopt;

        std::set<int> blocks_set;
        for (int v : cm.clusters[j].members)
            for (auto& r : scm.mechanism(v).exo_parents) blocks_set.insert(r.block);
        // Close under conditional blocks.
        std::vector<int> stack(blocks_set.begin(), blocks_set.end());
        while (!stack.empty()) {
            int b = stack.back();
            stack.pop_back();
            for (int g : scm.blocks()[b].given)
                if (blocks_set.insert(g).second) stack.push_back(g);
        }
        std::vector<int> blocks(blocks_set.begin(), blocks_set.end());
        std::uint64_t exo_states = 1;
        for (int b : blocks) exo_states = sat_mul(exo_states, scm.blocks()[b].member_states());
        std::vector<int> other_radix;
        for (int p : others) other_radix.push_back(scm.endogenous()[p].size());
        auto ctx_states = radix_product(other_radix);
        check_budget(sat_mul(sat_mul(exo_states, ctx_states), pairs.size()), "AIC search for '" + ci.name + "'");

        std::optional<AicWitness> found;
        std::vector<int> va(scm.num_vars(), -1), vb(scm.num_vars(), -1);
        for_each_unit_over(scm, blocks, [&](const std::vector<int>& u, const Rational&) {
            if (found) return;
            for (std::size_t c = 0; c < ctx_states && !found; ++c) {
                auto ctx = index_tuple(c, other_radix);
                for (auto& [a, b] : pairs) {
                    std::fill(va.begin(), va.end(), -1);
                    std::fill(vb.begin(), vb.end(), -1);
                    for (std::size_t k = 0; k < others.size(); ++k) va[others[k]] = vb[others[k]] = ctx[k];
                    for (std::size_t k = 0; k < from_i.size(); ++k) {
                        va[from_i[k]] = a[k];
                        vb[from_i[k]] = b[k];
                    }
                    int ha = child_label(j, u, va), hb = child_label(j, u, vb);
                    if (ha == hb) continue;
                    AicWitness w;
                    w.violator = i;
                    w.child = j;
                    w.u = u;
                    fill_default_unit(scm, w.u);
                    for (int p : ext_set) {
                        w.context_a[p] = va[p];
                        w.context_b[p] = vb[p];
                    }
                    w.high_a = ha;
                    w.high_b = hb;
                    found = w;
                    return;
                }
            }
        });
        return found;
    }
};

std::vector<int> index_map(const ClusterMap& from, const ClusterMap& to) {
    // Clustered-model index -> original index.
    std::vector<int> out(from.low.size(), -1);
    for (int v = 0; v < static_cast<int>(from.low.size()); ++v)
        for (int w = 0; w < static_cast<int>(to.low.size()); ++w)
            if (to.low[w].name == from.low[v].name) out[v] = w;
    return out;
}

}  // namespace

AicReport check_aic(const DiscreteScm& scm, const ClusterMap& cm) {
    auto model = clustered_model(scm, cm);
    auto back = index_map(model.cm, cm);
    std::set<std::pair<int, int>> edges;
    for (int v = 0; v < model.scm.num_vars(); ++v)
        for (int p : model.scm.mechanism(v).endo_parents) {
            int a = model.cm.cluster_of[p], b = model.cm.cluster_of[v];
            if (a != b) edges.emplace(a, b);
        }
    auto order = cluster_topo(cm.size(), edges);
    AicSearch search(model.scm, model.cm);
    AicReport report;
    for (int i : order) {
        if (!cm.clusters[i].lossy()) continue;
        for (int j : order) {
            if (!edges.count({i, j})) continue;
            auto w = search.search(i, j);
            if (!w) continue;
            Assignment a, b;
            for (auto& [v, x] : w->context_a) a[back[v]] = x;
            for (auto& [v, x] : w->context_b) b[back[v]] = x;
            w->context_a = a;
            w->context_b = b;
            report.violators.push_back(i);
            report.witnesses.push_back(*w);
            break;
        }
    }
    std::vector<std::size_t> idx(report.violators.size());
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
    std::sort(idx.begin(), idx.end(), [&](auto x, auto y) { return report.violators[x] < report.violators[y]; });
    AicReport sorted;
    for (auto k : idx) {
        sorted.violators.push_back(report.violators[k]);
        sorted.witnesses.push_back(report.witnesses[k]);
    }
    return sorted;
}

bool replay_witness(const DiscreteScm& scm, const ClusterMap& cm, const AicWitness& w) {
    auto model = clustered_model(scm, cm);
    auto to_model = index_map(cm, model.cm);
    auto run = [&](const Assignment& ctx) {
        std::vector<HardAtom> hard;
        for (auto& [v, x] : ctx) hard.push_back(HardAtom{to_model[v], x});
        auto vals = evaluate_unit(model.scm, w.u, hard);
        Tuple t;
        for (int m : model.cm.clusters[w.child].members) t.push_back(vals[m]);
        return model.cm.clusters[w.child].label_of.at(t);
    };
    int a = run(w.context_a), b = run(w.context_b);
    return a == w.high_a && b == w.high_b && a != b;
}

namespace {

OutcomeConstraint translate_outcome(const ClusterMap& cm, const OutcomeConstraint& oc) {
    std::vector<int> clusters;
    for (int v : oc.vars) {
        if (v < 0 || v >= static_cast<int>(cm.cluster_of.size())) throw Error(ErrorKind::UnknownVariable, "outcome on an unknown variable");
        int c = cm.cluster_of[v];
        if (c < 0) throw Error(ErrorKind::NotClusterUnion, "'" + cm.low[v].name + "' belongs to no cluster");
        if (std::find(clusters.begin(), clusters.end(), c) == clusters.end()) clusters.push_back(c);
    }
    std::sort(clusters.begin(), clusters.end());
    std::size_t covered = 0;
    for (int c : clusters) covered += cm.clusters[c].members.size();
    if (covered != std::set<int>(oc.vars.begin(), oc.vars.end()).size())
        throw Error(ErrorKind::NotClusterUnion, "outcome covers cluster '" + cm.clusters[clusters.back()].name + "' only partially");
    OutcomeConstraint out;
    out.vars = clusters;
    std::set<Tuple> allowed;
    for (auto& t : oc.allowed) {
        Assignment a;
        for (std::size_t k = 0; k < t.size(); ++k) a[oc.vars[k]] = t[k];
        auto h = apply_tau(cm, a);
        Tuple ht;
        for (int c : clusters) ht.push_back(h.at(c));
        allowed.insert(ht);
    }
    out.allowed.assign(allowed.begin(), allowed.end());
    return out;
}

Term translate_term(const ClusterMap& cm, const Term& t, const std::vector<SoftFamily>& fams) {
    Term out;
    for (auto& oc : t.outcomes) out.outcomes.push_back(translate_outcome(cm, oc));
    Assignment hard;
    for (auto& h : t.hard) hard[h.var] = h.value;
    for (auto& [c, label] : apply_tau(cm, hard)) out.hard.push_back(HardAtom{c, label});
    for (auto& s : t.soft) {
        auto& fam = fams.at(s.family);
        std::optional<int> match;
        for (int c = 0; c < cm.size(); ++c)
            if (cm.clusters[c].members == fam.members && cm.clusters[c].labels == fam.labels) match = c;
        if (!match) throw Error(ErrorKind::NotClusterUnion, "soft intervention on '" + fam.target + "' is not a cluster intervention");
        out.hard.push_back(HardAtom{*match, s.label});
    }
    std::sort(out.hard.begin(), out.hard.end());
    return out;
}

}  // namespace

CounterfactualQuery translate_query(const ClusterMap& cm, const CounterfactualQuery& low) {
    CounterfactualQuery out;
    for (auto& t : low.terms) out.terms.push_back(translate_term(cm, t, low.families));
    for (auto& t : low.conditioning) out.conditioning.push_back(translate_term(cm, t, low.families));
    return out;
}

CounterfactualQuery lower_query(const ClusterMap& cm, const CounterfactualQuery& high) {
    CounterfactualQuery out;
    out.projected = true;
    std::vector<int> family_of(cm.size(), -1);
    auto lower = [&](const Term& t) {
        Term lt;
        for (auto& oc : t.outcomes) {
            OutcomeConstraint loc;
            std::vector<int> clusters = oc.vars;
            for (int c : clusters) {
                if (c < 0 || c >= cm.size()) throw Error(ErrorKind::UnknownVariable, "outcome on an unknown cluster");
                for (int m : cm.clusters[c].members) loc.vars.push_back(m);
            }
            std::set<Tuple> allowed;
            for (auto& ht : oc.allowed) {
                Assignment h;
                for (std::size_t k = 0; k < clusters.size(); ++k) h[clusters[k]] = ht[k];
                for (auto& a : preimage(cm, h)) {
                    Tuple lt2;
                    for (int v : loc.vars) lt2.push_back(a.at(v));
                    allowed.insert(lt2);
                }
            }
            loc.allowed.assign(allowed.begin(), allowed.end());
            lt.outcomes.push_back(std::move(loc));
        }
        for (auto& h : t.hard) {
            if (h.var < 0 || h.var >= cm.size()) throw Error(ErrorKind::UnknownVariable, "intervention on an unknown cluster");
            auto& c = cm.clusters[h.var];
            if (h.value < 0 || h.value >= static_cast<int>(c.labels.size()))
                throw Error(ErrorKind::UnknownHighValue, "cluster '" + c.name + "' has no such value");
            if (c.fibers[h.value].size() == 1 && !c.lossy()) {
                auto& tup = c.fibers[h.value][0];
                for (std::size_t k = 0; k < tup.size(); ++k) lt.hard.push_back(HardAtom{c.members[k], tup[k]});
                continue;
            }
            if (family_of[h.var] < 0) {
                SoftFamily fam;
                fam.target = c.name;
                fam.members = c.members;
                fam.labels = c.labels;
                fam.fibers = c.fibers;
                fam.label_of = c.label_of;
                family_of[h.var] = static_cast<int>(out.families.size());
                out.families.push_back(std::move(fam));
            }
            lt.soft.push_back(SoftAtom{family_of[h.var], h.value});
        }
        return lt;
    };
    for (auto& t : high.terms) out.terms.push_back(lower(t));
    for (auto& t : high.conditioning) out.conditioning.push_back(lower(t));
    return out;
}

}  // namespace abstrakt
