#include "abstrakt/projection.hpp"

#include "abstrakt/error.hpp"
#include "abstrakt/io.hpp"
#include "json_util.hpp"

#include <algorithm>
#include <random>
#include <set>

namespace abstrakt {

using detail::json;

const char* policy_name(SigmaPolicy p) {
    switch (p) {
        case SigmaPolicy::Agnostic: return "agnostic";
        case SigmaPolicy::Markovian: return "markovian";
        case SigmaPolicy::General: return "general";
    }
    return "general";
}

SigmaPolicy parse_policy(const std::string& text) {
    if (text == "agnostic") return SigmaPolicy::Agnostic;
    if (text == "markovian") return SigmaPolicy::Markovian;
    if (text == "general") return SigmaPolicy::General;
    throw Error(ErrorKind::ParseError, "unknown policy '" + text + "' (expected agnostic, markovian or general)");
}

// ---------------------------------------------------------------- full projection

DiscreteScm project_full(const DiscreteScm& scm, const std::vector<int>& keep_list) {
    int n = scm.num_vars();
    std::vector<int> new_index(n, -1);
    std::vector<int> keep(keep_list);
    std::sort(keep.begin(), keep.end());
    keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
    for (int v : keep) {
        if (v < 0 || v >= n) throw Error(ErrorKind::UnknownVariable, "projection keeps an unknown variable");
    }
    for (std::size_t k = 0; k < keep.size(); ++k) new_index[keep[k]] = static_cast<int>(k);
    if (static_cast<int>(keep.size()) == n) return scm;

    // For dropped variables: kept variables and exogenous members they ultimately read.
    std::vector<std::set<int>> eff_endo(n), dropped_anc(n);
    std::vector<std::set<ExoRef>> eff_exo(n);
    for (int v : scm.topo_order()) {
        auto& m = scm.mechanism(v);
        eff_exo[v].insert(m.exo_parents.begin(), m.exo_parents.end());
        for (int p : m.endo_parents) {
            if (new_index[p] >= 0) {
                eff_endo[v].insert(p);
            } else {
                eff_endo[v].insert(eff_endo[p].begin(), eff_endo[p].end());
                eff_exo[v].insert(eff_exo[p].begin(), eff_exo[p].end());
                dropped_anc[v].insert(p);
                dropped_anc[v].insert(dropped_anc[p].begin(), dropped_anc[p].end());
            }
        }
    }

    std::vector<VariableDecl> decls;
    for (int v : keep) decls.push_back(scm.endogenous()[v]);
    std::vector<Mechanism> mechs;
    for (int v : keep) {
        Mechanism m;
        m.variable = new_index[v];
        std::vector<int> parents(eff_endo[v].begin(), eff_endo[v].end());
        std::vector<ExoRef> exos(eff_exo[v].begin(), eff_exo[v].end());
        for (int p : parents) m.endo_parents.push_back(new_index[p]);
        m.exo_parents = exos;
        std::vector<int> radix;
        for (int p : parents) radix.push_back(scm.endogenous()[p].size());
        for (auto& r : exos) radix.push_back(scm.blocks()[r.block].members[r.member].size());
        auto rows = radix_product(radix);
        check_budget(rows, "projected mechanism of '" + scm.endogenous()[v].name + "'");
        std::vector<int> order;
        for (int d : scm.topo_order())
            if (dropped_anc[v].count(d)) order.push_back(d);
        std::vector<int> endo(n, 0), exo(scm.exo_count(), 0);
        m.table.resize(rows);
        for (std::size_t i = 0; i < rows; ++i) {
            auto t = index_tuple(i, radix);
            for (std::size_t k = 0; k < parents.size(); ++k) endo[parents[k]] = t[k];
            for (std::size_t k = 0; k < exos.size(); ++k) exo[scm.exo_slot(exos[k])] = t[parents.size() + k];
            for (int d : order) endo[d] = scm.evaluate(d, endo.data(), exo.data());
            m.table[i] = scm.evaluate(v, endo.data(), exo.data());
        }
        mechs.push_back(std::move(m));
    }
    return DiscreteScm(std::move(decls), scm.blocks(), std::move(mechs));
}

// ---------------------------------------------------------------- delta splits

Tuple DeltaSplit::delta(int label, int index) const {
    if (label < 0 || label >= static_cast<int>(unobserved.size()) || index < 0 ||
        index >= static_cast<int>(unobserved[label].size()))
        throw Error(ErrorKind::DomainMismatch, "split index out of range");
    return unobserved[label][index];
}

std::pair<int, int> DeltaSplit::split(const Tuple& low) const {
    for (int l = 0; l < static_cast<int>(unobserved.size()); ++l) {
        auto& f = unobserved[l];
        auto it = std::lower_bound(f.begin(), f.end(), low);
        if (it != f.end() && *it == low) return {l, static_cast<int>(it - f.begin())};
    }
    throw Error(ErrorKind::DomainMismatch, "tuple outside the cluster domain");
}

std::vector<DeltaSplit> delta_splits(const ClusterMap& cm) {
    std::vector<DeltaSplit> out;
    for (int c = 0; c < cm.size(); ++c) out.push_back(DeltaSplit{c, cm.clusters[c].labels, cm.clusters[c].fibers});
    return out;
}

// ---------------------------------------------------------------- sigma tables

bool SigmaTables::is_violator(int cluster) const {
    return std::binary_search(violators.begin(), violators.end(), cluster);
}

int SigmaTables::context_index(int cluster, const Tuple& high_ctx) const {
    std::vector<int> radix;
    for (int k : context_clusters[cluster]) radix.push_back(label_count[k]);
    return static_cast<int>(tuple_index(high_ctx, radix));
}

int SigmaTables::context_count(int cluster) const {
    std::vector<int> radix;
    for (int k : context_clusters[cluster]) radix.push_back(label_count[k]);
    return static_cast<int>(radix_product(radix));
}

Tuple SigmaTables::context_tuple(int cluster, int index) const {
    std::vector<int> radix;
    for (int k : context_clusters[cluster]) radix.push_back(label_count[k]);
    return index_tuple(index, radix);
}

namespace {

std::set<std::pair<int, int>> cluster_edges(const DiscreteScm& scm, const ClusterMap& cm) {
    std::set<std::pair<int, int>> edges;
    for (int v = 0; v < scm.num_vars(); ++v)
        for (int p : scm.mechanism(v).endo_parents) {
            int a = cm.cluster_of[p], b = cm.cluster_of[v];
            if (a != b) edges.emplace(a, b);
        }
    return edges;
}

std::vector<int> cluster_order(int n, const std::set<std::pair<int, int>>& edges) {
    Diagram g;
    for (int i = 0; i < n; ++i) g.nodes.push_back(std::to_string(i));
    g.directed = edges;
    return topological_order(g);
}

Tuple labels_of(const ClusterMap& cm, const std::vector<int>& vals) {
    Tuple out;
    Tuple t;
    for (auto& c : cm.clusters) {
        t.clear();
        for (int m : c.members) t.push_back(vals[m]);
        out.push_back(c.label_of.at(t));
    }
    return out;
}

// Mechanism of v as a function of its endogenous parents, at the exogenous values in u.
Tuple response_of(const DiscreteScm& scm, int v, const std::vector<int>& u, std::vector<int>& scratch) {
    auto& m = scm.mechanism(v);
    std::vector<int> radix;
    for (int p : m.endo_parents) radix.push_back(scm.endogenous()[p].size());
    auto rows = radix_product(radix);
    Tuple out(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        auto t = index_tuple(i, radix);
        for (std::size_t k = 0; k < t.size(); ++k) scratch[m.endo_parents[k]] = t[k];
        out[i] = scm.evaluate(v, scratch.data(), u.data());
    }
    return out;
}

std::vector<int> block_slots(const DiscreteScm& scm, const std::vector<int>& blocks) {
    std::vector<int> out;
    for (int b : blocks)
        for (int k = 0; k < static_cast<int>(scm.blocks()[b].members.size()); ++k) out.push_back(scm.block_offset(b) + k);
    return out;
}

// Groups the values of the shared blocks by the conditional law of the neighbours' responses.
void shared_classes(const DiscreteScm& scm, const ClusterMap& cm, int c, SigmaTables& t) {
    std::vector<std::set<int>> closure(scm.num_vars());
    for (int v = 0; v < scm.num_vars(); ++v) closure[v] = exogenous_closure(scm, v);
    std::set<int> own, others;
    for (int v = 0; v < scm.num_vars(); ++v) {
        if (cm.cluster_of[v] == c)
            own.insert(closure[v].begin(), closure[v].end());
        else
            others.insert(closure[v].begin(), closure[v].end());
    }
    std::vector<int> shared;
    std::set_intersection(own.begin(), own.end(), others.begin(), others.end(), std::back_inserter(shared));
    t.shared_blocks[c] = shared;
    t.shared_slots[c] = block_slots(scm, shared);
    t.class_count[c] = 1;
    if (shared.empty()) return;

    std::vector<int> neighbours;
    std::set<int> blocks(shared.begin(), shared.end());
    for (int v = 0; v < scm.num_vars(); ++v) {
        if (cm.cluster_of[v] == c) continue;
        bool touches = std::any_of(shared.begin(), shared.end(), [&](int b) { return closure[v].count(b) > 0; });
        if (!touches) continue;
        neighbours.push_back(v);
        blocks.insert(closure[v].begin(), closure[v].end());
    }
    std::vector<int> block_list(blocks.begin(), blocks.end());
    std::uint64_t states = 1;
    for (int b : block_list) states = sat_mul(states, scm.blocks()[b].member_states());
    check_budget(states, "shared-context classes of '" + cm.clusters[c].name + "'");

    std::map<Tuple, std::map<std::vector<Tuple>, Rational>> joint;
    std::vector<int> scratch(scm.num_vars(), 0);
    auto& slots = t.shared_slots[c];
    for_each_unit_over(scm, block_list, [&](const std::vector<int>& u, const Rational& w) {
        Tuple key;
        for (int s : slots) key.push_back(u[s]);
        std::vector<Tuple> resp;
        for (int v : neighbours) resp.push_back(response_of(scm, v, u, scratch));
        joint[key][resp] += w;
    });
    std::vector<std::map<std::vector<Tuple>, Rational>> seen;
    for (auto& [key, dist] : joint) {
        Rational total = 0;
        for (auto& [r, p] : dist) total += p;
        for (auto& [r, p] : dist) p /= total;
        int cls = -1;
        for (std::size_t k = 0; k < seen.size(); ++k)
            if (seen[k] == dist) cls = static_cast<int>(k);
        if (cls < 0) {
            cls = static_cast<int>(seen.size());
            seen.push_back(dist);
        }
        t.shared_class[c][key] = cls;
    }
    t.class_count[c] = std::max<int>(1, static_cast<int>(seen.size()));
}

int shared_class_of(const SigmaTables& t, int c, const std::vector<int>& u) {
    if (t.shared_slots[c].empty()) return 0;
    Tuple key;
    for (int s : t.shared_slots[c]) key.push_back(u[s]);
    auto it = t.shared_class[c].find(key);
    return it == t.shared_class[c].end() ? -1 : it->second;
}

}  // namespace

SigmaModel build_sigma_model(const DiscreteScm& scm, const ClusterMap& cm_in, SigmaPolicy policy) {
    SigmaModel out{clustered_model(scm, cm_in), {}};
    auto& model = out.model;
    auto& t = out.tables;
    const auto& low = model.scm;
    const auto& cm = model.cm;
    int n = cm.size();
    t.policy = policy;
    t.violators = check_aic(scm, cm_in).violators;
    for (auto& c : cm.clusters) t.label_count.push_back(static_cast<int>(c.labels.size()));
    t.context_clusters.assign(n, {});
    t.shared_blocks.assign(n, {});
    t.shared_slots.assign(n, {});
    t.shared_class.assign(n, {});
    t.class_count.assign(n, 1);
    t.table.assign(n, {});

    auto edges = cluster_edges(low, cm);
    if (policy != SigmaPolicy::Agnostic) {
        for (int c : cluster_order(n, edges)) {
            std::set<int> ctx;
            for (auto& [a, b] : edges) {
                if (b != c) continue;
                ctx.insert(a);
                if (t.is_violator(a)) ctx.insert(t.context_clusters[a].begin(), t.context_clusters[a].end());
            }
            t.context_clusters[c].assign(ctx.begin(), ctx.end());
        }
    }
    std::vector<int> lossy;
    for (int c = 0; c < n; ++c)
        if (cm.clusters[c].lossy()) lossy.push_back(c);
    if (policy == SigmaPolicy::General)
        for (int c : lossy) shared_classes(low, cm, c, t);
    if (lossy.empty()) return out;

    check_budget(low.exo_state_count(), "disambiguation tables");
    std::vector<std::map<std::tuple<int, int, int>, std::vector<Rational>>> mass(n);
    std::vector<int> vals(low.num_vars());
    for_each_unit(low, [&](const std::vector<int>& u, const Rational& w) {
        for (int v : low.topo_order()) vals[v] = low.evaluate(v, vals.data(), u.data());
        auto labels = labels_of(cm, vals);
        for (int c : lossy) {
            auto& cl = cm.clusters[c];
            int l = labels[c];
            if (cl.fibers[l].size() == 1) continue;
            Tuple ctx, tup;
            for (int k : t.context_clusters[c]) ctx.push_back(labels[k]);
            for (int m : cl.members) tup.push_back(vals[m]);
            int cls = shared_class_of(t, c, u);
            auto& f = cl.fibers[l];
            int idx = static_cast<int>(std::lower_bound(f.begin(), f.end(), tup) - f.begin());
            auto& row = mass[c][{l, t.context_index(c, ctx), cls}];
            if (row.empty()) row.assign(f.size(), Rational(0));
            row[idx] += w;
        }
    });
    for (int c : lossy)
        for (auto& [key, row] : mass[c]) {
            Rational total = 0;
            for (auto& p : row) total += p;
            if (total == 0) continue;
            for (auto& p : row) p /= total;
            t.table[c][key] = row;
        }
    return out;
}

std::vector<Rational> sigma_lookup(const SigmaTables& t, const ClusterMap& cm, int c, int label, int ctx, int cls,
                                   const SigmaOptions& options) {
    auto& cl = cm.clusters[c];
    std::size_t size = cl.fibers[label].size();
    if (size == 1) return {Rational(1)};
    auto it = t.table[c].find({label, ctx, cls});
    if (it != t.table[c].end()) return it->second;
    std::string where = "'" + cl.name + "=" + cl.labels[label] + "'";
    if (!t.context_clusters[c].empty()) {
        auto ct = t.context_tuple(c, ctx);
        where += " given ";
        for (std::size_t k = 0; k < ct.size(); ++k) {
            int kc = t.context_clusters[c][k];
            where += (k ? "," : "") + cm.clusters[kc].name + "=" + cm.clusters[kc].labels[ct[k]];
        }
    }
    if (t.class_count[c] > 1) where += " (shared class " + std::to_string(cls) + ")";
    if (!options.uniform_fallback)
        throw Error(ErrorKind::ImpossibleContext, "disambiguation of " + where + " conditions on an event of probability 0");
    if (options.warnings) options.warnings->push_back("uniform disambiguation used for " + where);
    return std::vector<Rational>(size, Rational(1, static_cast<unsigned long>(size)));
}

std::map<Tuple, Rational> sigma_distribution(const SigmaTables& t, const ClusterMap& cm, const DiscreteScm& exo, int c,
                                             int label, const NamedContext& context, const SigmaOptions& options) {
    if (c < 0 || c >= cm.size()) throw Error(ErrorKind::UnknownVariable, "unknown cluster");
    auto& cl = cm.clusters[c];
    if (label < 0 || label >= static_cast<int>(cl.labels.size()))
        throw Error(ErrorKind::UnknownHighValue, "cluster '" + cl.name + "' has no such value");
    std::set<std::string> known;
    for (auto& k : cm.clusters) known.insert(k.name);
    for (int s = 0; s < exo.exo_count(); ++s) known.insert(exo.exo_name(s));
    for (auto& [name, value] : context)
        if (!known.count(name)) throw Error(ErrorKind::UnknownVariable, "context names unknown variable '" + name + "'");

    std::map<Tuple, Rational> out;
    if (cl.fibers[label].size() == 1) {
        out[cl.fibers[label][0]] = 1;
        return out;
    }
    Tuple ctx;
    for (int k : t.context_clusters[c]) {
        auto& kc = cm.clusters[k];
        auto it = context.find(kc.name);
        if (it == context.end())
            throw Error(ErrorKind::InvalidQuery, "disambiguation of '" + cl.name + "' needs a value for '" + kc.name + "'");
        int x = kc.high_decl().value_index(it->second);
        if (x < 0) throw Error(ErrorKind::UnknownHighValue, "'" + it->second + "' is not a value of '" + kc.name + "'");
        ctx.push_back(x);
    }
    int cls = 0;
    if (!t.shared_slots[c].empty()) {
        Tuple key;
        for (int s : t.shared_slots[c]) {
            auto name = exo.exo_name(s);
            auto it = context.find(name);
            if (it == context.end())
                throw Error(ErrorKind::InvalidQuery, "disambiguation of '" + cl.name + "' needs a value for '" + name + "'");
            int x = exo.exo_decl(s).value_index(it->second);
            if (x < 0) throw Error(ErrorKind::DomainMismatch, "'" + it->second + "' is not a value of '" + name + "'");
            key.push_back(x);
        }
        auto it = t.shared_class[c].find(key);
        if (it == t.shared_class[c].end())
            throw Error(ErrorKind::ImpossibleContext, "shared exogenous values of '" + cl.name + "' have probability 0");
        cls = it->second;
    }
    auto dist = sigma_lookup(t, cm, c, label, t.context_index(c, ctx), cls, options);
    for (std::size_t k = 0; k < dist.size(); ++k) out[cl.fibers[label][k]] = dist[k];
    return out;
}

std::map<Tuple, Rational> sigma_distribution(const DiscreteScm& scm, const ClusterMap& cm, const std::string& cluster,
                                             const std::string& value, SigmaPolicy policy, const NamedContext& context,
                                             const SigmaOptions& options) {
    int c = cm.cluster(cluster);
    int label = cm.clusters[c].high_decl().value_index(value);
    if (label < 0) throw Error(ErrorKind::UnknownHighValue, "'" + value + "' is not a value of '" + cluster + "'");
    auto m = build_sigma_model(scm, cm, policy);
    return sigma_distribution(m.tables, m.model.cm, m.model.scm, c, label, context, options);
}

// ---------------------------------------------------------------- query resolution

CounterfactualQuery resolve_soft_atoms(const SigmaModel& m, const ClusterMap& cm, const CounterfactualQuery& q,
                                       const SigmaOptions& options) {
    auto& t = m.tables;
    CounterfactualQuery out = q;
    auto family_cluster = [&](const SoftFamily& fam) {
        for (int c = 0; c < cm.size(); ++c)
            if (cm.clusters[c].members == fam.members) return c;
        throw Error(ErrorKind::InvalidQuery, "soft intervention on '" + fam.target + "' does not match a cluster");
    };
    if (q.projected) {
        for (int v : t.violators) {
            auto& cl = cm.clusters[v];
            bool present = std::any_of(out.families.begin(), out.families.end(),
                                       [&](const SoftFamily& f) { return f.members == cl.members; });
            if (present) continue;
            SoftFamily fam;
            fam.target = cl.name;
            fam.members = cl.members;
            fam.labels = cl.labels;
            fam.fibers = cl.fibers;
            fam.label_of = cl.label_of;
            out.families.push_back(std::move(fam));
        }
    }
    for (auto& fam : out.families) {
        int c = family_cluster(fam);
        auto& cl = cm.clusters[c];
        fam.resample_natural = q.projected && t.is_violator(c);
        fam.context_vars.clear();
        fam.context_exo = t.shared_slots[c];
        fam.context_class.clear();
        fam.table.clear();
        std::vector<int> radix;
        for (int k : t.context_clusters[c])
            for (int mvar : cm.clusters[k].members) {
                fam.context_vars.push_back(mvar);
                radix.push_back(cm.low[mvar].size());
            }
        for (int s : fam.context_exo) radix.push_back(m.model.scm.exo_decl(s).size());
        int cc = t.class_count[c];
        if (!radix.empty()) {
            auto raws = radix_product(radix);
            check_budget(raws, "disambiguation contexts of '" + cl.name + "'");
            std::size_t nv = fam.context_vars.size();
            for (std::size_t i = 0; i < raws; ++i) {
                auto raw = index_tuple(i, radix);
                Tuple ctx;
                std::size_t pos = 0;
                for (int k : t.context_clusters[c]) {
                    auto& kc = cm.clusters[k];
                    Tuple part(raw.begin() + pos, raw.begin() + pos + kc.members.size());
                    pos += kc.members.size();
                    ctx.push_back(kc.label_of.at(part));
                }
                int cls = 0;
                if (!fam.context_exo.empty()) {
                    Tuple key(raw.begin() + nv, raw.end());
                    auto it = t.shared_class[c].find(key);
                    if (it == t.shared_class[c].end()) continue;
                    cls = it->second;
                }
                fam.context_class[raw] = t.context_index(c, ctx) * cc + cls;
            }
        }
        for (int l = 0; l < static_cast<int>(cl.labels.size()); ++l) {
            if (cl.fibers[l].size() == 1) continue;
            for (int ctx = 0; ctx < t.context_count(c); ++ctx)
                for (int cls = 0; cls < cc; ++cls) {
                    try {
                        fam.table[{l, ctx * cc + cls}] = sigma_lookup(t, cm, c, l, ctx, cls, options);
                    } catch (const Error& e) {
                        // Left undefined; evaluation fails only if the context is reached.
                        if (e.kind() != ErrorKind::ImpossibleContext) throw;
                    }
                }
        }
        fam.resolved = true;
    }
    return out;
}

CounterfactualQuery resolve_soft_atoms(const DiscreteScm& scm, const ClusterMap& cm, const CounterfactualQuery& q,
                                       SigmaPolicy policy, const SigmaOptions& options) {
    return resolve_soft_atoms(build_sigma_model(scm, cm, policy), cm, q, options);
}

// ---------------------------------------------------------------- Alg. 1

int WuEncoding::coordinate(int label, int ctx) const {
    for (std::size_t k = 0; k < coordinates.size(); ++k)
        if (coordinates[k].first == label && coordinates[k].second == ctx) return static_cast<int>(k);
    return -1;
}

int WuEncoding::index_at(int value, int coord) const { return index_tuple(value, radix)[coord]; }

int WuEncoding::with(int value, int coord, int index) const {
    auto t = index_tuple(value, radix);
    t[coord] = index;
    return static_cast<int>(tuple_index(t, radix));
}

const WuEncoding* HighLevelScm::wu_of(int cluster) const {
    for (auto& w : wu)
        if (w.cluster == cluster) return &w;
    return nullptr;
}

namespace {

// Parents of a cluster in the constructed model: its cluster parents plus the context
// of every violating parent.
std::vector<int> high_parents(const std::set<std::pair<int, int>>& edges, const SigmaTables& t, int c) {
    std::set<int> out;
    for (auto& [a, b] : edges) {
        if (b != c) continue;
        out.insert(a);
        if (t.is_violator(a)) out.insert(t.context_clusters[a].begin(), t.context_clusters[a].end());
    }
    return {out.begin(), out.end()};
}

}  // namespace

HighLevelScm construct_projected_abstraction(const DiscreteScm& scm, const ClusterMap& cm_in, SigmaPolicy policy,
                                             const SigmaOptions& options) {
    for (auto& b : scm.blocks())
        if (!b.given.empty())
            throw Error(ErrorKind::UnsupportedModel, "block '" + b.name + "' is conditional; abstraction needs independent blocks");
    auto sm = build_sigma_model(scm, cm_in, policy);
    const auto& low = sm.model.scm;
    const auto& cm = sm.model.cm;
    const auto& t = sm.tables;
    int n = cm.size();

    HighLevelScm h;
    h.cm = cm;
    h.splits = delta_splits(cm);
    h.sigma = t;

    std::vector<ExogenousBlock> blocks = low.blocks();
    std::set<std::string> block_names;
    for (auto& b : blocks) block_names.insert(b.name);
    for (int v : t.violators) {
        auto& cl = cm.clusters[v];
        WuEncoding enc;
        enc.cluster = v;
        for (int l = 0; l < static_cast<int>(cl.labels.size()); ++l) {
            if (cl.fibers[l].size() == 1) continue;
            for (int ctx = 0; ctx < t.context_count(v); ++ctx) {
                enc.coordinates.emplace_back(l, ctx);
                enc.radix.push_back(static_cast<int>(cl.fibers[l].size()));
            }
        }
        auto states = radix_product(enc.radix);
        std::string name = cl.name + "_u";
        while (block_names.count(name)) name += "_";
        block_names.insert(name);

        ExogenousBlock b;
        b.name = name;
        VariableDecl d{name, {}};
        check_budget(states, "disambiguation block of '" + cl.name + "'");
        for (std::uint64_t r = 0; r < states; ++r) d.domain.push_back("r" + std::to_string(r));
        b.members.push_back(d);
        b.given = t.shared_blocks[v];
        std::vector<int> given_radix;
        for (int g : b.given)
            for (auto& m : low.blocks()[g].members) given_radix.push_back(m.size());
        auto given_states = radix_product(given_radix);
        check_budget(sat_mul(given_states, states), "disambiguation block of '" + cl.name + "'");
        b.table.assign(given_states * states, Rational(0));
        for (std::size_t g = 0; g < given_states; ++g) {
            auto key = index_tuple(g, given_radix);
            int cls = 0;
            bool possible = true;
            if (!b.given.empty()) {
                auto it = t.shared_class[v].find(key);
                if (it == t.shared_class[v].end())
                    possible = false;
                else
                    cls = it->second;
            }
            std::vector<std::vector<Rational>> coord_dist;
            for (auto& [l, ctx] : enc.coordinates) {
                if (possible) {
                    coord_dist.push_back(sigma_lookup(t, cm, v, l, ctx, cls, options));
                } else {
                    // Unreachable shared values: any normalized row will do.
                    auto size = cl.fibers[l].size();
                    coord_dist.emplace_back(size, Rational(1, static_cast<unsigned long>(size)));
                }
            }
            for (std::uint64_t r = 0; r < states; ++r) {
                auto idx = index_tuple(r, enc.radix);
                Rational p = 1;
                for (std::size_t k = 0; k < idx.size(); ++k) p *= coord_dist[k][idx[k]];
                b.table[g * states + r] = p;
            }
        }
        enc.block = static_cast<int>(blocks.size());
        blocks.push_back(std::move(b));
        h.wu.push_back(std::move(enc));
    }

    auto edges = cluster_edges(low, cm);
    std::vector<std::vector<int>> eval_order(n);
    for (int v : low.topo_order()) eval_order[cm.cluster_of[v]].push_back(v);

    std::vector<Mechanism> mechs;
    for (int j = 0; j < n; ++j) {
        auto& cj = cm.clusters[j];
        Mechanism m;
        m.variable = j;
        m.endo_parents = high_parents(edges, t, j);
        std::set<ExoRef> own;
        for (int v : cj.members)
            for (auto& r : low.mechanism(v).exo_parents) own.insert(r);
        m.exo_parents.assign(own.begin(), own.end());
        std::vector<int> wu_parents;  // violating cluster parents
        for (auto& [a, b] : edges)
            if (b == j && t.is_violator(a)) {
                wu_parents.push_back(a);
                m.exo_parents.push_back(ExoRef{h.wu_of(a) ? h.wu_of(a)->block : -1, 0});
            }
        std::vector<int> radix;
        for (int p : m.endo_parents) radix.push_back(static_cast<int>(cm.clusters[p].labels.size()));
        for (auto& r : m.exo_parents) radix.push_back(blocks[r.block].members[r.member].size());
        auto rows = radix_product(radix);
        check_budget(rows, "abstract mechanism of '" + cj.name + "'");
        m.table.resize(rows);

        std::vector<int> direct;  // cluster parents
        for (auto& [a, b] : edges)
            if (b == j) direct.push_back(a);
        std::vector<int> endo(low.num_vars(), 0), exo(low.exo_count(), 0);
        std::vector<int> parent_label(n, -1);
        std::size_t np = m.endo_parents.size(), nown = own.size();
        for (std::size_t i = 0; i < rows; ++i) {
            auto row = index_tuple(i, radix);
            for (std::size_t k = 0; k < np; ++k) parent_label[m.endo_parents[k]] = row[k];
            std::size_t k = 0;
            for (auto& r : own) exo[low.exo_slot(r)] = row[np + k++];
            for (int p : direct) {
                int l = parent_label[p];
                int idx = 0;
                if (t.is_violator(p) && cm.clusters[p].fibers[l].size() > 1) {
                    auto* enc = h.wu_of(p);
                    Tuple ctx;
                    for (int q : t.context_clusters[p]) ctx.push_back(parent_label[q]);
                    int coord = enc->coordinate(l, t.context_index(p, ctx));
                    auto pos = std::find(wu_parents.begin(), wu_parents.end(), p) - wu_parents.begin();
                    idx = enc->index_at(row[np + nown + pos], coord);
                }
                auto& tup = cm.clusters[p].fibers[l][idx];
                for (std::size_t q = 0; q < tup.size(); ++q) endo[cm.clusters[p].members[q]] = tup[q];
            }
            for (int v : eval_order[j]) endo[v] = low.evaluate(v, endo.data(), exo.data());
            Tuple tup;
            for (int v : cj.members) tup.push_back(endo[v]);
            m.table[i] = cj.label_of.at(tup);
        }
        mechs.push_back(std::move(m));
    }
    h.scm = DiscreteScm(cm.high_decls(), std::move(blocks), std::move(mechs));
    return h;
}

// ---------------------------------------------------------------- serialization

std::string high_level_to_json(const HighLevelScm& h) {
    auto doc = detail::scm_json(h.scm);
    auto& cm = h.cm;
    auto& t = h.sigma;
    json d;
    d["policy"] = policy_name(t.policy);
    d["low"] = json::array();
    for (auto& v : cm.low) d["low"].push_back(detail::decl_json(v));
    d["clusters"] = detail::parse_json(cluster_doc_json(cm)).at("clusters");
    d["violators"] = json::array();
    for (int v : t.violators) d["violators"].push_back(cm.clusters[v].name);
    d["context"] = json::object();
    for (int c = 0; c < cm.size(); ++c) {
        json names = json::array();
        for (int k : t.context_clusters[c]) names.push_back(cm.clusters[k].name);
        d["context"][cm.clusters[c].name] = names;
    }
    d["shared"] = json::object();
    for (int c = 0; c < cm.size(); ++c) {
        if (t.shared_blocks[c].empty()) continue;
        json js;
        js["blocks"] = json::array();
        for (int b : t.shared_blocks[c]) js["blocks"].push_back(h.scm.blocks()[b].name);
        js["classes"] = json::array();
        for (auto& [key, cls] : t.shared_class[c]) {
            json row;
            row["values"] = json::array();
            for (std::size_t k = 0; k < key.size(); ++k) row["values"].push_back(h.scm.exo_decl(t.shared_slots[c][k]).domain[key[k]]);
            row["class"] = cls;
            js["classes"].push_back(row);
        }
        d["shared"][cm.clusters[c].name] = js;
    }
    auto ctx_labels = [&](int c, int ctx) {
        json out = json::array();
        auto tup = t.context_tuple(c, ctx);
        for (std::size_t k = 0; k < tup.size(); ++k) out.push_back(cm.clusters[t.context_clusters[c][k]].labels[tup[k]]);
        return out;
    };
    d["wu"] = json::array();
    for (auto& enc : h.wu) {
        json jw;
        jw["cluster"] = cm.clusters[enc.cluster].name;
        jw["block"] = h.scm.blocks()[enc.block].name;
        jw["coordinates"] = json::array();
        for (auto& [l, ctx] : enc.coordinates)
            jw["coordinates"].push_back(json{{"label", cm.clusters[enc.cluster].labels[l]}, {"context", ctx_labels(enc.cluster, ctx)}});
        d["wu"].push_back(jw);
    }
    d["sigma"] = json::array();
    for (int c = 0; c < cm.size(); ++c)
        for (auto& [key, dist] : t.table[c]) {
            auto& [l, ctx, cls] = key;
            json row;
            row["cluster"] = cm.clusters[c].name;
            row["label"] = cm.clusters[c].labels[l];
            row["context"] = ctx_labels(c, ctx);
            row["class"] = cls;
            row["p"] = json::array();
            for (auto& p : dist) row["p"].push_back(to_string(p));
            d["sigma"].push_back(row);
        }
    doc["delta"] = d;
    return doc.dump(2) + "\n";
}

HighLevelScm high_level_from_json(const std::string& text) {
    HighLevelScm h;
    h.scm = validate_scm(text);
    auto doc = detail::parse_json(text);
    auto& d = detail::need(doc, "delta", "abstract model");
    std::vector<VariableDecl> low;
    for (auto& v : detail::need(d, "low", "delta")) low.push_back(detail::parse_decl(v, "delta low variable"));
    json cdoc;
    cdoc["clusters"] = detail::need(d, "clusters", "delta");
    h.cm = cluster_map_over(low, parse_cluster_doc(cdoc.dump()));
    auto& cm = h.cm;
    int n = cm.size();
    if (h.scm.num_vars() != n)
        throw Error(ErrorKind::DomainMismatch, "abstract model variables do not match its clusters");
    for (int c = 0; c < n; ++c)
        if (h.scm.endogenous()[c].name != cm.clusters[c].name || h.scm.endogenous()[c].domain != cm.clusters[c].labels)
            throw Error(ErrorKind::DomainMismatch, "abstract variable '" + h.scm.endogenous()[c].name + "' does not match its cluster");
    h.splits = delta_splits(cm);

    auto& t = h.sigma;
    t.policy = parse_policy(detail::value_text(detail::need(d, "policy", "delta")));
    for (auto& c : cm.clusters) t.label_count.push_back(static_cast<int>(c.labels.size()));
    for (auto& v : detail::need(d, "violators", "delta")) t.violators.push_back(cm.cluster(detail::value_text(v)));
    std::sort(t.violators.begin(), t.violators.end());
    t.context_clusters.assign(n, {});
    t.shared_blocks.assign(n, {});
    t.shared_slots.assign(n, {});
    t.shared_class.assign(n, {});
    t.class_count.assign(n, 1);
    t.table.assign(n, {});
    if (d.contains("context"))
        for (auto& [name, list] : d.at("context").items()) {
            int c = cm.cluster(name);
            for (auto& k : list) t.context_clusters[c].push_back(cm.cluster(detail::value_text(k)));
            std::sort(t.context_clusters[c].begin(), t.context_clusters[c].end());
        }
    if (d.contains("shared"))
        for (auto& [name, js] : d.at("shared").items()) {
            int c = cm.cluster(name);
            for (auto& b : detail::need(js, "blocks", "shared context")) t.shared_blocks[c].push_back(h.scm.block(detail::value_text(b)));
            std::sort(t.shared_blocks[c].begin(), t.shared_blocks[c].end());
            t.shared_slots[c] = block_slots(h.scm, t.shared_blocks[c]);
            int top = 0;
            for (auto& row : detail::need(js, "classes", "shared context")) {
                auto vals = detail::value_list(detail::need(row, "values", "shared class"));
                if (vals.size() != t.shared_slots[c].size()) throw Error(ErrorKind::DomainMismatch, "shared class has the wrong arity");
                Tuple key;
                for (std::size_t k = 0; k < vals.size(); ++k) {
                    int x = h.scm.exo_decl(t.shared_slots[c][k]).value_index(vals[k]);
                    if (x < 0) throw Error(ErrorKind::DomainMismatch, "unknown shared value '" + vals[k] + "'");
                    key.push_back(x);
                }
                int cls = detail::need(row, "class", "shared class").get<int>();
                t.shared_class[c][key] = cls;
                top = std::max(top, cls + 1);
            }
            t.class_count[c] = std::max(1, top);
        }
    auto ctx_index = [&](int c, const json& labels) {
        auto vals = detail::value_list(labels);
        if (vals.size() != t.context_clusters[c].size()) throw Error(ErrorKind::DomainMismatch, "context has the wrong arity");
        Tuple tup;
        for (std::size_t k = 0; k < vals.size(); ++k) {
            int x = cm.clusters[t.context_clusters[c][k]].high_decl().value_index(vals[k]);
            if (x < 0) throw Error(ErrorKind::UnknownHighValue, "unknown context value '" + vals[k] + "'");
            tup.push_back(x);
        }
        return t.context_index(c, tup);
    };
    auto label_index = [&](int c, const json& j) {
        int l = cm.clusters[c].high_decl().value_index(detail::value_text(j));
        if (l < 0) throw Error(ErrorKind::UnknownHighValue, "unknown value of '" + cm.clusters[c].name + "'");
        return l;
    };
    for (auto& jw : detail::need(d, "wu", "delta")) {
        WuEncoding enc;
        enc.cluster = cm.cluster(detail::value_text(detail::need(jw, "cluster", "wu")));
        enc.block = h.scm.block(detail::value_text(detail::need(jw, "block", "wu")));
        for (auto& co : detail::need(jw, "coordinates", "wu")) {
            int l = label_index(enc.cluster, detail::need(co, "label", "wu coordinate"));
            enc.coordinates.emplace_back(l, ctx_index(enc.cluster, detail::need(co, "context", "wu coordinate")));
            enc.radix.push_back(static_cast<int>(cm.clusters[enc.cluster].fibers[l].size()));
        }
        if (radix_product(enc.radix) != h.scm.blocks()[enc.block].member_states())
            throw Error(ErrorKind::DomainMismatch, "disambiguation block '" + h.scm.blocks()[enc.block].name + "' has the wrong size");
        h.wu.push_back(std::move(enc));
    }
    for (auto& row : detail::need(d, "sigma", "delta")) {
        int c = cm.cluster(detail::value_text(detail::need(row, "cluster", "sigma")));
        int l = label_index(c, detail::need(row, "label", "sigma"));
        int ctx = ctx_index(c, detail::need(row, "context", "sigma"));
        int cls = detail::need(row, "class", "sigma").get<int>();
        std::vector<Rational> dist;
        for (auto& p : detail::need(row, "p", "sigma")) dist.push_back(detail::prob_value(p));
        if (dist.size() != cm.clusters[c].fibers[l].size()) throw Error(ErrorKind::DomainMismatch, "sigma row has the wrong size");
        t.table[c][{l, ctx, cls}] = dist;
    }
    return h;
}

// ---------------------------------------------------------------- Prop. 1 replay

ProjectionReport verify_partial_projection(const DiscreteScm& low_in, const HighLevelScm& high, std::size_t keep) {
    auto model = clustered_model(low_in, rebase(high.cm, low_in));
    const auto& low = model.scm;
    const auto& cm = model.cm;
    int n = cm.size();
    if (high.scm.num_vars() != n) throw Error(ErrorKind::DomainMismatch, "abstract model does not match the clustering");
    if (high.scm.blocks().size() < low.blocks().size())
        throw Error(ErrorKind::DomainMismatch, "abstract model lacks the low-level exogenous blocks");
    for (std::size_t b = 0; b < low.blocks().size(); ++b)
        if (high.scm.blocks()[b].name != low.blocks()[b].name)
            throw Error(ErrorKind::DomainMismatch, "abstract model blocks do not match the low-level model");

    // Every intervention on a union of clusters, as (cluster -> fiber tuple) choices.
    struct Iv {
        std::vector<HardAtom> low, high;
        std::vector<int> tuple_of;  // per cluster: index into its full domain, or -1
    };
    std::vector<std::vector<Tuple>> domain(n);
    std::uint64_t count = 1;
    for (int c = 0; c < n; ++c) {
        for (auto& f : cm.clusters[c].fibers)
            for (auto& tup : f) domain[c].push_back(tup);
        std::sort(domain[c].begin(), domain[c].end());
        count = sat_mul(count, domain[c].size() + 1);
    }
    check_budget(sat_mul(count, low.exo_state_count()), "projection replay");
    std::vector<Iv> ivs;
    std::vector<int> radix;
    for (int c = 0; c < n; ++c) radix.push_back(static_cast<int>(domain[c].size()) + 1);
    for (std::uint64_t i = 0; i < count; ++i) {
        auto pick = index_tuple(i, radix);
        Iv iv;
        iv.tuple_of.assign(n, -1);
        for (int c = 0; c < n; ++c) {
            if (pick[c] == 0) continue;
            auto& tup = domain[c][pick[c] - 1];
            iv.tuple_of[c] = pick[c] - 1;
            for (std::size_t k = 0; k < tup.size(); ++k) iv.low.push_back(HardAtom{cm.clusters[c].members[k], tup[k]});
            iv.high.push_back(HardAtom{c, cm.clusters[c].label_of.at(tup)});
        }
        ivs.push_back(std::move(iv));
    }

    ProjectionReport report;
    std::vector<int> uh(high.scm.exo_count(), 0);
    for_each_unit(low, [&](const std::vector<int>& u, const Rational&) {
        std::copy(u.begin(), u.end(), uh.begin());
        for (auto& iv : ivs) {
            auto vals = evaluate_unit(low, u, iv.low);
            auto expected = labels_of(cm, vals);
            for (auto& enc : high.wu) {
                int c = enc.cluster;
                Tuple tup;
                for (int m : cm.clusters[c].members) tup.push_back(vals[m]);
                auto [l, idx] = high.splits[c].split(tup);
                Tuple ctx;
                for (int k : high.sigma.context_clusters[c]) ctx.push_back(expected[k]);
                int coord = enc.coordinate(l, high.sigma.context_index(c, ctx));
                uh[high.scm.block_offset(enc.block)] = coord < 0 ? 0 : enc.with(0, coord, idx);
            }
            auto actual = evaluate_unit(high.scm, uh, iv.high);
            ++report.checked;
            if (actual == std::vector<int>(expected.begin(), expected.end())) continue;
            ++report.mismatch_count;
            if (report.mismatches.size() < keep) {
                ProjectionMismatch mm;
                mm.u = u;
                for (auto& a : iv.low) mm.intervention[a.var] = a.value;
                mm.expected = expected;
                mm.actual = actual;
                report.mismatches.push_back(std::move(mm));
            }
        }
    });
    return report;
}

// ---------------------------------------------------------------- bounds and responses

std::pair<Rational, Rational> disambiguation_bounds(const DiscreteScm& scm, const ClusterMap& cm, const std::string& cluster,
                                                    const std::string& value,
                                                    const std::vector<std::pair<int, int>>& outcome) {
    int c = cm.cluster(cluster);
    auto& cl = cm.clusters[c];
    int label = cl.high_decl().value_index(value);
    if (label < 0) throw Error(ErrorKind::UnknownHighValue, "'" + value + "' is not a value of '" + cluster + "'");
    if (outcome.empty()) throw Error(ErrorKind::InvalidQuery, "empty outcome");
    OutcomeConstraint hit, miss;
    std::vector<int> radix;
    Tuple point;
    for (auto& [v, x] : outcome) {
        if (v < 0 || v >= scm.num_vars()) throw Error(ErrorKind::UnknownVariable, "outcome on an unknown variable");
        if (std::find(cl.members.begin(), cl.members.end(), v) != cl.members.end())
            throw Error(ErrorKind::InvalidQuery, "outcome overlaps the intervened cluster");
        hit.vars.push_back(v);
        radix.push_back(scm.endogenous()[v].size());
        point.push_back(x);
    }
    hit.allowed = {point};
    miss.vars = hit.vars;
    for (std::size_t i = 0; i < radix_product(radix); ++i) {
        auto t = index_tuple(i, radix);
        if (t != point) miss.allowed.push_back(t);
    }
    CounterfactualQuery all, none;
    for (auto& tup : cl.fibers[label]) {
        std::vector<HardAtom> hard;
        for (std::size_t k = 0; k < tup.size(); ++k) hard.push_back(HardAtom{cl.members[k], tup[k]});
        all.terms.push_back(Term{{hit}, hard, {}});
        none.terms.push_back(Term{{miss}, hard, {}});
    }
    Rational lo = prob_query(scm, all);
    Rational hi = miss.allowed.empty() ? Rational(1) : Rational(1 - prob_query(scm, none));
    return {lo, hi};
}

std::map<Tuple, Rational> canonical_response_profile(const DiscreteScm& scm, int v, const std::map<int, int>& shared) {
    if (v < 0 || v >= scm.num_vars()) throw Error(ErrorKind::UnknownVariable, "unknown variable");
    auto closure = exogenous_closure(scm, v);
    for (auto& [slot, x] : shared) {
        if (slot < 0 || slot >= scm.exo_count()) throw Error(ErrorKind::UnknownVariable, "unknown exogenous member");
        if (!closure.count(scm.exo_ref(slot).block))
            throw Error(ErrorKind::InvalidQuery, "'" + scm.exo_name(slot) + "' is not read by '" + scm.endogenous()[v].name + "'");
        if (x < 0 || x >= scm.exo_decl(slot).size()) throw Error(ErrorKind::DomainMismatch, "exogenous value out of range");
    }
    std::vector<int> blocks(closure.begin(), closure.end());
    std::uint64_t states = 1;
    for (int b : blocks) states = sat_mul(states, scm.blocks()[b].member_states());
    check_budget(states, "response profile");
    std::map<Tuple, Rational> out;
    Rational total = 0;
    std::vector<int> scratch(scm.num_vars(), 0);
    for_each_unit_over(scm, blocks, [&](const std::vector<int>& u, const Rational& w) {
        for (auto& [slot, x] : shared)
            if (u[slot] != x) return;
        out[response_of(scm, v, u, scratch)] += w;
        total += w;
    });
    if (total == 0) throw Error(ErrorKind::ZeroConditioning, "exogenous values have probability 0");
    for (auto& [r, p] : out) p /= total;
    return out;
}

// ---------------------------------------------------------------- sampling

ProjectedSampler::ProjectedSampler(const HighLevelScm& high, const std::string& cluster, const std::string& value,
                                   const NamedContext& context, const SigmaOptions& options) {
    int c = high.cm.cluster(cluster);
    int label = high.cm.clusters[c].high_decl().value_index(value);
    if (label < 0) throw Error(ErrorKind::UnknownHighValue, "'" + value + "' is not a value of '" + cluster + "'");
    auto dist = sigma_distribution(high.sigma, high.cm, high.scm, c, label, context, options);
    for (auto& [t, p] : dist) {
        support_.push_back(t);
        weights_.push_back(p);
    }
}

std::vector<Tuple> ProjectedSampler::sample(std::size_t n, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::vector<Rational> cum;
    Rational acc = 0;
    for (auto& w : weights_) cum.push_back(acc += w);
    mpz_class scale;
    mpz_ui_pow_ui(scale.get_mpz_t(), 2, 53);
    std::vector<Tuple> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        mpz_class x(static_cast<unsigned long>(rng() >> 11));
        std::size_t k = 0;
        // Inverse CDF: first k with x / 2^53 < cum[k].
        while (k + 1 < cum.size() && !(Rational(x, scale) < cum[k])) ++k;
        out.push_back(support_[k]);
    }
    return out;
}

Tuple projected_sample(const HighLevelScm& high, const std::string& cluster, const std::string& value,
                       const NamedContext& context, std::uint64_t seed) {
    return ProjectedSampler(high, cluster, value, context).sample(1, seed).front();
}

}  // namespace abstrakt
