#include "abstrakt/graphs.hpp"

#include "abstrakt/error.hpp"
#include "abstrakt/valuation.hpp"
#include "json_util.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

namespace abstrakt {

using detail::json;

Diagram latent_projection(const Diagram& g, const std::vector<int>& keep_in) {
    std::vector<int> keep = keep_in;
    std::sort(keep.begin(), keep.end());
    std::vector<int> idx(g.size(), -1);
    for (std::size_t k = 0; k < keep.size(); ++k) idx[keep[k]] = static_cast<int>(k);
    Diagram out;
    for (int v : keep) out.nodes.push_back(g.nodes[v]);

    // Hidden ancestors reachable through hidden-only directed paths, and kept targets.
    std::vector<std::vector<int>> children(g.size());
    for (auto& [a, b] : g.directed) children[a].push_back(b);
    auto hidden_reach = [&](int from) {
        std::set<int> kept_targets;
        std::vector<int> stack{from};
        std::set<int> seen{from};
        while (!stack.empty()) {
            int v = stack.back();
            stack.pop_back();
            for (int w : children[v]) {
                if (idx[w] >= 0) {
                    kept_targets.insert(w);
                } else if (seen.insert(w).second) {
                    stack.push_back(w);
                }
            }
        }
        return kept_targets;
    };
    // For each node, the kept nodes it reaches via hidden intermediates (itself if kept).
    std::vector<std::set<int>> reach(g.size());
    for (int v = 0; v < g.size(); ++v) {
        if (idx[v] >= 0) {
            reach[v] = {v};
            for (int w : hidden_reach(v)) out.add_directed(idx[v], idx[w]);
        } else {
            reach[v] = hidden_reach(v);
        }
    }
    // Common hidden ancestor.
    for (int v = 0; v < g.size(); ++v) {
        if (idx[v] >= 0) continue;
        std::vector<int> r(reach[v].begin(), reach[v].end());
        for (std::size_t a = 0; a < r.size(); ++a)
            for (std::size_t b = a + 1; b < r.size(); ++b) out.add_bidirected(idx[r[a]], idx[r[b]]);
    }
    // Bidirected edge between the hidden ancestries of two kept nodes.
    for (auto& [a, b] : g.bidirected)
        for (int x : reach[a])
            for (int y : reach[b]) out.add_bidirected(idx[x], idx[y]);
    return out;
}

ClusterDiagram build_cdag(const Diagram& diagram, const ClusterMap& cm) {
    if (diagram.size() != static_cast<int>(cm.cluster_of.size()))
        throw Error(ErrorKind::InadmissibleClustering, "diagram and clustering disagree on the variables");
    auto keep = cm.clustered_vars();
    Diagram g = cm.covers_all() ? diagram : latent_projection(diagram, keep);
    ClusterDiagram out;
    for (auto& c : cm.clusters) out.nodes.push_back(c.name);
    auto cluster_of = [&](int node) { return cm.cluster_of[cm.covers_all() ? node : keep[node]]; };
    for (auto& [a, b] : g.directed) {
        int ca = cluster_of(a), cb = cluster_of(b);
        if (ca != cb) out.add_directed(ca, cb);
    }
    for (auto& [a, b] : g.bidirected) {
        int ca = cluster_of(a), cb = cluster_of(b);
        if (ca != cb) out.add_bidirected(ca, cb);
    }
    try {
        topological_order(out);
    } catch (const Error&) {
        throw Error(ErrorKind::InadmissibleClustering, "cluster graph has a directed cycle");
    }
    return out;
}

namespace {

bool apply_rules(ClusterDiagram& g, int x) {
    bool changed = false;
    auto pa = g.parents(x);
    auto ch = g.children(x);
    auto nb = g.neighbors(x);
    for (int z : pa)
        for (int y : ch)
            if (z != y && g.directed.emplace(z, y).second) changed = true;
    auto add_bi = [&](int a, int b) {
        if (a == b || g.has_bidirected(a, b)) return;
        g.add_bidirected(a, b);
        changed = true;
    };
    for (int z : nb)
        for (int y : ch) {
            add_bi(z, y);
            add_bi(x, y);
        }
    for (int z : ch)
        for (int y : ch) add_bi(z, y);
    return changed;
}

std::vector<int> sorted_unique(std::vector<int> v, int n) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    for (int x : v)
        if (x < 0 || x >= n) throw Error(ErrorKind::UnknownVariable, "violator is not a node");
    return v;
}

}  // namespace

ClusterDiagram projection_fixpoint(const ClusterDiagram& in, const std::vector<int>& violators) {
    ClusterDiagram g = in;
    g.violators = sorted_unique(violators, g.size());
    g.projected = true;
    bool changed = true;
    while (changed) {
        changed = false;
        for (int x : g.violators) changed = apply_rules(g, x) || changed;
    }
    return g;
}

ClusterDiagram projection_one_pass(const ClusterDiagram& in, const std::vector<int>& violators) {
    ClusterDiagram g = in;
    g.violators = sorted_unique(violators, g.size());
    g.projected = true;
    auto order = topological_order(in);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if (std::binary_search(g.violators.begin(), g.violators.end(), *it)) apply_rules(g, *it);
    return g;
}

ClusterDiagram build_projected_cdag(const ClusterDiagram& cdag, const std::vector<int>& violators) {
    auto fix = projection_fixpoint(cdag, violators);
    auto one = projection_one_pass(cdag, violators);
    if (fix.directed != one.directed || fix.bidirected != one.bidirected)
        throw Error(ErrorKind::FixpointMismatch, "single-pass and fixpoint rewriting disagree");
    return fix;
}

bool d_separated(const Diagram& g, const std::vector<int>& x, const std::vector<int>& y, const std::vector<int>& z) {
    int n = g.size();
    std::vector<int> role(n, 0);
    auto mark = [&](const std::vector<int>& s, int r) {
        for (int v : s) {
            if (v < 0 || v >= n) throw Error(ErrorKind::UnknownVariable, "separation query on an unknown node");
            if (role[v] != 0 && role[v] != r) throw Error(ErrorKind::InvalidQuery, "separation sets must be disjoint");
            role[v] = r;
        }
    };
    mark(x, 1);
    mark(y, 2);
    mark(z, 3);
    // Latent node per bidirected edge, then the moral graph of the ancestral set.
    int m = n + static_cast<int>(g.bidirected.size());
    std::vector<std::vector<int>> parents(m);
    for (auto& [a, b] : g.directed) parents[b].push_back(a);
    int k = n;
    for (auto& [a, b] : g.bidirected) {
        parents[a].push_back(k);
        parents[b].push_back(k);
        ++k;
    }
    std::vector<bool> anc(m, false);
    std::vector<int> stack;
    for (int v = 0; v < n; ++v)
        if (role[v]) {
            anc[v] = true;
            stack.push_back(v);
        }
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        for (int p : parents[v])
            if (!anc[p]) {
                anc[p] = true;
                stack.push_back(p);
            }
    }
    std::vector<std::set<int>> adj(m);
    for (int v = 0; v < m; ++v) {
        if (!anc[v]) continue;
        auto& ps = parents[v];
        for (int p : ps) {
            adj[v].insert(p);
            adj[p].insert(v);
        }
        for (std::size_t i = 0; i < ps.size(); ++i)
            for (std::size_t j = i + 1; j < ps.size(); ++j) {
                adj[ps[i]].insert(ps[j]);
                adj[ps[j]].insert(ps[i]);
            }
    }
    std::vector<bool> seen(m, false);
    for (int v : x) {
        seen[v] = true;
        stack.push_back(v);
    }
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        if (v < n && role[v] == 2) return false;
        for (int w : adj[v])
            if (!seen[w] && !(w < n && role[w] == 3)) {
                seen[w] = true;
                stack.push_back(w);
            }
    }
    return true;
}

std::vector<std::vector<int>> c_components(const Diagram& g, const std::vector<int>& subset) {
    std::vector<bool> in(g.size(), false);
    for (int v : subset) {
        if (v < 0 || v >= g.size()) throw Error(ErrorKind::UnknownVariable, "c-component query on an unknown node");
        in[v] = true;
    }
    std::vector<int> comp(g.size(), -1);
    std::vector<std::vector<int>> out;
    for (int s = 0; s < g.size(); ++s) {
        if (!in[s] || comp[s] >= 0) continue;
        std::vector<int> members, stack{s};
        comp[s] = static_cast<int>(out.size());
        while (!stack.empty()) {
            int v = stack.back();
            stack.pop_back();
            members.push_back(v);
            for (int w : g.neighbors(v))
                if (in[w] && comp[w] < 0) {
                    comp[w] = comp[s];
                    stack.push_back(w);
                }
        }
        std::sort(members.begin(), members.end());
        out.push_back(std::move(members));
    }
    return out;
}

// ---------------------------------------------------------------- CTF-BN constraints

namespace {

struct CfTerm {
    std::vector<HardAtom> hard;  // sorted
    std::vector<std::pair<int, int>> outcome;
};

class CfOracle {
public:
    explicit CfOracle(const DiscreteScm& scm) : scm_(scm) {}

    Rational prob(const std::vector<CfTerm>& terms) {
        std::vector<std::vector<HardAtom>> worlds;
        for (auto& t : terms)
            if (std::find(worlds.begin(), worlds.end(), t.hard) == worlds.end()) worlds.push_back(t.hard);
        std::sort(worlds.begin(), worlds.end());
        auto it = cache_.find(worlds);
        if (it == cache_.end()) {
            std::vector<World> ws;
            for (auto& h : worlds) ws.push_back(World{h, {}});
            it = cache_.emplace(worlds, world_joint(scm_, ws)).first;
        }
        std::vector<int> where;
        for (auto& t : terms) where.push_back(static_cast<int>(std::find(worlds.begin(), worlds.end(), t.hard) - worlds.begin()));
        Rational p = 0;
        for (auto& [vals, w] : it->second) {
            bool ok = true;
            for (std::size_t k = 0; k < terms.size() && ok; ++k)
                for (auto& [v, x] : terms[k].outcome)
                    if (vals[where[k]][v] != x) {
                        ok = false;
                        break;
                    }
            if (ok) p += w;
        }
        return p;
    }

private:
    const DiscreteScm& scm_;
    std::map<std::vector<std::vector<HardAtom>>, std::map<std::vector<Tuple>, Rational>> cache_;
};

std::string term_text(const DiscreteScm& scm, const CfTerm& t) {
    std::string s;
    auto& d = scm.endogenous();
    std::string iv;
    for (std::size_t k = 0; k < t.hard.size(); ++k)
        iv += (k ? ";" : "") + d[t.hard[k].var].name + "=" + d[t.hard[k].var].domain[t.hard[k].value];
    for (std::size_t k = 0; k < t.outcome.size(); ++k) {
        auto [v, x] = t.outcome[k];
        s += (k ? ", " : "") + d[v].name + (iv.empty() ? "" : "[" + iv + "]") + "=" + d[v].domain[x];
    }
    return s;
}

std::string query_text(const DiscreteScm& scm, const std::vector<CfTerm>& terms) {
    std::string s = "P(";
    for (std::size_t k = 0; k < terms.size(); ++k) s += (k ? ", " : "") + term_text(scm, terms[k]);
    return s + ")";
}

std::vector<HardAtom> atoms(const std::vector<int>& vars, const Tuple& vals) {
    std::vector<HardAtom> out;
    for (std::size_t k = 0; k < vars.size(); ++k) out.push_back(HardAtom{vars[k], vals[k]});
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<int> radix_of(const DiscreteScm& scm, const std::vector<int>& vars) {
    std::vector<int> r;
    for (int v : vars) r.push_back(scm.endogenous()[v].size());
    return r;
}

// All subsets of `pool` (as sorted vectors), including the empty one.
std::vector<std::vector<int>> subsets(const std::vector<int>& pool) {
    std::vector<std::vector<int>> out;
    for (std::uint64_t mask = 0; mask < (1ull << pool.size()); ++mask) {
        std::vector<int> s;
        for (std::size_t k = 0; k < pool.size(); ++k)
            if (mask & (1ull << k)) s.push_back(pool[k]);
        out.push_back(s);
    }
    return out;
}

// Counterfactual variables W_t (term without its value) of the general form.
struct CfVar {
    int var;
    std::vector<HardAtom> hard;
};

std::vector<CfVar> general_vars(const DiscreteScm& scm) {
    std::vector<CfVar> out;
    int n = scm.num_vars();
    for (int w = 0; w < n; ++w) {
        std::vector<int> others;
        for (int v = 0; v < n; ++v)
            if (v != w) others.push_back(v);
        for (auto& t : subsets(others)) {
            auto radix = radix_of(scm, t);
            for (std::size_t i = 0; i < radix_product(radix); ++i) out.push_back(CfVar{w, atoms(t, index_tuple(i, radix))});
        }
    }
    return out;
}

// Calls visit with every list of at most `k` distinct counterfactual variables, each with a value.
void for_each_cf_set(const DiscreteScm& scm, const std::vector<CfVar>& pool, int k,
                     const std::function<void(const std::vector<CfTerm>&)>& visit) {
    std::vector<CfTerm> cur;
    std::function<void(std::size_t, int)> rec = [&](std::size_t start, int left) {
        visit(cur);
        if (left == 0) return;
        for (std::size_t i = start; i < pool.size(); ++i) {
            auto& cv = pool[i];
            for (int x = 0; x < scm.endogenous()[cv.var].size(); ++x) {
                cur.push_back(CfTerm{cv.hard, {{cv.var, x}}});
                rec(i + 1, left - 1);
                cur.pop_back();
            }
        }
    };
    rec(0, k);
}

}  // namespace

CtfbnReport ctfbn_check(const Diagram& g_in, const DiscreteScm& scm, int max_terms, std::size_t keep) {
    int n = scm.num_vars();
    if (g_in.size() != n) throw Error(ErrorKind::UnknownVariable, "graph and model have different variables");
    // Graph nodes re-indexed to model variables.
    std::vector<int> to_var(n);
    for (int i = 0; i < n; ++i) to_var[i] = scm.variable(g_in.nodes[i]);
    Diagram g;
    g.nodes.resize(n);
    for (int i = 0; i < n; ++i) g.nodes[to_var[i]] = g_in.nodes[i];
    for (auto& [a, b] : g_in.directed) g.add_directed(to_var[a], to_var[b]);
    for (auto& [a, b] : g_in.bidirected) g.add_bidirected(to_var[a], to_var[b]);

    CtfbnReport report;
    CfOracle oracle(scm);
    std::map<std::string, std::size_t> kept;
    auto check = [&](const char* kind, const std::vector<CfTerm>& lhs, const std::vector<std::vector<CfTerm>>& rhs_factors,
                     const std::string& rhs_text) {
        ++report.checked;
        Rational l = oracle.prob(lhs), r = 1;
        for (auto& f : rhs_factors) r *= oracle.prob(f);
        if (l == r) return;
        ++report.violation_count;
        if (kept[kind]++ < keep)
            report.violations.push_back(
                CtfbnViolation{kind, query_text(scm, lhs) + " = " + to_string(l) + " != " + rhs_text + " = " + to_string(r), l, r});
    };

    // Independence: terms W_{pa_w}; factorization over c-components.
    std::vector<CfVar> pa_vars;
    for (int w = 0; w < n; ++w) {
        auto pa = g.parents(w);
        auto radix = radix_of(scm, pa);
        for (std::size_t i = 0; i < radix_product(radix); ++i) pa_vars.push_back(CfVar{w, atoms(pa, index_tuple(i, radix))});
    }
    if (max_terms >= 2)
        for_each_cf_set(scm, pa_vars, max_terms, [&](const std::vector<CfTerm>& terms) {
            if (terms.size() < 2) return;
            std::vector<int> vars;
            for (auto& t : terms) vars.push_back(t.outcome[0].first);
            std::sort(vars.begin(), vars.end());
            vars.erase(std::unique(vars.begin(), vars.end()), vars.end());
            auto comps = c_components(g, vars);
            if (comps.size() < 2) return;
            std::vector<std::vector<CfTerm>> factors;
            std::string text;
            for (auto& comp : comps) {
                std::vector<CfTerm> f;
                for (auto& t : terms)
                    if (std::binary_search(comp.begin(), comp.end(), t.outcome[0].first)) f.push_back(t);
                text += (text.empty() ? "" : " * ") + query_text(scm, f);
                factors.push_back(std::move(f));
            }
            check("independence", terms, factors, text);
        });

    auto general = general_vars(scm);
    // Exclusion: P(Y_{pa,z}, W*) = P(Y_{pa}, W*).
    if (max_terms >= 1)
        for (int y = 0; y < n; ++y) {
            auto pa = g.parents(y);
            std::vector<int> rest;
            for (int v = 0; v < n; ++v)
                if (v != y && !std::binary_search(pa.begin(), pa.end(), v)) rest.push_back(v);
            auto pa_radix = radix_of(scm, pa);
            for (auto& zs : subsets(rest)) {
                if (zs.empty()) continue;
                auto z_radix = radix_of(scm, zs);
                for (std::size_t pi = 0; pi < radix_product(pa_radix); ++pi)
                    for (std::size_t zi = 0; zi < radix_product(z_radix); ++zi)
                        for (int yv = 0; yv < scm.endogenous()[y].size(); ++yv) {
                            auto pa_t = index_tuple(pi, pa_radix);
                            auto z_t = index_tuple(zi, z_radix);
                            std::vector<int> both = pa;
                            both.insert(both.end(), zs.begin(), zs.end());
                            Tuple both_t = pa_t;
                            both_t.insert(both_t.end(), z_t.begin(), z_t.end());
                            CfTerm with_z{atoms(both, both_t), {{y, yv}}};
                            CfTerm without{atoms(pa, pa_t), {{y, yv}}};
                            for_each_cf_set(scm, general, max_terms - 1, [&](const std::vector<CfTerm>& ws) {
                                std::vector<CfTerm> lhs{with_z}, rhs{without};
                                lhs.insert(lhs.end(), ws.begin(), ws.end());
                                rhs.insert(rhs.end(), ws.begin(), ws.end());
                                check("exclusion", lhs, {rhs}, query_text(scm, rhs));
                            });
                        }
            }
        }

    // Consistency: P(Y_z=y, X_z=x, W*) = P(Y_{z,x}=y, X_z=x, W*).
    if (max_terms >= 2)
        for (int y = 0; y < n; ++y) {
            auto pa = g.parents(y);
            for (auto& xs : subsets(pa)) {
                if (xs.empty()) continue;
                std::vector<int> rest;
                for (int v = 0; v < n; ++v)
                    if (v != y && !std::binary_search(xs.begin(), xs.end(), v)) rest.push_back(v);
                auto x_radix = radix_of(scm, xs);
                for (auto& zs : subsets(rest)) {
                    auto z_radix = radix_of(scm, zs);
                    for (std::size_t xi = 0; xi < radix_product(x_radix); ++xi)
                        for (std::size_t zi = 0; zi < radix_product(z_radix); ++zi)
                            for (int yv = 0; yv < scm.endogenous()[y].size(); ++yv) {
                                auto x_t = index_tuple(xi, x_radix);
                                auto z_t = index_tuple(zi, z_radix);
                                auto z_atoms = atoms(zs, z_t);
                                std::vector<int> zx = zs;
                                zx.insert(zx.end(), xs.begin(), xs.end());
                                Tuple zx_t = z_t;
                                zx_t.insert(zx_t.end(), x_t.begin(), x_t.end());
                                CfTerm x_term{z_atoms, {}};
                                for (std::size_t k = 0; k < xs.size(); ++k) x_term.outcome.emplace_back(xs[k], x_t[k]);
                                CfTerm y_z{z_atoms, {{y, yv}}};
                                CfTerm y_zx{atoms(zx, zx_t), {{y, yv}}};
                                for_each_cf_set(scm, general, max_terms - 2, [&](const std::vector<CfTerm>& ws) {
                                    std::vector<CfTerm> lhs{y_z, x_term}, rhs{y_zx, x_term};
                                    lhs.insert(lhs.end(), ws.begin(), ws.end());
                                    rhs.insert(rhs.end(), ws.begin(), ws.end());
                                    check("consistency", lhs, {rhs}, query_text(scm, rhs));
                                });
                            }
                }
            }
        }
    return report;
}

// ---------------------------------------------------------------- file formats

std::string graph_to_json(const Diagram& g) {
    json doc;
    doc["nodes"] = g.nodes;
    doc["directed"] = json::array();
    for (auto& [a, b] : g.directed) doc["directed"].push_back({g.nodes[a], g.nodes[b]});
    doc["bidirected"] = json::array();
    for (auto& [a, b] : g.bidirected) doc["bidirected"].push_back({g.nodes[a], g.nodes[b]});
    return doc.dump(2) + "\n";
}

std::string graph_to_json(const ClusterDiagram& g) {
    auto doc = detail::parse_json(graph_to_json(static_cast<const Diagram&>(g)));
    doc["projected"] = g.projected;
    doc["violators"] = json::array();
    for (int v : g.violators) doc["violators"].push_back(g.nodes[v]);
    return doc.dump(2) + "\n";
}

ClusterDiagram graph_from_json(const std::string& text) {
    auto doc = detail::parse_json(text);
    ClusterDiagram g;
    g.nodes = detail::value_list(detail::need(doc, "nodes", "graph"));
    std::set<std::string> unique(g.nodes.begin(), g.nodes.end());
    if (unique.size() != g.nodes.size()) throw Error(ErrorKind::ParseError, "graph repeats a node");
    auto pair_of = [&](const json& e) {
        auto names = detail::value_list(e);
        if (names.size() != 2) throw Error(ErrorKind::ParseError, "edges must have two endpoints");
        int a = g.node(names[0]), b = g.node(names[1]);
        if (a == b) throw Error(ErrorKind::ParseError, "self-loop on '" + names[0] + "'");
        return std::make_pair(a, b);
    };
    if (doc.contains("directed"))
        for (auto& e : doc.at("directed")) {
            auto [a, b] = pair_of(e);
            g.add_directed(a, b);
        }
    if (doc.contains("bidirected"))
        for (auto& e : doc.at("bidirected")) {
            auto [a, b] = pair_of(e);
            g.add_bidirected(a, b);
        }
    topological_order(g);
    if (doc.contains("projected")) g.projected = doc.at("projected").get<bool>();
    if (doc.contains("violators"))
        for (auto& v : doc.at("violators")) g.violators.push_back(g.node(detail::value_text(v)));
    std::sort(g.violators.begin(), g.violators.end());
    return g;
}

std::string graph_to_dot(const ClusterDiagram& g) {
    std::ostringstream out;
    out << "digraph G {\n";
    for (int v = 0; v < g.size(); ++v) {
        out << "  \"" << g.nodes[v] << "\"";
        if (std::binary_search(g.violators.begin(), g.violators.end(), v)) out << " [color=red]";
        out << ";\n";
    }
    for (auto& [a, b] : g.directed) out << "  \"" << g.nodes[a] << "\" -> \"" << g.nodes[b] << "\";\n";
    for (auto& [a, b] : g.bidirected)
        out << "  \"" << g.nodes[a] << "\" -> \"" << g.nodes[b] << "\" [dir=both, style=dashed, constraint=false];\n";
    out << "}\n";
    return out.str();
}

}  // namespace abstrakt
