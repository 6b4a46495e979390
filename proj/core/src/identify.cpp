#include "abstrakt/identify.hpp"

#include "abstrakt/error.hpp"
#include "json_util.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace abstrakt {

using detail::json;

// ---------------------------------------------------------------- tree

Estimand Estimand::prob(std::vector<Slot> vars, std::vector<Slot> given) {
    Estimand e;
    e.kind = Kind::Prob;
    e.vars = std::move(vars);
    e.given = std::move(given);
    return e;
}

Estimand Estimand::sum(std::string var, Estimand body) {
    Estimand e;
    e.kind = Kind::Sum;
    e.bound = std::move(var);
    e.children.push_back(std::move(body));
    return e;
}

Estimand Estimand::product(std::vector<Estimand> factors) {
    Estimand e;
    e.kind = Kind::Product;
    e.children = std::move(factors);
    return e;
}

Estimand Estimand::ratio(Estimand num, Estimand den) {
    Estimand e;
    e.kind = Kind::Ratio;
    e.children.push_back(std::move(num));
    e.children.push_back(std::move(den));
    return e;
}

bool Estimand::references(const std::string& var) const {
    switch (kind) {
        case Kind::Prob:
            for (auto* list : {&vars, &given})
                for (auto& s : *list)
                    if (s.var == var && !s.value) return true;
            return false;
        case Kind::Sum:
            return bound != var && children[0].references(var);
        default:
            for (auto& c : children)
                if (c.references(var)) return true;
            return false;
    }
}

namespace {

std::string symbol(const std::string& var) {
    std::string s = var;
    for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return s;
}

std::string slots_text(const std::vector<Slot>& slots) {
    std::string s;
    for (std::size_t k = 0; k < slots.size(); ++k)
        s += (k ? "," : "") + slots[k].var + "=" + (slots[k].value ? *slots[k].value : symbol(slots[k].var));
    return s;
}

json slots_json(const std::vector<Slot>& slots) {
    json out = json::array();
    for (auto& s : slots) {
        json j;
        j["var"] = s.var;
        if (s.value) j["value"] = *s.value;
        out.push_back(j);
    }
    return out;
}

json tree_json(const Estimand& e) {
    json j;
    switch (e.kind) {
        case Estimand::Kind::Prob:
            j["op"] = "prob";
            j["vars"] = slots_json(e.vars);
            j["given"] = slots_json(e.given);
            break;
        case Estimand::Kind::Sum:
            j["op"] = "sum";
            j["over"] = e.bound;
            j["body"] = tree_json(e.children[0]);
            break;
        case Estimand::Kind::Product:
            j["op"] = "product";
            j["factors"] = json::array();
            for (auto& c : e.children) j["factors"].push_back(tree_json(c));
            break;
        case Estimand::Kind::Ratio:
            j["op"] = "ratio";
            j["num"] = tree_json(e.children[0]);
            j["den"] = tree_json(e.children[1]);
            break;
    }
    return j;
}

std::vector<Slot> slots_from(const json& j) {
    std::vector<Slot> out;
    if (!j.is_array()) throw Error(ErrorKind::ParseError, "estimand slots must be a list");
    for (auto& s : j) {
        Slot slot{detail::value_text(detail::need(s, "var", "estimand slot")), std::nullopt};
        if (s.contains("value")) slot.value = detail::value_text(s.at("value"));
        out.push_back(slot);
    }
    return out;
}

Estimand tree_from(const json& j) {
    auto op = detail::value_text(detail::need(j, "op", "estimand"));
    if (op == "prob")
        return Estimand::prob(slots_from(detail::need(j, "vars", "prob")),
                              j.contains("given") ? slots_from(j.at("given")) : std::vector<Slot>{});
    if (op == "sum")
        return Estimand::sum(detail::value_text(detail::need(j, "over", "sum")), tree_from(detail::need(j, "body", "sum")));
    if (op == "product") {
        std::vector<Estimand> f;
        for (auto& c : detail::need(j, "factors", "product")) f.push_back(tree_from(c));
        return Estimand::product(std::move(f));
    }
    if (op == "ratio") return Estimand::ratio(tree_from(detail::need(j, "num", "ratio")), tree_from(detail::need(j, "den", "ratio")));
    throw Error(ErrorKind::ParseError, "unknown estimand operator '" + op + "'");
}

}  // namespace

std::string estimand_text(const Estimand& e) {
    switch (e.kind) {
        case Estimand::Kind::Prob:
            if (e.vars.empty()) return "1";
            return "P(" + slots_text(e.vars) + (e.given.empty() ? "" : "|" + slots_text(e.given)) + ")";
        case Estimand::Kind::Sum:
            return "sum_" + symbol(e.bound) + "[ " + estimand_text(e.children[0]) + " ]";
        case Estimand::Kind::Product: {
            if (e.children.empty()) return "1";
            std::string s;
            for (std::size_t k = 0; k < e.children.size(); ++k) {
                auto& c = e.children[k];
                auto t = estimand_text(c);
                if (c.kind == Estimand::Kind::Ratio) t = "( " + t + " )";
                s += (k ? " * " : "") + t;
            }
            return s;
        }
        case Estimand::Kind::Ratio:
            return "( " + estimand_text(e.children[0]) + " ) / ( " + estimand_text(e.children[1]) + " )";
    }
    return "";
}

std::string estimand_json(const Estimand& e) { return tree_json(e).dump(); }

Estimand estimand_from_json(const std::string& text) { return tree_from(detail::parse_json(text)); }

Estimand substitute(const Estimand& e, const std::map<std::string, std::string>& values) {
    Estimand out = e;
    switch (e.kind) {
        case Estimand::Kind::Prob:
            for (auto* list : {&out.vars, &out.given})
                for (auto& s : *list)
                    if (!s.value) {
                        auto it = values.find(s.var);
                        if (it != values.end()) s.value = it->second;
                    }
            return out;
        case Estimand::Kind::Sum: {
            auto inner = values;
            inner.erase(e.bound);
            out.children[0] = substitute(e.children[0], inner);
            return out;
        }
        default:
            for (auto& c : out.children) c = substitute(c, values);
            return out;
    }
}

namespace {

bool is_one(const Estimand& e) {
    return (e.kind == Estimand::Kind::Prob && e.vars.empty()) ||
           (e.kind == Estimand::Kind::Product && e.children.empty());
}

// Sum over `var` of an already simplified body.
Estimand sum_over(const std::string& var, Estimand body) {
    if (body.kind == Estimand::Kind::Prob) {
        auto it = std::find_if(body.vars.begin(), body.vars.end(), [&](const Slot& s) { return s.var == var && !s.value; });
        bool in_given = std::any_of(body.given.begin(), body.given.end(), [&](const Slot& s) { return s.var == var && !s.value; });
        if (it != body.vars.end() && !in_given) {
            body.vars.erase(it);
            return body;
        }
    }
    if (body.kind == Estimand::Kind::Product) {
        int hits = 0, at = -1;
        for (std::size_t k = 0; k < body.children.size(); ++k)
            if (body.children[k].references(var)) {
                ++hits;
                at = static_cast<int>(k);
            }
        if (hits == 1) {
            auto pushed = sum_over(var, body.children[at]);
            if (pushed.kind != Estimand::Kind::Sum || pushed.bound != var) {
                body.children[at] = pushed;
                std::vector<Estimand> kept;
                for (auto& c : body.children)
                    if (!is_one(c)) kept.push_back(c);
                if (kept.size() == 1) return kept[0];
                body.children = kept;
                return body;
            }
        }
    }
    return Estimand::sum(var, std::move(body));
}

}  // namespace

Estimand simplify(const Estimand& e) {
    switch (e.kind) {
        case Estimand::Kind::Prob:
            return e;
        case Estimand::Kind::Sum:
            return sum_over(e.bound, simplify(e.children[0]));
        case Estimand::Kind::Product: {
            std::vector<Estimand> flat;
            for (auto& c : e.children) {
                auto s = simplify(c);
                if (s.kind == Estimand::Kind::Product)
                    flat.insert(flat.end(), s.children.begin(), s.children.end());
                else if (!is_one(s))
                    flat.push_back(std::move(s));
            }
            if (flat.size() == 1) return flat[0];
            return Estimand::product(std::move(flat));
        }
        case Estimand::Kind::Ratio: {
            auto num = simplify(e.children[0]);
            auto den = simplify(e.children[1]);
            if (is_one(den)) return num;
            return Estimand::ratio(std::move(num), std::move(den));
        }
    }
    return e;
}

// ---------------------------------------------------------------- evaluation

namespace {

class Evaluator {
public:
    explicit Evaluator(const DistributionTable& obs) : obs_(obs) {}

    Rational eval(const Estimand& e) {
        switch (e.kind) {
            case Estimand::Kind::Prob:
                return lookup(e);
            case Estimand::Kind::Sum: {
                int v = obs_.index(e.bound);
                auto saved = env_.find(e.bound) == env_.end() ? std::optional<int>{} : std::optional<int>{env_[e.bound]};
                Rational total = 0;
                for (int x = 0; x < obs_.variables[v].size(); ++x) {
                    env_[e.bound] = x;
                    total += eval(e.children[0]);
                }
                if (saved)
                    env_[e.bound] = *saved;
                else
                    env_.erase(e.bound);
                return total;
            }
            case Estimand::Kind::Product: {
                // A factor with an undefined conditional does not matter when another is zero.
                Rational p = 1;
                std::optional<Error> deferred;
                for (auto& c : e.children) {
                    try {
                        Rational f = eval(c);
                        if (f == 0) return 0;
                        p *= f;
                    } catch (const Error& err) {
                        if (err.kind() != ErrorKind::ZeroConditioning) throw;
                        if (!deferred) deferred = err;
                    }
                }
                if (deferred) throw *deferred;
                return p;
            }
            case Estimand::Kind::Ratio: {
                Rational den = eval(e.children[1]);
                if (den == 0) throw Error(ErrorKind::ZeroConditioning, "estimand divides by zero");
                return eval(e.children[0]) / den;
            }
        }
        return 0;
    }

private:
    std::vector<std::pair<int, int>> resolve(const std::vector<Slot>& slots) {
        std::vector<std::pair<int, int>> out;
        for (auto& s : slots) {
            int v = obs_.index(s.var);
            int x;
            if (s.value) {
                auto& dom = obs_.variables[v].domain;
                auto it = std::find(dom.begin(), dom.end(), *s.value);
                if (it == dom.end())
                    throw Error(ErrorKind::DomainMismatch, "'" + *s.value + "' is not a value of " + s.var);
                x = static_cast<int>(it - dom.begin());
            } else {
                auto it = env_.find(s.var);
                if (it == env_.end()) throw Error(ErrorKind::UnboundVariable, "estimand leaves " + s.var + " unbound");
                x = it->second;
            }
            out.emplace_back(v, x);
        }
        return out;
    }

    Rational mass(const std::vector<std::pair<int, int>>& fixed) {
        Rational m = 0;
        for (auto& [t, p] : obs_.entries) {
            bool ok = true;
            for (auto& [v, x] : fixed)
                if (t[v] != x) {
                    ok = false;
                    break;
                }
            if (ok) m += p;
        }
        return m;
    }

    Rational lookup(const Estimand& e) {
        auto vars = resolve(e.vars);
        auto given = resolve(e.given);
        if (vars.empty()) return 1;
        auto both = given;
        for (auto& [v, x] : vars) {
            for (auto& [w, y] : both)
                if (w == v && y != x) return 0;
            both.emplace_back(v, x);
        }
        Rational den = given.empty() ? obs_.total() : mass(given);
        if (den == 0) throw Error(ErrorKind::ZeroConditioning, "lookup conditions on an event of probability zero");
        return mass(both) / den;
    }

    const DistributionTable& obs_;
    std::map<std::string, int> env_;
};

}  // namespace

Rational evaluate_estimand(const Estimand& e, const DistributionTable& obs) { return Evaluator(obs).eval(e); }

// ---------------------------------------------------------------- queries

EffectQuery effect_query(const CounterfactualQuery& q, const std::vector<VariableDecl>& decls) {
    if (!q.families.empty() && !q.projected)
        throw Error(ErrorKind::UnsupportedQuery, "soft interventions cannot be identified; translate the query first");
    if (q.terms.empty()) throw Error(ErrorKind::UnsupportedQuery, "empty query");
    auto name = [&](int v) { return decls.at(v).name; };
    auto value = [&](int v, int x) { return decls.at(v).domain.at(x); };
    EffectQuery out;
    std::optional<std::vector<HardAtom>> regime;
    std::set<int> seen;
    auto add_outcomes = [&](const Term& t, std::vector<std::pair<std::string, std::string>>& dst) {
        if (!t.soft.empty()) throw Error(ErrorKind::UnsupportedQuery, "soft interventions cannot be identified");
        for (auto& oc : t.outcomes) {
            if (oc.allowed.size() != 1) throw Error(ErrorKind::UnsupportedQuery, "identification needs point outcomes");
            for (std::size_t k = 0; k < oc.vars.size(); ++k) {
                if (!seen.insert(oc.vars[k]).second)
                    throw Error(ErrorKind::UnsupportedQuery, name(oc.vars[k]) + " appears twice in the query");
                dst.emplace_back(name(oc.vars[k]), value(oc.vars[k], oc.allowed[0][k]));
            }
        }
    };
    for (auto& t : q.terms) {
        auto hard = t.hard;
        std::sort(hard.begin(), hard.end());
        if (regime && *regime != hard)
            throw Error(ErrorKind::UnsupportedQuery, "terms under different interventions form a counterfactual query");
        regime = hard;
        add_outcomes(t, out.outcome);
    }
    for (auto& h : *regime) out.intervention.emplace_back(name(h.var), value(h.var, h.value));
    for (auto& t : q.conditioning) {
        auto hard = t.hard;
        std::sort(hard.begin(), hard.end());
        // Unintervened conditioning is accepted here; identify_effect checks it is unaffected.
        if (!hard.empty() && hard != *regime)
            throw Error(ErrorKind::UnsupportedQuery, "conditioning under another intervention is counterfactual");
        if (hard.empty() && !regime->empty()) out.conditioning_natural = true;
        add_outcomes(t, out.conditioning);
    }
    return out;
}

std::string effect_query_text(const EffectQuery& q) {
    auto list = [](const std::vector<std::pair<std::string, std::string>>& xs) {
        std::string s;
        for (std::size_t k = 0; k < xs.size(); ++k) s += (k ? "," : "") + xs[k].first + "=" + xs[k].second;
        return s;
    };
    std::string s = "P(" + list(q.outcome);
    if (!q.intervention.empty()) s += " | do(" + list(q.intervention) + ")";
    if (!q.conditioning.empty()) s += (q.intervention.empty() ? " | " : ", ") + list(q.conditioning);
    return s + ")";
}

// ---------------------------------------------------------------- identification

namespace {

using Set = std::vector<int>;  // sorted node indices

Set set_minus(const Set& a, const Set& b) {
    Set out;
    std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}
Set set_and(const Set& a, const Set& b) {
    Set out;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}
Set set_or(const Set& a, const Set& b) {
    Set out;
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}
bool contains(const Set& s, int v) { return std::binary_search(s.begin(), s.end(), v); }

struct Hedge {
    Set f, f_prime;
};

// Distribution over `vars` (the current vertex set): the observational joint or an expression.
struct Dist {
    bool observational = true;
    Set vars;
    Estimand expr;
};

class Identifier {
public:
    explicit Identifier(const Diagram& g) : g_(g), order_(topological_order(g)) {
        rank_.resize(g.size());
        for (std::size_t k = 0; k < order_.size(); ++k) rank_[order_[k]] = static_cast<int>(k);
    }

    Estimand run(const Set& y, const Set& x) {
        Set all(g_.size());
        for (int v = 0; v < g_.size(); ++v) all[v] = v;
        return id(y, x, Dist{true, all, {}}, all);
    }

    Set ancestors(const Set& y, const Set& within, const Set& cut = {}) const {
        Set seen = y;
        std::vector<int> stack = y;
        while (!stack.empty()) {
            int v = stack.back();
            stack.pop_back();
            if (contains(cut, v)) continue;
            for (int p : g_.parents(v))
                if (contains(within, p) && !contains(seen, p)) {
                    seen.insert(std::upper_bound(seen.begin(), seen.end(), p), p);
                    stack.push_back(p);
                }
        }
        return seen;
    }

    Set descendants(const Set& x) const {
        Set seen = x;
        std::vector<int> stack = x;
        while (!stack.empty()) {
            int v = stack.back();
            stack.pop_back();
            for (int c : g_.children(v))
                if (!contains(seen, c)) {
                    seen.insert(std::upper_bound(seen.begin(), seen.end(), c), c);
                    stack.push_back(c);
                }
        }
        return seen;
    }

private:
    Slot free_slot(int v) const { return Slot{g_.nodes[v], std::nullopt}; }

    std::vector<Slot> slots(Set vs, bool by_name) const {
        if (by_name)
            std::sort(vs.begin(), vs.end(), [&](int a, int b) { return g_.nodes[a] < g_.nodes[b]; });
        else
            std::sort(vs.begin(), vs.end(), [&](int a, int b) { return rank_[a] < rank_[b]; });
        std::vector<Slot> out;
        for (int v : vs) out.push_back(free_slot(v));
        return out;
    }

    Estimand sum_out(const Set& over, Estimand body) const {
        for (auto it = over.rbegin(); it != over.rend(); ++it) body = Estimand::sum(g_.nodes[*it], std::move(body));
        return body;
    }

    Estimand marginal(const Dist& p, const Set& keep) const {
        if (p.observational) return Estimand::prob(slots(keep, false));
        return sum_out(set_minus(p.vars, keep), p.expr);
    }

    Estimand conditional(const Dist& p, int v, const Set& given) const {
        if (p.observational) return Estimand::prob({free_slot(v)}, slots(given, true));
        auto num = marginal(p, set_or({v}, given));
        if (given.empty()) return num;
        return Estimand::ratio(std::move(num), marginal(p, given));
    }

    Set predecessors(int v, const Set& within) const {
        Set out;
        for (int w : within)
            if (rank_[w] < rank_[v]) out.push_back(w);
        return out;
    }

    Estimand chain(const Dist& p, const Set& s, const Set& v_all) const {
        std::vector<int> ordered = s;
        std::sort(ordered.begin(), ordered.end(), [&](int a, int b) { return rank_[a] < rank_[b]; });
        std::vector<Estimand> factors;
        for (int v : ordered) factors.push_back(conditional(p, v, predecessors(v, v_all)));
        return factors.size() == 1 ? factors[0] : Estimand::product(std::move(factors));
    }

    Estimand id(const Set& y, const Set& x, const Dist& p, const Set& v) {
        if (x.empty()) return marginal(p, y);

        Set an = ancestors(y, v);
        if (an != v) return id(y, set_and(x, an), Dist{p.observational, an, marginal(p, an)}, an);

        Set w = set_minus(set_minus(v, x), ancestors(y, v, x));
        if (!w.empty()) {
            // The inner effect does not depend on w; average it against the law of w.
            auto inner = id(y, set_or(x, w), p, v);
            return sum_out(w, Estimand::product({std::move(inner), marginal(p, w)}));
        }

        auto comps = c_components(g_, set_minus(v, x));
        if (comps.size() > 1) {
            std::stable_sort(comps.begin(), comps.end(), [&](const Set& a, const Set& b) {
                return !set_and(a, y).empty() && set_and(b, y).empty();
            });
            std::vector<Estimand> factors;
            for (auto& s : comps) factors.push_back(id(s, set_minus(v, s), p, v));
            return sum_out(set_minus(v, set_or(y, x)), Estimand::product(std::move(factors)));
        }
        const Set& s = comps[0];
        auto whole = c_components(g_, v);
        if (whole.size() == 1) throw Hedge{v, s};
        for (auto& c : whole)
            if (c == s) return sum_out(set_minus(s, y), chain(p, s, v));
        for (auto& c : whole)
            if (std::includes(c.begin(), c.end(), s.begin(), s.end()))
                return id(y, set_and(x, c), Dist{false, c, chain(p, c, v)}, c);
        throw Error(ErrorKind::UnsupportedQuery, "c-component structure is inconsistent");
    }

    const Diagram& g_;
    std::vector<int> order_;
    std::vector<int> rank_;
};

}  // namespace

IdDecision identify_effect(const Diagram& g, const EffectQuery& q, const DataCollection& data) {
    if (data.size() != 1 || !data[0].empty())
        throw Error(ErrorKind::UnsupportedData, "only the observational distribution is supported as data");
    std::map<std::string, std::string> values;
    Set y, x, w;
    auto collect = [&](const std::vector<std::pair<std::string, std::string>>& atoms, Set& dst) {
        for (auto& [name, value] : atoms) {
            int v = g.node(name);
            if (values.count(name)) throw Error(ErrorKind::InvalidQuery, name + " appears twice in the query");
            values[name] = value;
            dst.push_back(v);
        }
        std::sort(dst.begin(), dst.end());
    };
    collect(q.outcome, y);
    collect(q.intervention, x);
    collect(q.conditioning, w);
    if (y.empty()) throw Error(ErrorKind::InvalidQuery, "query has no outcome");

    Identifier ident(g);
    if (q.conditioning_natural) {
        auto affected = ident.descendants(x);
        for (int v : w)
            if (contains(affected, v))
                throw Error(ErrorKind::UnsupportedQuery,
                            g.nodes[v] + " is affected by the intervention; conditioning on its natural value is counterfactual");
    }
    IdDecision out;
    try {
        Set yw = set_or(y, w);
        Estimand joint = ident.run(yw, x);
        Estimand e = joint;
        if (!w.empty()) e = Estimand::ratio(joint, [&] {
                Estimand den = joint;
                for (auto it = y.rbegin(); it != y.rend(); ++it) den = Estimand::sum(g.nodes[*it], std::move(den));
                return den;
            }());
        out.identifiable = true;
        out.estimand = simplify(substitute(e, values));
    } catch (const Hedge& h) {
        out.identifiable = false;
        for (int v : h.f) out.hedge_f.push_back(g.nodes[v]);
        for (int v : h.f_prime) out.hedge_f_prime.push_back(g.nodes[v]);
        auto join = [](const std::vector<std::string>& xs) {
            std::string s;
            for (std::size_t k = 0; k < xs.size(); ++k) s += (k ? ", " : "") + xs[k];
            return s;
        };
        out.witness = "hedge: F = {" + join(out.hedge_f) + "}, F' = {" + join(out.hedge_f_prime) + "}";
    }
    return out;
}

IdDecision abstract_identify(const ClusterMap& cm, const ClusterDiagram& g_proj, const CounterfactualQuery& q,
                             bool is_high, const DataCollection& data) {
    CounterfactualQuery high = is_high ? q : translate_query(cm, q);
    return identify_effect(g_proj, effect_query(high, cm.high_decls()), data);
}

}  // namespace abstrakt
