#include "abstrakt/cli.hpp"

#include "abstrakt/error.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <set>

namespace abstrakt::cli {

namespace {

class Parser {
public:
    explicit Parser(const std::string& text) : s_(text) {}

    QueryAst parse() {
        QueryAst q;
        skip();
        expect('P');
        expect('(');
        q.terms.push_back(term());
        while (peek() == ',') {
            ++pos_;
            q.terms.push_back(term());
        }
        if (peek() == '|') {
            ++pos_;
            q.conditioning.push_back(term());
            while (peek() == ',') {
                ++pos_;
                q.conditioning.push_back(term());
            }
        }
        expect(')');
        if (pos_ != s_.size()) fail("unexpected trailing input");
        return q;
    }

private:
    [[noreturn]] void fail(const std::string& what) const {
        throw Error(ErrorKind::SyntaxError, what + " at position " + std::to_string(pos_));
    }

    void skip() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }

    char peek() {
        skip();
        return pos_ < s_.size() ? s_[pos_] : '\0';
    }

    void expect(char c) {
        if (peek() != c) fail(std::string("expected '") + c + "'");
        ++pos_;
        skip();
    }

    static bool name_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.'; }
    static bool value_char(char c) { return name_char(c) || c == '+' || c == '-'; }

    std::string word(bool value) {
        skip();
        std::size_t start = pos_;
        while (pos_ < s_.size() && (value ? value_char(s_[pos_]) : name_char(s_[pos_]))) ++pos_;
        if (start == pos_) fail(value ? "expected a value" : "expected a variable name");
        return s_.substr(start, pos_ - start);
    }

    QueryAtom term() {
        QueryAtom a;
        a.var = word(false);
        if (peek() == '[') {
            ++pos_;
            a.ivs.push_back(iv());
            while (peek() == ';') {
                ++pos_;
                a.ivs.push_back(iv());
            }
            expect(']');
        }
        expect('=');
        a.value = word(true);
        skip();
        return a;
    }

    IvAtom iv() {
        IvAtom a;
        if (peek() == '~') {
            ++pos_;
            a.soft = true;
        }
        a.var = word(false);
        expect('=');
        a.value = word(true);
        skip();
        return a;
    }

    const std::string& s_;
    std::size_t pos_ = 0;
};

int value_of(const VariableDecl& d, const std::string& value) {
    int x = d.value_index(value);
    if (x < 0) throw Error(ErrorKind::DomainMismatch, "'" + value + "' is not a value of " + d.name);
    return x;
}

int label_of(const Cluster& c, const std::string& value) {
    auto it = std::find(c.labels.begin(), c.labels.end(), value);
    if (it == c.labels.end()) throw Error(ErrorKind::UnknownHighValue, "cluster '" + c.name + "' has no value '" + value + "'");
    return static_cast<int>(it - c.labels.begin());
}

}  // namespace

QueryAst parse_query_text(const std::string& text) { return Parser(text).parse(); }

CounterfactualQuery parse_query(const std::string& text, const DiscreteScm& scm, const ClusterMap* cm,
                                std::vector<std::string>* diagnostics) {
    auto ast = parse_query_text(text);
    CounterfactualQuery q;
    q.projected = cm != nullptr;
    std::vector<int> family_of(cm ? cm->size() : 0, -1);
    std::set<std::string> noted;

    auto resolve = [&](const QueryAtom& atom) {
        Term t;
        OutcomeConstraint oc;
        if (auto v = scm.find_variable(atom.var)) {
            oc.vars = {*v};
            oc.allowed = {{value_of(scm.endogenous()[*v], atom.value)}};
        } else if (cm && cm->find_cluster(atom.var)) {
            auto& c = cm->clusters[cm->cluster(atom.var)];
            oc.vars = c.members;
            oc.allowed = c.fibers[label_of(c, atom.value)];
        } else {
            throw Error(ErrorKind::UnknownVariable, "unknown variable '" + atom.var + "'");
        }
        t.outcomes.push_back(std::move(oc));
        for (auto& iv : atom.ivs) {
            if (iv.soft && cm) {
                auto found = cm->find_cluster(iv.var);
                if (!found) throw Error(ErrorKind::UnknownVariable, "'~" + iv.var + "' does not name a cluster");
                auto& c = cm->clusters[*found];
                int l = label_of(c, iv.value);
                if (c.fiber_size(l) == 1 && !c.lossy()) {
                    auto& tup = c.fibers[l][0];
                    for (std::size_t k = 0; k < tup.size(); ++k) t.hard.push_back(HardAtom{c.members[k], tup[k]});
                    continue;
                }
                if (family_of[*found] < 0) {
                    SoftFamily fam;
                    fam.target = c.name;
                    fam.members = c.members;
                    fam.labels = c.labels;
                    fam.fibers = c.fibers;
                    fam.label_of = c.label_of;
                    family_of[*found] = static_cast<int>(q.families.size());
                    q.families.push_back(std::move(fam));
                }
                t.soft.push_back(SoftAtom{family_of[*found], l});
                continue;
            }
            if (iv.soft && diagnostics && noted.insert(iv.var).second)
                diagnostics->push_back("no clusters given: ~" + iv.var + " is read as a hard intervention");
            if (auto v = scm.find_variable(iv.var)) {
                t.hard.push_back(HardAtom{*v, value_of(scm.endogenous()[*v], iv.value)});
            } else if (cm && cm->find_cluster(iv.var)) {
                auto& c = cm->clusters[cm->cluster(iv.var)];
                int l = label_of(c, iv.value);
                if (c.fiber_size(l) != 1)
                    throw Error(ErrorKind::InvalidQuery, "'" + iv.var + "=" + iv.value + "' has several low values; write ~" + iv.var);
                auto& tup = c.fibers[l][0];
                for (std::size_t k = 0; k < tup.size(); ++k) t.hard.push_back(HardAtom{c.members[k], tup[k]});
            } else {
                throw Error(ErrorKind::UnknownVariable, "unknown variable '" + iv.var + "'");
            }
        }
        return t;
    };
    for (auto& a : ast.terms) q.terms.push_back(resolve(a));
    for (auto& a : ast.conditioning) q.conditioning.push_back(resolve(a));
    return q;
}

namespace {

std::vector<std::pair<std::string, std::string>> ivs_of(const QueryAtom& a) {
    std::vector<std::pair<std::string, std::string>> out;
    for (auto& iv : a.ivs) out.emplace_back(iv.var, iv.value);
    std::sort(out.begin(), out.end());
    return out;
}

// Same shape checks as effect_query, on the raw names.
EffectQuery effect_from_ast(const QueryAst& ast,
                            const std::function<std::pair<std::string, std::string>(const std::string&, const std::string&)>& map) {
    EffectQuery q;
    auto regime = ivs_of(ast.terms.at(0));
    for (auto& a : ast.terms) {
        if (ivs_of(a) != regime)
            throw Error(ErrorKind::UnsupportedQuery, "terms under different interventions form a counterfactual query");
        q.outcome.push_back(map(a.var, a.value));
    }
    for (auto& [v, x] : regime) q.intervention.push_back(map(v, x));
    for (auto& a : ast.conditioning) {
        auto r = ivs_of(a);
        if (!r.empty() && r != regime)
            throw Error(ErrorKind::UnsupportedQuery, "conditioning under another intervention is counterfactual");
        if (r.empty() && !regime.empty()) q.conditioning_natural = true;
        q.conditioning.push_back(map(a.var, a.value));
    }
    return q;
}

}  // namespace

EffectQuery parse_effect_query(const std::string& text, const ClusterMap& cm) {
    return effect_from_ast(parse_query_text(text), [&](const std::string& name, const std::string& value) {
        if (auto c = cm.find_cluster(name)) {
            label_of(cm.clusters[*c], value);
            return std::make_pair(name, value);
        }
        for (int v = 0; v < static_cast<int>(cm.low.size()); ++v) {
            if (cm.low[v].name != name) continue;
            int c = cm.cluster_of[v];
            if (c < 0 || cm.clusters[c].members.size() != 1)
                throw Error(ErrorKind::NotClusterUnion, "'" + name + "' is not a union of clusters");
            auto& cl = cm.clusters[c];
            return std::make_pair(cl.name, cl.labels[cl.label_of.at({value_of(cm.low[v], value)})]);
        }
        throw Error(ErrorKind::UnknownVariable, "unknown variable '" + name + "'");
    });
}

EffectQuery parse_effect_query(const std::string& text) {
    return effect_from_ast(parse_query_text(text),
                           [](const std::string& name, const std::string& value) { return std::make_pair(name, value); });
}

}  // namespace abstrakt::cli
