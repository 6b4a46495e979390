#include "abstrakt/cli.hpp"

#include "abstrakt/error.hpp"
#include "abstrakt/graphs.hpp"
#include "abstrakt/io.hpp"
#include "abstrakt/projection.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <optional>
#include <sstream>

namespace abstrakt::cli {

using json = nlohmann::ordered_json;

int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::SizeExceeded:
            return 4;
        case ErrorKind::ZeroConditioning:
        case ErrorKind::ImpossibleContext:
        case ErrorKind::InvalidQuery:
        case ErrorKind::NotClusterUnion:
        case ErrorKind::FixpointMismatch:
        case ErrorKind::UnboundVariable:
        case ErrorKind::UnsupportedData:
        case ErrorKind::UnsupportedQuery:
        case ErrorKind::UnsupportedModel:
            return 3;
        default:
            return 2;
    }
}

namespace {

json value_json(const Rational& q) {
    json j;
    j["rational"] = to_string(q);
    j["decimal"] = to_decimal(q, 12);
    return j;
}

json names(const std::vector<int>& idx, const std::vector<std::string>& all) {
    json out = json::array();
    for (int i : idx) out.push_back(all[i]);
    return out;
}

std::vector<std::string> cluster_names(const ClusterMap& cm) {
    std::vector<std::string> out;
    for (auto& c : cm.clusters) out.push_back(c.name);
    return out;
}

json assignment_json(const Assignment& a, const std::vector<VariableDecl>& decls) {
    json out = json::object();
    for (auto& [v, x] : a) out[decls[v].name] = decls[v].domain[x];
    return out;
}

json estimand_doc(const Estimand& e) {
    json j;
    j["text"] = estimand_text(e);
    j["tree"] = json::parse(estimand_json(e));
    return j;
}

// name=value pairs separated by commas
std::vector<std::pair<std::string, std::string>> parse_pairs(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        auto trim = [](std::string s) {
            s.erase(0, s.find_first_not_of(" \t"));
            s.erase(s.find_last_not_of(" \t") + 1);
            return s;
        };
        item = trim(item);
        if (item.empty()) continue;
        auto eq = item.find('=');
        if (eq == std::string::npos) throw Error(ErrorKind::SyntaxError, "expected name=value in '" + item + "'");
        out.emplace_back(trim(item.substr(0, eq)), trim(item.substr(eq + 1)));
    }
    return out;
}

struct Options {
    std::string scm, clusters, graph, high, query, policy = "general", output, dot, value, context, fallback = "error";
    bool project = false, unprojected = false;
    std::size_t n = 1;
    std::uint64_t seed = 0;
};

class Command {
public:
    Command(const std::string& name, const Options& o) : name_(name), o_(o) {
        if (o_.fallback != "error" && o_.fallback != "uniform")
            throw Error(ErrorKind::ParseError, "--sigma-fallback takes 'error' or 'uniform'");
        sigma_.uniform_fallback = o_.fallback == "uniform";
        sigma_.warnings = &diagnostics_;
    }

    json execute() {
        if (name_ == "validate") return validate();
        if (name_ == "eval") return eval();
        if (name_ == "aic-check") return aic_check();
        if (name_ == "abstract") return abstract();
        if (name_ == "cdag") return cdag();
        if (name_ == "identify") return identify(false);
        if (name_ == "estimate") return identify(true);
        if (name_ == "sample") return sample();
        if (name_ == "verify") return verify();
        throw Error(ErrorKind::ParseError, "unknown command '" + name_ + "'");
    }

    std::vector<std::string>& diagnostics() { return diagnostics_; }
    bool non_identifiable = false;

private:
    DiscreteScm load() const {
        if (o_.scm.empty()) throw Error(ErrorKind::ParseError, "--scm is required");
        return load_scm(o_.scm);
    }
    ClusterMap clusters(const DiscreteScm& scm) const {
        if (o_.clusters.empty()) throw Error(ErrorKind::ParseError, "--clusters is required");
        return validate_clusters(scm, read_file(o_.clusters));
    }

    json validate() {
        json p;
        if (o_.scm.empty() && o_.graph.empty() && o_.high.empty())
            throw Error(ErrorKind::ParseError, "validate needs --scm, --graph or --high");
        if (!o_.scm.empty()) {
            auto scm = load();
            json s;
            s["variables"] = scm.num_vars();
            s["blocks"] = scm.blocks().size();
            s["exogenous_states"] = scm.exo_state_count();
            std::vector<std::string> order;
            for (int v : scm.topo_order()) order.push_back(scm.endogenous()[v].name);
            s["topological_order"] = order;
            p["scm"] = s;
            if (!o_.clusters.empty()) {
                auto cm = clusters(scm);
                json c = json::array();
                for (auto& cl : cm.clusters) {
                    json e;
                    e["name"] = cl.name;
                    e["members"] = names(cl.members, [&] {
                        std::vector<std::string> n;
                        for (auto& d : scm.endogenous()) n.push_back(d.name);
                        return n;
                    }());
                    e["lossy"] = cl.lossy();
                    c.push_back(e);
                }
                p["clusters"] = c;
            }
        }
        if (!o_.graph.empty()) {
            auto g = graph_from_json(read_file(o_.graph));
            p["graph"] = {{"nodes", g.size()}, {"directed", g.directed.size()}, {"bidirected", g.bidirected.size()}};
        }
        if (!o_.high.empty()) {
            auto h = high_level_from_json(read_file(o_.high));
            p["high"] = {{"variables", h.scm.num_vars()}, {"violators", names(h.sigma.violators, cluster_names(h.cm))}};
        }
        p["valid"] = true;
        return p;
    }

    json eval() {
        auto scm = load();
        json p;
        p["query"] = o_.query;
        Rational value;
        if (o_.clusters.empty()) {
            auto q = parse_query(o_.query, scm, nullptr, &diagnostics_);
            value = prob_query(scm, q);
        } else {
            auto m = clustered_model(scm, clusters(scm));
            auto policy = parse_policy(o_.policy);
            auto q = parse_query(o_.query, m.scm, &m.cm, &diagnostics_);
            auto resolved = resolve_soft_atoms(m.scm, m.cm, q, policy, sigma_);
            value = prob_query(m.scm, resolved);
            p["policy"] = policy_name(policy);
        }
        p["value"] = value_json(value);
        return p;
    }

    json aic_check() {
        auto scm = load();
        auto cm = clusters(scm);
        auto report = check_aic(scm, cm);
        auto cn = cluster_names(cm);
        json p;
        p["violators"] = names(report.violators, cn);
        json ws = json::array();
        for (auto& w : report.witnesses) {
            json j;
            j["violator"] = cn[w.violator];
            j["child"] = cn[w.child];
            json u = json::object();
            for (int s = 0; s < static_cast<int>(w.u.size()); ++s)
                if (w.u[s] >= 0) u[scm.exo_name(s)] = scm.exo_decl(s).domain[w.u[s]];
            j["u"] = u;
            j["context_a"] = assignment_json(w.context_a, scm.endogenous());
            j["context_b"] = assignment_json(w.context_b, scm.endogenous());
            j["output_a"] = cm.clusters[w.child].labels[w.high_a];
            j["output_b"] = cm.clusters[w.child].labels[w.high_b];
            j["replayed"] = replay_witness(scm, cm, w);
            ws.push_back(j);
        }
        p["witnesses"] = ws;
        return p;
    }

    json abstract() {
        auto scm = load();
        auto cm = clusters(scm);
        auto policy = parse_policy(o_.policy);
        auto h = construct_projected_abstraction(scm, cm, policy, sigma_);
        auto text = high_level_to_json(h);
        json p;
        if (!o_.output.empty()) {
            write_file(o_.output, text);
            p["output"] = o_.output;
        } else {
            p["model"] = json::parse(text);
        }
        p["policy"] = policy_name(policy);
        p["variables"] = cluster_names(h.cm);
        p["violators"] = names(h.sigma.violators, cluster_names(h.cm));
        p["blocks"] = h.scm.blocks().size();
        return p;
    }

    ClusterDiagram graph_for(const DiscreteScm& scm, const ClusterMap& cm, bool project) const {
        auto g = build_cdag(induce_diagram(scm), cm);
        if (!project) return g;
        return build_projected_cdag(g, check_aic(scm, cm).violators);
    }

    json cdag() {
        auto scm = load();
        auto cm = clusters(scm);
        auto g = graph_for(scm, cm, o_.project);
        auto text = graph_to_json(g);
        if (!o_.output.empty()) write_file(o_.output, text);
        if (!o_.dot.empty()) write_file(o_.dot, graph_to_dot(g));
        json p;
        p["graph"] = json::parse(text);
        p["dot"] = graph_to_dot(g);
        return p;
    }

    json identify(bool estimate) {
        json p;
        IdDecision d;
        EffectQuery eq;
        std::optional<DiscreteScm> scm;
        std::optional<ClusterMap> cm;
        if (!o_.graph.empty() && !estimate) {
            auto g = graph_from_json(read_file(o_.graph));
            eq = parse_effect_query(o_.query);
            d = identify_effect(g, eq);
        } else {
            scm = load();
            cm = clusters(*scm);
            auto g = graph_for(*scm, *cm, !o_.unprojected);
            eq = parse_effect_query(o_.query, *cm);
            d = identify_effect(g, eq);
            p["graph"] = o_.unprojected ? "cdag" : "projected";
        }
        p["query"] = effect_query_text(eq);
        p["identifiable"] = d.identifiable;
        if (!d.identifiable) {
            p["witness"] = d.witness;
            p["hedge"] = {{"F", d.hedge_f}, {"F_prime", d.hedge_f_prime}};
            non_identifiable = true;
            return p;
        }
        p["estimand"] = estimand_doc(d.estimand);
        if (!estimate) return p;

        auto m = clustered_model(*scm, *cm);
        std::vector<int> all(m.scm.num_vars());
        for (int v = 0; v < m.scm.num_vars(); ++v) all[v] = v;
        auto obs = marginal_pushforward(joint_distribution(m.scm, all), m.cm);
        auto value = evaluate_estimand(d.estimand, obs);
        p["value"] = value_json(value);

        // Same query evaluated directly on the constructed abstraction.
        auto policy = parse_policy(o_.policy);
        auto h = construct_projected_abstraction(*scm, *cm, policy, sigma_);
        auto atom = [&](const std::pair<std::string, std::string>& a) {
            int v = h.scm.variable(a.first);
            int x = h.scm.endogenous()[v].value_index(a.second);
            if (x < 0) throw Error(ErrorKind::UnknownHighValue, "'" + a.second + "' is not a value of " + a.first);
            return HardAtom{v, x};
        };
        std::vector<HardAtom> regime;
        for (auto& a : eq.intervention) regime.push_back(atom(a));
        CounterfactualQuery hq;
        std::vector<std::pair<int, int>> outcome;
        for (auto& a : eq.outcome) {
            auto h_atom = atom(a);
            outcome.emplace_back(h_atom.var, h_atom.value);
        }
        hq.terms.push_back(point_term(outcome, regime));
        if (!eq.conditioning.empty()) {
            std::vector<std::pair<int, int>> cond;
            for (auto& a : eq.conditioning) {
                auto c_atom = atom(a);
                cond.emplace_back(c_atom.var, c_atom.value);
            }
            hq.conditioning.push_back(point_term(cond, eq.conditioning_natural ? std::vector<HardAtom>{} : regime));
        }
        auto direct = prob_query(h.scm, hq);
        p["model_value"] = value_json(direct);
        p["agrees"] = direct == value;
        if (direct != value) diagnostics_.push_back("estimate differs from the value computed on the abstract model");
        return p;
    }

    json sample() {
        if (o_.high.empty()) throw Error(ErrorKind::ParseError, "--high is required");
        auto h = high_level_from_json(read_file(o_.high));
        auto target = parse_pairs(o_.value);
        if (target.size() != 1) throw Error(ErrorKind::SyntaxError, "--value takes one cluster=value pair");
        NamedContext ctx;
        for (auto& [k, v] : parse_pairs(o_.context)) ctx[k] = v;
        ProjectedSampler sampler(h, target[0].first, target[0].second, ctx, sigma_);
        auto& cl = h.cm.clusters[h.cm.cluster(target[0].first)];
        auto tuple_json = [&](const Tuple& t) {
            json j = json::object();
            for (std::size_t k = 0; k < t.size(); ++k) j[h.cm.low[cl.members[k]].name] = h.cm.low[cl.members[k]].domain[t[k]];
            return j;
        };
        json p;
        p["cluster"] = cl.name;
        p["value"] = target[0].second;
        json support = json::array();
        for (std::size_t k = 0; k < sampler.support().size(); ++k)
            support.push_back({{"tuple", tuple_json(sampler.support()[k])}, {"weight", value_json(sampler.weights()[k])}});
        p["support"] = support;
        json draws = json::array();
        for (auto& t : sampler.sample(o_.n, o_.seed)) draws.push_back(tuple_json(t));
        p["seed"] = o_.seed;
        p["samples"] = draws;
        return p;
    }

    json verify() {
        auto scm = load();
        if (o_.high.empty()) throw Error(ErrorKind::ParseError, "--high is required");
        auto h = high_level_from_json(read_file(o_.high));
        auto report = verify_partial_projection(scm, h);
        json p;
        p["checked"] = report.checked;
        p["mismatches"] = report.mismatch_count;
        json cases = json::array();
        auto cn = cluster_names(h.cm);
        for (auto& mm : report.mismatches) {
            json j;
            j["u"] = mm.u;
            j["intervention"] = assignment_json(mm.intervention, h.cm.low);
            json e = json::object(), a = json::object();
            for (int c = 0; c < static_cast<int>(cn.size()); ++c) {
                e[cn[c]] = h.cm.clusters[c].labels[mm.expected[c]];
                a[cn[c]] = h.cm.clusters[c].labels[mm.actual[c]];
            }
            j["expected"] = e;
            j["actual"] = a;
            cases.push_back(j);
        }
        p["counterexamples"] = cases;
        if (report.mismatch_count) failed_ = true;
        return p;
    }

public:
    bool failed_ = false;

private:
    std::string name_;
    Options o_;
    SigmaOptions sigma_;
    std::vector<std::string> diagnostics_;
};

}  // namespace

CommandResult run(const std::vector<std::string>& argv) {
    CLI::App app{"Exact inference for discrete causal models and their abstractions", "abstrakt"};
    app.require_subcommand(1);
    Options o;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--policy", o.policy, "agnostic | markovian | general");
        sub->add_option("--sigma-fallback", o.fallback, "error | uniform");
    };
    auto* validate = app.add_subcommand("validate", "Check input files");
    validate->add_option("--scm", o.scm);
    validate->add_option("--clusters", o.clusters);
    validate->add_option("--graph", o.graph);
    validate->add_option("--high", o.high);

    auto* eval = app.add_subcommand("eval", "Evaluate a query");
    eval->add_option("--scm", o.scm)->required();
    eval->add_option("--query", o.query)->required();
    eval->add_option("--clusters", o.clusters);
    add_common(eval);

    auto* aic = app.add_subcommand("aic-check", "Find clusters violating abstract invariance");
    aic->add_option("--scm", o.scm)->required();
    aic->add_option("--clusters", o.clusters)->required();

    auto* abs = app.add_subcommand("abstract", "Build the projected abstraction");
    abs->add_option("--scm", o.scm)->required();
    abs->add_option("--clusters", o.clusters)->required();
    abs->add_option("-o,--output", o.output);
    add_common(abs);

    auto* cdag = app.add_subcommand("cdag", "Cluster diagram");
    cdag->add_option("--scm", o.scm)->required();
    cdag->add_option("--clusters", o.clusters)->required();
    cdag->add_flag("--project", o.project, "apply the rewrite rules around violators");
    cdag->add_option("-o,--output", o.output);
    cdag->add_option("--dot", o.dot);

    auto* ident = app.add_subcommand("identify", "Decide identifiability of an effect");
    ident->add_option("--graph", o.graph);
    ident->add_option("--scm", o.scm);
    ident->add_option("--clusters", o.clusters);
    ident->add_option("--query", o.query)->required();
    ident->add_flag("--unprojected", o.unprojected, "use the cluster diagram without rewriting");

    auto* est = app.add_subcommand("estimate", "Identify an effect and evaluate it on observational data");
    est->add_option("--scm", o.scm)->required();
    est->add_option("--clusters", o.clusters)->required();
    est->add_option("--query", o.query)->required();
    est->add_flag("--unprojected", o.unprojected, "use the cluster diagram without rewriting");
    add_common(est);

    auto* smp = app.add_subcommand("sample", "Draw low-level values for a high-level value");
    smp->add_option("--high", o.high)->required();
    smp->add_option("--value", o.value, "cluster=value")->required();
    smp->add_option("--context", o.context, "comma separated name=value");
    smp->add_option("--n", o.n);
    smp->add_option("--seed", o.seed);
    smp->add_option("--sigma-fallback", o.fallback, "error | uniform");

    auto* ver = app.add_subcommand("verify", "Replay an abstraction against its low-level model");
    ver->add_option("--scm", o.scm)->required();
    ver->add_option("--high", o.high)->required();

    CommandResult result;
    json& doc = result.document;
    doc["command"] = argv.empty() ? "" : argv[0];
    doc["exit_code"] = 0;
    doc["payload"] = json::object();
    doc["diagnostics"] = json::array();
    auto fail = [&](int code, const std::string& kind, const std::string& message) {
        result.exit_code = code;
        doc["exit_code"] = code;
        doc["error"] = {{"kind", kind}, {"message", message}};
    };

    std::vector<std::string> args(argv.rbegin(), argv.rend());
    try {
        app.parse(args);
    } catch (const CLI::CallForHelp&) {
        doc["payload"]["help"] = app.help();
        return result;
    } catch (const CLI::ParseError& e) {
        fail(2, "UsageError", e.what());
        return result;
    }
    auto* sub = app.get_subcommands().front();
    doc["command"] = sub->get_name();
    std::vector<std::string> diagnostics;
    try {
        Command cmd(sub->get_name(), o);
        doc["payload"] = cmd.execute();
        diagnostics = cmd.diagnostics();
        if (cmd.non_identifiable) fail(5, "NonIdentifiable", doc["payload"]["witness"].get<std::string>());
        if (cmd.failed_) fail(3, "ProjectionMismatch", "the abstraction disagrees with the low-level model");
    } catch (const Error& e) {
        fail(exit_code_for(e.kind()), kind_name(e.kind()), e.what());
    }
    for (auto& d : diagnostics) doc["diagnostics"].push_back(d);
    return result;
}

}  // namespace abstrakt::cli
