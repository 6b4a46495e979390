#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "abstrakt/abstraction.hpp"
#include "abstrakt/error.hpp"
#include "abstrakt/io.hpp"
#include "abstrakt/projection.hpp"
#include "abstrakt/valuation.hpp"
#include "toy.hpp"

#include <set>

using namespace abstrakt;

namespace {

struct Loaded {
    DiscreteScm scm;
    ClusterMap cm;
};

Loaded load(const std::string& model, const std::string& clusters) {
    auto scm = load_scm(toy::fixture(model));
    auto cm = validate_clusters(scm, read_file(toy::fixture(clusters)));
    return {scm, cm};
}

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("no error raised");
    return ErrorKind::ParseError;
}

CounterfactualQuery single(Term t) {
    CounterfactualQuery q;
    q.terms.push_back(std::move(t));
    return q;
}

std::map<Tuple, Rational> dist(std::initializer_list<std::pair<int, Rational>> xs) {
    std::map<Tuple, Rational> out;
    for (auto& [x, p] : xs) out[{x}] = p;
    return out;
}

DiscreteScm insurance_with_z1(const std::string& p) {
    auto doc = read_file(toy::fixture("insurance.json"));
    auto pos = doc.find("\"0.7\"");
    doc.replace(pos, 5, "\"" + p + "\"");
    pos = doc.find("\"0.3\"");
    doc.replace(pos, 5, "\"" + to_string(1 - parse_rational(p)) + "\"");
    return validate_scm(doc);
}

std::vector<ClusterSpec> random_partition(std::mt19937_64& rng, const toy::Model& m) {
    std::vector<ClusterSpec> out;
    for (auto& v : m.vars) {
        int d = static_cast<int>(v.domain.size());
        int parts = 1 + static_cast<int>(rng() % d);
        ClusterSpec c;
        c.name = v.name + "H";
        c.members = {v.name};
        std::vector<int> p(d);
        for (int x = 0; x < d; ++x) p[x] = x < parts ? x : static_cast<int>(rng() % parts);
        for (int k = 0; k < parts; ++k) {
            std::vector<std::vector<std::string>> tuples;
            for (int x = 0; x < d; ++x)
                if (p[x] == k) tuples.push_back({v.domain[x]});
            c.values.emplace_back("h" + std::to_string(k), tuples);
        }
        out.push_back(c);
    }
    return out;
}

// Random high-level query with up to `terms` terms; hard atoms on clusters.
CounterfactualQuery random_high_query(std::mt19937_64& rng, const ClusterMap& cm, int terms, bool cond) {
    auto term = [&] {
        std::vector<std::pair<int, int>> out;
        std::vector<HardAtom> hard;
        for (int c = 0; c < cm.size(); ++c) {
            int d = static_cast<int>(cm.clusters[c].labels.size());
            auto r = rng() % 3;
            if (r == 0) hard.push_back({c, static_cast<int>(rng() % d)});
            else if (r == 1) out.emplace_back(c, static_cast<int>(rng() % d));
        }
        if (out.empty()) {
            int c = static_cast<int>(rng() % cm.size());
            std::erase_if(hard, [&](const HardAtom& h) { return h.var == c; });
            out.emplace_back(c, static_cast<int>(rng() % cm.clusters[c].labels.size()));
        }
        return point_term(out, hard);
    };
    CounterfactualQuery q;
    for (int i = 0; i < terms; ++i) q.terms.push_back(term());
    if (cond) q.conditioning.push_back(term());
    return q;
}

// Both routes, or the error kind both raise.
std::string evaluate_or_kind(const std::function<Rational()>& f) {
    try {
        return to_string(f());
    } catch (const Error& e) {
        return kind_name(e.kind());
    }
}

}  // namespace

TEST_CASE("project_full keeps interventional behaviour") {
    auto scm = load_scm(toy::fixture("insurance.json"));
    auto zy = project_full(scm, {0, 2});
    REQUIRE(zy.num_vars() == 2);
    CounterfactualQuery q;
    q.terms.push_back(point_term({{1, 1}}));
    q.conditioning.push_back(point_term({{0, 0}}));
    CounterfactualQuery full;
    full.terms.push_back(point_term({{2, 1}}));
    full.conditioning.push_back(point_term({{0, 0}}));
    CHECK(prob_query(zy, q) == prob_query(scm, full));
    CHECK(prob_query(zy, q) == Rational(41, 50));

    auto all = project_full(scm, {0, 1, 2});
    CHECK(scm_to_json(all) == scm_to_json(scm));

    std::mt19937_64 rng(9);
    for (int i = 0; i < 30; ++i) {
        toy::RandomSpec spec;
        spec.vars = 3;
        spec.edge_p = 1.0;
        auto m = toy::random_model(rng, spec);
        auto low = m.scm();
        auto ends = project_full(low, {0, 2});
        for_each_unit(low, [&](const std::vector<int>& u, const Rational&) {
            for (int a = -1; a < static_cast<int>(m.vars[0].domain.size()); ++a) {
                std::map<int, int> fixed;
                std::vector<HardAtom> hard;
                if (a >= 0) {
                    fixed[0] = a;
                    hard.push_back({0, a});
                }
                auto expected = m.solve(u, fixed);
                auto got = evaluate_unit(ends, u, hard);
                CHECK(got == std::vector<int>{expected[0], expected[2]});
            }
        });
    }
    CHECK(kind_of([&] { project_full(scm, {7}); }) == ErrorKind::UnknownVariable);
}

TEST_CASE("delta splits round trip") {
    for (auto [model, clusters] : {std::pair{"insurance.json", "insurance_clusters.json"},
                                   std::pair{"cholesterol.json", "cholesterol_clusters.json"},
                                   std::pair{"colored_digit.json", "colored_digit_clusters.json"}}) {
        auto l = load(model, clusters);
        auto splits = delta_splits(l.cm);
        REQUIRE(splits.size() == static_cast<std::size_t>(l.cm.size()));
        for (auto& s : splits) {
            auto& c = l.cm.clusters[s.cluster];
            for (auto& [t, label] : c.label_of) {
                auto [lab, idx] = s.split(t);
                CHECK(lab == label);
                CHECK(s.delta(lab, idx) == t);
            }
        }
    }
}

TEST_CASE("disambiguation distributions") {
    auto l = load("insurance.json", "insurance_clusters.json");
    CHECK(sigma_distribution(l.scm, l.cm, "XH", "xC", SigmaPolicy::General, {{"Z", "z1"}}) ==
          dist({{0, Rational(4, 5)}, {1, Rational(1, 5)}}));
    CHECK(sigma_distribution(l.scm, l.cm, "XH", "xC", SigmaPolicy::General, {{"Z", "z2"}}) ==
          dist({{0, Rational(1, 5)}, {1, Rational(4, 5)}}));
    CHECK(sigma_distribution(l.scm, l.cm, "XH", "xE", SigmaPolicy::General, {{"Z", "z1"}}) == dist({{2, Rational(1)}}));
    CHECK(sigma_distribution(l.scm, l.cm, "XH", "xC", SigmaPolicy::Markovian, {{"Z", "z1"}}) ==
          dist({{0, Rational(4, 5)}, {1, Rational(1, 5)}}));
    CHECK(sigma_distribution(l.scm, l.cm, "XH", "xC", SigmaPolicy::Agnostic, {}) ==
          dist({{0, Rational(31, 50)}, {1, Rational(19, 50)}}));
    CHECK(kind_of([&] { sigma_distribution(l.scm, l.cm, "XH", "xC", SigmaPolicy::General, {}); }) == ErrorKind::InvalidQuery);
    CHECK(kind_of([&] { sigma_distribution(l.scm, l.cm, "XH", "xQ", SigmaPolicy::General, {{"Z", "z1"}}); }) ==
          ErrorKind::UnknownHighValue);
    CHECK(parse_policy("general") == SigmaPolicy::General);
    CHECK(kind_of([&] { parse_policy("other"); }) == ErrorKind::ParseError);
}

TEST_CASE("zero-mass contexts") {
    auto scm = insurance_with_z1("1");
    auto cm = validate_clusters(scm, read_file(toy::fixture("insurance_clusters.json")));
    CHECK(kind_of([&] { sigma_distribution(scm, cm, "XH", "xC", SigmaPolicy::General, {{"Z", "z2"}}); }) ==
          ErrorKind::ImpossibleContext);
    std::vector<std::string> warnings;
    SigmaOptions uniform{true, &warnings};
    CHECK(sigma_distribution(scm, cm, "XH", "xC", SigmaPolicy::General, {{"Z", "z2"}}, uniform) ==
          dist({{0, Rational(1, 2)}, {1, Rational(1, 2)}}));
    CHECK(warnings.size() == 1);
    // the reachable context is unaffected
    CHECK(sigma_distribution(scm, cm, "XH", "xC", SigmaPolicy::General, {{"Z", "z1"}}) ==
          dist({{0, Rational(4, 5)}, {1, Rational(1, 5)}}));
}

TEST_CASE("shared exogenous context on the hospital model") {
    auto scm = load_scm(toy::fixture("hospital.json"));
    std::vector<ClusterSpec> spec{{"Z", {"Z"}, {}}, {"XH", {"X"}, {{"xC", {{"x1"}, {"x2"}}}, {"xE", {{"x3"}}}}}, {"Y", {"Y"}, {}}};
    auto cm = validate_clusters(scm, spec);
    // X reads U_Z directly: conditioning on U_Z selects the U_Xz1 or U_Xz2 row
    CHECK(sigma_distribution(scm, cm, "XH", "xC", SigmaPolicy::General, {{"U_Z.u", "z1"}}) ==
          dist({{0, Rational(4, 5)}, {1, Rational(1, 5)}}));
    CHECK(sigma_distribution(scm, cm, "XH", "xC", SigmaPolicy::General, {{"U_Z.u", "z2"}}) ==
          dist({{0, Rational(1, 5)}, {1, Rational(4, 5)}}));
    CHECK(sigma_distribution(scm, cm, "XH", "xC", SigmaPolicy::Agnostic, {}) ==
          dist({{0, Rational(31, 50)}, {1, Rational(19, 50)}}));
}

TEST_CASE("canonical responses") {
    auto scm = load_scm(toy::fixture("insurance.json"));
    auto ry = canonical_response_profile(scm, 2);
    CHECK(ry.size() <= 8);
    Rational total = 0;
    for (auto& [r, p] : ry) {
        CHECK(r.size() == 3);
        total += p;
    }
    CHECK(total == 1);
    // response (1, 1, 1): every U_Y is 1
    CHECK(ry.at({1, 1, 1}) == Rational(9, 10) * Rational(1, 10) * Rational(9, 10));

    toy::Model det;
    det.exo.push_back({"U", {Rational(1)}});
    det.vars.push_back({"A", {"a0", "a1"}, {}, {0}, {{{0}, 0}}});
    det.vars.push_back({"B", {"b0", "b1"}, {0}, {}, {{{0}, 1}, {{1}, 0}}});
    auto rb = canonical_response_profile(det.scm(), 1);
    CHECK(rb == std::map<Tuple, Rational>{{{1, 0}, Rational(1)}});

    auto hosp = load_scm(toy::fixture("hospital.json"));
    int x = hosp.variable("X");
    CHECK(canonical_response_profile(hosp, x) == dist({{0, Rational(31, 100)}, {1, Rational(19, 100)}, {2, Rational(1, 2)}}));
    CHECK(canonical_response_profile(hosp, x, {{0, 0}}) == dist({{0, Rational(2, 5)}, {1, Rational(1, 10)}, {2, Rational(1, 2)}}));
    CHECK(kind_of([&] { canonical_response_profile(hosp, hosp.variable("Y"), {{0, 0}}); }) == ErrorKind::InvalidQuery);
}

TEST_CASE("constructed abstraction of the insurance model") {
    auto l = load("insurance.json", "insurance_clusters.json");
    auto h = construct_projected_abstraction(l.scm, l.cm, SigmaPolicy::General);
    REQUIRE(h.scm.num_vars() == 3);
    CHECK(h.sigma.violators == std::vector<int>{1});
    REQUIRE(h.wu.size() == 1);
    CHECK(h.scm.blocks().size() == l.scm.blocks().size() + 1);
    auto& wu = h.scm.blocks()[h.wu[0].block];
    Rational total = 0;
    for (auto& p : wu.table) total += p;
    CHECK(total == 1);

    int z = 0, xh = 1, y = 2;
    for (auto [zv, expected] : {std::pair{0, Rational(37, 50)}, std::pair{1, Rational(13, 50)}}) {
        CounterfactualQuery q;
        q.terms.push_back(point_term({{y, 1}}, {{xh, 0}}));
        q.conditioning.push_back(point_term({{z, zv}}));
        CHECK(prob_query(h.scm, q) == expected);
    }
    CHECK(prob_query(h.scm, single(point_term({{y, 1}}, {{xh, 0}}))) == Rational(149, 250));
    CHECK(prob_query(h.scm, single(point_term({{y, 1}}, {{xh, 1}}))) == Rational(9, 10));
    // observational law is the pushforward of the low one
    auto low = marginal_pushforward(joint_distribution(l.scm, {0, 1, 2}), l.cm);
    CHECK(joint_distribution(h.scm, {0, 1, 2}).entries == low.entries);

    auto report = verify_partial_projection(l.scm, h);
    CHECK(report.checked > 0);
    CHECK(report.mismatch_count == 0);

    auto again = high_level_from_json(high_level_to_json(h));
    CHECK(high_level_to_json(again) == high_level_to_json(h));
    CHECK(verify_partial_projection(l.scm, again).mismatch_count == 0);
}

TEST_CASE("identity clusters give an equivalent model") {
    auto scm = load_scm(toy::fixture("insurance.json"));
    auto h = construct_projected_abstraction(scm, identity_clusters(scm), SigmaPolicy::General);
    CHECK(h.wu.empty());
    std::mt19937_64 rng(1);
    for (int i = 0; i < 40; ++i) {
        auto q = random_high_query(rng, h.cm, 1 + i % 2, i % 3 == 0);
        CHECK(evaluate_or_kind([&] { return prob_query(h.scm, q); }) == evaluate_or_kind([&] { return prob_query(scm, q); }));
    }
    CHECK(verify_partial_projection(scm, h).mismatch_count == 0);
}

TEST_CASE("cholesterol abstraction mixes the two fiber members") {
    auto l = load("cholesterol.json", "cholesterol_clusters.json");
    auto h = construct_projected_abstraction(l.scm, l.cm, SigmaPolicy::General);
    int x = h.scm.variable("X"), tc = h.scm.variable("TC"), y = h.scm.variable("Y");
    CHECK(h.sigma.violators == std::vector<int>{tc});
    for (int xv = 0; xv < 2; ++xv) {
        CounterfactualQuery q;
        q.terms.push_back(point_term({{y, 1}}, {{tc, 1}}));
        q.conditioning.push_back(point_term({{x, xv}}));
        auto sigma = sigma_distribution(l.scm, l.cm, "TC", "tc1", SigmaPolicy::General, {{"X", std::to_string(xv)}});
        Rational mixture = 0;
        int hdl = l.scm.variable("HDL"), ldl = l.scm.variable("LDL"), ly = l.scm.variable("Y"), lx = l.scm.variable("X");
        for (auto& [t, p] : sigma) {
            CounterfactualQuery low;
            low.terms.push_back(point_term({{ly, 1}}, {{hdl, t[0]}, {ldl, t[1]}}));
            low.conditioning.push_back(point_term({{lx, xv}}));
            mixture += p * prob_query(l.scm, low);
        }
        CHECK(prob_query(h.scm, q) == mixture);
    }
    CHECK(verify_partial_projection(l.scm, h).mismatch_count == 0);
}

TEST_CASE("abstract model matches the fiber-sum low query") {
    std::mt19937_64 rng(99);
    int compared = 0;
    for (int i = 0; i < 40; ++i) {
        toy::RandomSpec spec;
        spec.vars = 3;
        spec.domain_max = 3;
        spec.edge_p = 0.7;
        spec.confound_p = i % 2 ? 0.3 : 0.0;
        auto m = toy::random_model(rng, spec);
        auto scm = m.scm();
        auto cm = validate_clusters(scm, random_partition(rng, m));
        for (auto policy : {SigmaPolicy::General, SigmaPolicy::Markovian, SigmaPolicy::Agnostic}) {
            SigmaOptions opts{true, nullptr};
            auto h = construct_projected_abstraction(scm, cm, policy, opts);
            CHECK(verify_partial_projection(scm, h).mismatch_count == 0);
            if (policy != SigmaPolicy::General) continue;
            auto sm = build_sigma_model(scm, cm, policy);
            for (int k = 0; k < 8; ++k) {
                auto q = random_high_query(rng, h.cm, 1 + k % 2, k % 3 == 0);
                auto high = evaluate_or_kind([&] { return prob_query(h.scm, q); });
                auto low = evaluate_or_kind(
                    [&] { return prob_query(sm.model.scm, resolve_soft_atoms(sm, sm.model.cm, lower_query(sm.model.cm, q), opts)); });
                CHECK(high == low);
                ++compared;
            }
        }
    }
    CHECK(compared == 320);
}

TEST_CASE("bounds and the policy sandwich") {
    auto l = load("insurance.json", "insurance_clusters.json");
    auto [lo, hi] = disambiguation_bounds(l.scm, l.cm, "XH", "xC", {{2, 1}});
    CHECK(lo == Rational(9, 100));
    CHECK(hi == Rational(91, 100));
    auto [elo, ehi] = disambiguation_bounds(l.scm, l.cm, "XH", "xE", {{2, 1}});
    CHECK(elo == Rational(9, 10));
    CHECK(ehi == Rational(9, 10));
    CHECK(kind_of([&] { disambiguation_bounds(l.scm, l.cm, "XH", "xC", {{1, 0}}); }) == ErrorKind::InvalidQuery);

    for (auto policy : {SigmaPolicy::General, SigmaPolicy::Markovian, SigmaPolicy::Agnostic})
        for (auto z : {"z1", "z2"}) {
            auto sigma = sigma_distribution(l.scm, l.cm, "XH", "xC", policy, {{"Z", z}});
            Rational mix = 0;
            for (auto& [t, p] : sigma) mix += p * prob_query(l.scm, single(point_term({{2, 1}}, {{1, t[0]}})));
            CHECK(lo <= mix);
            CHECK(mix <= hi);
        }

    auto c = load("cholesterol.json", "cholesterol_clusters.json");
    int hdl = c.scm.variable("HDL"), ldl = c.scm.variable("LDL"), y = c.scm.variable("Y");
    auto [clo, chi] = disambiguation_bounds(c.scm, c.cm, "TC", "tc1", {{y, 1}});
    CounterfactualQuery both;
    both.terms.push_back(point_term({{y, 1}}, {{hdl, 0}, {ldl, 1}}));
    both.terms.push_back(point_term({{y, 1}}, {{hdl, 1}, {ldl, 0}}));
    CHECK(clo == prob_query(c.scm, both));
    Rational a = prob_query(c.scm, single(both.terms[0])), b = prob_query(c.scm, single(both.terms[1]));
    CHECK(chi == a + b - clo);
}

TEST_CASE("policies coincide without parents or confounding") {
    std::mt19937_64 rng(12);
    for (int i = 0; i < 20; ++i) {
        toy::RandomSpec spec;
        spec.vars = 2;
        spec.domain_max = 4;
        spec.edge_p = 1.0;
        auto m = toy::random_model(rng, spec);
        auto scm = m.scm();
        auto raw = random_partition(rng, m);
        auto cm = validate_clusters(scm, raw);
        auto& a = cm.clusters[0];
        // labels A never produces fall back to uniform under every policy alike
        SigmaOptions opts{true, nullptr};
        for (int label = 0; label < static_cast<int>(a.labels.size()); ++label) {
            auto g = sigma_distribution(scm, cm, a.name, a.labels[label], SigmaPolicy::General, {}, opts);
            auto mk = sigma_distribution(scm, cm, a.name, a.labels[label], SigmaPolicy::Markovian, {}, opts);
            auto ag = sigma_distribution(scm, cm, a.name, a.labels[label], SigmaPolicy::Agnostic, {}, opts);
            CHECK(g == mk);
            CHECK(g == ag);
            if (a.fiber_size(label) == 1) CHECK(g.begin()->second == 1);
        }
    }
}

TEST_CASE("projected sampling") {
    auto l = load("insurance.json", "insurance_clusters.json");
    auto h = construct_projected_abstraction(l.scm, l.cm, SigmaPolicy::General);
    ProjectedSampler s(h, "XH", "xC", {{"Z", "z1"}});
    CHECK(s.support() == std::vector<Tuple>{{0}, {1}});
    CHECK(s.weights() == std::vector<Rational>{Rational(4, 5), Rational(1, 5)});
    auto draws = s.sample(100000, 42);
    double x1 = 0;
    for (auto& t : draws) x1 += t[0] == 0;
    double tv = std::abs(x1 / draws.size() - 0.8);
    CHECK(tv < 0.02);
    CHECK(s.sample(1000, 42) == std::vector<Tuple>(draws.begin(), draws.begin() + 1000));
    CHECK(s.sample(1000, 43) != s.sample(1000, 42));
    CHECK(projected_sample(h, "XH", "xC", {{"Z", "z1"}}, 7) == projected_sample(h, "XH", "xC", {{"Z", "z1"}}, 7));

    ProjectedSampler e(h, "XH", "xE", {{"Z", "z2"}});
    for (auto& t : e.sample(200, 1)) CHECK(t == Tuple{2});
}
