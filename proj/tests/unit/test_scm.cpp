#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "abstrakt/error.hpp"
#include "abstrakt/io.hpp"
#include "abstrakt/rational.hpp"
#include "abstrakt/scm.hpp"
#include "toy.hpp"

#include <json.hpp>

#include <algorithm>

using namespace abstrakt;
using nlohmann::ordered_json;

namespace {

ordered_json insurance_doc() { return ordered_json::parse(read_file(toy::fixture("insurance.json"))); }

ErrorKind kind_of(const std::string& text) {
    try {
        validate_scm(text);
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("model was accepted");
    return ErrorKind::ParseError;
}

Diagram diagram(std::vector<std::string> nodes, std::vector<std::pair<int, int>> dir,
                std::vector<std::pair<int, int>> bi = {}) {
    Diagram g;
    g.nodes = std::move(nodes);
    for (auto [a, b] : dir) g.add_directed(a, b);
    for (auto [a, b] : bi) g.add_bidirected(a, b);
    return g;
}

}  // namespace

TEST_CASE("rational literals are exact") {
    CHECK(parse_rational("0.7") == Rational(7, 10));
    CHECK(parse_rational("0.09") == Rational(9, 100));
    CHECK(parse_rational("-1.25") == Rational(-5, 4));
    CHECK(parse_rational("2/6") == Rational(1, 3));
    CHECK(parse_rational("3") == Rational(3));
    CHECK(parse_rational("007") == Rational(7));
    CHECK_THROWS_AS(parse_rational("1/0"), Error);
    CHECK_THROWS_AS(parse_rational("abc"), Error);
    CHECK(to_string(Rational(149, 250)) == "149/250");
    CHECK(to_decimal(Rational(149, 250)) == "0.596");
    CHECK(to_decimal(Rational(1, 3), 4) == "0.3333");
    CHECK(to_decimal(Rational(2, 3), 4) == "0.6667");
}

TEST_CASE("insurance model validates with 144 exogenous states") {
    auto scm = load_scm(toy::fixture("insurance.json"));
    CHECK(scm.num_vars() == 3);
    CHECK(scm.blocks().size() == 6);
    CHECK(scm.exo_state_count() == 144);
    CHECK(scm.exo_name(0) == "U_Z.u");
    CHECK(scm.blocks()[0].table[0] == Rational(7, 10));
}

TEST_CASE("validation errors") {
    SUBCASE("block not normalized") {
        auto doc = insurance_doc();
        doc["blocks"][0]["table"][0]["p"] = "0.5";
        doc["blocks"][0]["table"][1]["p"] = "0.4";
        CHECK(kind_of(doc.dump()) == ErrorKind::NonNormalizedBlock);
    }
    SUBCASE("negative probability") {
        auto doc = insurance_doc();
        doc["blocks"][0]["table"][0]["p"] = "1.5";
        doc["blocks"][0]["table"][1]["p"] = "-0.5";
        CHECK(kind_of(doc.dump()) == ErrorKind::NonNormalizedBlock);
    }
    SUBCASE("missing mechanism row") {
        auto doc = insurance_doc();
        doc["mechanisms"][1]["table"].erase(doc["mechanisms"][1]["table"].begin() + 4);
        CHECK(kind_of(doc.dump()) == ErrorKind::PartialMechanism);
    }
    SUBCASE("output outside the domain") {
        auto doc = insurance_doc();
        doc["mechanisms"][2]["table"][0]["out"] = "2";
        CHECK(kind_of(doc.dump()) == ErrorKind::DomainMismatch);
    }
    SUBCASE("cycle") {
        auto doc = insurance_doc();
        // Z reads Y: every row duplicated over Y's domain
        auto& mz = doc["mechanisms"][0];
        mz["endo_parents"] = {"Y"};
        ordered_json rows = ordered_json::array();
        for (std::string y : {"0", "1"})
            for (std::string z : {"z1", "z2"}) rows.push_back({{"parents", {y, z}}, {"out", z}});
        mz["table"] = rows;
        CHECK(kind_of(doc.dump()) == ErrorKind::CyclicDependencies);
    }
    SUBCASE("unknown parent") {
        auto doc = insurance_doc();
        doc["mechanisms"][2]["endo_parents"] = {"W"};
        CHECK(kind_of(doc.dump()) == ErrorKind::UnknownVariable);
    }
    SUBCASE("malformed json") { CHECK(kind_of("{\"endogenous\": [") == ErrorKind::ParseError); }
}

TEST_CASE("random models are accepted, and rejected once a row is removed") {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 40; ++i) {
        toy::RandomSpec spec;
        spec.vars = 2 + i % 3;
        spec.confound_p = 0.3;
        auto m = toy::random_model(rng, spec);
        auto scm = m.scm();
        CHECK(scm.num_vars() == spec.vars);
        auto doc = ordered_json::parse(m.json());
        int v = static_cast<int>(rng() % spec.vars);
        auto& rows = doc["mechanisms"][v]["table"];
        rows.erase(rows.begin() + static_cast<long>(rng() % rows.size()));
        CHECK(kind_of(doc.dump()) == ErrorKind::PartialMechanism);
    }
}

TEST_CASE("round trip through the file format") {
    for (auto f : {"insurance.json", "cholesterol.json", "colored_digit.json", "hospital.json"}) {
        auto scm = load_scm(toy::fixture(f));
        auto again = validate_scm(scm_to_json(scm));
        CHECK(scm_to_json(again) == scm_to_json(scm));
        CHECK(induce_diagram(again) == induce_diagram(scm));
    }
}

TEST_CASE("induced diagrams") {
    auto ins = induce_diagram(load_scm(toy::fixture("insurance.json")));
    CHECK(ins.nodes == std::vector<std::string>{"Z", "X", "Y"});
    CHECK(ins.directed == std::set<std::pair<int, int>>{{0, 1}, {1, 2}});
    CHECK(ins.bidirected.empty());

    auto cd = induce_diagram(load_scm(toy::fixture("colored_digit.json")));
    int d = cd.node("D"), c = cd.node("C"), i = cd.node("I");
    CHECK(cd.directed == std::set<std::pair<int, int>>{{d, i}, {c, i}});
    CHECK(cd.has_bidirected(d, c));
    CHECK(cd.bidirected.size() == 1);

    toy::Model one;
    one.exo.push_back({"U", {Rational(1, 2), Rational(1, 2)}});
    one.vars.push_back({"A", {"a0", "a1"}, {}, {0}, {{{0}, 0}, {{1}, 1}}});
    auto g = induce_diagram(one.scm());
    CHECK(g.size() == 1);
    CHECK(g.directed.empty());
    CHECK(g.bidirected.empty());
    CHECK(induce_diagram(one.scm()) == g);
}

TEST_CASE("bidirected edges follow shared blocks") {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 60; ++i) {
        toy::RandomSpec spec;
        spec.vars = 4;
        spec.confound_p = 0.4;
        auto m = toy::random_model(rng, spec);
        auto g = induce_diagram(m.scm());
        for (int a = 0; a < 4; ++a)
            for (int b = a + 1; b < 4; ++b) {
                bool shared = false;
                for (int e : m.vars[a].exo)
                    for (int f : m.vars[b].exo) shared |= e == f;
                CHECK(g.has_bidirected(a, b) == shared);
            }
        for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b) {
                bool edge = std::find(m.vars[b].parents.begin(), m.vars[b].parents.end(), a) != m.vars[b].parents.end();
                CHECK(static_cast<bool>(g.directed.count({a, b})) == edge);
            }
    }
}

TEST_CASE("topological order") {
    CHECK(topological_order(diagram({"Z", "X", "Y"}, {{0, 1}, {1, 2}})) == std::vector<int>{0, 1, 2});
    // declared Z, X, W, Y
    CHECK(topological_order(diagram({"Z", "X", "W", "Y"}, {{0, 1}, {0, 2}, {1, 3}, {2, 3}})) ==
          std::vector<int>{0, 1, 2, 3});
    CHECK(topological_order(diagram({"A"}, {})) == std::vector<int>{0});
    // declaration order breaks ties even when later nodes are sources
    CHECK(topological_order(diagram({"Y", "X"}, {{1, 0}})) == std::vector<int>{1, 0});
    try {
        topological_order(diagram({"A", "B"}, {{0, 1}, {1, 0}}));
        FAIL("cycle accepted");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::CyclicDependencies);
    }
}

TEST_CASE("topological order respects every edge on random graphs") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
        int n = 1 + static_cast<int>(rng() % 7);
        std::vector<int> perm(n);
        for (int k = 0; k < n; ++k) perm[k] = k;
        std::shuffle(perm.begin(), perm.end(), rng);
        Diagram g;
        for (int k = 0; k < n; ++k) g.nodes.push_back("N" + std::to_string(k));
        for (int a = 0; a < n; ++a)
            for (int b = a + 1; b < n; ++b)
                if (rng() % 2) g.add_directed(perm[a], perm[b]);
        auto order = topological_order(g);
        std::vector<int> pos(n);
        for (int k = 0; k < n; ++k) pos[order[k]] = k;
        for (auto [a, b] : g.directed) CHECK(pos[a] < pos[b]);
    }
}
