#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "abstrakt/abstraction.hpp"
#include "abstrakt/error.hpp"
#include "abstrakt/io.hpp"
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

// Random partition of each variable's domain into labelled parts; one cluster per variable.
std::vector<ClusterSpec> random_partition(std::mt19937_64& rng, const toy::Model& m, std::vector<std::vector<int>>& part_of) {
    std::vector<ClusterSpec> out;
    part_of.clear();
    for (auto& v : m.vars) {
        int d = static_cast<int>(v.domain.size());
        int parts = 1 + static_cast<int>(rng() % d);
        std::vector<int> p(d);
        for (int x = 0; x < d; ++x) p[x] = x < parts ? x : static_cast<int>(rng() % parts);
        part_of.push_back(p);
        ClusterSpec c;
        c.name = v.name + "H";
        c.members = {v.name};
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

// Violators found by trying every unit and every parent context of every child.
std::set<int> brute_force_violators(const toy::Model& m, const std::vector<std::vector<int>>& part_of) {
    std::set<int> out;
    int n = m.size();
    for (int j = 0; j < n; ++j) {
        auto& child = m.vars[j];
        std::vector<int> radix;
        for (int p : child.parents) radix.push_back(static_cast<int>(m.vars[p].domain.size()));
        std::vector<int> exo_radix;
        for (int e : child.exo) exo_radix.push_back(static_cast<int>(m.exo[e].p.size()));
        for (std::size_t pi = 0; pi < child.parents.size(); ++pi) {
            int i = child.parents[pi];
            for (auto& [key, outv] : child.table) {
                (void)outv;
                for (auto& [key2, out2] : child.table) {
                    bool same_elsewhere = true;
                    for (std::size_t k = 0; k < key.size(); ++k)
                        if (k != pi && key[k] != key2[k]) same_elsewhere = false;
                    if (!same_elsewhere || key[pi] == key2[pi]) continue;
                    if (part_of[i][key[pi]] != part_of[i][key2[pi]]) continue;
                    if (part_of[j][child.table.at(key)] != part_of[j][out2]) out.insert(i);
                }
            }
        }
    }
    return out;
}

}  // namespace

TEST_CASE("cluster documents") {
    auto ins = load("insurance.json", "insurance_clusters.json");
    CHECK(ins.cm.size() == 3);
    auto& xh = ins.cm.clusters[ins.cm.cluster("XH")];
    CHECK(xh.labels == std::vector<std::string>{"xC", "xE"});
    CHECK(xh.fibers[0] == std::vector<Tuple>{{0}, {1}});
    CHECK(xh.lossy());

    auto chol = load("cholesterol.json", "cholesterol_clusters.json");
    auto& tc = chol.cm.clusters[chol.cm.cluster("TC")];
    CHECK(tc.labels == std::vector<std::string>{"tc0", "tc1", "tc2"});
    CHECK(tc.members.size() == 2);

    auto dropped = load("insurance.json", "insurance_drop_z_clusters.json");
    CHECK_FALSE(dropped.cm.covers_all());
    CHECK(dropped.cm.cluster_of[0] == -1);

    // round trip
    auto again = validate_clusters(ins.scm, cluster_doc_json(ins.cm));
    CHECK(cluster_doc_json(again) == cluster_doc_json(ins.cm));
}

TEST_CASE("cluster validation errors") {
    auto scm = load_scm(toy::fixture("insurance.json"));
    auto ident = [](std::string name, std::vector<std::string> members) {
        return ClusterSpec{std::move(name), std::move(members), {}};
    };
    CHECK(kind_of([&] { validate_clusters(scm, {ident("ZY", {"Z", "Y"}), ident("X", {"X"})}); }) ==
          ErrorKind::InadmissibleClustering);
    CHECK(kind_of([&] { validate_clusters(scm, {ident("A", {"Z", "X"}), ident("B", {"X", "Y"})}); }) == ErrorKind::NotPartition);
    CHECK(kind_of([&] { validate_clusters(scm, {ident("A", {"W"})}); }) == ErrorKind::UnknownVariable);
    ClusterSpec missing{"XH", {"X"}, {{"xC", {{"x1"}, {"x2"}}}}};
    CHECK(kind_of([&] { validate_clusters(scm, {ident("Z", {"Z"}), missing, ident("Y", {"Y"})}); }) ==
          ErrorKind::IncompleteValuePartition);
    ClusterSpec twice{"XH", {"X"}, {{"a", {{"x1"}, {"x2"}}}, {"b", {{"x2"}, {"x3"}}}}};
    CHECK(kind_of([&] { validate_clusters(scm, {twice}); }) == ErrorKind::IncompleteValuePartition);
    CHECK(kind_of([&] { validate_clusters(scm, "{\"clusters\": 3}"); }) == ErrorKind::ParseError);
}

TEST_CASE("tau and its preimage") {
    auto ins = load("insurance.json", "insurance_clusters.json");
    int xh = ins.cm.cluster("XH");
    CHECK(apply_tau(ins.cm, {{1, 1}}) == Assignment{{xh, 0}});
    CHECK(apply_tau(ins.cm, {{1, 2}}) == Assignment{{xh, 1}});
    CHECK(preimage(ins.cm, {{xh, 0}}) == std::vector<Assignment>{{{1, 0}}, {{1, 1}}});
    CHECK(preimage(ins.cm, {{xh, 1}}) == std::vector<Assignment>{{{1, 2}}});
    CHECK(kind_of([&] { preimage(ins.cm, {{xh, 5}}); }) == ErrorKind::UnknownHighValue);

    auto chol = load("cholesterol.json", "cholesterol_clusters.json");
    int tc = chol.cm.cluster("TC");
    int hdl = chol.scm.variable("HDL"), ldl = chol.scm.variable("LDL");
    CHECK(apply_tau(chol.cm, {{hdl, 1}, {ldl, 0}}) == Assignment{{tc, 1}});
    CHECK(preimage(chol.cm, {{tc, 1}}) == std::vector<Assignment>{{{hdl, 0}, {ldl, 1}}, {{hdl, 1}, {ldl, 0}}});
    CHECK(kind_of([&] { apply_tau(chol.cm, {{hdl, 1}}); }) == ErrorKind::NotClusterUnion);

    auto id = identity_clusters(ins.scm);
    CHECK(apply_tau(id, {{0, 1}, {2, 0}}) == Assignment{{0, 1}, {2, 0}});
}

TEST_CASE("fibers partition the clustered domain") {
    std::mt19937_64 rng(31);
    for (int i = 0; i < 30; ++i) {
        toy::RandomSpec spec;
        spec.vars = 3;
        spec.domain_max = 4;
        auto m = toy::random_model(rng, spec);
        auto scm = m.scm();
        std::vector<std::vector<int>> parts;
        auto cm = validate_clusters(scm, random_partition(rng, m, parts));
        std::vector<int> radix;
        for (auto& c : cm.clusters) radix.push_back(static_cast<int>(c.labels.size()));
        std::set<Assignment> seen;
        std::size_t count = 0;
        for (std::size_t k = 0; k < radix_product(radix); ++k) {
            auto t = index_tuple(k, radix);
            Assignment h;
            for (int c = 0; c < cm.size(); ++c) h[c] = t[c];
            for (auto& low : preimage(cm, h)) {
                CHECK(apply_tau(cm, low) == h);
                seen.insert(low);
                ++count;
            }
        }
        std::uint64_t low_states = 1;
        for (auto& v : m.vars) low_states *= v.domain.size();
        CHECK(count == low_states);
        CHECK(seen.size() == low_states);
    }
}

TEST_CASE("AIC on the fixtures") {
    auto ins = load("insurance.json", "insurance_clusters.json");
    auto r = check_aic(ins.scm, ins.cm);
    REQUIRE(r.violators == std::vector<int>{ins.cm.cluster("XH")});
    auto& w = r.witnesses[0];
    CHECK(w.child == ins.cm.cluster("Y"));
    CHECK(replay_witness(ins.scm, ins.cm, w));
    // the two contexts are x1 and x2, and Y reads different noise for them
    std::set<int> xs{w.context_a.at(1), w.context_b.at(1)};
    CHECK(xs == std::set<int>{0, 1});
    CHECK(w.u[ins.scm.exo_slot({3, 0})] != w.u[ins.scm.exo_slot({4, 0})]);

    auto chol = load("cholesterol.json", "cholesterol_clusters.json");
    auto rc = check_aic(chol.scm, chol.cm);
    REQUIRE(rc.violators == std::vector<int>{chol.cm.cluster("TC")});
    auto& wc = rc.witnesses[0];
    CHECK(replay_witness(chol.scm, chol.cm, wc));
    CHECK(wc.u[chol.scm.exo_slot({chol.scm.block("U_Y"), 0})] == 0);
    int hdl = chol.scm.variable("HDL");
    // (HDL=0, LDL=1) gives Y=1, (HDL=1, LDL=0) gives Y=0
    int high_01 = wc.context_a.at(hdl) == 0 ? wc.high_a : wc.high_b;
    int high_10 = wc.context_a.at(hdl) == 0 ? wc.high_b : wc.high_a;
    CHECK(high_01 == 1);
    CHECK(high_10 == 0);

    for (auto f : {"insurance.json", "cholesterol.json", "colored_digit.json"}) {
        auto scm = load_scm(toy::fixture(f));
        CHECK(check_aic(scm, identity_clusters(scm)).violators.empty());
    }
    auto idc = load("insurance.json", "insurance_identity_clusters.json");
    CHECK(check_aic(idc.scm, idc.cm).violators.empty());
}

TEST_CASE("AIC violators match a brute-force search") {
    std::mt19937_64 rng(4);
    int with_violators = 0;
    for (int i = 0; i < 120; ++i) {
        toy::RandomSpec spec;
        spec.vars = 3;
        spec.domain_max = 3;
        spec.edge_p = 0.7;
        spec.confound_p = 0.3;
        auto m = toy::random_model(rng, spec);
        auto scm = m.scm();
        std::vector<std::vector<int>> parts;
        auto cm = validate_clusters(scm, random_partition(rng, m, parts));
        auto r = check_aic(scm, cm);
        auto expected = brute_force_violators(m, parts);
        CHECK(std::set<int>(r.violators.begin(), r.violators.end()) == expected);
        for (auto& w : r.witnesses) CHECK(replay_witness(scm, cm, w));
        with_violators += !expected.empty();
    }
    CHECK(with_violators > 10);
}

TEST_CASE("singleton parts never violate") {
    std::mt19937_64 rng(6);
    for (int i = 0; i < 30; ++i) {
        toy::RandomSpec spec;
        spec.vars = 4;
        spec.confound_p = 0.3;
        auto m = toy::random_model(rng, spec);
        auto scm = m.scm();
        CHECK(check_aic(scm, identity_clusters(scm)).violators.empty());
    }
}

TEST_CASE("query translation") {
    auto ins = load("insurance.json", "insurance_clusters.json");
    int z = ins.cm.cluster("Z"), xh = ins.cm.cluster("XH"), y = ins.cm.cluster("Y");

    CounterfactualQuery high;
    high.terms.push_back(point_term({{y, 1}}, {{xh, 0}}));
    high.conditioning.push_back(point_term({{z, 0}}));
    auto low = lower_query(ins.cm, high);
    CHECK(low.projected);
    REQUIRE(low.families.size() == 1);
    CHECK(low.families[0].members == std::vector<int>{1});
    CHECK(low.families[0].fibers[0] == std::vector<Tuple>{{0}, {1}});
    CHECK(low.terms[0].soft == std::vector<SoftAtom>{{0, 0}});
    CHECK(low.terms[0].hard.empty());

    // a singleton label of a lossy cluster is still read through its family
    CounterfactualQuery xe;
    xe.terms.push_back(point_term({{y, 1}}, {{xh, 1}}));
    auto lxe = lower_query(ins.cm, xe);
    CHECK(lxe.terms[0].soft == std::vector<SoftAtom>{{0, 1}});

    // translate back
    auto back = translate_query(ins.cm, low);
    CHECK(back.terms[0].hard == std::vector<HardAtom>{{xh, 0}});
    CHECK(back.terms[0].outcomes[0].vars == std::vector<int>{y});
    CHECK(back.conditioning[0].outcomes[0].allowed == std::vector<Tuple>{{0}});

    // low outcome X=x1 becomes XH=xC
    CounterfactualQuery lx;
    lx.terms.push_back(point_term({{1, 0}}));
    CHECK(translate_query(ins.cm, lx).terms[0].outcomes[0].allowed == std::vector<Tuple>{{0}});

    auto chol = load("cholesterol.json", "cholesterol_clusters.json");
    CounterfactualQuery hdl_only;
    hdl_only.terms.push_back(point_term({{chol.scm.variable("HDL"), 0}}));
    CHECK(kind_of([&] { translate_query(chol.cm, hdl_only); }) == ErrorKind::NotClusterUnion);
}

TEST_CASE("identity clusters leave queries alone") {
    std::mt19937_64 rng(17);
    for (int i = 0; i < 30; ++i) {
        toy::RandomSpec spec;
        spec.vars = 3;
        auto m = toy::random_model(rng, spec);
        auto scm = m.scm();
        auto id = identity_clusters(scm);
        CounterfactualQuery q;
        q.terms.push_back(point_term({{2, 0}}, {{0, 1}}));
        q.terms.push_back(point_term({{1, 0}}));
        q.conditioning.push_back(point_term({{0, 0}}));
        auto t = translate_query(id, q);
        for (std::size_t k = 0; k < q.terms.size(); ++k) {
            CHECK(t.terms[k].hard == q.terms[k].hard);
            CHECK(t.terms[k].outcomes[0].vars == q.terms[k].outcomes[0].vars);
            CHECK(t.terms[k].outcomes[0].allowed == q.terms[k].outcomes[0].allowed);
        }
        auto l = lower_query(id, q);
        CHECK(l.families.empty());
        if (prob_query(scm, CounterfactualQuery{{q.conditioning}, {}, {}, false}) == 0) continue;
        CHECK(prob_query(scm, l) == prob_query(scm, q));
    }
}
