#include "abstrakt/abstraction.hpp"
#include "abstrakt/graphs.hpp"
#include "abstrakt/identify.hpp"
#include "abstrakt/io.hpp"
#include "abstrakt/projection.hpp"
#include "abstrakt/valuation.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace abstrakt;

namespace {

std::string fixture(const std::string& name) { return std::string(FIXTURE_DIR) + "/" + name; }

struct Insurance {
    DiscreteScm scm;
    ClusterMap cm;
    Insurance() : scm(load_scm(fixture("insurance.json"))), cm(validate_clusters(scm, read_file(fixture("insurance_clusters.json")))) {}
};

const Insurance& insurance() {
    static Insurance s;
    return s;
}

void BM_InterventionalQuery(benchmark::State& state) {
    auto& s = insurance();
    CounterfactualQuery q;
    q.terms.push_back(point_term({{2, 1}}, {{1, 0}}));
    for (auto _ : state) benchmark::DoNotOptimize(prob_query(s.scm, q));
}
BENCHMARK(BM_InterventionalQuery);

void BM_TwoWorldQuery(benchmark::State& state) {
    auto& s = insurance();
    CounterfactualQuery q;
    q.terms.push_back(point_term({{2, 1}}, {{1, 0}}));
    q.terms.push_back(point_term({{2, 0}}, {{1, 1}}));
    q.conditioning.push_back(point_term({{0, 0}}));
    for (auto _ : state) benchmark::DoNotOptimize(prob_query(s.scm, q));
}
BENCHMARK(BM_TwoWorldQuery);

void BM_AicCheck(benchmark::State& state) {
    auto& s = insurance();
    for (auto _ : state) benchmark::DoNotOptimize(check_aic(s.scm, s.cm));
}
BENCHMARK(BM_AicCheck);

void BM_ConstructAbstraction(benchmark::State& state) {
    auto& s = insurance();
    for (auto _ : state) benchmark::DoNotOptimize(construct_projected_abstraction(s.scm, s.cm, SigmaPolicy::General));
}
BENCHMARK(BM_ConstructAbstraction);

void BM_ProjectionFixpoint(benchmark::State& state) {
    int n = static_cast<int>(state.range(0));
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> coin(0, 1);
    ClusterDiagram g;
    for (int i = 0; i < n; ++i) g.nodes.push_back("V" + std::to_string(i));
    for (int a = 0; a < n; ++a)
        for (int b = a + 1; b < n; ++b) {
            if (coin(rng) < 0.3) g.add_directed(a, b);
            if (coin(rng) < 0.05) g.add_bidirected(a, b);
        }
    std::vector<int> viol;
    for (int v = 0; v < n; v += 3) viol.push_back(v);
    for (auto _ : state) benchmark::DoNotOptimize(projection_fixpoint(g, viol));
}
BENCHMARK(BM_ProjectionFixpoint)->Arg(8)->Arg(16)->Arg(32);

void BM_IdentifyBackdoor(benchmark::State& state) {
    auto& s = insurance();
    auto g = build_projected_cdag(build_cdag(induce_diagram(s.scm), s.cm), check_aic(s.scm, s.cm).violators);
    EffectQuery q{{{"Y", "1"}}, {{"XH", "xC"}}, {}, false};
    for (auto _ : state) benchmark::DoNotOptimize(identify_effect(g, q));
}
BENCHMARK(BM_IdentifyBackdoor);

void BM_Sampling(benchmark::State& state) {
    auto& s = insurance();
    auto h = construct_projected_abstraction(s.scm, s.cm, SigmaPolicy::General);
    ProjectedSampler sampler(h, "XH", "xC", {{"Z", "z1"}});
    for (auto _ : state) benchmark::DoNotOptimize(sampler.sample(10000, 1));
}
BENCHMARK(BM_Sampling);

}  // namespace

BENCHMARK_MAIN();
