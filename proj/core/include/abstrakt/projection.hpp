#pragma once

#include "abstrakt/abstraction.hpp"
#include "abstrakt/scm.hpp"
#include "abstrakt/valuation.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace abstrakt {

enum class SigmaPolicy { Agnostic, Markovian, General };

const char* policy_name(SigmaPolicy p);
SigmaPolicy parse_policy(const std::string& text);  // throws ParseError

struct SigmaOptions {
    bool uniform_fallback = false;             // zero-mass contexts get a uniform distribution
    std::vector<std::string>* warnings = nullptr;
};

// Substitutes the mechanisms of dropped variables into their children. Variables keep
// their relative order; exogenous blocks are kept as they are.
DiscreteScm project_full(const DiscreteScm& scm, const std::vector<int>& keep);

struct DeltaSplit {
    int cluster = 0;
    std::vector<std::string> observed;         // high labels
    std::vector<std::vector<Tuple>> unobserved;  // per label, fiber in canonical order

    Tuple delta(int label, int index) const;
    std::pair<int, int> split(const Tuple& low) const;  // (label, index)
};

std::vector<DeltaSplit> delta_splits(const ClusterMap& cm);

// Disambiguation tables. The context of a cluster is made of the high values of some
// clusters plus, for the general policy, the class of the exogenous blocks it shares with
// other clusters.
struct SigmaTables {
    SigmaPolicy policy = SigmaPolicy::General;
    std::vector<int> violators;                      // sorted cluster indices
    std::vector<int> label_count;                    // per cluster
    std::vector<std::vector<int>> context_clusters;  // per cluster, sorted
    std::vector<std::vector<int>> shared_blocks;     // per cluster, sorted; empty unless general
    std::vector<std::vector<int>> shared_slots;      // exogenous slots of shared_blocks
    std::vector<std::map<Tuple, int>> shared_class;  // per cluster: shared slot values -> class
    std::vector<int> class_count;
    // per cluster: (label, context index, class) -> distribution over the fiber
    std::vector<std::map<std::tuple<int, int, int>, std::vector<Rational>>> table;

    bool is_violator(int cluster) const;
    int context_index(int cluster, const Tuple& high_ctx) const;
    int context_count(int cluster) const;
    Tuple context_tuple(int cluster, int index) const;
};

struct SigmaModel {
    ClusteredModel model;
    SigmaTables tables;
};

SigmaModel build_sigma_model(const DiscreteScm& scm, const ClusterMap& cm, SigmaPolicy policy);

// Distribution for one (label, context, class) with the fallback applied; throws
// ImpossibleContext when undefined.
std::vector<Rational> sigma_lookup(const SigmaTables& t, const ClusterMap& cm, int cluster, int label, int ctx, int cls,
                                   const SigmaOptions& options = {});

// Context by name: cluster names map to high labels, "block.member" to exogenous values.
using NamedContext = std::map<std::string, std::string>;

std::map<Tuple, Rational> sigma_distribution(const DiscreteScm& scm, const ClusterMap& cm, const std::string& cluster,
                                             const std::string& value, SigmaPolicy policy, const NamedContext& context,
                                             const SigmaOptions& options = {});
// `exo` supplies the names and domains of the shared exogenous slots.
std::map<Tuple, Rational> sigma_distribution(const SigmaTables& t, const ClusterMap& cm, const DiscreteScm& exo,
                                             int cluster, int label, const NamedContext& context,
                                             const SigmaOptions& options = {});

// Attaches σ tables to the soft families of a lowered query. For projected queries the
// natural values of AIC violators are read through their draw as well.
CounterfactualQuery resolve_soft_atoms(const DiscreteScm& scm, const ClusterMap& cm, const CounterfactualQuery& q,
                                       SigmaPolicy policy, const SigmaOptions& options = {});
CounterfactualQuery resolve_soft_atoms(const SigmaModel& m, const ClusterMap& cm, const CounterfactualQuery& q,
                                       const SigmaOptions& options = {});

// Unobserved half of a violator: one coordinate per (lossy label, context tuple).
struct WuEncoding {
    int cluster = 0;
    int block = -1;                                  // block index in the high model
    std::vector<std::pair<int, int>> coordinates;    // (label, context index)
    std::vector<int> radix;                          // fiber sizes

    int coordinate(int label, int ctx) const;        // -1 when the label is a singleton
    int index_at(int value, int coord) const;
    int with(int value, int coord, int index) const;
};

struct HighLevelScm {
    DiscreteScm scm;  // over the clusters; blocks = low blocks then W^u blocks
    ClusterMap cm;    // over the clustered low variables
    std::vector<DeltaSplit> splits;
    SigmaTables sigma;
    std::vector<WuEncoding> wu;  // one per violator, in violator order

    const WuEncoding* wu_of(int cluster) const;
};

HighLevelScm construct_projected_abstraction(const DiscreteScm& scm, const ClusterMap& cm, SigmaPolicy policy,
                                             const SigmaOptions& options = {});

std::string high_level_to_json(const HighLevelScm& h);
HighLevelScm high_level_from_json(const std::string& text);

struct ProjectionMismatch {
    std::vector<int> u;
    Assignment intervention;  // low variable -> value
    Tuple expected;           // tau of the low outcome, per cluster
    Tuple actual;
};

struct ProjectionReport {
    std::uint64_t checked = 0;
    std::vector<ProjectionMismatch> mismatches;  // capped
    std::uint64_t mismatch_count = 0;
};

ProjectionReport verify_partial_projection(const DiscreteScm& low, const HighLevelScm& high,
                                           std::size_t keep_mismatches = 10);

// min / max over the fiber of a high value of P(outcome holds under do(c)) jointly.
std::pair<Rational, Rational> disambiguation_bounds(const DiscreteScm& scm, const ClusterMap& cm,
                                                    const std::string& cluster, const std::string& value,
                                                    const std::vector<std::pair<int, int>>& outcome);

// Distribution over the mechanism of `variable` as a function of its endogenous parents,
// given some exogenous slot values (slot -> value).
std::map<Tuple, Rational> canonical_response_profile(const DiscreteScm& scm, int variable,
                                                     const std::map<int, int>& shared = {});

// Draws a low tuple for `value` of a cluster using the σ tables stored in `high`.
class ProjectedSampler {
public:
    ProjectedSampler(const HighLevelScm& high, const std::string& cluster, const std::string& value,
                     const NamedContext& context, const SigmaOptions& options = {});
    const std::vector<Tuple>& support() const { return support_; }
    const std::vector<Rational>& weights() const { return weights_; }
    std::vector<Tuple> sample(std::size_t n, std::uint64_t seed) const;

private:
    std::vector<Tuple> support_;
    std::vector<Rational> weights_;
};

Tuple projected_sample(const HighLevelScm& high, const std::string& cluster, const std::string& value,
                       const NamedContext& context, std::uint64_t seed);

}  // namespace abstrakt
