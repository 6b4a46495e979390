#pragma once

#include "abstrakt/scm.hpp"
#include "abstrakt/valuation.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace abstrakt {

struct Cluster {
    std::string name;
    std::vector<int> members;                // low-level variables, in the order tuples are written
    std::vector<std::string> labels;         // high-level domain
    std::vector<std::vector<Tuple>> fibers;  // per label, lexicographic order
    std::map<Tuple, int> label_of;

    VariableDecl high_decl() const { return VariableDecl{name, labels}; }
    int fiber_size(int label) const { return static_cast<int>(fibers[label].size()); }
    bool lossy() const;
};

struct ClusterMap {
    std::vector<VariableDecl> low;  // declarations of the model the map was validated against
    std::vector<Cluster> clusters;
    std::vector<int> cluster_of;    // per low variable, -1 when projected away

    int size() const { return static_cast<int>(clusters.size()); }
    std::vector<VariableDecl> high_decls() const;
    std::optional<int> find_cluster(const std::string& name) const;
    int cluster(const std::string& name) const;  // throws UnknownVariable
    bool covers_all() const;
    std::vector<int> clustered_vars() const;     // sorted
};

// Raw cluster description, as read from a cluster document.
struct ClusterSpec {
    std::string name;
    std::vector<std::string> members;
    std::vector<std::pair<std::string, std::vector<std::vector<std::string>>>> values;
};

ClusterMap validate_clusters(const DiscreteScm& scm, const std::vector<ClusterSpec>& raw);
ClusterMap validate_clusters(const DiscreteScm& scm, const std::string& json_text);
// Partition checks only, over bare declarations (no admissibility).
ClusterMap cluster_map_over(const std::vector<VariableDecl>& low, const std::vector<ClusterSpec>& raw);
std::vector<ClusterSpec> parse_cluster_doc(const std::string& json_text);
std::string cluster_doc_json(const ClusterMap& cm);
ClusterMap identity_clusters(const DiscreteScm& scm);

// Same clustering expressed over another model that declares the clustered variables.
ClusterMap rebase(const ClusterMap& cm, const DiscreteScm& target);

// Model restricted to the clustered variables (dropped ones substituted away) and the
// matching cluster map. Returns copies of the inputs when nothing is dropped.
struct ClusteredModel {
    DiscreteScm scm;
    ClusterMap cm;
};
ClusteredModel clustered_model(const DiscreteScm& scm, const ClusterMap& cm);

using Assignment = std::map<int, int>;  // variable -> value index

// Low assignment over a cluster union -> high assignment (cluster -> label).
Assignment apply_tau(const ClusterMap& cm, const Assignment& low);
std::vector<Assignment> preimage(const ClusterMap& cm, const Assignment& high);

// Admissibility: no descendant of a member outside the cluster is an ancestor of a member.
void check_admissible(const Diagram& low_diagram, const ClusterMap& cm);

struct AicWitness {
    int violator = 0;             // cluster
    int child = 0;                // cluster
    std::vector<int> u;           // full exogenous assignment
    Assignment context_a;         // external parents of the child's members
    Assignment context_b;
    int high_a = 0;               // child's tau output under each context
    int high_b = 0;
};

struct AicReport {
    std::vector<int> violators;  // sorted cluster indices
    std::vector<AicWitness> witnesses;
};

AicReport check_aic(const DiscreteScm& scm, const ClusterMap& cm);

// Replays a witness with evaluate_unit; true when the two tau outputs differ.
bool replay_witness(const DiscreteScm& scm, const ClusterMap& cm, const AicWitness& w);

// Low query -> high query over cm.high_decls().
CounterfactualQuery translate_query(const ClusterMap& cm, const CounterfactualQuery& low);

// High query -> fiber-sum low query over cm.low. Interventions on lossy clusters become
// soft atoms whose families carry no tables yet; resolve them with resolve_soft_atoms.
CounterfactualQuery lower_query(const ClusterMap& cm, const CounterfactualQuery& high);

}  // namespace abstrakt
