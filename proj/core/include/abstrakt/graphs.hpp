#pragma once

#include "abstrakt/abstraction.hpp"
#include "abstrakt/scm.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace abstrakt {

struct ClusterDiagram : Diagram {
    bool projected = false;
    std::vector<int> violators;  // sorted, meaningful when projected
};

// Marginalizes the nodes outside `keep` (sorted) from a diagram.
Diagram latent_projection(const Diagram& g, const std::vector<int>& keep);

ClusterDiagram build_cdag(const Diagram& diagram, const ClusterMap& cm);

// Rewrite rules around violators, iterated until nothing changes.
ClusterDiagram projection_fixpoint(const ClusterDiagram& g, const std::vector<int>& violators);
// Same rules applied once per violator, latest in topological order first.
ClusterDiagram projection_one_pass(const ClusterDiagram& g, const std::vector<int>& violators);
// Both constructions; throws FixpointMismatch when they differ.
ClusterDiagram build_projected_cdag(const ClusterDiagram& cdag, const std::vector<int>& violators);

bool d_separated(const Diagram& g, const std::vector<int>& x, const std::vector<int>& y, const std::vector<int>& z);

std::vector<std::vector<int>> c_components(const Diagram& g, const std::vector<int>& subset);

struct CtfbnViolation {
    std::string kind;      // independence | exclusion | consistency
    std::string instance;  // readable equation
    Rational lhs, rhs;
};

struct CtfbnReport {
    std::uint64_t checked = 0;
    std::uint64_t violation_count = 0;
    std::vector<CtfbnViolation> violations;  // first few, in enumeration order

    bool ok() const { return violation_count == 0; }
};

CtfbnReport ctfbn_check(const Diagram& g, const DiscreteScm& scm, int max_terms = 2, std::size_t keep = 50);

std::string graph_to_json(const Diagram& g);
std::string graph_to_json(const ClusterDiagram& g);
ClusterDiagram graph_from_json(const std::string& text);
std::string graph_to_dot(const ClusterDiagram& g);

}  // namespace abstrakt
