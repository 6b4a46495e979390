#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace abstrakt {

enum class ErrorKind {
    ParseError,
    SyntaxError,
    CyclicDependencies,
    NonNormalizedBlock,
    PartialMechanism,
    DomainMismatch,
    UnknownVariable,
    IncompleteAssignment,
    InvalidQuery,
    ZeroConditioning,
    SizeExceeded,
    NotClusterUnion,
    NotPartition,
    InadmissibleClustering,
    IncompleteValuePartition,
    UnknownHighValue,
    ImpossibleContext,
    FixpointMismatch,
    UnboundVariable,
    UnsupportedData,
    UnsupportedQuery,
    UnsupportedModel,
};

const char* kind_name(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message);
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

// Enumeration budget. Default 10^7 states, ABSTRAKT_BUDGET overrides,
// set_budget overrides both (0 restores the environment/default value).
std::uint64_t enumeration_budget();
void set_budget(std::uint64_t states);

// Saturating product helper for size estimates.
std::uint64_t sat_mul(std::uint64_t a, std::uint64_t b);

void check_budget(std::uint64_t states, const std::string& what);

}  // namespace abstrakt
