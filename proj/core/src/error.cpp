#include "abstrakt/error.hpp"

#include <atomic>
#include <cstdlib>
#include <limits>

namespace abstrakt {

const char* kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::ParseError: return "ParseError";
        case ErrorKind::SyntaxError: return "SyntaxError";
        case ErrorKind::CyclicDependencies: return "CyclicDependencies";
        case ErrorKind::NonNormalizedBlock: return "NonNormalizedBlock";
        case ErrorKind::PartialMechanism: return "PartialMechanism";
        case ErrorKind::DomainMismatch: return "DomainMismatch";
        case ErrorKind::UnknownVariable: return "UnknownVariable";
        case ErrorKind::IncompleteAssignment: return "IncompleteAssignment";
        case ErrorKind::InvalidQuery: return "InvalidQuery";
        case ErrorKind::ZeroConditioning: return "ZeroConditioning";
        case ErrorKind::SizeExceeded: return "SizeExceeded";
        case ErrorKind::NotClusterUnion: return "NotClusterUnion";
        case ErrorKind::NotPartition: return "NotPartition";
        case ErrorKind::InadmissibleClustering: return "InadmissibleClustering";
        case ErrorKind::IncompleteValuePartition: return "IncompleteValuePartition";
        case ErrorKind::UnknownHighValue: return "UnknownHighValue";
        case ErrorKind::ImpossibleContext: return "ImpossibleContext";
        case ErrorKind::FixpointMismatch: return "FixpointMismatch";
        case ErrorKind::UnboundVariable: return "UnboundVariable";
        case ErrorKind::UnsupportedData: return "UnsupportedData";
        case ErrorKind::UnsupportedQuery: return "UnsupportedQuery";
        case ErrorKind::UnsupportedModel: return "UnsupportedModel";
    }
    return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(message), kind_(kind) {}

namespace {
std::atomic<std::uint64_t> g_override{0};
}

std::uint64_t enumeration_budget() {
    if (auto o = g_override.load()) return o;
    if (const char* env = std::getenv("ABSTRAKT_BUDGET")) {
        char* end = nullptr;
        unsigned long long v = std::strtoull(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return v;
    }
    return 10'000'000ULL;
}

void set_budget(std::uint64_t states) { g_override = states; }

std::uint64_t sat_mul(std::uint64_t a, std::uint64_t b) {
    if (a == 0 || b == 0) return 0;
    if (a > std::numeric_limits<std::uint64_t>::max() / b)
        return std::numeric_limits<std::uint64_t>::max();
    return a * b;
}

void check_budget(std::uint64_t states, const std::string& what) {
    auto limit = enumeration_budget();
    if (states > limit)
        throw Error(ErrorKind::SizeExceeded, what + ": enumeration space of " + std::to_string(states) +
                                                 " states exceeds the budget of " + std::to_string(limit));
}

}  // namespace abstrakt
