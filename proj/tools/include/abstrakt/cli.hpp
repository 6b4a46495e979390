#pragma once

#include "abstrakt/abstraction.hpp"
#include "abstrakt/error.hpp"
#include "abstrakt/identify.hpp"
#include "abstrakt/valuation.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace abstrakt::cli {

// Query text as written, before names are resolved.
struct IvAtom {
    std::string var;
    std::string value;
    bool soft = false;  // written with "~"
};

struct QueryAtom {
    std::string var;
    std::string value;
    std::vector<IvAtom> ivs;
};

struct QueryAst {
    std::vector<QueryAtom> terms;
    std::vector<QueryAtom> conditioning;
};

// Throws SyntaxError with the offending position.
QueryAst parse_query_text(const std::string& text);

// Resolves names against a model. Without clusters every name is a low variable and "~"
// falls back to a hard intervention (noted in `diagnostics`). With clusters, a name is a
// low variable if one exists and a cluster otherwise; "~" always targets a cluster and
// the result is a projected query whose soft families still need σ tables.
CounterfactualQuery parse_query(const std::string& text, const DiscreteScm& scm, const ClusterMap* cm = nullptr,
                                std::vector<std::string>* diagnostics = nullptr);

// High-level reading for identification: names are clusters, or low variables that
// form a cluster on their own.
EffectQuery parse_effect_query(const std::string& text, const ClusterMap& cm);
// Names taken as graph nodes, values kept verbatim.
EffectQuery parse_effect_query(const std::string& text);

struct CommandResult {
    int exit_code = 0;
    nlohmann::ordered_json document;  // {command, exit_code, payload, diagnostics, error?}
};

CommandResult run(const std::vector<std::string>& argv);

int exit_code_for(ErrorKind kind);

}  // namespace abstrakt::cli
