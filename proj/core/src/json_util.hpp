#pragma once

#include "abstrakt/error.hpp"
#include "abstrakt/rational.hpp"
#include "abstrakt/scm.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace abstrakt::detail {

using json = nlohmann::ordered_json;

json parse_json(const std::string& text);

const json& need(const json& j, const char* key, const std::string& where);

// Symbolic values may be written as strings or bare numbers/booleans.
std::string value_text(const json& j);
std::vector<std::string> value_list(const json& j);
Rational prob_value(const json& j);

VariableDecl parse_decl(const json& j, const std::string& where);
json decl_json(const VariableDecl& d);

json rational_json(const Rational& q);  // {"rational": .., "decimal": ..}

json scm_json(const DiscreteScm& scm);

}  // namespace abstrakt::detail
