#include "json_util.hpp"

namespace abstrakt::detail {

json parse_json(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::ParseError, std::string("invalid JSON: ") + e.what());
    }
}

const json& need(const json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key))
        throw Error(ErrorKind::ParseError, where + ": missing field '" + key + "'");
    return j.at(key);
}

std::string value_text(const json& j) {
    if (j.is_string()) return j.get<std::string>();
    if (j.is_number_integer() || j.is_boolean()) return j.dump();
    throw Error(ErrorKind::ParseError, "expected a symbolic value, got " + j.dump());
}

std::vector<std::string> value_list(const json& j) {
    if (!j.is_array()) throw Error(ErrorKind::ParseError, "expected an array of values, got " + j.dump());
    std::vector<std::string> out;
    for (auto& v : j) out.push_back(value_text(v));
    return out;
}

Rational prob_value(const json& j) {
    if (j.is_string()) return parse_rational(j.get<std::string>());
    if (j.is_number_integer()) return parse_rational(j.dump());
    throw Error(ErrorKind::ParseError, "probabilities must be strings (\"num/den\" or decimal), got " + j.dump());
}

VariableDecl parse_decl(const json& j, const std::string& where) {
    VariableDecl d;
    d.name = value_text(need(j, "name", where));
    d.domain = value_list(need(j, "domain", where + " '" + d.name + "'"));
    return d;
}

json decl_json(const VariableDecl& d) {
    json j;
    j["name"] = d.name;
    j["domain"] = d.domain;
    return j;
}

json rational_json(const Rational& q) {
    json j;
    j["rational"] = to_string(q);
    j["decimal"] = to_decimal(q);
    return j;
}

}  // namespace abstrakt::detail
