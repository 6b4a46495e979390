#include "abstrakt/io.hpp"

#include "json_util.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace abstrakt {

using detail::json;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::ParseError, "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::ParseError, "cannot write '" + path + "'");
    out << text;
}

namespace {

int lookup_value(const VariableDecl& d, const json& v, const std::string& where) {
    auto text = detail::value_text(v);
    int idx = d.value_index(text);
    if (idx < 0)
        throw Error(ErrorKind::DomainMismatch, where + ": value '" + text + "' is not in the domain of '" + d.name + "'");
    return idx;
}

std::vector<int> radix_of(const std::vector<VariableDecl>& decls) {
    std::vector<int> r;
    for (auto& d : decls) r.push_back(d.size());
    return r;
}

}  // namespace

DiscreteScm validate_scm(const std::string& text) {
    auto doc = detail::parse_json(text);
    if (!doc.is_object()) throw Error(ErrorKind::ParseError, "model document must be a JSON object");

    std::vector<VariableDecl> endo;
    for (auto& v : detail::need(doc, "endogenous", "model")) endo.push_back(detail::parse_decl(v, "endogenous variable"));
    std::map<std::string, int> var_index;
    for (std::size_t i = 0; i < endo.size(); ++i) var_index[endo[i].name] = static_cast<int>(i);

    std::vector<ExogenousBlock> blocks;
    std::map<std::string, int> block_index;
    const json empty = json::array();
    const json& jblocks = doc.contains("blocks") ? doc.at("blocks") : empty;
    for (auto& jb : jblocks) {
        ExogenousBlock b;
        b.name = detail::value_text(detail::need(jb, "name", "block"));
        std::string where = "block '" + b.name + "'";
        for (auto& m : detail::need(jb, "members", where)) b.members.push_back(detail::parse_decl(m, where + " member"));
        std::vector<VariableDecl> given_decls;
        if (jb.contains("given")) {
            for (auto& g : jb.at("given")) {
                auto gname = detail::value_text(g);
                auto it = block_index.find(gname);
                if (it == block_index.end())
                    throw Error(ErrorKind::UnknownVariable, where + " is conditional on unknown or later block '" + gname + "'");
                b.given.push_back(it->second);
                for (auto& m : blocks[it->second].members) given_decls.push_back(m);
            }
        }
        auto own_radix = radix_of(b.members);
        auto given_radix = radix_of(given_decls);
        std::uint64_t own = radix_product(own_radix), gstates = radix_product(given_radix);
        check_budget(sat_mul(own, gstates), where + " table");
        b.table.assign(own * gstates, Rational(0));
        std::vector<bool> seen(own * gstates, false);
        for (auto& row : detail::need(jb, "table", where)) {
            auto& vals = detail::need(row, "values", where + " row");
            if (!vals.is_array() || vals.size() != b.members.size())
                throw Error(ErrorKind::DomainMismatch, where + ": row has the wrong number of values");
            Tuple t;
            for (std::size_t k = 0; k < vals.size(); ++k) t.push_back(lookup_value(b.members[k], vals[k], where));
            std::size_t gc = 0;
            if (!given_decls.empty()) {
                auto& gv = detail::need(row, "given", where + " row");
                if (!gv.is_array() || gv.size() != given_decls.size())
                    throw Error(ErrorKind::DomainMismatch, where + ": row has the wrong number of given values");
                Tuple g;
                for (std::size_t k = 0; k < gv.size(); ++k) g.push_back(lookup_value(given_decls[k], gv[k], where));
                gc = tuple_index(g, given_radix);
            }
            std::size_t idx = gc * own + tuple_index(t, own_radix);
            if (seen[idx]) throw Error(ErrorKind::DomainMismatch, where + ": repeated table row");
            seen[idx] = true;
            b.table[idx] = detail::prob_value(detail::need(row, "p", where + " row"));
        }
        for (bool s : seen)
            if (!s) throw Error(ErrorKind::DomainMismatch, where + ": table does not list every member tuple");
        block_index[b.name] = static_cast<int>(blocks.size());
        blocks.push_back(std::move(b));
    }

    std::vector<Mechanism> mechs;
    for (auto& jm : detail::need(doc, "mechanisms", "model")) {
        Mechanism m;
        auto vname = detail::value_text(detail::need(jm, "variable", "mechanism"));
        auto vit = var_index.find(vname);
        if (vit == var_index.end()) throw Error(ErrorKind::UnknownVariable, "mechanism for unknown variable '" + vname + "'");
        m.variable = vit->second;
        std::string where = "mechanism of '" + vname + "'";
        std::vector<VariableDecl> parent_decls;
        if (jm.contains("endo_parents"))
            for (auto& p : jm.at("endo_parents")) {
                auto pname = detail::value_text(p);
                auto it = var_index.find(pname);
                if (it == var_index.end()) throw Error(ErrorKind::UnknownVariable, where + " reads unknown variable '" + pname + "'");
                m.endo_parents.push_back(it->second);
                parent_decls.push_back(endo[it->second]);
            }
        if (jm.contains("exo_parents"))
            for (auto& p : jm.at("exo_parents")) {
                auto bname = detail::value_text(detail::need(p, "block", where));
                auto mname = detail::value_text(detail::need(p, "member", where));
                auto bit = block_index.find(bname);
                if (bit == block_index.end()) throw Error(ErrorKind::UnknownVariable, where + " reads unknown block '" + bname + "'");
                auto& blk = blocks[bit->second];
                int mi = -1;
                for (std::size_t k = 0; k < blk.members.size(); ++k)
                    if (blk.members[k].name == mname) mi = static_cast<int>(k);
                if (mi < 0) throw Error(ErrorKind::UnknownVariable, where + " reads unknown member '" + bname + "." + mname + "'");
                m.exo_parents.push_back(ExoRef{bit->second, mi});
                parent_decls.push_back(blk.members[mi]);
            }
        auto radix = radix_of(parent_decls);
        auto rows = radix_product(radix);
        check_budget(rows, where + " table");
        m.table.assign(rows, -1);
        for (auto& row : detail::need(jm, "table", where)) {
            const json& ps = row.contains("parents") ? row.at("parents") : empty;
            if (!ps.is_array() || ps.size() != parent_decls.size())
                throw Error(ErrorKind::DomainMismatch, where + ": row has the wrong number of parent values");
            Tuple t;
            for (std::size_t k = 0; k < ps.size(); ++k) t.push_back(lookup_value(parent_decls[k], ps[k], where));
            auto idx = tuple_index(t, radix);
            if (m.table[idx] >= 0) throw Error(ErrorKind::DomainMismatch, where + ": repeated table row");
            m.table[idx] = lookup_value(endo[m.variable], detail::need(row, "out", where + " row"), where);
        }
        for (std::size_t i = 0; i < m.table.size(); ++i)
            if (m.table[i] < 0) {
                auto t = index_tuple(i, radix);
                std::string desc;
                for (std::size_t k = 0; k < t.size(); ++k)
                    desc += (k ? "," : "") + parent_decls[k].domain[t[k]];
                throw Error(ErrorKind::PartialMechanism, where + " has no row for parents (" + desc + ")");
            }
        mechs.push_back(std::move(m));
    }
    return DiscreteScm(std::move(endo), std::move(blocks), std::move(mechs));
}

DiscreteScm load_scm(const std::string& path) { return validate_scm(read_file(path)); }

namespace detail {

json scm_json(const DiscreteScm& scm) {
    json doc;
    doc["endogenous"] = json::array();
    for (auto& v : scm.endogenous()) doc["endogenous"].push_back(decl_json(v));
    doc["blocks"] = json::array();
    for (auto& b : scm.blocks()) {
        json jb;
        jb["name"] = b.name;
        jb["members"] = json::array();
        for (auto& m : b.members) jb["members"].push_back(decl_json(m));
        std::vector<VariableDecl> given_decls;
        if (!b.given.empty()) {
            jb["given"] = json::array();
            for (int g : b.given) {
                jb["given"].push_back(scm.blocks()[g].name);
                for (auto& m : scm.blocks()[g].members) given_decls.push_back(m);
            }
        }
        auto own_radix = radix_of(b.members);
        auto given_radix = radix_of(given_decls);
        auto own = radix_product(own_radix);
        jb["table"] = json::array();
        for (std::size_t i = 0; i < b.table.size(); ++i) {
            json row;
            if (!given_decls.empty()) {
                auto g = index_tuple(i / own, given_radix);
                row["given"] = json::array();
                for (std::size_t k = 0; k < g.size(); ++k) row["given"].push_back(given_decls[k].domain[g[k]]);
            }
            auto t = index_tuple(i % own, own_radix);
            row["values"] = json::array();
            for (std::size_t k = 0; k < t.size(); ++k) row["values"].push_back(b.members[k].domain[t[k]]);
            row["p"] = to_string(b.table[i]);
            jb["table"].push_back(row);
        }
        doc["blocks"].push_back(jb);
    }
    doc["mechanisms"] = json::array();
    for (auto& m : scm.mechanisms()) {
        json jm;
        jm["variable"] = scm.endogenous()[m.variable].name;
        jm["endo_parents"] = json::array();
        std::vector<VariableDecl> parent_decls;
        for (int p : m.endo_parents) {
            jm["endo_parents"].push_back(scm.endogenous()[p].name);
            parent_decls.push_back(scm.endogenous()[p]);
        }
        jm["exo_parents"] = json::array();
        for (auto& r : m.exo_parents) {
            auto& blk = scm.blocks()[r.block];
            jm["exo_parents"].push_back(json{{"block", blk.name}, {"member", blk.members[r.member].name}});
            parent_decls.push_back(blk.members[r.member]);
        }
        auto radix = radix_of(parent_decls);
        jm["table"] = json::array();
        for (std::size_t i = 0; i < m.table.size(); ++i) {
            auto t = index_tuple(i, radix);
            json row;
            row["parents"] = json::array();
            for (std::size_t k = 0; k < t.size(); ++k) row["parents"].push_back(parent_decls[k].domain[t[k]]);
            row["out"] = scm.endogenous()[m.variable].domain[m.table[i]];
            jm["table"].push_back(row);
        }
        doc["mechanisms"].push_back(jm);
    }
    return doc;
}

}  // namespace detail

std::string scm_to_json(const DiscreteScm& scm) { return detail::scm_json(scm).dump(2) + "\n"; }

}  // namespace abstrakt
