#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "abstrakt/cli.hpp"
#include "abstrakt/io.hpp"
#include "toy.hpp"

#include <cstdlib>
#include <filesystem>

using namespace abstrakt;
namespace fs = std::filesystem;

namespace {

std::string fx(const std::string& name) { return toy::fixture(name); }

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / "abstrakt_cli_test";
    fs::create_directories(dir);
    return dir / name;
}

cli::CommandResult run(std::vector<std::string> args) { return cli::run(args); }

}  // namespace

TEST_CASE("query text parses into terms") {
    auto ast = cli::parse_query_text("P(Y[X=x1]=1)");
    REQUIRE(ast.terms.size() == 1);
    CHECK(ast.terms[0].var == "Y");
    CHECK(ast.terms[0].value == "1");
    REQUIRE(ast.terms[0].ivs.size() == 1);
    CHECK_FALSE(ast.terms[0].ivs[0].soft);
    CHECK(ast.conditioning.empty());

    ast = cli::parse_query_text("P(Y[~XH=xC]=1 | Z=z1)");
    REQUIRE(ast.terms.size() == 1);
    CHECK(ast.terms[0].ivs[0].soft);
    CHECK(ast.terms[0].ivs[0].var == "XH");
    CHECK(ast.terms[0].ivs[0].value == "xC");
    REQUIRE(ast.conditioning.size() == 1);
    CHECK(ast.conditioning[0].var == "Z");
    CHECK(ast.conditioning[0].ivs.empty());

    ast = cli::parse_query_text("P(Y[X=x1]=1, Y[X=x2]=0)");
    CHECK(ast.terms.size() == 2);

    ast = cli::parse_query_text("  P ( Y [ X = x1 ; Z = z2 ] = 1 )  ");
    REQUIRE(ast.terms.size() == 1);
    CHECK(ast.terms[0].ivs.size() == 2);
}

TEST_CASE("syntax errors carry the position") {
    for (std::string bad : {"", "Y=1", "P(Y=1", "P(Y[X=x1=1)", "P(Y=1 |)", "P(Y[]=1)", "P(Y=1) trailing", "P(=1)"}) {
        CAPTURE(bad);
        try {
            cli::parse_query_text(bad);
            FAIL("accepted");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::SyntaxError);
            CHECK(std::string(e.what()).find("position") != std::string::npos);
        }
    }
    try {
        cli::parse_query_text("P(Y[X=x1=1)");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("position 8") != std::string::npos);
    }
}

TEST_CASE("names resolve against the model") {
    auto scm = load_scm(fx("insurance.json"));
    auto q = cli::parse_query("P(Y[X=x1]=1, Y[X=x2]=0 | Z=z1)", scm);
    CHECK(q.terms.size() == 2);
    CHECK(q.conditioning.size() == 1);
    CHECK_FALSE(q.projected);

    CHECK_THROWS_AS(cli::parse_query("P(W=1)", scm), Error);
    try {
        cli::parse_query("P(Y=7)", scm);
        FAIL("accepted");
    } catch (const Error& e) {
        CHECK(e.kind() != ErrorKind::SyntaxError);
    }

    // "~" without clusters degrades to a hard intervention and says so
    std::vector<std::string> notes;
    auto hard = cli::parse_query("P(Y[~X=x1]=1)", scm, nullptr, &notes);
    CHECK_FALSE(hard.projected);
    CHECK(prob_query(scm, hard) == Rational(9, 10));
    CHECK_FALSE(notes.empty());

    auto cm = validate_clusters(scm, read_file(fx("insurance_clusters.json")));
    auto soft = cli::parse_query("P(Y[~XH=xC]=1 | Z=z1)", scm, &cm);
    CHECK(soft.projected);
    REQUIRE(soft.families.size() == 1);
    CHECK(soft.families[0].target == "XH");
    CHECK_FALSE(soft.families[0].resolved);
}

TEST_CASE("eval and estimate reproduce the reference values") {
    auto r = run({"eval", "--scm", fx("insurance.json"), "--query", "P(Y[X=x1]=1)"});
    CHECK(r.exit_code == 0);
    CHECK(r.document["command"] == "eval");
    CHECK(r.document["payload"]["value"]["rational"] == "9/10");
    CHECK(r.document["payload"]["value"]["decimal"] == "0.9");

    r = run({"eval", "--scm", fx("insurance.json"), "--clusters", fx("insurance_clusters.json"), "--query",
             "P(Y[~XH=xC]=1 | Z=z1)"});
    CHECK(r.exit_code == 0);
    CHECK(r.document["payload"]["value"]["rational"] == "37/50");
    CHECK(r.document["payload"]["policy"] == "general");

    r = run({"estimate", "--scm", fx("insurance.json"), "--clusters", fx("insurance_clusters.json"), "--query",
             "P(Y[XH=xC]=1)"});
    CHECK(r.exit_code == 0);
    auto& p = r.document["payload"];
    CHECK(p["value"]["rational"] == "149/250");
    CHECK(p["value"]["decimal"] == "0.596");
    CHECK(p["model_value"]["rational"] == "149/250");
    CHECK(p["agrees"] == true);
    CHECK(p["graph"] == "projected");
}

TEST_CASE("aic-check reports violators") {
    auto r = run({"aic-check", "--scm", fx("insurance.json"), "--clusters", fx("insurance_identity_clusters.json")});
    CHECK(r.exit_code == 0);
    CHECK(r.document["payload"]["violators"].empty());

    r = run({"aic-check", "--scm", fx("insurance.json"), "--clusters", fx("insurance_clusters.json")});
    CHECK(r.exit_code == 0);
    CHECK(r.document["payload"]["violators"] == nlohmann::ordered_json::array({"XH"}));
    REQUIRE_FALSE(r.document["payload"]["witnesses"].empty());
    CHECK(r.document["payload"]["witnesses"][0]["replayed"] == true);

    r = run({"aic-check", "--scm", fx("cholesterol.json"), "--clusters", fx("cholesterol_clusters.json")});
    CHECK(r.document["payload"]["violators"] == nlohmann::ordered_json::array({"TC"}));
}

TEST_CASE("exit codes") {
    auto bow = run({"identify", "--graph", fx("bow.json"), "--query", "P(Y[X=1]=1)"});
    CHECK(bow.exit_code == 5);
    CHECK(bow.document["error"]["kind"] == "NonIdentifiable");
    CHECK(bow.document["payload"]["identifiable"] == false);

    auto syntax = run({"eval", "--scm", fx("insurance.json"), "--query", "P(Y[X=x1]=1"});
    CHECK(syntax.exit_code == 2);
    CHECK(syntax.document["error"]["kind"] == "SyntaxError");

    auto missing = run({"eval", "--scm", fx("does_not_exist.json"), "--query", "P(Y=1)"});
    CHECK(missing.exit_code == 2);

    auto usage = run({"frobnicate"});
    CHECK(usage.exit_code == 2);

    auto zero = run({"eval", "--scm", fx("insurance.json"), "--query", "P(Y=1 | Z=z1, Z=z2)"});
    CHECK(zero.exit_code == 3);
    CHECK(zero.document["error"]["kind"] == "ZeroConditioning");

    set_budget(3);
    auto budget = run({"eval", "--scm", fx("insurance.json"), "--query", "P(Y=1)"});
    set_budget(0);
    CHECK(budget.exit_code == 4);
    CHECK(budget.document["error"]["kind"] == "SizeExceeded");

    auto bad_fallback = run({"abstract", "--scm", fx("insurance.json"), "--clusters", fx("insurance_clusters.json"),
                             "--sigma-fallback", "maybe"});
    CHECK(bad_fallback.exit_code == 2);
}

TEST_CASE("budget from the environment") {
    ::setenv("ABSTRAKT_BUDGET", "3", 1);
    auto r = run({"eval", "--scm", fx("insurance.json"), "--query", "P(Y=1)"});
    ::unsetenv("ABSTRAKT_BUDGET");
    CHECK(r.exit_code == 4);
    CHECK(run({"eval", "--scm", fx("insurance.json"), "--query", "P(Y=1)"}).exit_code == 0);
}

TEST_CASE("abstract then verify round trips on every fixture") {
    const std::vector<std::pair<std::string, std::string>> pairs = {
        {"insurance.json", "insurance_clusters.json"},
        {"insurance.json", "insurance_identity_clusters.json"},
        {"insurance.json", "insurance_drop_z_clusters.json"},
        {"insurance_z_half.json", "insurance_clusters.json"},
        {"cholesterol.json", "cholesterol_clusters.json"},
        {"colored_digit.json", "colored_digit_clusters.json"},
    };
    for (auto& [model, clusters] : pairs) {
        for (std::string policy : {"general", "agnostic", "markovian"}) {
            CAPTURE(model);
            CAPTURE(clusters);
            CAPTURE(policy);
            auto out = scratch(fs::path(model).stem().string() + "_" + fs::path(clusters).stem().string() + "_" +
                               policy + ".json");
            auto a = run({"abstract", "--scm", fx(model), "--clusters", fx(clusters), "--policy", policy,
                          "--sigma-fallback", "uniform", "-o", out.string()});
            REQUIRE(a.exit_code == 0);
            REQUIRE(fs::exists(out));
            auto v = run({"verify", "--scm", fx(model), "--high", out.string()});
            CHECK(v.exit_code == 0);
            CHECK(v.document["payload"]["mismatches"] == 0);
            CHECK(v.document["payload"]["counterexamples"].empty());
            CHECK(v.document["payload"]["checked"].get<long>() > 0);
            CHECK(run({"validate", "--high", out.string()}).exit_code == 0);
        }
    }
}

TEST_CASE("verify flags a tampered abstraction") {
    auto out = scratch("tampered.json");
    REQUIRE(run({"abstract", "--scm", fx("insurance.json"), "--clusters", fx("insurance_clusters.json"), "-o",
                 out.string()})
                .exit_code == 0);
    auto doc = nlohmann::ordered_json::parse(read_file(out.string()));
    // flip the first mechanism row of Y
    bool flipped = false;
    std::function<void(nlohmann::ordered_json&)> walk = [&](nlohmann::ordered_json& j) {
        if (flipped) return;
        if (j.is_object() && j.contains("variable") && j["variable"] == "Y" && j.contains("table")) {
            for (auto& row : j["table"]) {
                if (row.contains("out")) {
                    row["out"] = row["out"] == "1" ? "0" : "1";
                    flipped = true;
                    return;
                }
            }
        }
        if (j.is_structured())
            for (auto& c : j) walk(c);
    };
    walk(doc);
    REQUIRE(flipped);
    write_file(out.string(), doc.dump(2));
    auto v = run({"verify", "--scm", fx("insurance.json"), "--high", out.string()});
    CHECK(v.exit_code == 3);
    CHECK(v.document["payload"]["mismatches"].get<long>() > 0);
}

TEST_CASE("identical invocations give identical output") {
    std::vector<std::vector<std::string>> calls = {
        {"eval", "--scm", fx("insurance.json"), "--clusters", fx("insurance_clusters.json"), "--query",
         "P(Y[~XH=xC]=1 | Z=z2)"},
        {"aic-check", "--scm", fx("cholesterol.json"), "--clusters", fx("cholesterol_clusters.json")},
        {"cdag", "--scm", fx("insurance.json"), "--clusters", fx("insurance_clusters.json"), "--project"},
        {"estimate", "--scm", fx("insurance.json"), "--clusters", fx("insurance_clusters.json"), "--query",
         "P(Y[XH=xE]=1)"},
        {"abstract", "--scm", fx("colored_digit.json"), "--clusters", fx("colored_digit_clusters.json"),
         "--sigma-fallback", "uniform"},
    };
    for (auto& c : calls) {
        CAPTURE(c[0]);
        CHECK(run(c).document.dump() == run(c).document.dump());
    }

    auto high = scratch("sample_high.json");
    REQUIRE(run({"abstract", "--scm", fx("insurance.json"), "--clusters", fx("insurance_clusters.json"), "-o",
                 high.string()})
                .exit_code == 0);
    std::vector<std::string> s = {"sample", "--high", high.string(), "--value", "XH=xC", "--context", "Z=z1",
                                  "--n",    "200",  "--seed",      "17"};
    auto a = run(s), b = run(s);
    CHECK(a.exit_code == 0);
    CHECK(a.document.dump() == b.document.dump());
    CHECK(a.document["payload"]["samples"].size() == 200);
    REQUIRE(a.document["payload"]["support"].size() == 2);
    CHECK(a.document["payload"]["support"][0]["weight"]["rational"] == "4/5");
    s.back() = "18";
    CHECK(run(s).document["payload"]["samples"] != a.document["payload"]["samples"]);
}

TEST_CASE("rational and decimal renderings agree") {
    auto r = run({"eval", "--scm", fx("insurance.json"), "--query", "P(Y[X=x1]=1 | Z=z1)"});
    REQUIRE(r.exit_code == 0);
    auto rational = Rational(r.document["payload"]["value"]["rational"].get<std::string>());
    auto decimal = r.document["payload"]["value"]["decimal"].get<std::string>();
    CHECK(decimal == to_decimal(rational, 12));
    double d = std::stod(decimal);
    CHECK(std::abs(d - rational.get_d()) < 1e-12);
}
