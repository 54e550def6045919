#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "phcirc_cli.hpp"

using namespace phcirc;
using Json = nlohmann::json;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result call(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string golden(const std::string& rel) { return std::string(PHCIRC_SOURCE_DIR) + "/netlists/" + rel; }

std::string temp_file(const std::string& name, const std::string& text) {
    const auto p = std::filesystem::temp_directory_path() / name;
    std::ofstream(p) << text;
    return p.string();
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

} // namespace

TEST_CASE("check reports the graph", "[cli]") {
    auto r = call({"check", golden("rc.cir")});
    REQUIRE(r.code == 0);
    auto j = Json::parse(r.out);
    CHECK(j["graph"]["n"] == 3);
    CHECK(j["graph"]["m"] == 3);
    CHECK(j["graph"]["k"] == 1);
    CHECK(j["errors"].empty());

    r = call({"check", golden("bridge_rectifier/acdc.cir")});
    REQUIRE(r.code == 0);
    j = Json::parse(r.out);
    CHECK(j["graph"]["n"] == 6);
    CHECK(j["graph"]["m"] == 9);
    CHECK(j["graph"]["k"] == 2);
    CHECK(j["graph"]["grounds"] == Json({"2", "3"}));

    const auto path = temp_file("phcirc_two_parts.cir", "R1 a b R=1\nR2 c d R=1\n.ground a\n.end\n");
    r = call({"check", path});
    REQUIRE(r.code == 0);
    CHECK(Json::parse(r.out)["warnings"].size() >= 1);
}

TEST_CASE("failures give JSON diagnostics", "[cli]") {
    auto r = call({});
    CHECK(r.code == 2);
    CHECK(Json::parse(r.err)["error"] == "UsageError");

    r = call({"simulate", golden("rc.cir"), "--method", "rk4"});
    CHECK(r.code == 2);

    r = call({"check", "/nonexistent/file.cir"});
    CHECK(r.code == 1);
    CHECK(Json::parse(r.err)["error"] == "IoError");

    auto path = temp_file("phcirc_bad.cir", "R1 1 0 R=1k\nX9 1 0 7\n.end\n");
    r = call({"check", path});
    CHECK(r.code == 1);
    auto d = Json::parse(r.err);
    CHECK(d["line"] == 2);
    CHECK(d["error"] == "UnknownComponent");

    path = temp_file("phcirc_ground.cir", "R1 1 0 R=1k\nR2 1 2 R=1k\n.ground 0\n.ground 2\n.end\n");
    r = call({"check", path});
    CHECK(r.code == 1);
    CHECK(Json::parse(r.err)["error"] == "GroundSetViolation");

    path = temp_file("phcirc_float.cir", "I1 0 1 DC 1m\nC1 1 0 C=1u\n.tran 1m 1u\n.end\n");
    r = call({"simulate", path});
    CHECK(r.code == 1);
    CHECK(Json::parse(r.err)["error"] == "SingularJacobian");
}

TEST_CASE("simulate writes a fixed-step CSV", "[cli]") {
    const auto out = (std::filesystem::temp_directory_path() / "phcirc_rc.csv").string();
    auto r = call({"simulate", golden("rc.cir"), "--dt", "1e-6", "--tstop", "5e-3", "-o", out});
    REQUIRE(r.code == 0);
    std::ifstream in(out);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string csv = ss.str();
    CHECK(count_lines(csv) == 5002);
    CHECK(csv.rfind("t,v(1),v(2),i(V1),i(R1),i(C1),u(V1),u(R1),u(C1),H,P_S,D,balance_err\n", 0) == 0);

    const auto a = call({"simulate", golden("rlc.cir"), "--method", "trap", "--tstop", "1e-4"});
    const auto b = call({"simulate", golden("rlc.cir"), "--method", "trap", "--tstop", "1e-4"});
    REQUIRE(a.code == 0);
    CHECK(a.out == b.out);

    r = call({"simulate", golden("rlc.cir"), "--formulation", "mla", "--tstop", "1e-5", "--format", "json"});
    REQUIRE(r.code == 0);
    const auto j = Json::parse(r.out);
    CHECK(j["rows"].size() == 11);
    CHECK(j["columns"][0] == "t");
}

TEST_CASE("assemble emits a Dirac structure", "[cli]") {
    const auto r = call({"assemble", golden("rc.cir"), "--emit", "json"});
    REQUIRE(r.code == 0);
    const auto j = Json::parse(r.out);
    CHECK(j["is_dirac"] == true);
    const auto d = phcirc::json::dirac_from_json(j);
    CHECK(ph::is_dirac(d, 1e-10));
    CHECK(j["blocks"]["A"].size() == 2);
    CHECK(j["blocks"]["A_C"][1] == Json({1}));
}

TEST_CASE("mna and mla report dimensions", "[cli]") {
    auto r = call({"mna", golden("rlc.cir")});
    REQUIRE(r.code == 0);
    auto j = Json::parse(r.out);
    CHECK(j["formulation"] == "mna_cf");
    CHECK(j["dim"] == j["unknowns"].size());
    CHECK(j["rows"] == j["dim"]);

    r = call({"mla", golden("rlc.cir")});
    REQUIRE(r.code == 0);
    j = Json::parse(r.out);
    CHECK(j["formulation"] == "mla");
    CHECK(j["row_blocks"][0]["name"] == "loop");

    r = call({"mla", golden("npn_bias.cir")});
    CHECK(r.code == 1);
    CHECK(Json::parse(r.err)["error"] == "UnsupportedFormulation");
}

TEST_CASE("verify runs the suites deterministically", "[cli]") {
    const auto a = call({"verify", golden("bridge_rectifier/acdc.cir"), "--seed", "7"});
    REQUIRE(a.code == 0);
    const auto j = Json::parse(a.out);
    CHECK(j["ok"] == true);
    REQUIRE(j["suites"].size() == 4);
    for (const auto& s : j["suites"]) CHECK(s["passed"] == s["total"]);
    const auto b = call({"verify", golden("bridge_rectifier/acdc.cir"), "--seed", "7"});
    CHECK(a.out == b.out);
}
