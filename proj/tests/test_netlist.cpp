#include <catch_amalgamated.hpp>

#include <fstream>

#include "phcirc/netlist.hpp"

using namespace phcirc;
using namespace phcirc::netlist;

namespace {

std::string read_file(const std::string& rel) {
    std::ifstream in(std::string(PHCIRC_SOURCE_DIR) + "/" + rel);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

template <class F>
ParseError parse_error(F&& f) {
    try {
        f();
    } catch (const ParseError& e) {
        return e;
    }
    FAIL("no parse error");
    return ParseError(ErrorKind::IoError, "", 0);
}

const char* kGolden[] = {"netlists/rc.cir", "netlists/rlc.cir", "netlists/rl_loop.cir", "netlists/lc.cir", "netlists/npn_bias.cir",
                         "netlists/bridge_rectifier/acdc.cir"};

} // namespace

TEST_CASE("source plus resistor", "[netlist]") {
    const auto n = parse("V1 1 0 DC 5\nR1 1 0 R=10\n.ground 0\n.end");
    REQUIRE(n.components.size() == 2);
    CHECK(n.grounds == std::vector<std::string>{"0"});
    CHECK(n.component("V1").source().waveform == Waveform::dc(5.0));
    CHECK(n.component("R1").resistor().law == ScalarLaw::linear(10.0));
    const auto cg = build_graph(n);
    CHECK(cg.graph.vertex_count() == 2);
    REQUIRE(cg.graph.edge_count() == 2);
    for (const auto& e : cg.graph.edges()) {
        CHECK(cg.graph.vertices()[e.init] == "1");
        CHECK(cg.graph.vertices()[e.ter] == "0");
    }
    CHECK(cg.warnings.empty());
}

TEST_CASE("transistor edges run from the base", "[netlist]") {
    const auto cg = build_graph(parse("Q1 c b e"));
    REQUIRE(cg.graph.edge_count() == 2);
    const auto& v = cg.graph.vertices();
    CHECK(v[cg.graph.edge(0).init] == "b");
    CHECK(v[cg.graph.edge(0).ter] == "c");
    CHECK(v[cg.graph.edge(1).init] == "b");
    CHECK(v[cg.graph.edge(1).ter] == "e");
    CHECK(cg.warnings.size() == 1);
}

TEST_CASE("transformer edges", "[netlist]") {
    const auto cg = build_graph(parse("T1 a b c d ratio=2\n.ground a c"));
    const auto& v = cg.graph.vertices();
    CHECK(v[cg.graph.edge(0).init] == "a");
    CHECK(v[cg.graph.edge(0).ter] == "b");
    CHECK(v[cg.graph.edge(1).init] == "d");
    CHECK(v[cg.graph.edge(1).ter] == "c");
}

TEST_CASE("parse errors carry positions", "[netlist]") {
    auto e = parse_error([] { parse("V1 1 0 DC 5\nR1 1 1 R=5\n"); });
    CHECK(e.kind() == ErrorKind::LoopEdge);
    CHECK(e.line() == 2);

    e = parse_error([] { parse("* header\nR1 1 0 R=5\nR1 2 0 R=5\n"); });
    CHECK(e.kind() == ErrorKind::DuplicateName);
    CHECK(e.line() == 3);

    e = parse_error([] { parse("R1 1 0 R=5\n.foo\n"); });
    CHECK(e.kind() == ErrorKind::UnknownDirective);
    CHECK(e.line() == 2);

    e = parse_error([] { parse("R1 1 0 R=5x\n"); });
    CHECK(e.kind() == ErrorKind::SyntaxError);
    CHECK(e.column() == 8);

    e = parse_error([] { parse("V1 1 0 SIN(0,1\n"); });
    CHECK(e.kind() == ErrorKind::SyntaxError);
    CHECK(parse_error([] { parse("X1 1 0\n"); }).kind() == ErrorKind::UnknownComponent);
    CHECK(parse_error([] { parse("C1 1 0 Q=3\n"); }).line() == 1);
    CHECK(parse_error([] { parse("R1 1 0 R=0\n"); }).kind() == ErrorKind::BadParams);
    CHECK(parse_error([] { parse("+ R=5\n"); }).kind() == ErrorKind::SyntaxError);
}

TEST_CASE("values, suffixes, continuation and case", "[netlist]") {
    const auto n = parse("c1 a 0 c = 2.2u\n+ ic=1\nL1 a b 10MEG\nr2 b 0 g=1m\nD1 a b a=1p b=26m\nd2 b 0 IDEAL\n"
                         "i1 b 0 sin( 0 , 2 , 50 )\n.TRAN 1m 10n UIC\n.op\n.ground 0\n.end\nR9 9 9 R=1\n");
    REQUIRE(n.components.size() == 6);
    CHECK(n.components[0].storage().hamiltonian.quadratic_capacity() == Catch::Approx(2.2e-6));
    CHECK(n.components[0].storage().initial == 1.0);
    CHECK(n.components[1].storage().hamiltonian.quadratic_capacity() == Catch::Approx(1e7));
    CHECK(n.components[2].resistor().form == components::ResistorForm::conductance);
    CHECK(n.components[3].diode().a == Catch::Approx(1e-12));
    CHECK(n.components[3].diode().b == Catch::Approx(0.026));
    CHECK(n.components[4].diode().ideal);
    CHECK(n.components[5].source().waveform == Waveform::sine(0, 2, 50));
    REQUIRE(n.tran());
    CHECK(n.tran()->uic);
    CHECK(n.tran()->dt == Catch::Approx(1e-8));
    CHECK(n.analyses.size() == 2);
    CHECK(n.lines[1] == 3);
}

TEST_CASE("nonlinear law table", "[netlist]") {
    const auto n = parse("C1 1 0 H=poly(0,0,0,0,0.25)\nL1 1 2 H=logcosh(1,2)\nR1 2 0 law=poly(0,1,0,1)\nR2 2 0 rlaw=tanh(1,3)\n");
    CHECK(n.components[0].storage().hamiltonian.coeffs.size() == 5);
    CHECK(n.components[1].storage().hamiltonian.kind == ScalarLaw::Kind::logcosh);
    CHECK(n.components[2].resistor().form == components::ResistorForm::conductance);
    CHECK(n.components[3].resistor().form == components::ResistorForm::resistance);
    CHECK(parse_error([] { parse("C1 1 0 H=exp(1)\n"); }).kind() == ErrorKind::SyntaxError);
}

TEST_CASE("grounding", "[netlist]") {
    const auto text = std::string("V1 1 0 DC 5\nR1 1 0 R=10\n");
    CHECK_THROWS_AS(build_graph(parse(text + ".ground 1 0\n")), Error);
    try {
        build_graph(parse(text + ".ground 1 0\n"));
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::GroundSetViolation);
    }
    // explicit ground wins over the conventional node 0
    auto cg = build_graph(parse(text + ".ground 1\n"));
    CHECK(cg.graph.vertices()[cg.grounds.vertices.at(0)] == "1");
    // two components, one grounded explicitly, the other automatically at its lowest node
    cg = build_graph(parse("R1 1 0 R=1\nR2 12 3 R=1\nR3 x 3 R=1\n.ground 1\n"));
    REQUIRE(cg.grounds.vertices.size() == 2);
    CHECK(cg.graph.vertices()[cg.grounds.vertices[1]] == "3");
    CHECK(cg.warnings.size() == 1);
}

TEST_CASE("golden netlists", "[netlist]") {
    for (const char* path : kGolden) {
        INFO(path);
        const auto n = parse(read_file(path));
        CHECK(!n.components.empty());
        const auto cg = build_graph(n);
        CHECK(cg.warnings.empty());
        std::size_t ports = 0;
        for (const auto& c : n.components) ports += c.ports();
        CHECK(cg.graph.edge_count() == ports);
        // parse . serialize is the identity on statements
        const auto again = parse(serialize(n));
        CHECK(again.same_statements(n));
        CHECK(serialize(again) == serialize(n));
    }
}

TEST_CASE("AC/DC converter graph", "[netlist]") {
    const auto cg = build_graph(parse(read_file("netlists/bridge_rectifier/acdc.cir")));
    CHECK(cg.graph.vertex_count() == 6);
    CHECK(cg.graph.edge_count() == 9);
    CHECK(graph::connected_components(cg.graph).count == 2);
    std::vector<std::string> g;
    for (auto v : cg.grounds.vertices) g.push_back(cg.graph.vertices()[v]);
    CHECK(g == std::vector<std::string>{"2", "3"});
    CHECK(graph::reduced_incidence(cg.graph, cg.grounds).rows() == 4);
}

TEST_CASE("serialize round trip on generated netlists", "[netlist][property]") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> val(1e-6, 1e4);
    for (int t = 0; t < 50; ++t) {
        Netlist n;
        n.title = "case " + std::to_string(t);
        n.components.push_back(components::make_resistor("R1", "1", "0", val(rng)));
        n.components.push_back(components::make_capacitor("C1", "1", "2", val(rng)));
        n.components.push_back(components::make_inductor("L1", "2", "0", val(rng)));
        n.components.push_back(components::make_source(ComponentKind::current_source, "I1", "2", "0",
                                                       Waveform::sine(val(rng), val(rng), val(rng), 0.5)));
        n.components.push_back({ComponentKind::transistor, "Q1", {"1", "2", "0"}, components::TransistorParams{val(rng) * 1e-18, 0.025, 0.99, 0.5}});
        n.grounds = {"0"};
        n.analyses.push_back({Analysis::Kind::tran, val(rng), val(rng) * 1e-6, t % 2 == 0});
        CHECK(parse(serialize(n)).same_statements(n));
    }
}
