#include <catch_amalgamated.hpp>

#include <fstream>
#include <random>

#include "oracles.hpp"
#include "phcirc/assembly.hpp"
#include "phcirc/json.hpp"

using namespace phcirc;
using namespace phcirc::assembly;
using Catch::Approx;

namespace {

std::string read_file(const std::string& rel) {
    std::ifstream in(std::string(PHCIRC_SOURCE_DIR) + "/" + rel);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const char* kGolden[] = {"netlists/rc.cir", "netlists/rlc.cir", "netlists/rl_loop.cir", "netlists/lc.cir", "netlists/npn_bias.cir",
                         "netlists/bridge_rectifier/acdc.cir"};

Vector random_vector(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    Vector v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

// Worst |e^T f| over random members, relative to |f||e|.
double worst_power(const ph::DiracKernel& d, std::mt19937_64& rng, int count) {
    const Matrix span = ph::dirac_span(d);
    const auto n = static_cast<Eigen::Index>(d.dim());
    double worst = 0.0;
    for (int k = 0; k < count; ++k) {
        const Vector w = span * random_vector(rng, span.cols());
        const Vector f = w.head(n), e = w.tail(n);
        worst = std::max(worst, std::abs(e.dot(f)) / (1.0 + f.norm() * e.norm()));
    }
    return worst;
}

Vector row_block(const CircuitDae& f, const Vector& r, const std::string& name) {
    Eigen::Index off = 0;
    for (const auto& [n, size] : f.row_blocks) {
        if (n == name) return r.segment(off, static_cast<Eigen::Index>(size));
        off += static_cast<Eigen::Index>(size);
    }
    FAIL("no row block " << name);
    return {};
}

} // namespace

TEST_CASE("Kirchhoff structure of a single edge", "[assembly]") {
    graph::DirectedGraph g;
    g.add_edge("e", "a", "b");
    const auto k = kirchhoff_dirac(g, {{1}});
    REQUIRE(k.A.rows() == 1);
    CHECK(k.A(0, 0) == 1);
    Matrix kk(2, 2), ll(2, 2);
    kk << 1, 1, 0, 0;
    ll << 0, 0, 1, -1;
    CHECK(k.system.dirac.K == kk);
    CHECK(k.system.dirac.L == ll);
    CHECK(ph::is_dirac(k.system.dirac));
    CHECK(k.system.dirac.layout[0].kind == PortKind::storage);
    CHECK(k.system.dirac.layout[1].kind == PortKind::link);
}

TEST_CASE("loop Kirchhoff structure of a triangle", "[assembly]") {
    graph::DirectedGraph g;
    g.add_edge("a", "1", "2");
    g.add_edge("b", "2", "3");
    g.add_edge("c", "3", "1");
    const auto k = loop_kirchhoff_dirac(g);
    REQUIRE(k.B.rows() == 1);
    CHECK(k.B.cwiseAbs().sum() == 3);
    CHECK(ph::is_dirac(k.system.dirac));
    // loop flow balances the oriented link voltages; link currents come from the loop current
    const Matrix span = ph::dirac_span(k.system.dirac);
    CHECK(linalg::max_abs(Matrix(span.row(0) + k.B.cast<double>() * span.middleRows(1, 3))) < 1e-12);
    CHECK(linalg::max_abs(Matrix(k.B.cast<double>().transpose() * span.row(4) - span.bottomRows(3))) < 1e-12);
}

TEST_CASE("Kirchhoff structure rejects a missing ground", "[assembly]") {
    graph::DirectedGraph g;
    g.add_edge("a", "1", "2");
    try {
        kirchhoff_dirac(g, {});
        FAIL("accepted");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::GroundSetViolation);
    }
}

TEST_CASE("circuit blocks of the RC circuit", "[assembly]") {
    const auto b = circuit_blocks(netlist::parse(read_file("netlists/rc.cir")));
    CHECK(b.n() == 2);
    CHECK(b.m() == 3);
    CHECK(b.loops() == 1);
    CHECK(b.R.size() == 1);
    CHECK(b.C.size() == 1);
    CHECK(b.V.size() == 1);
    CHECK(b.A_S().cols() == 1);
    CHECK(b.incidence_from_blocks() == b.A);
    CHECK(graph::verify_cutset_cycle_duality(b.A, b.B));
    CHECK(b.permutation().size() == 3);
}

TEST_CASE("assembled Dirac structures of the golden circuits", "[assembly][property]") {
    std::mt19937_64 rng(11);
    for (const char* path : kGolden) {
        INFO(path);
        const auto a = assemble(netlist::parse(read_file(path)));
        a.system.validate();
        CHECK(ph::is_dirac(a.system.dirac));
        CHECK(ph::is_dirac(closed_form_kernel(a)));
        CHECK(ph::same_dirac(a.system.dirac, closed_form_kernel(a)));
        CHECK(worst_power(a.system.dirac, rng, 100) < 1e-10);
        CHECK(a.system.n_storage() == a.blocks.n() + a.blocks.C.size() + a.blocks.L.size());
        CHECK(a.system.n_link() == 0);
    }
}

TEST_CASE("a flipped incidence column breaks the closed form check", "[assembly]") {
    const auto a = assemble(netlist::parse(read_file("netlists/rlc.cir")));
    auto b = a.blocks;
    b.A.col(static_cast<Eigen::Index>(b.C[0])) *= -1;
    const auto [k, l] = closed_form_dirac(b, a.node_coord, a.edge_coord, a.system.dim());
    CHECK_FALSE(ph::same_dirac(a.system.dirac, {k, l, a.system.dirac.layout}));
}

TEST_CASE("loop assembly of the series RLC circuit", "[assembly]") {
    const auto c = make_circuit(netlist::parse(read_file("netlists/rlc.cir")));
    const auto s = assemble_loop(c);
    CHECK(ph::is_dirac(s.dirac));
    CHECK(s.n_storage() == 1 + 2);
    CHECK_THROWS_AS(assemble_loop(load_circuit("V1 1 0 DC 1\nT1 1 0 2 0 ratio=2\nR1 2 0 R=1\n")), Error);
}

TEST_CASE("RC stationary point in the charge/flux form", "[assembly]") {
    const auto c = make_circuit(netlist::parse(read_file("netlists/rc.cir")));
    const auto b = circuit_blocks(c);
    const auto mna = to_mna_cf(b, c.netlist.components);
    REQUIRE(mna.dim() == 4);  // phi(1), phi(2), q_C, i_V
    Vector x(4);
    x << 5.0, 5.0, 5e-6, 0.0;
    const Vector r = mna.residual(0.0, x, Vector::Zero(4));
    CHECK(linalg::max_abs(r) < 1e-15);
    // the capacitor voltage equals the source voltage only
    x(1) = 4.0;
    x(2) = 4e-6;
    CHECK(linalg::max_abs(Vector(mna.residual(0.0, x, Vector::Zero(4)))) > 1e-4);
    CHECK(mna.differential == std::vector<bool>{false, false, true, false});
    CHECK(mna.energy((Vector(4) << 5, 5, 5e-6, 0).finished()) == Approx(0.5 * 1e-6 * 25));
}

TEST_CASE("cubic capacitor state and capacity", "[assembly]") {
    const auto c = load_circuit("C1 1 0 H=poly(0,0,0,0,0.25)\nR1 1 0 R=1\n.ground 0\n");
    const auto& cap = c.netlist.components[0];
    CHECK(components::storage_state(cap, 8.0) == Approx(2.0).epsilon(1e-12));
    CHECK(components::storage_capacity(cap, 8.0) == Approx(1.0 / 12.0).epsilon(1e-12));
    const auto mna = to_mna(circuit_blocks(c), c.netlist.components);
    Vector x(1), xd(1);
    x << 8.0;
    xd << 3.0;
    // C(u) u' + u / R
    CHECK(mna.residual(0.0, x, xd)(0) == Approx(3.0 / 12.0 + 8.0).epsilon(1e-12));
}

TEST_CASE("potential form equals the charge/flux form by the chain rule", "[assembly][property]") {
    std::mt19937_64 rng(5);
    const std::vector<std::string> circuits = {
        read_file("netlists/rlc.cir"), read_file("netlists/rl_loop.cir"),
        "V1 1 0 SIN(0 1 50)\nR1 1 2 R=3\nC1 2 0 H=poly(0,0,0,0,0.25)\nL1 2 3 H=logcosh(2,0.5)\nD1 3 0 A=1e-9 B=0.05\n"
        "I1 3 2 DC 0.1\nT1 2 0 4 0 ratio=3\nR2 4 0 R=7\n.ground 0\n"};
    for (const auto& text : circuits) {
        const auto c = load_circuit(text);
        const auto b = circuit_blocks(c);
        const auto& comps = c.netlist.components;
        const auto cf = to_mna_cf(b, comps);
        const auto pot = to_mna(b, comps);
        const auto nn = static_cast<Eigen::Index>(b.n()), mc = static_cast<Eigen::Index>(b.C.size()),
                   ml = static_cast<Eigen::Index>(b.L.size());
        const auto rest = static_cast<Eigen::Index>(pot.dim()) - nn - ml;
        const Matrix a = b.A.cast<double>();
        for (int k = 0; k < 20; ++k) {
            const double t = 1e-3 * k;
            const Vector x = random_vector(rng, static_cast<Eigen::Index>(pot.dim()), 0.3);
            const Vector xd = random_vector(rng, x.size(), 0.3);
            Vector y(static_cast<Eigen::Index>(cf.dim())), yd = Vector::Zero(y.size());
            const Vector u = a.transpose() * x.head(nn), ud = a.transpose() * xd.head(nn);
            y.head(nn) = x.head(nn);
            for (Eigen::Index j = 0; j < mc; ++j) {
                const auto e = static_cast<Eigen::Index>(b.C[static_cast<std::size_t>(j)]);
                const auto& comp = comps[b.edge_component[b.C[static_cast<std::size_t>(j)]]];
                y(nn + j) = components::storage_state(comp, u(e));
                yd(nn + j) = components::storage_capacity(comp, u(e)) * ud(e);
            }
            for (Eigen::Index j = 0; j < ml; ++j) {
                const auto& comp = comps[b.edge_component[b.L[static_cast<std::size_t>(j)]]];
                const double il = x(nn + j);
                y(nn + mc + j) = components::storage_state(comp, il);
                yd(nn + mc + j) = components::storage_capacity(comp, il) * xd(nn + j);
                y(nn + mc + ml + j) = il;
            }
            y.tail(rest) = x.tail(rest);
            const Vector rp = pot.residual(t, x, xd), rc = cf.residual(t, y, yd);
            const double scale = 1.0 + linalg::max_abs(rp);
            for (const auto& name : {"node", "inductance", "vsource", "transformer"}) {
                INFO(name);
                const Vector p = row_block(pot, rp, name);
                const Vector q = row_block(cf, rc, std::string(name) == "inductance" ? "flux" : name);
                CHECK(linalg::max_abs(Vector(p - q)) / scale < 1e-8);
            }
            CHECK(linalg::max_abs(row_block(cf, rc, "charge")) < 1e-8);
            CHECK(linalg::max_abs(row_block(cf, rc, "inductance")) < 1e-8);
            // identical edge states
            const auto ep = pot.edges(t, x, xd), ec = cf.edges(t, y, yd);
            CHECK(linalg::max_abs(Vector(ep.i - ec.i)) < 1e-8);
            CHECK(linalg::max_abs(Vector(ep.u - ec.u)) < 1e-8);
        }
    }
}

TEST_CASE("analytic Jacobians agree with finite differences", "[assembly][property]") {
    std::mt19937_64 rng(9);
    const std::vector<std::string> circuits = {
        read_file("netlists/npn_bias.cir"), read_file("netlists/bridge_rectifier/acdc.cir"),
        "V1 1 0 SIN(0 1 50)\nR1 1 2 R=3\nC1 2 0 H=poly(0,0,0,0,0.25)\nL1 2 3 H=logcosh(2,0.5)\nD1 3 0 A=1e-9 B=0.05\n.ground 0\n"};
    for (const auto& text : circuits) {
        const auto c = load_circuit(text);
        const auto b = circuit_blocks(c);
        std::vector<CircuitDae> forms = {to_mna_cf(b, c.netlist.components), to_mna(b, c.netlist.components)};
        if (text.find("Q1") == std::string::npos && text.find("T1") == std::string::npos) forms.push_back(to_mla(b, c.netlist.components));
        for (const auto& f : forms) {
            INFO(to_string(f.form));
            const auto n = static_cast<Eigen::Index>(f.dim());
            const Vector x = random_vector(rng, n, 0.02), xd = random_vector(rng, n, 0.02);
            auto rx = [&](const Vector& v) { return Vector(f.residual(0.001, v, xd)); };
            auto rxd = [&](const Vector& v) { return Vector(f.residual(0.001, x, v)); };
            const Matrix jx = f.jac_x(0.001, x, xd), jxd = f.jac_xdot(0.001, x, xd);
            const Matrix fx = ph::fd_jacobian(rx, x), fxd = ph::fd_jacobian(rxd, xd);
            CHECK(linalg::max_abs(Matrix(jx - fx)) <= 1e-5 * (1.0 + linalg::max_abs(fx)));
            CHECK(linalg::max_abs(Matrix(jxd - fxd)) <= 1e-5 * (1.0 + linalg::max_abs(fxd)));
        }
    }
}

TEST_CASE("loop form of a series RL circuit", "[assembly]") {
    const auto c = load_circuit("V1 1 0 DC 1\nR1 1 2 R=2\nL1 2 0 L=0.5 IC=0\n.ground 0\n");
    const auto b = circuit_blocks(c);
    const auto mla = to_mla(b, c.netlist.components);
    REQUIRE(mla.dim() == 1);
    CHECK(mla.differential[0]);
    // steady state: the loop current makes the resistor drop the full source voltage
    const double bv = static_cast<double>(b.B_V(0, 0));
    Vector x(1);
    x << -bv * 0.5;
    CHECK(std::abs(mla.residual(0.0, x, Vector::Zero(1))(0)) < 1e-15);
    const auto es = mla.edges(0.0, x, Vector::Zero(1));
    const auto r = static_cast<Eigen::Index>(b.R[0]), v = static_cast<Eigen::Index>(b.V[0]);
    CHECK(std::abs(es.i(r)) == Approx(0.5));
    CHECK(es.u(r) * es.i(r) == Approx(0.5));
    CHECK(es.u(v) * es.i(v) == Approx(-0.5));
    CHECK(es.phi(0) == Approx(1.0));
    // transient slope: L i' = 1 - 2 i
    x << 0.0;
    Vector xd(1);
    xd << -bv * 2.0;
    CHECK(std::abs(mla.residual(0.0, x, xd)(0)) < 1e-15);
    CHECK_THROWS_AS(to_mla(circuit_blocks(load_circuit("Q1 c b 0\nV1 c 0 DC 1\nV2 b 0 DC 1\n")), load_circuit("Q1 c b 0\nV1 c 0 DC 1\nV2 b 0 DC 1\n").netlist.components), Error);
}

TEST_CASE("potential and loop forms share the RLC stationary point", "[assembly]") {
    const auto c = load_circuit("V1 1 0 DC 2\nR1 1 2 R=4\nL1 2 3 L=1m\nR2 3 0 R=4\nC1 3 0 C=1u\n.ground 0\n");
    const auto b = circuit_blocks(c);
    const auto mna = to_mna(b, c.netlist.components);
    const auto mla = to_mla(b, c.netlist.components);
    // phi = (2, 1, 1), i_L = 0.25, i_V = -0.25
    Vector x(5);
    x << 2.0, 1.0, 1.0, 0.25, -0.25;
    CHECK(linalg::max_abs(Vector(mna.residual(0.0, x, Vector::Zero(5)))) < 1e-14);
    const auto em = mna.edges(0.0, x, Vector::Zero(5));
    // same edge currents from a loop vector solving B^T iota = i
    const Matrix bt = b.B.cast<double>().transpose();
    const Vector iota = bt.colPivHouseholderQr().solve(em.i);
    Vector y(static_cast<Eigen::Index>(mla.dim()));
    y.head(iota.size()) = iota;
    y(iota.size()) = 1.0;  // u_C
    CHECK(linalg::max_abs(Vector(mla.residual(0.0, y, Vector::Zero(y.size())))) < 1e-14);
    const auto el = mla.edges(0.0, y, Vector::Zero(y.size()));
    CHECK(linalg::max_abs(Vector(el.u - em.u)) < 1e-14);
    CHECK(linalg::max_abs(Vector(el.phi - em.phi)) < 1e-12);
}

TEST_CASE("initial constraints and power terms", "[assembly]") {
    const auto c = load_circuit(read_file("netlists/rl_loop.cir"));
    const auto b = circuit_blocks(c);
    const auto mna = to_mna_cf(b, c.netlist.components);
    CHECK(mna.initial_constraint(Vector::Zero(static_cast<Eigen::Index>(mna.dim()))).size() == 2);
    CHECK(linalg::max_abs(mna.initial_constraint(Vector::Zero(static_cast<Eigen::Index>(mna.dim())))) == 0.0);
    const auto t = load_circuit("V1 1 0 DC 3\nT1 1 0 2 0 ratio=2\nR1 2 0 R=5\n.ground 0\n");
    const auto tb = circuit_blocks(t);
    const auto m = to_mna_cf(tb, t.netlist.components);
    // secondary edge runs 0 -> 2, so u2 = 1.5 puts node 2 at -1.5; R carries -0.3 from 2 to 0
    const Eigen::Index n = static_cast<Eigen::Index>(m.dim());
    REQUIRE(n == 5);
    Vector x(5);
    x << 3.0, -1.5, -0.15, 0.15, -0.3;
    CHECK(linalg::max_abs(Vector(m.residual(0.0, x, Vector::Zero(5)))) < 1e-14);
    const auto es = m.edges(0.0, x, Vector::Zero(5));
    const auto p = power_terms(tb, t.netlist.components, es);
    CHECK(p.supplied == Approx(0.45));
    CHECK(p.dissipated == Approx(0.45));
}

TEST_CASE("port-Hamiltonian and nodal formulations are equivalent", "[assembly][property]") {
    std::mt19937_64 rng(17);
    for (const char* path : kGolden) {
        INFO(path);
        const auto c = make_circuit(netlist::parse(read_file(path)));
        const auto a = assemble(c);
        const auto mna = to_mna_cf(a.blocks, c.netlist.components);
        const auto n = static_cast<Eigen::Index>(mna.dim());
        std::vector<MnaPoint> samples;
        for (int k = 0; k < 5; ++k) samples.push_back({1e-4 * k, random_vector(rng, n, 0.01), random_vector(rng, n, 0.01)});
        const auto rep = ph_mna_equivalence(a, mna, samples);
        CHECK(rep.samples == 5);
        CHECK(rep.mna_to_ph <= 1e-9);
        CHECK(rep.ph_to_mna <= 1e-9);
    }
}

TEST_CASE("equivalence fails for a flipped capacitor orientation", "[assembly]") {
    std::mt19937_64 rng(23);
    const auto c = make_circuit(netlist::parse(read_file("netlists/rc.cir")));
    const auto a = assemble(c);
    auto b = a.blocks;
    b.A_C *= -1;
    const auto wrong = to_mna_cf(b, c.netlist.components);
    std::vector<MnaPoint> samples;
    for (int k = 0; k < 3; ++k) samples.push_back({0.0, random_vector(rng, 4, 1.0), random_vector(rng, 4, 1.0)});
    CHECK_FALSE(ph_mna_equivalence(a, wrong, samples).ok());
}

TEST_CASE("Dirac and Lagrange JSON round trip", "[assembly]") {
    const auto a = assemble(netlist::parse(read_file("netlists/rlc.cir")));
    const auto j = json::to_json(a.system.dirac);
    const auto d = json::dirac_from_json(nlohmann::json::parse(j.dump()));
    CHECK(d.K == a.system.dirac.K);
    CHECK(d.L == a.system.dirac.L);
    CHECK(d.layout == a.system.dirac.layout);
    CHECK(j.at("n").get<std::size_t>() == a.system.dim());
    ph::LinearLagrange l{Matrix::Identity(2, 2), (Matrix(2, 2) << 0.1, 0, 0, 1.0 / 3.0).finished()};
    const auto back = json::lagrange_from_json(nlohmann::json::parse(json::to_json(l).dump()));
    CHECK(back.S == l.S);
    CHECK(back.P == l.P);
}
