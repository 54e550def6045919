#include <catch_amalgamated.hpp>

#include "oracles.hpp"
#include "phcirc/ph_core.hpp"

using namespace phcirc;
using namespace phcirc::ph;

namespace {

// {(-i, i, u, u)} with the first block of the given kind and the second a link.
PHSystem one_port(PortKind inner, const std::string& tag) {
    PHSystem s;
    s.dirac.K = Matrix::Zero(2, 2);
    s.dirac.L = Matrix::Zero(2, 2);
    s.dirac.K << 1, 1, 0, 0;
    s.dirac.L << 0, 0, 1, -1;
    s.dirac.layout = {{inner, tag}, {PortKind::link, tag + ".link"}};
    if (inner == PortKind::storage) {
        GradientLagrange g;
        g.dim = 1;
        g.hamiltonian = [](const Vector& x) { return 0.5 * x(0) * x(0); };
        g.gradient = [](const Vector& x) { return x; };
        s.lagrange.blocks.push_back(g);
    } else if (inner == PortKind::resistive) {
        ResistiveRelation r;
        r.dim = 1;
        r.name = tag;
        r.map = [](const Vector& e) { return Vector(e / 2.0); };
        s.resistive.blocks.push_back(r);
    }
    return s;
}

bool members_orthogonal(const DiracKernel& d, std::mt19937_64& rng, int count) {
    const Matrix span = dirac_span(d);
    const auto n = static_cast<Eigen::Index>(d.dim());
    std::normal_distribution<double> nd;
    for (int i = 0; i < count; ++i) {
        Vector c(span.cols());
        for (Eigen::Index j = 0; j < c.size(); ++j) c(j) = nd(rng);
        const Vector w = span * c;
        const Vector f = w.head(n), e = w.tail(n);
        if (!dirac_contains(d, f, e, 1e-9)) return false;
        if (std::abs(e.dot(f)) > 1e-10 * (1.0 + f.norm() * e.norm())) return false;
    }
    return true;
}

} // namespace

TEST_CASE("small Dirac examples", "[ph_core]") {
    Matrix k(2, 2), l(2, 2);
    k << 1, 0, 0, 0;
    l << 0, 0, 0, 1;
    CHECK(is_dirac(k, l));
    l << 0, 1, 0, 0;
    CHECK_FALSE(is_dirac(k, l));
    CHECK_THROWS_AS(is_dirac(Matrix::Zero(2, 3), Matrix::Zero(2, 2)), Error);
}

TEST_CASE("standard one-port Dirac structures", "[ph_core]") {
    for (int lp = 1; lp <= 4; ++lp) {
        const Eigen::Index n = 2 * lp;
        Matrix k = Matrix::Zero(n, n), l = Matrix::Zero(n, n);
        k.topLeftCorner(lp, lp).setIdentity();
        k.topRightCorner(lp, lp).setIdentity();
        l.bottomLeftCorner(lp, lp).setIdentity();
        l.bottomRightCorner(lp, lp) = -Matrix::Identity(lp, lp);
        CHECK(is_dirac(k, l));
    }
}

TEST_CASE("kernel_from_span degenerate bases", "[ph_core]") {
    const auto empty = kernel_from_span(Matrix(2, 0), {});
    CHECK(empty.K.rows() == 2);
    CHECK_FALSE(is_dirac(empty));
    const auto full = kernel_from_span(Matrix::Identity(2, 2), {});
    CHECK(full.K.rows() == 0);
    CHECK_FALSE(is_dirac(full));
}

TEST_CASE("kernel_from_span rejects an ambiguous rank gap", "[ph_core]") {
    Matrix bad = Matrix::Zero(6, 3);
    bad(0, 0) = 1.0;
    bad(1, 1) = 2e-10;
    bad(2, 2) = 1e-11;
    try {
        kernel_from_span(bad, {});
        FAIL("expected DegenerateSpan");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::DegenerateSpan);
    }
}

TEST_CASE("random Dirac structures round trip through kernel form", "[ph_core][property]") {
    std::mt19937_64 rng(11);
    for (int t = 0; t < 30; ++t) {
        std::uniform_int_distribution<std::size_t> dn(1, 5);
        const auto n = dn(rng);
        std::uniform_int_distribution<std::size_t> dc(0, n);
        const Matrix span = oracle::random_dirac_span(rng, n, dc(rng));
        const auto d = kernel_from_span(span, uniform_layout(PortKind::external, n, "p"));
        REQUIRE(is_dirac(d));
        CHECK(members_orthogonal(d, rng, 10));
    }
}

TEST_CASE("linear Lagrange subspaces", "[ph_core]") {
    CHECK(is_linear_lagrange(Matrix::Identity(2, 2), Matrix::Zero(2, 2)));
    Matrix p(2, 2);
    p << 0, 1, 0, 0;
    CHECK_FALSE(is_linear_lagrange(Matrix::Identity(2, 2), p));
    CHECK_FALSE(is_linear_lagrange(Matrix::Zero(2, 2), Matrix::Zero(2, 2)));
}

TEST_CASE("gradient field check", "[ph_core]") {
    const std::vector<Vector> samples{Vector::Constant(2, 0.3), Vector::Constant(2, -1.2), Vector::Zero(2)};
    auto grad = [](const Vector& x) {
        Vector q(2);
        q << x(0) * x(0) * x(0) + x(1), x(0) + x(1);
        return q;
    };
    CHECK(gradient_field_check(grad, samples).ok);
    auto rot = [](const Vector& x) {
        Vector q(2);
        q << x(1), -x(0);
        return q;
    };
    CHECK_FALSE(gradient_field_check(rot, samples).ok);
    auto nan = [](const Vector& x) { return Vector(x.array().log()); };
    CHECK_THROWS_AS(gradient_field_check(nan, {Vector::Constant(2, -1.0)}), Error);
}

TEST_CASE("resistive check", "[ph_core]") {
    ResistiveRelation cubic;
    cubic.dim = 1;
    cubic.map = [](const Vector& e) { return Vector(e.array().cube()); };
    ResistiveRelation active = cubic;
    active.map = [](const Vector& e) { return Vector(-e); };
    std::vector<std::pair<Vector, Vector>> sc, sa;
    for (double u : {-2.0, -0.5, 0.0, 0.7, 3.0}) {
        sc.push_back(cubic.member(Vector::Constant(1, u)));
        sa.push_back(active.member(Vector::Constant(1, u)));
    }
    CHECK(resistive_check(cubic, sc).ok);
    const auto r = resistive_check(active, sa);
    CHECK_FALSE(r.ok);
    CHECK(r.where == 4);
}

TEST_CASE("capacitor discharging into a resistor", "[ph_core]") {
    const auto cap = one_port(PortKind::storage, "C");
    const auto res = one_port(PortKind::resistive, "R");
    const auto rc = interconnect(cap, res);
    REQUIRE(rc.dim() == 2);
    CHECK(rc.dirac.layout[0].kind == PortKind::storage);
    CHECK(rc.dirac.layout[1].kind == PortKind::resistive);
    CHECK(is_dirac(rc.dirac));
    Vector f(2), e(2);
    f << 0.4, -0.4;
    e << 1.5, 1.5;
    CHECK(dirac_contains(rc.dirac, f, e, 1e-12));
    e << 1.5, 1.0;
    CHECK_FALSE(dirac_contains(rc.dirac, f, e, 1e-6));

    // q = 1 discharges with q' = -u/2.
    const double q = 1.0;
    Vector x(1), xdot(1), z(3);
    x << q;
    xdot << -0.5;
    z << -0.5, 1.0, 1.0;
    CHECK(ph_residual(rc, 0.0, x, xdot, z).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("ph_residual of an open capacitor", "[ph_core]") {
    const auto cap = one_port(PortKind::storage, "C");
    Vector x(1), xdot(1), z(3);
    x << 1.0;
    xdot << 0.0;
    z << 0.0, 1.0, 1.0;  // f_link = i, e = (u, u)
    CHECK(ph_residual(cap, 0.0, x, xdot, z).cwiseAbs().maxCoeff() == 0.0);
    z << 0.0, 0.5, 0.5;
    CHECK(ph_residual(cap, 0.0, x, xdot, z).cwiseAbs().maxCoeff() > 0.4);
}

TEST_CASE("link mismatch", "[ph_core]") {
    auto a = one_port(PortKind::storage, "C");
    PHSystem b;
    b.dirac.K = Matrix::Identity(1, 1);
    b.dirac.L = Matrix::Zero(1, 1);
    b.dirac.layout = {{PortKind::external, "p"}};
    try {
        interconnect(a, b);
        FAIL("expected LinkMismatch");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::LinkMismatch);
    }
}

TEST_CASE("product groups coordinates and is associative", "[ph_core]") {
    const auto a = one_port(PortKind::storage, "A");
    const auto b = one_port(PortKind::resistive, "B");
    const auto c = one_port(PortKind::external, "C");
    const auto left = product({product({a, b}), c});
    const auto right = product({a, product({b, c})});
    REQUIRE(left.dirac.layout == right.dirac.layout);
    CHECK(left.dirac.layout[0].label == "A");
    CHECK(left.dirac.layout[1].label == "B");
    CHECK(left.dirac.layout[2].label == "C");
    CHECK(left.dirac.layout[3].kind == PortKind::link);
    CHECK(is_dirac(left.dirac));
    CHECK(same_dirac(left.dirac, right.dirac));
    CHECK(left.lagrange.dim() == 1);
    CHECK(left.resistive.dim() == 1);
}

TEST_CASE("random compositions stay Dirac", "[ph_core][property]") {
    std::mt19937_64 rng(99);
    for (int t = 0; t < 40; ++t) {
        std::uniform_int_distribution<std::size_t> dn(1, 3), dl(1, 3);
        const auto b = dl(rng);
        const auto a1 = dn(rng), a2 = dn(rng);
        std::uniform_int_distribution<std::size_t> c1(0, a1 + b), c2(0, a2 + b);
        PortLayout l1 = uniform_layout(PortKind::external, a1, "x"), l2 = uniform_layout(PortKind::resistive, a2, "y");
        for (std::size_t i = 0; i < b; ++i) {
            l1.push_back({PortKind::link, "l" + std::to_string(i)});
            l2.push_back({PortKind::link, "l" + std::to_string(i)});
        }
        PHSystem s1, s2;
        s1.dirac = kernel_from_span(oracle::random_dirac_span(rng, a1 + b, c1(rng)), l1);
        s2.dirac = kernel_from_span(oracle::random_dirac_span(rng, a2 + b, c2(rng)), l2);
        for (std::size_t i = 0; i < a2; ++i) {
            ResistiveRelation r;
            r.dim = 1;
            r.map = [](const Vector& e) { return e; };
            s2.resistive.blocks.push_back(r);
        }
        const auto out = interconnect(s1, s2);
        CHECK(out.dim() == a1 + a2);
        CHECK(is_dirac(out.dirac));
        CHECK(members_orthogonal(out.dirac, rng, 5));
    }
}
