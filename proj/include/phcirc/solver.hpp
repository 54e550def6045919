#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/LU>
#include <Eigen/QR>

#include "assembly.hpp"

namespace phcirc::solver {

enum class Method { backward_euler, trapezoidal };

inline const char* to_string(Method m) { return m == Method::backward_euler ? "be" : "trap"; }

struct IntegratorConfig {
    Method method = Method::backward_euler;
    double dt = 1e-6;
    double newton_tol = 1e-10;
    int max_newton = 25;
    int max_halvings = 10;
};

using Residual = std::function<Vector(double, const Vector&, const Vector&)>;
using Jacobian = std::function<Matrix(double, const Vector&, const Vector&)>;

struct DaeProblem {
    std::size_t dim = 0;
    Residual residual;
    Jacobian jac_x, jac_xdot;  // finite differences when empty
    std::vector<bool> differential;
    std::function<Vector(const Vector&)> initial_constraint;
    std::vector<std::string> observable_names;
    std::function<Vector(double, const Vector&, const Vector&)> observe;
    std::function<double(const Vector&)> energy;
    std::function<std::pair<double, double>(double, const Vector&, const Vector&)> power;  // (P_S, D)
};

struct Trajectory {
    std::vector<std::string> names;
    std::vector<double> times;
    std::vector<Vector> states, rates, observables;
    std::vector<double> H, P_S, D, balance_err;
    int max_iterations = 0;   // Newton iterations of the worst accepted step
    int total_iterations = 0;
    int halvings = 0;

    std::size_t size() const { return times.size(); }

    void write_csv(std::ostream& os) const {
        os << "t";
        for (const auto& n : names) os << ',' << n;
        os << ",H,P_S,D,balance_err\n";
        char buf[32];
        auto put = [&](double v) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            os << buf;
        };
        for (std::size_t k = 0; k < times.size(); ++k) {
            put(times[k]);
            for (Eigen::Index j = 0; j < observables[k].size(); ++j) {
                os << ',';
                put(observables[k](j));
            }
            for (double v : {H[k], P_S[k], D[k], balance_err[k]}) {
                os << ',';
                put(v);
            }
            os << '\n';
        }
    }
};

namespace detail {

inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x, const Vector& f0) {
    Matrix j(f0.size(), x.size());
    for (Eigen::Index c = 0; c < x.size(); ++c) {
        const double h = 1e-7 * std::max(1.0, std::abs(x(c)));
        Vector xp = x;
        xp(c) += h;
        j.col(c) = (f(xp) - f0) / h;
    }
    return j;
}

inline Matrix jac_x(const DaeProblem& p, double t, const Vector& x, const Vector& xd, const Vector& f0) {
    if (p.jac_x) return p.jac_x(t, x, xd);
    return fd_jacobian([&](const Vector& v) { return Vector(p.residual(t, v, xd)); }, x, f0);
}

inline Matrix jac_xdot(const DaeProblem& p, double t, const Vector& x, const Vector& xd, const Vector& f0) {
    if (p.jac_xdot) return p.jac_xdot(t, x, xd);
    return fd_jacobian([&](const Vector& v) { return Vector(p.residual(t, x, v)); }, xd, f0);
}

inline double norm(const Vector& v) { return linalg::max_abs(v); }

struct NewtonResult {
    Vector y;
    int iterations = 0;
};

// Damped Newton on G(y) = 0 with Armijo halving down to 2^-20. The operating point (full_pivot) is
// iterated until the residual stagnates; time steps stop once it is well below the tolerance.
inline NewtonResult newton(const std::function<Vector(const Vector&)>& g, const std::function<Matrix(const Vector&, const Vector&)>& jac,
                           Vector y, const IntegratorConfig& cfg, double t, bool full_pivot) {
    NewtonResult res;
    Vector gy = g(y);
    if (!gy.allFinite()) throw SolverError(ErrorKind::EvaluationFailure, "non-finite residual", t, NAN);
    double n0 = norm(gy);
    const double floor = full_pivot ? 0.0 : 1e-3 * cfg.newton_tol;
    if (n0 <= floor) {
        res.y = y;
        return res;
    }
    for (int it = 0; it < cfg.max_newton; ++it) {
        const Matrix j = jac(y, gy);
        Vector delta;
        if (full_pivot) {
            Eigen::FullPivLU<Matrix> lu(j);
            lu.setThreshold(1e-14);
            if (!lu.isInvertible())
                throw SolverError(ErrorKind::SingularJacobian,
                                  "rank " + std::to_string(lu.rank()) + " of " + std::to_string(j.rows()) + ", condition estimate " +
                                      std::to_string(lu.rcond() > 0 ? 1.0 / lu.rcond() : INFINITY),
                                  t, n0);
            delta = -lu.solve(gy);
        } else {
            // minimum-norm step; directions fixed only by vanishing leakage are left alone
            delta = -Eigen::CompleteOrthogonalDecomposition<Matrix>(j).solve(gy);
        }
        if (!delta.allFinite()) throw SolverError(ErrorKind::SingularJacobian, "singular Newton matrix", t, n0);
        double lambda = 1.0;
        Vector next = y + delta;
        Vector gn = g(next);
        double n1 = gn.allFinite() ? norm(gn) : INFINITY;
        while (!(n1 <= (1.0 - 1e-4 * lambda) * n0) && lambda > std::ldexp(1.0, -20)) {
            lambda *= 0.5;
            next = y + lambda * delta;
            gn = g(next);
            n1 = gn.allFinite() ? norm(gn) : INFINITY;
        }
        if (!(n1 <= (1.0 - 1e-4 * lambda) * n0)) {
            if (n0 <= cfg.newton_tol) {  // already at the noise floor
                res.y = y;
                return res;
            }
            throw SolverError(ErrorKind::NewtonDivergence, "line search failed after " + std::to_string(it + 1) + " iterates", t, n0);
        }
        ++res.iterations;
        const bool tiny = norm(Vector(lambda * delta)) <= 1e-12 * (1.0 + norm(next));
        const bool stalled = n1 > 0.1 * n0;
        y = std::move(next);
        gy = std::move(gn);
        n0 = n1;
        if (n0 <= cfg.newton_tol && (n0 <= floor || tiny || (full_pivot && stalled))) {
            res.y = y;
            return res;
        }
    }
    throw SolverError(ErrorKind::NewtonDivergence, "no convergence in " + std::to_string(cfg.max_newton) + " iterates", t, n0);
}

inline Vector row_scale(const DaeProblem& p, double t, const Vector& x) {
    const Vector f = p.residual(t, x, Vector::Zero(x.size()));
    Vector s(f.size());
    for (Eigen::Index i = 0; i < f.size(); ++i) s(i) = 1.0 / std::max(1.0, std::isfinite(f(i)) ? std::abs(f(i)) : 1.0);
    return s;
}

} // namespace detail

// Solves F(0, x, 0) = 0 from the guess (zero by default).
inline Vector dc_operating_point(const DaeProblem& p, const IntegratorConfig& cfg = {}, std::optional<Vector> guess = std::nullopt) {
    const auto n = static_cast<Eigen::Index>(p.dim);
    const Vector x0 = guess.value_or(Vector::Zero(n));
    const Vector zero = Vector::Zero(n);
    const Vector s = detail::row_scale(p, 0.0, x0);
    auto g = [&](const Vector& x) { return Vector(s.asDiagonal() * p.residual(0.0, x, zero)); };
    auto jac = [&](const Vector& x, const Vector& gx) {
        (void)gx;
        const Vector f = p.residual(0.0, x, zero);
        return Matrix(s.asDiagonal() * detail::jac_x(p, 0.0, x, zero, f));
    };
    return detail::newton(g, jac, x0, cfg, 0.0, true).y;
}

namespace detail {

// Gauss-Newton on xdot alone with x held fixed; empty when that cannot reach consistency.
inline std::optional<Vector> rates_only(const DaeProblem& p, const IntegratorConfig& cfg, const Vector& x) {
    const auto n = x.size();
    if (p.initial_constraint && norm(p.initial_constraint(x)) > cfg.newton_tol) return std::nullopt;
    Vector xd = Vector::Zero(n);
    Vector f = p.residual(0.0, x, xd);
    Vector s(f.size());
    for (Eigen::Index i = 0; i < f.size(); ++i) s(i) = 1.0 / std::max(1.0, std::abs(f(i)));
    Vector r = s.asDiagonal() * f;
    for (int it = 0; it < cfg.max_newton && norm(r) > 0.0; ++it) {
        const Matrix j = s.asDiagonal() * jac_xdot(p, 0.0, x, xd, p.residual(0.0, x, xd));
        const Vector next = xd - Eigen::CompleteOrthogonalDecomposition<Matrix>(j).solve(r);
        const Vector rn = s.asDiagonal() * p.residual(0.0, x, next);
        if (!(norm(rn) < norm(r))) break;
        xd = next;
        r = rn;
    }
    if (!(norm(r) <= cfg.newton_tol)) return std::nullopt;
    return xd;
}

} // namespace detail

// Consistent (x, xdot) at t = 0 with the initial constraints imposed. x stays at zero when the rates alone
// can make it consistent; otherwise Gauss-Newton on both from zero.
inline std::pair<Vector, Vector> initial_conditions(const DaeProblem& p, const IntegratorConfig& cfg = {}) {
    const auto n = static_cast<Eigen::Index>(p.dim);
    if (auto xd = detail::rates_only(p, cfg, Vector::Zero(n))) return {Vector::Zero(n), *xd};
    auto stacked = [&](const Vector& v) {
        const Vector f = p.residual(0.0, v.head(n), v.tail(n));
        const Vector c = p.initial_constraint ? p.initial_constraint(v.head(n)) : Vector(0);
        Vector r(f.size() + c.size());
        r << f, c;
        return r;
    };
    Vector v = Vector::Zero(2 * n);
    Vector r = stacked(v);
    Vector s(r.size());
    for (Eigen::Index i = 0; i < r.size(); ++i) s(i) = 1.0 / std::max(1.0, std::abs(r(i)));
    r = s.asDiagonal() * r;
    for (int it = 0; it < 4 * cfg.max_newton; ++it) {
        if (detail::norm(r) == 0.0) break;
        Matrix j(r.size(), 2 * n);
        const Vector f0 = p.residual(0.0, v.head(n), v.tail(n));
        j.topRows(f0.size()) << detail::jac_x(p, 0.0, v.head(n), v.tail(n), f0), detail::jac_xdot(p, 0.0, v.head(n), v.tail(n), f0);
        if (r.size() > f0.size()) {
            const auto c = [&](const Vector& x) { return Vector(p.initial_constraint(x)); };
            const Vector c0 = c(v.head(n));
            j.bottomRows(c0.size()) << detail::fd_jacobian(c, v.head(n), c0), Matrix::Zero(c0.size(), n);
        }
        j = s.asDiagonal() * j;
        const Vector step = Eigen::CompleteOrthogonalDecomposition<Matrix>(j).solve(r);
        double lambda = 1.0;
        Vector next = v - step;
        Vector rn = s.asDiagonal() * stacked(next);
        while (!(detail::norm(rn) < detail::norm(r)) && lambda > std::ldexp(1.0, -20)) {
            lambda *= 0.5;
            next = v - lambda * step;
            rn = s.asDiagonal() * stacked(next);
        }
        if (!(detail::norm(rn) < detail::norm(r))) break;
        const bool negligible = detail::norm(Vector(next - v)) <= 1e-14 * detail::norm(next);
        v = next;
        r = rn;
        if (negligible && detail::norm(r) <= cfg.newton_tol) break;
    }
    if (!(detail::norm(r) <= cfg.newton_tol))
        throw SolverError(ErrorKind::NewtonDivergence, "inconsistent initial conditions", 0.0, detail::norm(r));
    return {v.head(n), v.tail(n)};
}

struct StepResult {
    Vector x, xdot;
    int iterations = 0;
};

// One step of size h from (t, x, xdot); the row scale s is applied to the residual.
inline StepResult step(const DaeProblem& p, const IntegratorConfig& cfg, double t, const Vector& x, const Vector& xdot, double h,
                       const Vector& s) {
    const double t1 = t + h;
    const bool trap = cfg.method == Method::trapezoidal;
    const double a = trap ? 2.0 / h : 1.0 / h;
    auto rate = [&](const Vector& y) { return trap ? Vector(a * (y - x) - xdot) : Vector(a * (y - x)); };
    auto g = [&](const Vector& y) { return Vector(s.asDiagonal() * p.residual(t1, y, rate(y))); };
    auto jac = [&](const Vector& y, const Vector&) {
        const Vector yd = rate(y);
        const Vector f = p.residual(t1, y, yd);
        return Matrix(s.asDiagonal() * (detail::jac_x(p, t1, y, yd, f) + a * detail::jac_xdot(p, t1, y, yd, f)));
    };
    auto r = detail::newton(g, jac, x, cfg, t1, false);
    StepResult out;
    out.xdot = rate(r.y);
    out.x = std::move(r.y);
    out.iterations = r.iterations;
    return out;
}

inline StepResult step(const DaeProblem& p, const IntegratorConfig& cfg, double t, const Vector& x, const Vector& xdot) {
    return step(p, cfg, t, x, xdot, cfg.dt, Vector::Ones(static_cast<Eigen::Index>(p.dim)));
}

enum class Start { operating_point, initial_conditions };

// Fixed output grid t_k = k dt; a failed step is retried as two half steps, at most max_halvings deep.
inline Trajectory simulate(const DaeProblem& p, const IntegratorConfig& cfg, double tstop, Start start = Start::operating_point) {
    if (!(cfg.dt > 0.0) || !(cfg.newton_tol > 0.0)) throw Error(ErrorKind::BadParams, "dt and tolerances must be positive");
    const auto n = static_cast<Eigen::Index>(p.dim);
    Vector x, xd;
    if (start == Start::operating_point) {
        x = dc_operating_point(p, cfg);
        xd = Vector::Zero(n);
    } else {
        std::tie(x, xd) = initial_conditions(p, cfg);
    }
    const Vector s = detail::row_scale(p, 0.0, x);

    Trajectory tr;
    tr.names = p.observable_names;
    double h0 = p.energy ? p.energy(x) : 0.0;
    double integral = 0.0;
    auto powers = [&](double t, const Vector& y, const Vector& yd) {
        return p.power ? p.power(t, y, yd) : std::pair<double, double>{0.0, 0.0};
    };
    auto record = [&](double t, const Vector& y, const Vector& yd, const std::pair<double, double>& pw) {
        tr.times.push_back(t);
        tr.states.push_back(y);
        tr.rates.push_back(yd);
        tr.observables.push_back(p.observe ? p.observe(t, y, yd) : y);
        const double h = p.energy ? p.energy(y) : 0.0;
        tr.H.push_back(h);
        tr.P_S.push_back(pw.first);
        tr.D.push_back(pw.second);
        tr.balance_err.push_back(h - h0 - integral);
    };
    auto pw = powers(0.0, x, xd);
    record(0.0, x, xd, pw);

    const auto steps = static_cast<long>(std::llround(tstop / cfg.dt));
    const bool trap = cfg.method == Method::trapezoidal;
    std::function<void(double, double, int)> advance = [&](double t, double h, int depth) {
        StepResult r;
        try {
            r = step(p, cfg, t, x, xd, h, s);
        } catch (const SolverError& e) {
            if (e.kind() != ErrorKind::NewtonDivergence && e.kind() != ErrorKind::SingularJacobian) throw;
            if (depth >= cfg.max_halvings)
                throw SolverError(e.kind(), std::string(e.detail()) + " after " + std::to_string(depth) + " halvings", e.time(), e.residual_norm());
            ++tr.halvings;
            advance(t, 0.5 * h, depth + 1);
            advance(t + 0.5 * h, 0.5 * h, depth + 1);
            return;
        }
        const auto pn = powers(t + h, r.x, r.xdot);
        integral += trap ? 0.5 * h * ((pw.first - pw.second) + (pn.first - pn.second)) : h * (pn.first - pn.second);
        pw = pn;
        x = std::move(r.x);
        xd = std::move(r.xdot);
        tr.max_iterations = std::max(tr.max_iterations, r.iterations);
        tr.total_iterations += r.iterations;
    };
    for (long k = 1; k <= steps; ++k) {
        const double t = static_cast<double>(k - 1) * cfg.dt;
        const double t1 = static_cast<double>(k) * cfg.dt;
        advance(t, t1 - t, 0);
        record(t1, x, xd, pw);
    }
    return tr;
}

// ---------------------------------------------------------------- circuits

struct CircuitProblem {
    DaeProblem problem;
    assembly::CircuitDae dae;
    assembly::CircuitBlocks blocks;
    std::vector<components::ComponentModel> components;
};

// Observables v(node), i(edge), u(edge); energy and power from the circuit formulation.
inline CircuitProblem circuit_problem(const assembly::Circuit& c, assembly::Formulation f) {
    CircuitProblem cp;
    cp.blocks = assembly::circuit_blocks(c);
    cp.components = c.netlist.components;
    cp.dae = assembly::formulate(f, cp.blocks, cp.components);
    auto& p = cp.problem;
    const auto dae = cp.dae;
    const auto blocks = cp.blocks;
    const auto comps = cp.components;
    p.dim = dae.dim();
    p.residual = dae.residual;
    p.jac_x = dae.jac_x;
    p.jac_xdot = dae.jac_xdot;
    p.differential = dae.differential;
    p.initial_constraint = dae.initial_constraint;
    for (const auto& v : blocks.nodes) p.observable_names.push_back("v(" + v + ")");
    for (const auto& e : blocks.edges) p.observable_names.push_back("i(" + e + ")");
    for (const auto& e : blocks.edges) p.observable_names.push_back("u(" + e + ")");
    p.observe = [dae](double t, const Vector& x, const Vector& xd) {
        const auto es = dae.edges(t, x, xd);
        Vector o(es.phi.size() + es.i.size() + es.u.size());
        o << es.phi, es.i, es.u;
        return o;
    };
    p.energy = dae.energy;
    p.power = [dae, blocks, comps](double t, const Vector& x, const Vector& xd) {
        const auto pt = assembly::power_terms(blocks, comps, dae.edges(t, x, xd));
        return std::pair<double, double>{pt.supplied, pt.dissipated};
    };
    return cp;
}

inline Start start_for(const netlist::Netlist& n) {
    const auto tran = n.tran();
    return tran && tran->uic ? Start::initial_conditions : Start::operating_point;
}

} // namespace phcirc::solver
