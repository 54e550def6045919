#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <optional>
#include <cmath>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "errors.hpp"
#include "laws.hpp"
#include "linalg.hpp"
#include "ph_core.hpp"

namespace phcirc::components {

using ph::GradientLagrange;
using ph::PHSystem;
using ph::PortKind;
using ph::ResistiveForm;
using ph::ResistiveRelation;

// ---------------------------------------------------------------- device physics

constexpr double kExpCap = 80.0;

// exp with a linear continuation above kExpCap so large junction voltages stay finite.
inline double guarded_exp(double x) { return x <= kExpCap ? std::exp(x) : std::exp(kExpCap) * (1.0 + (x - kExpCap)); }
inline double guarded_expm1(double x) { return x <= kExpCap ? std::expm1(x) : guarded_exp(x) - 1.0; }
inline double guarded_exp_slope(double x) { return x <= kExpCap ? std::exp(x) : std::exp(kExpCap); }

inline double pn_diode_current(double u, double a, double b) { return a * guarded_expm1(u / b); }
inline double pn_diode_conductance(double u, double a, double b) { return a / b * guarded_exp_slope(u / b); }

constexpr double kIdealDiodeA = 1e-12;
constexpr double kIdealDiodeB = 1e-3;

struct TransistorParams {
    double i_s = 1e-14;
    double v_t = 0.025;
    double alpha_f = 0.99;
    double alpha_r = 0.5;
    bool operator==(const TransistorParams&) const = default;
};

struct EbersMollCurrents {
    double i_c;
    double i_e;
    double i_b() const { return i_e - i_c; }
};

inline EbersMollCurrents ebers_moll(double u_bc, double u_be, const TransistorParams& p) {
    const double ec = guarded_expm1(u_bc / p.v_t), ee = guarded_expm1(u_be / p.v_t);
    return {p.i_s * ee - p.i_s / p.alpha_r * ec, p.i_s / p.alpha_f * ee - p.i_s * ec};
}

// d(i_C, i_E) / d(u_BC, u_BE)
inline Matrix ebers_moll_jacobian(double u_bc, double u_be, const TransistorParams& p) {
    const double dc = guarded_exp_slope(u_bc / p.v_t) / p.v_t, de = guarded_exp_slope(u_be / p.v_t) / p.v_t;
    Matrix j(2, 2);
    j << -p.i_s / p.alpha_r * dc, p.i_s * de, -p.i_s * dc, p.i_s / p.alpha_f * de;
    return j;
}

inline std::vector<std::string> transistor_warnings(const TransistorParams& p) {
    std::vector<std::string> w;
    if (p.alpha_f < 50.0 / 51.0 || p.alpha_f > 1000.0 / 1001.0) w.push_back("alpha_F outside [50/51, 1000/1001]");
    if (p.alpha_r < 0.01 || p.alpha_r > 0.5) w.push_back("alpha_R outside [1/100, 1/2]");
    if (p.i_s < 1e-15 || p.i_s > 1e-12) w.push_back("i_S outside [1e-15, 1e-12]");
    if (std::abs(p.v_t - 0.025) > 0.005) w.push_back("V_T far from 1/40");
    return w;
}

inline void validate(const TransistorParams& p) {
    if (!(p.i_s > 0.0) || !(p.v_t > 0.0) || !(p.alpha_f > 0.0 && p.alpha_f <= 1.0) || !(p.alpha_r > 0.0 && p.alpha_r <= 1.0))
        throw Error(ErrorKind::BadParams, "transistor needs i_S, V_T > 0 and alphas in (0, 1]");
    if (p.alpha_f * p.alpha_r >= 1.0) throw Error(ErrorKind::NotLocallyPassive, "alpha_F * alpha_R >= 1");
}

namespace detail {
// (e^{x/vt} - 1) / x with its limit 1/vt at 0
inline double secant_slope(double x, double vt) {
    const double y = x / vt;
    if (std::abs(y) < 1e-8) return (1.0 + 0.5 * y) / vt;
    return guarded_expm1(y) / x;
}
} // namespace detail

// A(u) with (u_BC, u_BE) A (u_BC, u_BE)^T = u_BC i_C - u_BE i_E.
inline Matrix transistor_passivity_matrix(double u_bc, double u_be, const TransistorParams& p) {
    const double ac = detail::secant_slope(u_bc, p.v_t), ae = detail::secant_slope(u_be, p.v_t);
    Matrix a(2, 2);
    a << -p.i_s * ac / p.alpha_r, p.i_s * ae, p.i_s * ac, -p.i_s * ae / p.alpha_f;
    return a;
}

inline double max_symmetric_eigenvalue(const Matrix& a) {
    const double s11 = a(0, 0), s22 = a(1, 1), s12 = 0.5 * (a(0, 1) + a(1, 0));
    return 0.5 * (s11 + s22 + std::hypot(s11 - s22, 2.0 * s12));
}

struct RadiusConfig {
    double step = 1e-3;
    double max_radius = 1.0;
    int bisection_steps = 40;
};

// Largest rho such that the symmetric part of A is negative semidefinite on the sampled box |u|_inf <= rho.
inline double transistor_passivity_radius(const TransistorParams& p, const RadiusConfig& cfg = {}) {
    validate(p);
    if (!(max_symmetric_eigenvalue(transistor_passivity_matrix(0.0, 0.0, p)) < 0.0))
        throw Error(ErrorKind::NotLocallyPassive, "A(0,0) is not negative definite");
    auto nsd = [&](double x, double y) { return max_symmetric_eigenvalue(transistor_passivity_matrix(x, y, p)) <= 0.0; };
    auto ring_ok = [&](double r, int samples) {
        for (int i = 0; i <= 2 * samples; ++i) {
            const double t = -r + r * static_cast<double>(i) / samples;
            if (!nsd(r, t) || !nsd(-r, t) || !nsd(t, r) || !nsd(t, -r)) return false;
        }
        return true;
    };
    const int rings = static_cast<int>(std::floor(cfg.max_radius / cfg.step + 0.5));
    for (int k = 1; k <= rings; ++k) {
        if (ring_ok(k * cfg.step, k)) continue;
        double lo = (k - 1) * cfg.step, hi = k * cfg.step;
        for (int it = 0; it < cfg.bisection_steps; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (ring_ok(mid, k)) lo = mid;
            else hi = mid;
        }
        return lo;
    }
    return cfg.max_radius;
}

// ---------------------------------------------------------------- component records

enum class ComponentKind { capacitor, inductor, resistor, diode, transformer, transistor, voltage_source, current_source, sink };

inline const char* to_string(ComponentKind k) {
    switch (k) {
    case ComponentKind::capacitor: return "capacitor";
    case ComponentKind::inductor: return "inductor";
    case ComponentKind::resistor: return "resistor";
    case ComponentKind::diode: return "diode";
    case ComponentKind::transformer: return "transformer";
    case ComponentKind::transistor: return "transistor";
    case ComponentKind::voltage_source: return "voltage_source";
    case ComponentKind::current_source: return "current_source";
    case ComponentKind::sink: return "sink";
    }
    return "?";
}

inline ComponentKind component_kind_from_string(const std::string& s) {
    for (auto k : {ComponentKind::capacitor, ComponentKind::inductor, ComponentKind::resistor, ComponentKind::diode,
                   ComponentKind::transformer, ComponentKind::transistor, ComponentKind::voltage_source,
                   ComponentKind::current_source, ComponentKind::sink})
        if (s == to_string(k)) return k;
    throw Error(ErrorKind::UnknownComponent, "unknown component kind " + s);
}

// Capacitor: Hamiltonian in the charge, initial voltage. Inductor: Hamiltonian in the flux, initial current.
struct StorageParams {
    ScalarLaw hamiltonian;
    std::optional<double> initial;
    bool operator==(const StorageParams&) const = default;
};

enum class ResistorForm { conductance, resistance };

// conductance: i = law(u); resistance: u = law(i)
struct ResistorParams {
    ResistorForm form = ResistorForm::resistance;
    ScalarLaw law;
    bool operator==(const ResistorParams&) const = default;
};

struct DiodeParams {
    bool ideal = false;
    double a = 1e-12;
    double b = 0.025;
    bool operator==(const DiodeParams&) const = default;
};

struct TransformerParams {
    double ratio = 1.0;
    bool operator==(const TransformerParams&) const = default;
};

struct SourceParams {
    Waveform waveform;
    bool operator==(const SourceParams&) const = default;
};

using ComponentParams = std::variant<StorageParams, ResistorParams, DiodeParams, TransformerParams, TransistorParams, SourceParams>;

struct ComponentModel {
    ComponentKind kind;
    std::string name;
    std::vector<std::string> terminals;
    ComponentParams params;

    std::size_t ports() const {
        return kind == ComponentKind::transformer || kind == ComponentKind::transistor ? 2 : 1;
    }

    // (init, ter) terminal indices of each port edge.
    std::vector<std::pair<std::size_t, std::size_t>> port_terminals() const {
        if (kind == ComponentKind::transformer) return {{0, 1}, {3, 2}};
        if (kind == ComponentKind::transistor) return {{1, 0}, {1, 2}};  // B->C, B->E
        return {{0, 1}};
    }

    std::vector<std::string> edge_names() const {
        if (kind == ComponentKind::transformer) return {name + ":p", name + ":s"};
        if (kind == ComponentKind::transistor) return {name + ":bc", name + ":be"};
        return {name};
    }

    bool is_storage() const { return kind == ComponentKind::capacitor || kind == ComponentKind::inductor; }
    bool is_source() const {
        return kind == ComponentKind::voltage_source || kind == ComponentKind::current_source || kind == ComponentKind::sink;
    }
    bool is_resistive() const { return !is_storage() && !is_source(); }
    // Sources whose current is prescribed; sinks behave like current sources.
    bool prescribes_current() const { return kind == ComponentKind::current_source || kind == ComponentKind::sink; }

    const StorageParams& storage() const { return std::get<StorageParams>(params); }
    const ResistorParams& resistor() const { return std::get<ResistorParams>(params); }
    const DiodeParams& diode() const { return std::get<DiodeParams>(params); }
    const TransformerParams& transformer() const { return std::get<TransformerParams>(params); }
    const TransistorParams& transistor() const { return std::get<TransistorParams>(params); }
    const SourceParams& source() const { return std::get<SourceParams>(params); }

    bool operator==(const ComponentModel&) const = default;
};

inline ComponentModel make_capacitor(const std::string& name, const std::string& a, const std::string& b, double c) {
    return {ComponentKind::capacitor, name, {a, b}, StorageParams{ScalarLaw::quadratic_energy(c), std::nullopt}};
}
inline ComponentModel make_inductor(const std::string& name, const std::string& a, const std::string& b, double l) {
    return {ComponentKind::inductor, name, {a, b}, StorageParams{ScalarLaw::quadratic_energy(l), std::nullopt}};
}
inline ComponentModel make_resistor(const std::string& name, const std::string& a, const std::string& b, double r) {
    return {ComponentKind::resistor, name, {a, b}, ResistorParams{ResistorForm::resistance, ScalarLaw::linear(r)}};
}
inline ComponentModel make_source(ComponentKind k, const std::string& name, const std::string& a, const std::string& b, Waveform w) {
    return {k, name, {a, b}, SourceParams{w}};
}

// Structural and range checks; returns warnings for values outside the recommended ranges.
inline std::vector<std::string> validate(const ComponentModel& c) {
    const std::size_t terminals = c.kind == ComponentKind::transformer ? 4 : c.kind == ComponentKind::transistor ? 3 : 2;
    if (c.terminals.size() != terminals)
        throw Error(ErrorKind::BadParams, c.name + " needs " + std::to_string(terminals) + " terminals");
    auto bad = [&](const std::string& why) { throw Error(ErrorKind::BadParams, c.name + ": " + why); };
    switch (c.kind) {
    case ComponentKind::capacitor:
    case ComponentKind::inductor: {
        const auto& h = c.storage().hamiltonian;
        if (h.kind == ScalarLaw::Kind::poly && h.single_power() == 2 && !(h.coeffs[2] > 0.0)) bad("non-positive capacity");
        if (h.kind != ScalarLaw::Kind::poly && !(h.coeffs.size() == 2 && h.coeffs[0] > 0.0 && h.coeffs[1] > 0.0))
            bad("saturating law needs positive a and b");
        break;
    }
    case ComponentKind::resistor: {
        const auto& r = c.resistor();
        if (r.law.kind != ScalarLaw::Kind::poly && r.law.coeffs.size() != 2) bad("tanh law needs (a,b)");
        if (r.law.kind == ScalarLaw::Kind::poly && r.law.single_power() == 0 && r.law.coeffs.size() <= 2)
            bad("zero resistance or conductance");
        break;
    }
    case ComponentKind::diode:
        if (!c.diode().ideal && !(c.diode().a > 0.0 && c.diode().b > 0.0)) bad("diode needs A > 0 and B > 0");
        break;
    case ComponentKind::transformer:
        if (!std::isfinite(c.transformer().ratio)) bad("ratio must be finite");
        break;
    case ComponentKind::transistor:
        validate(c.transistor());
        return transistor_warnings(c.transistor());
    default: break;
    }
    return {};
}

// ---------------------------------------------------------------- constitutive evaluation

// Port currents from port voltages for devices with a conductance description.
inline Vector conductance_current(const ComponentModel& c, const Vector& u) {
    switch (c.kind) {
    case ComponentKind::resistor: {
        const auto& r = c.resistor();
        if (r.form == ResistorForm::conductance) return Vector::Constant(1, r.law.value(u(0)));
        if (r.law.is_linear()) return Vector::Constant(1, u(0) / r.law.coeffs[1]);
        return Vector::Constant(1, invert_value(r.law, u(0)));
    }
    case ComponentKind::diode: {
        const auto& d = c.diode();
        return d.ideal ? Vector::Constant(1, pn_diode_current(u(0), kIdealDiodeA, kIdealDiodeB))
                       : Vector::Constant(1, pn_diode_current(u(0), d.a, d.b));
    }
    case ComponentKind::transistor: {
        const auto em = ebers_moll(u(0), u(1), c.transistor());
        Vector i(2);
        i << -em.i_c, em.i_e;
        return i;
    }
    default: throw Error(ErrorKind::UnsupportedFormulation, c.name + " has no conductance form");
    }
}

inline Matrix conductance_jacobian(const ComponentModel& c, const Vector& u) {
    switch (c.kind) {
    case ComponentKind::resistor: {
        const auto& r = c.resistor();
        if (r.form == ResistorForm::conductance) return Matrix::Constant(1, 1, r.law.derivative(u(0)));
        if (r.law.is_linear()) return Matrix::Constant(1, 1, 1.0 / r.law.coeffs[1]);
        return Matrix::Constant(1, 1, 1.0 / r.law.derivative(invert_value(r.law, u(0))));
    }
    case ComponentKind::diode: {
        const auto& d = c.diode();
        return d.ideal ? Matrix::Constant(1, 1, pn_diode_conductance(u(0), kIdealDiodeA, kIdealDiodeB))
                       : Matrix::Constant(1, 1, pn_diode_conductance(u(0), d.a, d.b));
    }
    case ComponentKind::transistor: {
        Matrix j = ebers_moll_jacobian(u(0), u(1), c.transistor());
        j.row(0) *= -1.0;
        return j;
    }
    default: throw Error(ErrorKind::UnsupportedFormulation, c.name + " has no conductance form");
    }
}

// Port voltages from port currents (loop formulations).
inline Vector resistance_voltage(const ComponentModel& c, const Vector& i) {
    switch (c.kind) {
    case ComponentKind::resistor: {
        const auto& r = c.resistor();
        if (r.form == ResistorForm::resistance) return Vector::Constant(1, r.law.value(i(0)));
        if (r.law.is_linear()) return Vector::Constant(1, i(0) / r.law.coeffs[1]);
        return Vector::Constant(1, invert_value(r.law, i(0)));
    }
    case ComponentKind::diode: {
        const auto& d = c.diode();
        const double a = d.ideal ? kIdealDiodeA : d.a, b = d.ideal ? kIdealDiodeB : d.b;
        if (!(i(0) > -a)) throw Error(ErrorKind::NonInvertibleConstitutive, c.name + " current below -A");
        return Vector::Constant(1, b * std::log1p(i(0) / a));
    }
    default: throw Error(ErrorKind::UnsupportedFormulation, c.name + " has no resistance form");
    }
}

inline Matrix resistance_jacobian(const ComponentModel& c, const Vector& i) {
    switch (c.kind) {
    case ComponentKind::resistor: {
        const auto& r = c.resistor();
        if (r.form == ResistorForm::resistance) return Matrix::Constant(1, 1, r.law.derivative(i(0)));
        if (r.law.is_linear()) return Matrix::Constant(1, 1, 1.0 / r.law.coeffs[1]);
        return Matrix::Constant(1, 1, 1.0 / r.law.derivative(invert_value(r.law, i(0))));
    }
    case ComponentKind::diode: {
        const auto& d = c.diode();
        const double a = d.ideal ? kIdealDiodeA : d.a, b = d.ideal ? kIdealDiodeB : d.b;
        return Matrix::Constant(1, 1, b / (a + i(0)));
    }
    default: throw Error(ErrorKind::UnsupportedFormulation, c.name + " has no resistance form");
    }
}

// Storage: effort = H'(x), x = (H')^{-1}(effort), dx/deffort = 1 / H''(x).
inline double storage_energy(const ComponentModel& c, double x) { return c.storage().hamiltonian.value(x); }
inline double storage_effort(const ComponentModel& c, double x) { return c.storage().hamiltonian.derivative(x); }
inline double storage_state(const ComponentModel& c, double effort) {
    const auto& h = c.storage().hamiltonian;
    if (const double cap = h.quadratic_capacity(); cap > 0.0) return cap * effort;
    return invert_derivative(h, effort);
}
inline double storage_capacity(const ComponentModel& c, double effort) {
    const auto& h = c.storage().hamiltonian;
    if (const double cap = h.quadratic_capacity(); cap > 0.0) return cap;
    const double x = invert_derivative(h, effort);
    const double s = h.second(x);
    if (!(s > 0.0)) throw Error(ErrorKind::NonInvertibleConstitutive, c.name + " has zero stiffness at " + std::to_string(x));
    return 1.0 / s;
}

// Dissipated power of a resistive port state (u, i); the transformer relation is evaluated on its own
// parametrization (i1, u2), so an exact member contributes exactly zero.
inline double dissipated_power(const ComponentModel& c, const Vector& u, const Vector& i) {
    if (c.kind == ComponentKind::transformer) {
        const double t = c.transformer().ratio;
        return (t * u(1)) * i(0) + u(1) * (-t * i(0));
    }
    return u.dot(i);
}

// ---------------------------------------------------------------- port-Hamiltonian models

// {(-i, i, u, u)} on lp ports: internal block first, link block second.
inline ph::DiracKernel standard_dirac(std::size_t lp, PortKind inner = PortKind::external) {
    const auto n = static_cast<Eigen::Index>(lp);
    ph::DiracKernel d;
    d.K = Matrix::Zero(2 * n, 2 * n);
    d.L = Matrix::Zero(2 * n, 2 * n);
    d.K.topLeftCorner(n, n).setIdentity();
    d.K.topRightCorner(n, n).setIdentity();
    d.L.bottomLeftCorner(n, n).setIdentity();
    d.L.bottomRightCorner(n, n) = -Matrix::Identity(n, n);
    d.layout = ph::uniform_layout(inner, lp, "p");
    const auto links = ph::uniform_layout(PortKind::link, lp, "l");
    d.layout.insert(d.layout.end(), links.begin(), links.end());
    return d;
}

// {(-u, i, i, u)}: internal flow -u, link flow i, internal effort i, link effort u.
inline ph::DiracKernel inductor_dirac(std::size_t lp) {
    const auto n = static_cast<Eigen::Index>(lp);
    ph::DiracKernel d;
    d.K = Matrix::Identity(2 * n, 2 * n);
    d.L = Matrix::Zero(2 * n, 2 * n);
    d.L.topRightCorner(n, n).setIdentity();
    d.L.bottomLeftCorner(n, n) = -Matrix::Identity(n, n);
    d.layout = ph::uniform_layout(PortKind::storage, lp, "p");
    const auto links = ph::uniform_layout(PortKind::link, lp, "l");
    d.layout.insert(d.layout.end(), links.begin(), links.end());
    return d;
}

struct Hamiltonian {
    std::size_t dim = 1;
    std::function<double(const Vector&)> energy;
    std::function<Vector(const Vector&)> gradient;
};

inline Hamiltonian separable(const ScalarLaw& law) {
    return {1, [law](const Vector& x) { return law.value(x(0)); },
            [law](const Vector& x) { return Vector::Constant(1, law.derivative(x(0))); }};
}

namespace detail {

inline std::vector<Vector> probe_points(std::size_t dim, std::size_t count = 8) {
    std::mt19937_64 rng(0x5eed);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    std::vector<Vector> out{Vector::Zero(static_cast<Eigen::Index>(dim))};
    for (std::size_t k = 0; k < count; ++k) {
        Vector v(static_cast<Eigen::Index>(dim));
        for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = u(rng);
        out.push_back(v);
    }
    return out;
}

inline void relabel(ph::DiracKernel& d, const std::vector<std::string>& labels) {
    const std::size_t lp = d.layout.size() / 2;
    if (labels.empty()) return;
    if (labels.size() != lp) throw Error(ErrorKind::ShapeMismatch, "port label count");
    for (std::size_t i = 0; i < lp; ++i) {
        d.layout[i].label = labels[i];
        d.layout[lp + i].label = labels[i];
    }
}

inline GradientLagrange checked_lagrange(const Hamiltonian& h, const std::string& who) {
    GradientLagrange g{h.dim, h.energy, h.gradient, {}};
    const auto check = ph::gradient_lagrange_check(g, probe_points(h.dim));
    if (!check.ok)
        throw Error(ErrorKind::NotAGradient, who + " effort map is not the gradient of its Hamiltonian (violation " +
                                                 std::to_string(check.worst) + ")");
    return g;
}

} // namespace detail

inline PHSystem capacitor_ph(const Hamiltonian& h, std::size_t lp, const std::vector<std::string>& labels = {}) {
    if (h.dim != lp) throw Error(ErrorKind::ShapeMismatch, "Hamiltonian dimension differs from port count");
    PHSystem s;
    s.dirac = standard_dirac(lp, PortKind::storage);
    detail::relabel(s.dirac, labels);
    s.lagrange.blocks.push_back(detail::checked_lagrange(h, "capacitor"));
    return s;
}

inline PHSystem inductor_ph(const Hamiltonian& h, std::size_t lp, const std::vector<std::string>& labels = {}) {
    if (h.dim != lp) throw Error(ErrorKind::ShapeMismatch, "Hamiltonian dimension differs from port count");
    PHSystem s;
    s.dirac = inductor_dirac(lp);
    detail::relabel(s.dirac, labels);
    s.lagrange.blocks.push_back(detail::checked_lagrange(h, "inductor"));
    return s;
}

inline PHSystem resistive_ph(ResistiveRelation rel, const std::vector<std::pair<Vector, Vector>>& samples,
                             const std::vector<std::string>& labels = {}) {
    const auto check = ph::resistive_check(rel, samples);
    if (!check.ok)
        throw Error(ErrorKind::NotAccretive, rel.name + " delivers power " + std::to_string(check.worst) + " at sample " +
                                                 std::to_string(check.where));
    PHSystem s;
    s.dirac = standard_dirac(rel.dim, PortKind::resistive);
    detail::relabel(s.dirac, labels);
    s.resistive.blocks.push_back(std::move(rel));
    return s;
}

namespace detail {
inline std::vector<std::pair<Vector, Vector>> sample_members(const ResistiveRelation& r) {
    std::vector<std::pair<Vector, Vector>> out;
    for (const auto& p : probe_points(r.dim, 16)) out.push_back(r.member(p));
    return out;
}
} // namespace detail

// i = g(u), f = -i, e = u
inline PHSystem conductance_ph(std::function<Vector(const Vector&)> g, std::size_t lp, const std::vector<std::string>& labels = {},
                               const std::string& name = "conductance") {
    ResistiveRelation r;
    r.form = ResistiveForm::conductance;
    r.dim = lp;
    r.name = name;
    r.map = std::move(g);
    return resistive_ph(r, detail::sample_members(r), labels);
}

// u = r(i)
inline PHSystem resistance_ph(std::function<Vector(const Vector&)> rmap, std::size_t lp, const std::vector<std::string>& labels = {},
                              const std::string& name = "resistance") {
    ResistiveRelation r;
    r.form = ResistiveForm::resistance;
    r.dim = lp;
    r.name = name;
    r.map = std::move(rmap);
    return resistive_ph(r, detail::sample_members(r), labels);
}

// i >= 0, u <= 0, i u = 0 as the complementarity residual min(i, -u).
inline ResistiveRelation ideal_diode_relation() {
    ResistiveRelation r;
    r.form = ResistiveForm::implicit;
    r.dim = 1;
    r.name = "ideal_diode";
    r.implicit_residual = [](const Vector& f, const Vector& e) { return Vector::Constant(1, std::min(-f(0), -e(0))); };
    r.parametrize = [](const Vector& p) {
        // p < 0 blocks (u = p), p >= 0 conducts (i = p)
        return p(0) < 0.0 ? std::pair<Vector, Vector>{Vector::Zero(1), p} : std::pair<Vector, Vector>{Vector(-p), Vector::Zero(1)};
    };
    r.predicate = [](const Vector& f, const Vector& e, double tol) {
        const double i = -f(0), u = e(0);
        return i >= -tol && u <= tol && std::abs(i * u) <= tol;
    };
    return r;
}

// T i1 = -i2, u1 = T u2 on f = (-i1, -i2), e = (u1, u2).
inline ResistiveRelation transformer_relation(double t) {
    ResistiveRelation r;
    r.form = ResistiveForm::implicit;
    r.dim = 2;
    r.name = "transformer";
    r.implicit_residual = [t](const Vector& f, const Vector& e) {
        Vector res(2);
        res << t * f(0) + f(1), e(0) - t * e(1);
        return res;
    };
    r.parametrize = [t](const Vector& p) {
        // p = (i1, u2)
        Vector f(2), e(2);
        f << -p(0), t * p(0);
        e << t * p(1), p(1);
        return std::pair<Vector, Vector>{f, e};
    };
    return r;
}

inline PHSystem transformer_ph(double t, const std::vector<std::string>& labels = {}) {
    if (!std::isfinite(t)) throw Error(ErrorKind::BadParams, "transformer ratio must be finite");
    return resistive_ph(transformer_relation(t), detail::sample_members(transformer_relation(t)), labels);
}

// Conductance form g(u_BC, u_BE) = (-i_C, i_E), i.e. f = (i_C, -i_E), restricted to the passivity box.
inline ResistiveRelation transistor_relation(const TransistorParams& p, double radius) {
    ResistiveRelation r;
    r.form = ResistiveForm::conductance;
    r.dim = 2;
    r.name = "transistor";
    r.map = [p](const Vector& u) {
        const auto em = ebers_moll(u(0), u(1), p);
        Vector g(2);
        g << -em.i_c, em.i_e;
        return g;
    };
    auto map = r.map;
    r.predicate = [map, radius](const Vector& f, const Vector& e, double tol) {
        if (linalg::max_abs(f) > radius || linalg::max_abs(e) > radius) return false;
        return linalg::max_abs(Vector(f + map(e))) <= tol * (1.0 + linalg::max_abs(f));
    };
    r.parametrize = [map, radius](const Vector& q) {
        const Vector u = q.cwiseMax(-radius).cwiseMin(radius);
        return std::pair<Vector, Vector>{Vector(-map(u)), u};
    };
    return r;
}

inline PHSystem transistor_ph(const TransistorParams& p, const std::vector<std::string>& labels = {}) {
    const double radius = transistor_passivity_radius(p);
    auto rel = transistor_relation(p, radius);
    std::vector<std::pair<Vector, Vector>> samples;
    for (const auto& q : detail::probe_points(2, 16)) samples.push_back(rel.member(Vector(q * radius / 2.0)));
    return resistive_ph(rel, samples, labels);
}

inline PHSystem source_ph(const std::vector<std::string>& labels = {}) {
    PHSystem s;
    s.dirac = standard_dirac(1, PortKind::external);
    detail::relabel(s.dirac, labels);
    return s;
}

enum class Role { node, loop };

// Port-Hamiltonian model of a component with one label per port. In the loop role the flow/effort
// roles of the link ports are swapped: link flows carry voltages and link efforts carry currents.
inline PHSystem to_ph(const ComponentModel& c, const std::vector<std::string>& labels = {}, Role role = Role::node) {
    validate(c);
    switch (c.kind) {
    case ComponentKind::capacitor:
    case ComponentKind::inductor: {
        const auto h = separable(c.storage().hamiltonian);
        const bool standard = (c.kind == ComponentKind::capacitor) == (role == Role::node);
        PHSystem s;
        s.dirac = standard ? standard_dirac(1, PortKind::storage) : inductor_dirac(1);
        detail::relabel(s.dirac, labels);
        s.lagrange.blocks.push_back(detail::checked_lagrange(h, c.name));
        return s;
    }
    case ComponentKind::resistor:
    case ComponentKind::diode: {
        if (c.kind == ComponentKind::diode && c.diode().ideal && role == Role::node) {
            auto rel = ideal_diode_relation();
            rel.name = c.name;
            return resistive_ph(rel, detail::sample_members(rel), labels);
        }
        std::function<Vector(const Vector&)> map;
        if (role == Role::node) map = [c](const Vector& u) { return conductance_current(c, u); };
        else map = [c](const Vector& i) { return resistance_voltage(c, i); };
        return conductance_ph(map, 1, labels, c.name);
    }
    case ComponentKind::transformer: {
        if (role == Role::loop) throw Error(ErrorKind::UnsupportedFormulation, c.name + " in loop role");
        return transformer_ph(c.transformer().ratio, labels);
    }
    case ComponentKind::transistor: {
        if (role == Role::loop) throw Error(ErrorKind::UnsupportedFormulation, c.name + " in loop role");
        auto s = transistor_ph(c.transistor(), labels);
        s.resistive.blocks[0].name = c.name;
        return s;
    }
    case ComponentKind::voltage_source:
    case ComponentKind::current_source:
    case ComponentKind::sink: return source_ph(labels);
    }
    throw Error(ErrorKind::UnknownComponent, c.name);
}

// ---------------------------------------------------------------- serialization

inline nlohmann::json law_to_json(const ScalarLaw& l) { return l.to_string(); }

inline nlohmann::json to_json(const ComponentModel& c) {
    nlohmann::json j;
    j["kind"] = to_string(c.kind);
    j["name"] = c.name;
    j["terminals"] = c.terminals;
    nlohmann::json p = nlohmann::json::object();
    std::visit(
        [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, StorageParams>) {
                p["H"] = v.hamiltonian.to_string();
                if (v.initial) p["IC"] = *v.initial;
            } else if constexpr (std::is_same_v<T, ResistorParams>) {
                p[v.form == ResistorForm::conductance ? "law" : "rlaw"] = v.law.to_string();
            } else if constexpr (std::is_same_v<T, DiodeParams>) {
                if (v.ideal) p["ideal"] = true;
                else {
                    p["A"] = v.a;
                    p["B"] = v.b;
                }
            } else if constexpr (std::is_same_v<T, TransformerParams>) {
                p["ratio"] = v.ratio;
            } else if constexpr (std::is_same_v<T, TransistorParams>) {
                p["IS"] = v.i_s;
                p["VT"] = v.v_t;
                p["AF"] = v.alpha_f;
                p["AR"] = v.alpha_r;
            } else {
                p["waveform"] = v.waveform.to_string();
            }
        },
        c.params);
    j["params"] = p;
    return j;
}

} // namespace phcirc::components
