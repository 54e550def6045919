#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "components.hpp"
#include "graph.hpp"
#include "netlist.hpp"
#include "ph_core.hpp"

namespace phcirc::assembly {

using components::ComponentKind;
using components::ComponentModel;
using ph::PHSystem;
using ph::PortKind;

// ---------------------------------------------------------------- Kirchhoff structures

struct KirchhoffPH {
    PHSystem system;
    IntMatrix A;
    std::size_t vertices = 0;  // n - |S| node coordinates
    std::size_t edges = 0;
};

namespace detail {

inline PHSystem kirchhoff_system(const IntMatrix& m, const std::vector<std::string>& storage_labels,
                                 const std::vector<std::string>& edge_labels) {
    const auto r = m.rows(), e = m.cols();
    PHSystem s;
    s.dirac.K = Matrix::Zero(r + e, r + e);
    s.dirac.L = Matrix::Zero(r + e, r + e);
    s.dirac.K.topLeftCorner(r, r).setIdentity();
    s.dirac.K.topRightCorner(r, e) = m.cast<double>();
    s.dirac.L.bottomLeftCorner(e, r) = m.transpose().cast<double>();
    s.dirac.L.bottomRightCorner(e, e) = -Matrix::Identity(e, e);
    for (const auto& l : storage_labels) s.dirac.layout.push_back({PortKind::storage, l});
    for (const auto& l : edge_labels) s.dirac.layout.push_back({PortKind::link, l});
    if (r > 0) s.lagrange.blocks.push_back(ph::LinearLagrange{Matrix::Identity(r, r), Matrix::Zero(r, r)});
    return s;
}

inline std::vector<std::string> edge_labels(const graph::DirectedGraph& g) {
    std::vector<std::string> out;
    for (const auto& e : g.edges()) out.push_back("edge:" + e.name);
    return out;
}

} // namespace detail

// K = [[I, A], [0, 0]], L = [[0, 0], [A^T, -I]] on (j, i ; phi, u); Lagrange q = 0.
inline KirchhoffPH kirchhoff_dirac(const graph::DirectedGraph& g, const graph::GroundSet& s) {
    const IntMatrix a = graph::reduced_incidence(g, s);
    if (linalg::integer_rank(a) != static_cast<std::size_t>(a.rows()))
        throw Error(ErrorKind::GroundSetViolation, "ground set does not cover every component");
    std::vector<std::string> nodes;
    for (auto v : graph::kept_vertices(g, s)) nodes.push_back("node:" + g.vertices()[v]);
    return {detail::kirchhoff_system(a, nodes, detail::edge_labels(g)), a, static_cast<std::size_t>(a.rows()), g.edge_count()};
}

struct LoopKirchhoffPH {
    PHSystem system;
    IntMatrix B;
    graph::SpanningForest forest;
};

// Same block form with the fundamental cycle matrix; link flows carry voltages and link efforts currents.
inline LoopKirchhoffPH loop_kirchhoff_dirac(const graph::DirectedGraph& g) {
    const auto forest = graph::spanning_forest(g);
    const IntMatrix b = graph::fundamental_cycle_matrix(g, forest);
    std::vector<std::string> loops;
    for (Eigen::Index k = 0; k < b.rows(); ++k) loops.push_back("loop:" + std::to_string(k));
    return {detail::kirchhoff_system(b, loops, detail::edge_labels(g)), b, forest};
}

// ---------------------------------------------------------------- circuit blocks

enum class EdgeClass { resistive, inductive, capacitive, current_source, voltage_source };

inline EdgeClass edge_class(const ComponentModel& c) {
    switch (c.kind) {
    case ComponentKind::capacitor: return EdgeClass::capacitive;
    case ComponentKind::inductor: return EdgeClass::inductive;
    case ComponentKind::voltage_source: return EdgeClass::voltage_source;
    case ComponentKind::current_source:
    case ComponentKind::sink: return EdgeClass::current_source;
    default: return EdgeClass::resistive;
    }
}

struct Circuit {
    netlist::Netlist netlist;
    netlist::CircuitGraph graph;
};

inline Circuit make_circuit(const netlist::Netlist& n) { return {n, netlist::build_graph(n)}; }
inline Circuit load_circuit(const std::string& text) { return make_circuit(netlist::parse(text)); }

// Reduced incidence and fundamental cycle columns grouped R, L, C, I, V (edge order inside each class).
struct CircuitBlocks {
    IntMatrix A, B;
    std::vector<std::string> nodes;  // row names of A
    std::vector<std::string> edges;  // column names
    std::vector<std::size_t> edge_component, edge_port;
    std::vector<EdgeClass> edge_classes;
    std::vector<std::size_t> R, L, C, I, V;
    IntMatrix A_R, A_L, A_C, A_I, A_V;
    IntMatrix B_R, B_L, B_C, B_I, B_V;

    std::size_t n() const { return static_cast<std::size_t>(A.rows()); }
    std::size_t m() const { return static_cast<std::size_t>(A.cols()); }
    std::size_t loops() const { return static_cast<std::size_t>(B.rows()); }
    IntMatrix A_S() const {
        IntMatrix s(A.rows(), A_I.cols() + A_V.cols());
        s << A_I, A_V;
        return s;
    }
    IntMatrix B_S() const {
        IntMatrix s(B.rows(), B_I.cols() + B_V.cols());
        s << B_I, B_V;
        return s;
    }
    // [A_R A_L A_C A_S] column order as edge indices
    std::vector<std::size_t> permutation() const {
        std::vector<std::size_t> p;
        for (const auto* v : {&R, &L, &C, &I, &V}) p.insert(p.end(), v->begin(), v->end());
        return p;
    }
    // A rebuilt in edge order from the class blocks.
    IntMatrix incidence_from_blocks() const {
        IntMatrix a(A.rows(), A.cols());
        auto put = [&](const IntMatrix& blk, const std::vector<std::size_t>& idx) {
            for (std::size_t k = 0; k < idx.size(); ++k) a.col(static_cast<Eigen::Index>(idx[k])) = blk.col(static_cast<Eigen::Index>(k));
        };
        put(A_R, R);
        put(A_L, L);
        put(A_C, C);
        put(A_I, I);
        put(A_V, V);
        return a;
    }
};

inline CircuitBlocks circuit_blocks(const Circuit& c) {
    const auto& g = c.graph.graph;
    CircuitBlocks b;
    b.A = graph::reduced_incidence(g, c.graph.grounds);
    b.B = graph::fundamental_cycle_matrix(g, graph::spanning_forest(g));
    for (auto v : graph::kept_vertices(g, c.graph.grounds)) b.nodes.push_back(g.vertices()[v]);
    b.edge_component.resize(g.edge_count());
    b.edge_port.resize(g.edge_count());
    b.edge_classes.resize(g.edge_count());
    for (std::size_t ci = 0; ci < c.graph.component_edges.size(); ++ci)
        for (std::size_t p = 0; p < c.graph.component_edges[ci].size(); ++p) {
            const auto e = c.graph.component_edges[ci][p];
            b.edge_component[e] = ci;
            b.edge_port[e] = p;
            b.edge_classes[e] = edge_class(c.netlist.components[ci]);
        }
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
        b.edges.push_back(g.edge(e).name);
        switch (b.edge_classes[e]) {
        case EdgeClass::resistive: b.R.push_back(e); break;
        case EdgeClass::inductive: b.L.push_back(e); break;
        case EdgeClass::capacitive: b.C.push_back(e); break;
        case EdgeClass::current_source: b.I.push_back(e); break;
        case EdgeClass::voltage_source: b.V.push_back(e); break;
        }
    }
    b.A_R = graph::select_columns(b.A, b.R);
    b.A_L = graph::select_columns(b.A, b.L);
    b.A_C = graph::select_columns(b.A, b.C);
    b.A_I = graph::select_columns(b.A, b.I);
    b.A_V = graph::select_columns(b.A, b.V);
    b.B_R = graph::select_columns(b.B, b.R);
    b.B_L = graph::select_columns(b.B, b.L);
    b.B_C = graph::select_columns(b.B, b.C);
    b.B_I = graph::select_columns(b.B, b.I);
    b.B_V = graph::select_columns(b.B, b.V);
    return b;
}

inline CircuitBlocks circuit_blocks(const netlist::Netlist& n) { return circuit_blocks(make_circuit(n)); }

// ---------------------------------------------------------------- assembled port-Hamiltonian system

struct AssembledCircuit {
    PHSystem system;
    CircuitBlocks blocks;
    std::vector<ComponentModel> components;
    std::vector<std::size_t> node_coord;  // storage coordinate per node row
    std::vector<std::size_t> edge_coord;  // coordinate (in the full layout) per edge
    Matrix closed_form_K, closed_form_L;   // direct block form, same coordinates
};

namespace detail {

inline std::map<std::string, std::size_t> label_index(const ph::PortLayout& layout) {
    std::map<std::string, std::size_t> out;
    for (std::size_t j = 0; j < layout.size(); ++j) out[layout[j].label] = j;
    return out;
}

inline std::vector<std::string> port_labels(const ComponentModel& c) {
    std::vector<std::string> out;
    for (const auto& e : c.edge_names()) out.push_back("edge:" + e);
    return out;
}

} // namespace detail

// Node rows: f_q + A_C f_C + A_R f_R + A_S f_S - A_L e_L = 0
// Edge rows: -f_L - A_L^T phi = 0, e_X - A_X^T phi = 0 for X in {C, R, S}
inline std::pair<Matrix, Matrix> closed_form_dirac(const CircuitBlocks& b, const std::vector<std::size_t>& node_coord,
                                                   const std::vector<std::size_t>& edge_coord, std::size_t dim) {
    const auto n = static_cast<Eigen::Index>(dim);
    Matrix k = Matrix::Zero(n, n), l = Matrix::Zero(n, n);
    const auto nn = static_cast<Eigen::Index>(b.n());
    const Matrix a = b.A.cast<double>();
    for (Eigen::Index r = 0; r < nn; ++r) k(r, static_cast<Eigen::Index>(node_coord[static_cast<std::size_t>(r)])) = 1.0;
    for (std::size_t e = 0; e < b.m(); ++e) {
        const auto col = static_cast<Eigen::Index>(edge_coord[e]);
        const auto row = nn + static_cast<Eigen::Index>(e);
        const bool inductive = b.edge_classes[e] == EdgeClass::inductive;
        for (Eigen::Index r = 0; r < nn; ++r) {
            const double v = a(r, static_cast<Eigen::Index>(e));
            if (v == 0.0) continue;
            if (inductive) l(r, col) -= v;
            else k(r, col) += v;
            l(row, static_cast<Eigen::Index>(node_coord[static_cast<std::size_t>(r)])) -= v;
        }
        if (inductive) k(row, col) = -1.0;
        else l(row, col) = 1.0;
    }
    return {k, l};
}

inline AssembledCircuit assemble(const Circuit& c) {
    AssembledCircuit out;
    out.blocks = circuit_blocks(c);
    out.components = c.netlist.components;
    const auto kir = kirchhoff_dirac(c.graph.graph, c.graph.grounds);
    std::vector<PHSystem> parts;
    for (const auto& comp : c.netlist.components) parts.push_back(components::to_ph(comp, detail::port_labels(comp)));
    if (parts.empty()) {
        out.system = kir.system;
        return out;
    }
    out.system = ph::interconnect(kir.system, ph::product(parts));
    const auto idx = detail::label_index(out.system.dirac.layout);
    for (const auto& node : out.blocks.nodes) out.node_coord.push_back(idx.at("node:" + node));
    for (const auto& e : out.blocks.edges) out.edge_coord.push_back(idx.at("edge:" + e));
    std::tie(out.closed_form_K, out.closed_form_L) = closed_form_dirac(out.blocks, out.node_coord, out.edge_coord, out.system.dim());
    return out;
}

inline AssembledCircuit assemble(const netlist::Netlist& n) { return assemble(make_circuit(n)); }

inline ph::DiracKernel closed_form_kernel(const AssembledCircuit& a) {
    return {a.closed_form_K, a.closed_form_L, a.system.dirac.layout};
}

// Loop-side composition: cycle Kirchhoff structure with every component in the loop role.
inline PHSystem assemble_loop(const Circuit& c) {
    auto kir = loop_kirchhoff_dirac(c.graph.graph);
    std::vector<PHSystem> parts;
    for (const auto& comp : c.netlist.components)
        parts.push_back(components::to_ph(comp, detail::port_labels(comp), components::Role::loop));
    if (parts.empty()) return kir.system;
    return ph::interconnect(kir.system, ph::product(parts));
}

// ---------------------------------------------------------------- residual formulations

struct EdgeState {
    Vector phi;  // potentials of the non-ground nodes
    Vector i;    // edge currents, edge order
    Vector u;    // edge voltages, edge order
};

enum class Formulation { mna_charge_flux, mna, mla };

inline const char* to_string(Formulation f) {
    switch (f) {
    case Formulation::mna_charge_flux: return "mna_cf";
    case Formulation::mna: return "mna";
    case Formulation::mla: return "mla";
    }
    return "?";
}

using TimeFn = std::function<Vector(double, const Vector&, const Vector&)>;
using JacFn = std::function<Matrix(double, const Vector&, const Vector&)>;

// F(t, x, xdot) = 0 for one of the circuit formulations.
struct CircuitDae {
    Formulation form;
    std::vector<std::string> unknowns;
    std::vector<bool> differential;
    std::vector<std::pair<std::string, std::size_t>> row_blocks;
    std::vector<std::pair<std::string, std::size_t>> unknown_blocks;
    TimeFn residual;
    JacFn jac_x, jac_xdot;
    std::function<EdgeState(double, const Vector&, const Vector&)> edges;
    std::function<Vector(const Vector&)> initial_constraint;  // IC= values, missing ones taken as 0
    std::function<double(const Vector&)> energy;

    std::size_t dim() const { return unknowns.size(); }
    std::size_t rows() const {
        std::size_t r = 0;
        for (const auto& b : row_blocks) r += b.second;
        return r;
    }
};

using MnaSystem = CircuitDae;
using MlaSystem = CircuitDae;

namespace detail {

inline Matrix dense(const IntMatrix& m) { return m.cast<double>(); }

inline double source_value(const ComponentModel& c, double t) { return c.source().waveform.value(t); }

inline double initial_value(const ComponentModel& c) { return c.storage().initial.value_or(0.0); }

// Resistive devices grouped per component: edge indices in port order.
struct Device {
    std::size_t comp;
    std::vector<std::size_t> edges;
};

inline std::vector<Device> resistive_devices(const CircuitBlocks& b) {
    std::vector<Device> out;
    std::map<std::size_t, std::size_t> seen;
    for (auto e : b.R) {
        const auto c = b.edge_component[e];
        auto it = seen.find(c);
        if (it == seen.end()) {
            it = seen.emplace(c, out.size()).first;
            out.push_back({c, {}});
        }
        out[it->second].edges.push_back(e);
    }
    for (auto& d : out) std::sort(d.edges.begin(), d.edges.end(), [&](std::size_t x, std::size_t y) { return b.edge_port[x] < b.edge_port[y]; });
    return out;
}

inline Vector gather(const Vector& v, const std::vector<std::size_t>& idx) {
    Vector out(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) out(static_cast<Eigen::Index>(k)) = v(static_cast<Eigen::Index>(idx[k]));
    return out;
}

inline std::vector<std::string> names(const std::string& prefix, const std::vector<std::string>& items) {
    std::vector<std::string> out;
    for (const auto& s : items) out.push_back(prefix + "(" + s + ")");
    return out;
}

inline std::vector<std::string> select_names(const std::vector<std::string>& all, const std::vector<std::size_t>& idx) {
    std::vector<std::string> out;
    for (auto i : idx) out.push_back(all[i]);
    return out;
}

// Index bookkeeping for the nodal formulations.
struct NodalLayout {
    std::vector<Device> conductance, transformers;
    std::size_t nn = 0, mc = 0, ml = 0, mv = 0, mt = 0;
};

inline NodalLayout nodal_layout(const CircuitBlocks& b, const std::vector<ComponentModel>& comps) {
    NodalLayout nl;
    for (auto& d : resistive_devices(b)) {
        if (comps[d.comp].kind == ComponentKind::transformer) nl.transformers.push_back(d);
        else nl.conductance.push_back(d);
    }
    nl.nn = b.n();
    nl.mc = b.C.size();
    nl.ml = b.L.size();
    nl.mv = b.V.size();
    nl.mt = 2 * nl.transformers.size();
    return nl;
}

// Conductance-device currents and their Jacobian with respect to the edge voltages.
inline void conductance_currents(const NodalLayout& nl, const std::vector<ComponentModel>& comps, const Vector& u, Vector& i,
                                 Matrix* di_du) {
    for (const auto& d : nl.conductance) {
        const Vector ud = gather(u, d.edges);
        const Vector id = components::conductance_current(comps[d.comp], ud);
        for (std::size_t k = 0; k < d.edges.size(); ++k) i(static_cast<Eigen::Index>(d.edges[k])) = id(static_cast<Eigen::Index>(k));
        if (di_du) {
            const Matrix j = components::conductance_jacobian(comps[d.comp], ud);
            for (std::size_t r = 0; r < d.edges.size(); ++r)
                for (std::size_t s = 0; s < d.edges.size(); ++s)
                    (*di_du)(static_cast<Eigen::Index>(d.edges[r]), static_cast<Eigen::Index>(d.edges[s])) = j(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(s));
        }
    }
}

} // namespace detail

// Unknowns (phi, q_C, psi_L, i_L, i_V, i_T); rows
//   A_C q_C' + A_R g(A_R^T phi) + A_L i_L + A_I i_I(t) + A_V i_V + A_T i_T = 0
//   -A_L^T phi + psi_L' = 0
//   -A_V^T phi + u_V(t) = 0
//   q_C - Q_C(A_C^T phi) = 0
//   psi_L - Psi_L(i_L) = 0
//   T i_1 + i_2 = 0,  u_1 - T u_2 = 0   (one pair per transformer)
inline MnaSystem to_mna_cf(const CircuitBlocks& b, const std::vector<ComponentModel>& comps) {
    const auto nl = detail::nodal_layout(b, comps);
    const Matrix a = detail::dense(b.incidence_from_blocks());
    const auto m = static_cast<Eigen::Index>(b.m());
    const auto nn = static_cast<Eigen::Index>(nl.nn), mc = static_cast<Eigen::Index>(nl.mc), ml = static_cast<Eigen::Index>(nl.ml),
               mv = static_cast<Eigen::Index>(nl.mv), mt = static_cast<Eigen::Index>(nl.mt);
    const Eigen::Index o_q = nn, o_psi = o_q + mc, o_il = o_psi + ml, o_iv = o_il + ml, o_it = o_iv + mv, dim = o_it + mt;
    const Eigen::Index r_flux = nn, r_v = r_flux + ml, r_cap = r_v + mv, r_ind = r_cap + mc, r_t = r_ind + ml;

    MnaSystem s;
    s.form = Formulation::mna_charge_flux;
    auto add = [&](std::vector<std::string> v) { s.unknowns.insert(s.unknowns.end(), v.begin(), v.end()); };
    add(detail::names("v", b.nodes));
    add(detail::names("q", detail::select_names(b.edges, b.C)));
    add(detail::names("psi", detail::select_names(b.edges, b.L)));
    add(detail::names("i", detail::select_names(b.edges, b.L)));
    add(detail::names("i", detail::select_names(b.edges, b.V)));
    for (const auto& d : nl.transformers) add(detail::names("i", detail::select_names(b.edges, d.edges)));
    s.differential.assign(static_cast<std::size_t>(dim), false);
    for (Eigen::Index k = o_q; k < o_il; ++k) s.differential[static_cast<std::size_t>(k)] = true;
    s.unknown_blocks = {{"phi", nl.nn}, {"q_C", nl.mc}, {"psi_L", nl.ml}, {"i_L", nl.ml}, {"i_V", nl.mv}, {"i_T", nl.mt}};
    s.row_blocks = {{"node", nl.nn}, {"flux", nl.ml}, {"vsource", nl.mv}, {"charge", nl.mc}, {"inductance", nl.ml}, {"transformer", nl.mt}};

    // Edge currents from the unknowns; di_dx / di_dxdot optional.
    auto currents = [=](double t, const Vector& x, const Vector& xd, Matrix* di_dx, Matrix* di_dxd) {
        Vector i = Vector::Zero(m);
        const Vector u = a.transpose() * x.head(nn);
        Matrix di_du;
        if (di_dx) {
            *di_dx = Matrix::Zero(m, dim);
            *di_dxd = Matrix::Zero(m, dim);
            di_du = Matrix::Zero(m, m);
        }
        detail::conductance_currents(nl, comps, u, i, di_dx ? &di_du : nullptr);
        if (di_dx) di_dx->leftCols(nn) = di_du * a.transpose();
        for (Eigen::Index k = 0; k < mc; ++k) {
            const auto e = static_cast<Eigen::Index>(b.C[static_cast<std::size_t>(k)]);
            i(e) = xd(o_q + k);
            if (di_dx) (*di_dxd)(e, o_q + k) = 1.0;
        }
        for (Eigen::Index k = 0; k < ml; ++k) {
            const auto e = static_cast<Eigen::Index>(b.L[static_cast<std::size_t>(k)]);
            i(e) = x(o_il + k);
            if (di_dx) (*di_dx)(e, o_il + k) = 1.0;
        }
        for (std::size_t k = 0; k < b.I.size(); ++k)
            i(static_cast<Eigen::Index>(b.I[k])) = detail::source_value(comps[b.edge_component[b.I[k]]], t);
        for (Eigen::Index k = 0; k < mv; ++k) {
            const auto e = static_cast<Eigen::Index>(b.V[static_cast<std::size_t>(k)]);
            i(e) = x(o_iv + k);
            if (di_dx) (*di_dx)(e, o_iv + k) = 1.0;
        }
        Eigen::Index off = o_it;
        for (const auto& d : nl.transformers)
            for (auto e : d.edges) {
                i(static_cast<Eigen::Index>(e)) = x(off);
                if (di_dx) (*di_dx)(static_cast<Eigen::Index>(e), off) = 1.0;
                ++off;
            }
        return i;
    };

    s.residual = [=](double t, const Vector& x, const Vector& xd) {
        Vector r(dim);
        const Vector phi = x.head(nn);
        const Vector u = a.transpose() * phi;
        r.head(nn) = a * currents(t, x, xd, nullptr, nullptr);
        for (Eigen::Index k = 0; k < ml; ++k) r(r_flux + k) = -u(static_cast<Eigen::Index>(b.L[static_cast<std::size_t>(k)])) + xd(o_psi + k);
        for (Eigen::Index k = 0; k < mv; ++k) {
            const auto e = b.V[static_cast<std::size_t>(k)];
            r(r_v + k) = -u(static_cast<Eigen::Index>(e)) + detail::source_value(comps[b.edge_component[e]], t);
        }
        for (Eigen::Index k = 0; k < mc; ++k) {
            const auto e = b.C[static_cast<std::size_t>(k)];
            r(r_cap + k) = x(o_q + k) - components::storage_state(comps[b.edge_component[e]], u(static_cast<Eigen::Index>(e)));
        }
        for (Eigen::Index k = 0; k < ml; ++k) {
            const auto e = b.L[static_cast<std::size_t>(k)];
            r(r_ind + k) = x(o_psi + k) - components::storage_state(comps[b.edge_component[e]], x(o_il + k));
        }
        Eigen::Index row = r_t, off = o_it;
        for (const auto& d : nl.transformers) {
            const double tr = comps[d.comp].transformer().ratio;
            r(row) = tr * x(off) + x(off + 1);
            r(row + 1) = u(static_cast<Eigen::Index>(d.edges[0])) - tr * u(static_cast<Eigen::Index>(d.edges[1]));
            row += 2;
            off += 2;
        }
        return r;
    };

    auto jacobians = [=](double t, const Vector& x, const Vector& xd, Matrix& jx, Matrix& jxd) {
        jx = Matrix::Zero(dim, dim);
        jxd = Matrix::Zero(dim, dim);
        Matrix di_dx, di_dxd;
        currents(t, x, xd, &di_dx, &di_dxd);
        jx.topRows(nn) = a * di_dx;
        jxd.topRows(nn) = a * di_dxd;
        const Vector u = a.transpose() * x.head(nn);
        for (Eigen::Index k = 0; k < ml; ++k) {
            jx.block(r_flux + k, 0, 1, nn) = -a.col(static_cast<Eigen::Index>(b.L[static_cast<std::size_t>(k)])).transpose();
            jxd(r_flux + k, o_psi + k) = 1.0;
        }
        for (Eigen::Index k = 0; k < mv; ++k)
            jx.block(r_v + k, 0, 1, nn) = -a.col(static_cast<Eigen::Index>(b.V[static_cast<std::size_t>(k)])).transpose();
        for (Eigen::Index k = 0; k < mc; ++k) {
            const auto e = b.C[static_cast<std::size_t>(k)];
            const double cap = components::storage_capacity(comps[b.edge_component[e]], u(static_cast<Eigen::Index>(e)));
            jx(r_cap + k, o_q + k) = 1.0;
            jx.block(r_cap + k, 0, 1, nn) = -cap * a.col(static_cast<Eigen::Index>(e)).transpose();
        }
        for (Eigen::Index k = 0; k < ml; ++k) {
            const auto e = b.L[static_cast<std::size_t>(k)];
            jx(r_ind + k, o_psi + k) = 1.0;
            jx(r_ind + k, o_il + k) = -components::storage_capacity(comps[b.edge_component[e]], x(o_il + k));
        }
        Eigen::Index row = r_t, off = o_it;
        for (const auto& d : nl.transformers) {
            const double tr = comps[d.comp].transformer().ratio;
            jx(row, off) = tr;
            jx(row, off + 1) = 1.0;
            jx.block(row + 1, 0, 1, nn) = a.col(static_cast<Eigen::Index>(d.edges[0])).transpose() - tr * a.col(static_cast<Eigen::Index>(d.edges[1])).transpose();
            row += 2;
            off += 2;
        }
    };
    s.jac_x = [=](double t, const Vector& x, const Vector& xd) {
        Matrix jx, jxd;
        jacobians(t, x, xd, jx, jxd);
        return jx;
    };
    s.jac_xdot = [=](double t, const Vector& x, const Vector& xd) {
        Matrix jx, jxd;
        jacobians(t, x, xd, jx, jxd);
        return jxd;
    };

    s.edges = [=](double t, const Vector& x, const Vector& xd) {
        EdgeState es;
        es.phi = x.head(nn);
        es.i = currents(t, x, xd, nullptr, nullptr);
        es.u = a.transpose() * es.phi;
        for (Eigen::Index k = 0; k < mc; ++k) {
            const auto e = b.C[static_cast<std::size_t>(k)];
            es.u(static_cast<Eigen::Index>(e)) = components::storage_effort(comps[b.edge_component[e]], x(o_q + k));
        }
        for (Eigen::Index k = 0; k < ml; ++k) es.u(static_cast<Eigen::Index>(b.L[static_cast<std::size_t>(k)])) = xd(o_psi + k);
        for (auto e : b.V) es.u(static_cast<Eigen::Index>(e)) = detail::source_value(comps[b.edge_component[e]], t);
        return es;
    };

    s.initial_constraint = [=](const Vector& x) {
        Vector c(mc + ml);
        for (Eigen::Index k = 0; k < mc; ++k) {
            const auto& comp = comps[b.edge_component[b.C[static_cast<std::size_t>(k)]]];
            c(k) = x(o_q + k) - components::storage_state(comp, detail::initial_value(comp));
        }
        for (Eigen::Index k = 0; k < ml; ++k)
            c(mc + k) = x(o_il + k) - detail::initial_value(comps[b.edge_component[b.L[static_cast<std::size_t>(k)]]]);
        return c;
    };

    s.energy = [=](const Vector& x) {
        double h = 0.0;
        for (Eigen::Index k = 0; k < mc; ++k) h += components::storage_energy(comps[b.edge_component[b.C[static_cast<std::size_t>(k)]]], x(o_q + k));
        for (Eigen::Index k = 0; k < ml; ++k) h += components::storage_energy(comps[b.edge_component[b.L[static_cast<std::size_t>(k)]]], x(o_psi + k));
        return h;
    };
    return s;
}

// Potential form: unknowns (phi, i_L, i_V, i_T); rows
//   A_C C(A_C^T phi) A_C^T phi' + A_R g(A_R^T phi) + A_L i_L + A_I i_I(t) + A_V i_V + A_T i_T = 0
//   L(i_L) i_L' - A_L^T phi = 0
//   -A_V^T phi + u_V(t) = 0
//   transformer pairs as above
inline MnaSystem to_mna(const CircuitBlocks& b, const std::vector<ComponentModel>& comps) {
    const auto nl = detail::nodal_layout(b, comps);
    const Matrix a = detail::dense(b.incidence_from_blocks());
    const auto m = static_cast<Eigen::Index>(b.m());
    const auto nn = static_cast<Eigen::Index>(nl.nn), mc = static_cast<Eigen::Index>(nl.mc), ml = static_cast<Eigen::Index>(nl.ml),
               mv = static_cast<Eigen::Index>(nl.mv), mt = static_cast<Eigen::Index>(nl.mt);
    const Eigen::Index o_il = nn, o_iv = o_il + ml, o_it = o_iv + mv, dim = o_it + mt;
    const Eigen::Index r_ind = nn, r_v = r_ind + ml, r_t = r_v + mv;

    MnaSystem s;
    s.form = Formulation::mna;
    auto add = [&](std::vector<std::string> v) { s.unknowns.insert(s.unknowns.end(), v.begin(), v.end()); };
    add(detail::names("v", b.nodes));
    add(detail::names("i", detail::select_names(b.edges, b.L)));
    add(detail::names("i", detail::select_names(b.edges, b.V)));
    for (const auto& d : nl.transformers) add(detail::names("i", detail::select_names(b.edges, d.edges)));
    s.differential.assign(static_cast<std::size_t>(dim), false);
    for (Eigen::Index r = 0; r < nn; ++r)
        for (auto e : b.C)
            if (a(r, static_cast<Eigen::Index>(e)) != 0.0) s.differential[static_cast<std::size_t>(r)] = true;
    for (Eigen::Index k = 0; k < ml; ++k) s.differential[static_cast<std::size_t>(o_il + k)] = true;
    s.unknown_blocks = {{"phi", nl.nn}, {"i_L", nl.ml}, {"i_V", nl.mv}, {"i_T", nl.mt}};
    s.row_blocks = {{"node", nl.nn}, {"inductance", nl.ml}, {"vsource", nl.mv}, {"transformer", nl.mt}};

    auto currents = [=](double t, const Vector& x, const Vector& xd, Matrix* di_dx, Matrix* di_dxd) {
        Vector i = Vector::Zero(m);
        const Vector u = a.transpose() * x.head(nn);
        const Vector ud = a.transpose() * xd.head(nn);
        Matrix di_du;
        if (di_dx) {
            *di_dx = Matrix::Zero(m, dim);
            *di_dxd = Matrix::Zero(m, dim);
            di_du = Matrix::Zero(m, m);
        }
        detail::conductance_currents(nl, comps, u, i, di_dx ? &di_du : nullptr);
        for (Eigen::Index k = 0; k < mc; ++k) {
            const auto e = static_cast<Eigen::Index>(b.C[static_cast<std::size_t>(k)]);
            const auto& comp = comps[b.edge_component[b.C[static_cast<std::size_t>(k)]]];
            const double cap = components::storage_capacity(comp, u(e));
            i(e) = cap * ud(e);
            if (di_dx) {
                (*di_dxd).block(e, 0, 1, nn) = cap * a.col(e).transpose();
                // d C(u)/du by central differences; zero for linear capacitors
                double dcap = 0.0;
                if (comp.storage().hamiltonian.quadratic_capacity() <= 0.0) {
                    const double h = std::max(1e-6, 1e-6 * std::abs(u(e)));
                    dcap = (components::storage_capacity(comp, u(e) + h) - components::storage_capacity(comp, u(e) - h)) / (2.0 * h);
                }
                di_du(e, e) += dcap * ud(e);
            }
        }
        if (di_dx) di_dx->leftCols(nn) = di_du * a.transpose();
        for (Eigen::Index k = 0; k < ml; ++k) {
            const auto e = static_cast<Eigen::Index>(b.L[static_cast<std::size_t>(k)]);
            i(e) = x(o_il + k);
            if (di_dx) (*di_dx)(e, o_il + k) = 1.0;
        }
        for (std::size_t k = 0; k < b.I.size(); ++k)
            i(static_cast<Eigen::Index>(b.I[k])) = detail::source_value(comps[b.edge_component[b.I[k]]], t);
        for (Eigen::Index k = 0; k < mv; ++k) {
            const auto e = static_cast<Eigen::Index>(b.V[static_cast<std::size_t>(k)]);
            i(e) = x(o_iv + k);
            if (di_dx) (*di_dx)(e, o_iv + k) = 1.0;
        }
        Eigen::Index off = o_it;
        for (const auto& d : nl.transformers)
            for (auto e : d.edges) {
                i(static_cast<Eigen::Index>(e)) = x(off);
                if (di_dx) (*di_dx)(static_cast<Eigen::Index>(e), off) = 1.0;
                ++off;
            }
        return i;
    };

    auto inductance = [=](Eigen::Index k, double il) {
        return components::storage_capacity(comps[b.edge_component[b.L[static_cast<std::size_t>(k)]]], il);
    };

    s.residual = [=](double t, const Vector& x, const Vector& xd) {
        Vector r(dim);
        const Vector u = a.transpose() * x.head(nn);
        r.head(nn) = a * currents(t, x, xd, nullptr, nullptr);
        for (Eigen::Index k = 0; k < ml; ++k)
            r(r_ind + k) = inductance(k, x(o_il + k)) * xd(o_il + k) - u(static_cast<Eigen::Index>(b.L[static_cast<std::size_t>(k)]));
        for (Eigen::Index k = 0; k < mv; ++k) {
            const auto e = b.V[static_cast<std::size_t>(k)];
            r(r_v + k) = -u(static_cast<Eigen::Index>(e)) + detail::source_value(comps[b.edge_component[e]], t);
        }
        Eigen::Index row = r_t, off = o_it;
        for (const auto& d : nl.transformers) {
            const double tr = comps[d.comp].transformer().ratio;
            r(row) = tr * x(off) + x(off + 1);
            r(row + 1) = u(static_cast<Eigen::Index>(d.edges[0])) - tr * u(static_cast<Eigen::Index>(d.edges[1]));
            row += 2;
            off += 2;
        }
        return r;
    };

    auto jacobians = [=](double t, const Vector& x, const Vector& xd, Matrix& jx, Matrix& jxd) {
        jx = Matrix::Zero(dim, dim);
        jxd = Matrix::Zero(dim, dim);
        Matrix di_dx, di_dxd;
        currents(t, x, xd, &di_dx, &di_dxd);
        jx.topRows(nn) = a * di_dx;
        jxd.topRows(nn) = a * di_dxd;
        for (Eigen::Index k = 0; k < ml; ++k) {
            const double il = x(o_il + k);
            const double lk = inductance(k, il);
            double dl = 0.0;
            if (comps[b.edge_component[b.L[static_cast<std::size_t>(k)]]].storage().hamiltonian.quadratic_capacity() <= 0.0) {
                const double h = std::max(1e-6, 1e-6 * std::abs(il));
                dl = (inductance(k, il + h) - inductance(k, il - h)) / (2.0 * h);
            }
            jx(r_ind + k, o_il + k) = dl * xd(o_il + k);
            jxd(r_ind + k, o_il + k) = lk;
            jx.block(r_ind + k, 0, 1, nn) = -a.col(static_cast<Eigen::Index>(b.L[static_cast<std::size_t>(k)])).transpose();
        }
        for (Eigen::Index k = 0; k < mv; ++k)
            jx.block(r_v + k, 0, 1, nn) = -a.col(static_cast<Eigen::Index>(b.V[static_cast<std::size_t>(k)])).transpose();
        Eigen::Index row = r_t, off = o_it;
        for (const auto& d : nl.transformers) {
            const double tr = comps[d.comp].transformer().ratio;
            jx(row, off) = tr;
            jx(row, off + 1) = 1.0;
            jx.block(row + 1, 0, 1, nn) = a.col(static_cast<Eigen::Index>(d.edges[0])).transpose() - tr * a.col(static_cast<Eigen::Index>(d.edges[1])).transpose();
            row += 2;
            off += 2;
        }
    };
    s.jac_x = [=](double t, const Vector& x, const Vector& xd) {
        Matrix jx, jxd;
        jacobians(t, x, xd, jx, jxd);
        return jx;
    };
    s.jac_xdot = [=](double t, const Vector& x, const Vector& xd) {
        Matrix jx, jxd;
        jacobians(t, x, xd, jx, jxd);
        return jxd;
    };

    s.edges = [=](double t, const Vector& x, const Vector& xd) {
        EdgeState es;
        es.phi = x.head(nn);
        es.i = currents(t, x, xd, nullptr, nullptr);
        es.u = a.transpose() * es.phi;
        for (Eigen::Index k = 0; k < ml; ++k)
            es.u(static_cast<Eigen::Index>(b.L[static_cast<std::size_t>(k)])) = inductance(k, x(o_il + k)) * xd(o_il + k);
        for (auto e : b.V) es.u(static_cast<Eigen::Index>(e)) = detail::source_value(comps[b.edge_component[e]], t);
        return es;
    };

    s.initial_constraint = [=](const Vector& x) {
        Vector c(mc + ml);
        const Vector u = a.transpose() * x.head(nn);
        for (Eigen::Index k = 0; k < mc; ++k) {
            const auto e = b.C[static_cast<std::size_t>(k)];
            c(k) = u(static_cast<Eigen::Index>(e)) - detail::initial_value(comps[b.edge_component[e]]);
        }
        for (Eigen::Index k = 0; k < ml; ++k)
            c(mc + k) = x(o_il + k) - detail::initial_value(comps[b.edge_component[b.L[static_cast<std::size_t>(k)]]]);
        return c;
    };

    s.energy = [=](const Vector& x) {
        double h = 0.0;
        const Vector u = a.transpose() * x.head(nn);
        for (auto e : b.C) {
            const auto& comp = comps[b.edge_component[e]];
            h += components::storage_energy(comp, components::storage_state(comp, u(static_cast<Eigen::Index>(e))));
        }
        for (Eigen::Index k = 0; k < ml; ++k) {
            const auto& comp = comps[b.edge_component[b.L[static_cast<std::size_t>(k)]]];
            h += components::storage_energy(comp, components::storage_state(comp, x(o_il + k)));
        }
        return h;
    };
    return s;
}

// Loop form: unknowns (iota, u_C, u_I); rows
//   B_L L(B_L^T iota) B_L^T iota' + B_R r(B_R^T iota) + B_C u_C + B_I u_I + B_V u_V(t) = 0
//   -B_C^T iota + C(u_C) u_C' = 0
//   -B_I^T iota + i_I(t) = 0
inline MlaSystem to_mla(const CircuitBlocks& b, const std::vector<ComponentModel>& comps) {
    for (auto e : b.R) {
        const auto k = comps[b.edge_component[e]].kind;
        if (k != ComponentKind::resistor && k != ComponentKind::diode)
            throw Error(ErrorKind::UnsupportedFormulation, comps[b.edge_component[e]].name + " has no loop formulation");
    }
    const Matrix bm = detail::dense(b.B);
    const Matrix a = detail::dense(b.A);
    const auto m = static_cast<Eigen::Index>(b.m());
    const auto nc = static_cast<Eigen::Index>(b.loops()), mc = static_cast<Eigen::Index>(b.C.size()),
               mi = static_cast<Eigen::Index>(b.I.size());
    const Eigen::Index o_uc = nc, o_ui = o_uc + mc, dim = o_ui + mi;
    const Eigen::Index r_cap = nc, r_i = r_cap + mc;

    MlaSystem s;
    s.form = Formulation::mla;
    for (Eigen::Index k = 0; k < nc; ++k) s.unknowns.push_back("iota(" + std::to_string(k) + ")");
    auto add = [&](std::vector<std::string> v) { s.unknowns.insert(s.unknowns.end(), v.begin(), v.end()); };
    add(detail::names("u", detail::select_names(b.edges, b.C)));
    add(detail::names("u", detail::select_names(b.edges, b.I)));
    s.differential.assign(static_cast<std::size_t>(dim), false);
    for (Eigen::Index r = 0; r < nc; ++r)
        for (auto e : b.L)
            if (bm(r, static_cast<Eigen::Index>(e)) != 0.0) s.differential[static_cast<std::size_t>(r)] = true;
    for (Eigen::Index k = 0; k < mc; ++k) s.differential[static_cast<std::size_t>(o_uc + k)] = true;
    s.unknown_blocks = {{"iota", b.loops()}, {"u_C", b.C.size()}, {"u_I", b.I.size()}};
    s.row_blocks = {{"loop", b.loops()}, {"capacitance", b.C.size()}, {"isource", b.I.size()}};

    // Edge voltages from the unknowns with their Jacobians.
    auto voltages = [=](double t, const Vector& x, const Vector& xd, Matrix* du_dx, Matrix* du_dxd) {
        const Vector i = bm.transpose() * x.head(nc);
        const Vector id = bm.transpose() * xd.head(nc);
        Vector u = Vector::Zero(m);
        if (du_dx) {
            *du_dx = Matrix::Zero(m, dim);
            *du_dxd = Matrix::Zero(m, dim);
        }
        for (auto e : b.R) {
            const auto ei = static_cast<Eigen::Index>(e);
            const auto& comp = comps[b.edge_component[e]];
            u(ei) = components::resistance_voltage(comp, Vector::Constant(1, i(ei)))(0);
            if (du_dx) du_dx->block(ei, 0, 1, nc) = components::resistance_jacobian(comp, Vector::Constant(1, i(ei)))(0, 0) * bm.col(ei).transpose();
        }
        for (auto e : b.L) {
            const auto ei = static_cast<Eigen::Index>(e);
            const auto& comp = comps[b.edge_component[e]];
            const double l = components::storage_capacity(comp, i(ei));
            u(ei) = l * id(ei);
            if (du_dx) {
                du_dxd->block(ei, 0, 1, nc) = l * bm.col(ei).transpose();
                double dl = 0.0;
                if (comp.storage().hamiltonian.quadratic_capacity() <= 0.0) {
                    const double h = std::max(1e-6, 1e-6 * std::abs(i(ei)));
                    dl = (components::storage_capacity(comp, i(ei) + h) - components::storage_capacity(comp, i(ei) - h)) / (2.0 * h);
                }
                du_dx->block(ei, 0, 1, nc) = dl * id(ei) * bm.col(ei).transpose();
            }
        }
        for (Eigen::Index k = 0; k < mc; ++k) {
            const auto e = static_cast<Eigen::Index>(b.C[static_cast<std::size_t>(k)]);
            u(e) = x(o_uc + k);
            if (du_dx) (*du_dx)(e, o_uc + k) = 1.0;
        }
        for (Eigen::Index k = 0; k < mi; ++k) {
            const auto e = static_cast<Eigen::Index>(b.I[static_cast<std::size_t>(k)]);
            u(e) = x(o_ui + k);
            if (du_dx) (*du_dx)(e, o_ui + k) = 1.0;
        }
        for (auto e : b.V) u(static_cast<Eigen::Index>(e)) = detail::source_value(comps[b.edge_component[e]], t);
        return u;
    };

    s.residual = [=](double t, const Vector& x, const Vector& xd) {
        Vector r(dim);
        const Vector i = bm.transpose() * x.head(nc);
        r.head(nc) = bm * voltages(t, x, xd, nullptr, nullptr);
        for (Eigen::Index k = 0; k < mc; ++k) {
            const auto e = b.C[static_cast<std::size_t>(k)];
            r(r_cap + k) = -i(static_cast<Eigen::Index>(e)) + components::storage_capacity(comps[b.edge_component[e]], x(o_uc + k)) * xd(o_uc + k);
        }
        for (Eigen::Index k = 0; k < mi; ++k) {
            const auto e = b.I[static_cast<std::size_t>(k)];
            r(r_i + k) = -i(static_cast<Eigen::Index>(e)) + detail::source_value(comps[b.edge_component[e]], t);
        }
        return r;
    };

    auto jacobians = [=](double t, const Vector& x, const Vector& xd, Matrix& jx, Matrix& jxd) {
        Matrix du_dx, du_dxd;
        voltages(t, x, xd, &du_dx, &du_dxd);
        jx = Matrix::Zero(dim, dim);
        jxd = Matrix::Zero(dim, dim);
        jx.topRows(nc) = bm * du_dx;
        jxd.topRows(nc) = bm * du_dxd;
        for (Eigen::Index k = 0; k < mc; ++k) {
            const auto e = b.C[static_cast<std::size_t>(k)];
            const auto& comp = comps[b.edge_component[e]];
            const double uc = x(o_uc + k);
            double dcap = 0.0;
            if (comp.storage().hamiltonian.quadratic_capacity() <= 0.0) {
                const double h = std::max(1e-6, 1e-6 * std::abs(uc));
                dcap = (components::storage_capacity(comp, uc + h) - components::storage_capacity(comp, uc - h)) / (2.0 * h);
            }
            jx.block(r_cap + k, 0, 1, nc) = -bm.col(static_cast<Eigen::Index>(e)).transpose();
            jx(r_cap + k, o_uc + k) = dcap * xd(o_uc + k);
            jxd(r_cap + k, o_uc + k) = components::storage_capacity(comp, uc);
        }
        for (Eigen::Index k = 0; k < mi; ++k)
            jx.block(r_i + k, 0, 1, nc) = -bm.col(static_cast<Eigen::Index>(b.I[static_cast<std::size_t>(k)])).transpose();
    };
    s.jac_x = [=](double t, const Vector& x, const Vector& xd) {
        Matrix jx, jxd;
        jacobians(t, x, xd, jx, jxd);
        return jx;
    };
    s.jac_xdot = [=](double t, const Vector& x, const Vector& xd) {
        Matrix jx, jxd;
        jacobians(t, x, xd, jx, jxd);
        return jxd;
    };

    // Potentials recovered from the edge voltages by least squares on A^T phi = u.
    const Matrix aat = a * a.transpose();
    s.edges = [=](double t, const Vector& x, const Vector& xd) {
        EdgeState es;
        es.i = bm.transpose() * x.head(nc);
        es.u = voltages(t, x, xd, nullptr, nullptr);
        es.phi = aat.rows() ? Vector(aat.ldlt().solve(a * es.u)) : Vector(0);
        return es;
    };

    s.initial_constraint = [=](const Vector& x) {
        Vector c(mc + static_cast<Eigen::Index>(b.L.size()));
        for (Eigen::Index k = 0; k < mc; ++k)
            c(k) = x(o_uc + k) - detail::initial_value(comps[b.edge_component[b.C[static_cast<std::size_t>(k)]]]);
        const Vector i = bm.transpose() * x.head(nc);
        for (std::size_t k = 0; k < b.L.size(); ++k)
            c(mc + static_cast<Eigen::Index>(k)) = i(static_cast<Eigen::Index>(b.L[k])) - detail::initial_value(comps[b.edge_component[b.L[k]]]);
        return c;
    };

    s.energy = [=](const Vector& x) {
        double h = 0.0;
        const Vector i = bm.transpose() * x.head(nc);
        for (Eigen::Index k = 0; k < mc; ++k) {
            const auto& comp = comps[b.edge_component[b.C[static_cast<std::size_t>(k)]]];
            h += components::storage_energy(comp, components::storage_state(comp, x(o_uc + k)));
        }
        for (auto e : b.L) {
            const auto& comp = comps[b.edge_component[e]];
            h += components::storage_energy(comp, components::storage_state(comp, i(static_cast<Eigen::Index>(e))));
        }
        return h;
    };
    return s;
}

inline CircuitDae formulate(Formulation f, const CircuitBlocks& b, const std::vector<ComponentModel>& comps) {
    switch (f) {
    case Formulation::mna_charge_flux: return to_mna_cf(b, comps);
    case Formulation::mna: return to_mna(b, comps);
    case Formulation::mla: return to_mla(b, comps);
    }
    throw Error(ErrorKind::UnsupportedFormulation, "unknown formulation");
}

// Supplied power P_S = -sum over sources of u i; dissipation D = sum over resistive edges of u i.
struct PowerTerms {
    double supplied = 0.0;
    double dissipated = 0.0;
};

inline PowerTerms power_terms(const CircuitBlocks& b, const std::vector<ComponentModel>& comps, const EdgeState& es) {
    PowerTerms p;
    for (const auto* cls : {&b.I, &b.V})
        for (auto e : *cls) p.supplied -= es.u(static_cast<Eigen::Index>(e)) * es.i(static_cast<Eigen::Index>(e));
    for (const auto& d : detail::resistive_devices(b))
        p.dissipated += components::dissipated_power(comps[d.comp], detail::gather(es.u, d.edges), detail::gather(es.i, d.edges));
    return p;
}

// ---------------------------------------------------------------- pH / MNA equivalence

// Algebraic pH point: storage state, its rate and z = (f_R, f_P, e).
struct PhPoint {
    Vector x, xdot, z;
};

struct MnaPoint {
    double t = 0.0;
    Vector x, xdot;
};

namespace detail {

inline Eigen::Index coord_kind_offset(const PHSystem& s, PortKind k) { return static_cast<Eigen::Index>(ph::offset_of(s.dirac.layout, k)); }

} // namespace detail

// Pins of the external ports: e_P - u(t) for voltage sources, -f_P - i(t) for current sources and sinks.
inline Vector pin_residual(const AssembledCircuit& a, double t, const PhPoint& p) {
    const auto& s = a.system;
    const auto zl = ph::z_layout(s);
    const auto ext = detail::coord_kind_offset(s, PortKind::external);
    Vector r(static_cast<Eigen::Index>(zl.n_external));
    for (std::size_t e = 0; e < a.blocks.m(); ++e) {
        const auto cls = a.blocks.edge_classes[e];
        if (cls != EdgeClass::current_source && cls != EdgeClass::voltage_source) continue;
        const auto k = static_cast<Eigen::Index>(a.edge_coord[e]) - ext;
        const double w = detail::source_value(a.components[a.blocks.edge_component[e]], t);
        if (cls == EdgeClass::voltage_source) r(k) = p.z(static_cast<Eigen::Index>(zl.e_p()) + k) - w;
        else r(k) = -p.z(static_cast<Eigen::Index>(zl.f_p()) + k) - w;
    }
    return r;
}

// Rates along linear Lagrange blocks with P = 0: S^T xdot = 0 holds on every trajectory.
inline Vector constraint_rates(const PHSystem& s, const Vector& xdot) {
    std::vector<double> out;
    Eigen::Index off = 0;
    for (const auto& b : s.lagrange.blocks) {
        if (const auto* lin = std::get_if<ph::LinearLagrange>(&b)) {
            const auto n = static_cast<Eigen::Index>(lin->dim());
            if (linalg::max_abs(lin->P) == 0.0) {
                const Vector r = lin->S.transpose() * xdot.segment(off, n);
                out.insert(out.end(), r.begin(), r.end());
            }
            off += n;
        } else {
            off += static_cast<Eigen::Index>(std::get<ph::GradientLagrange>(b).dim);
        }
    }
    return Eigen::Map<Vector>(out.data(), static_cast<Eigen::Index>(out.size()));
}

inline Vector full_ph_residual(const AssembledCircuit& a, double t, const PhPoint& p) {
    const Vector r1 = ph::ph_residual(a.system, t, p.x, p.xdot, p.z);
    const Vector r2 = pin_residual(a, t, p);
    const Vector r3 = constraint_rates(a.system, p.xdot);
    Vector r(r1.size() + r2.size() + r3.size());
    r << r1, r2, r3;
    return r;
}

// MNA c/f point to pH coordinates, using the circuit's own blocks.
inline PhPoint mna_to_ph(const AssembledCircuit& a, const MnaSystem& mna, const MnaPoint& m) {
    const auto& s = a.system;
    const auto zl = ph::z_layout(s);
    const auto es = mna.edges(m.t, m.x, m.xdot);
    const Matrix am = a.blocks.A.cast<double>();
    const Vector u_kvl = am.transpose() * es.phi;
    const auto res_off = detail::coord_kind_offset(s, PortKind::resistive);
    const auto ext_off = detail::coord_kind_offset(s, PortKind::external);
    PhPoint p;
    p.x = Vector::Zero(static_cast<Eigen::Index>(zl.n_storage));
    p.xdot = Vector::Zero(p.x.size());
    p.z = Vector::Zero(static_cast<Eigen::Index>(zl.size()));
    const auto e0 = static_cast<Eigen::Index>(zl.e());
    for (std::size_t r = 0; r < a.node_coord.size(); ++r) p.z(e0 + static_cast<Eigen::Index>(a.node_coord[r])) = es.phi(static_cast<Eigen::Index>(r));

    // state offsets in the MNA c/f unknown vector
    const auto& b = a.blocks;
    const auto nn = static_cast<Eigen::Index>(b.n()), mc = static_cast<Eigen::Index>(b.C.size()), ml = static_cast<Eigen::Index>(b.L.size());
    for (std::size_t e = 0; e < b.m(); ++e) {
        const auto ei = static_cast<Eigen::Index>(e);
        const auto col = static_cast<Eigen::Index>(a.edge_coord[e]);
        const auto& comp = a.components[b.edge_component[e]];
        switch (b.edge_classes[e]) {
        case EdgeClass::capacitive: {
            const auto k = static_cast<Eigen::Index>(std::find(b.C.begin(), b.C.end(), e) - b.C.begin());
            p.x(col) = m.x(nn + k);
            p.xdot(col) = m.xdot(nn + k);
            p.z(e0 + col) = components::storage_effort(comp, m.x(nn + k));
            break;
        }
        case EdgeClass::inductive: {
            const auto k = static_cast<Eigen::Index>(std::find(b.L.begin(), b.L.end(), e) - b.L.begin());
            p.x(col) = m.x(nn + mc + k);
            p.xdot(col) = m.xdot(nn + mc + k);
            p.z(e0 + col) = components::storage_effort(comp, m.x(nn + mc + k));
            break;
        }
        case EdgeClass::resistive: {
            const auto k = col - res_off;
            p.z(static_cast<Eigen::Index>(zl.f_r()) + k) = -es.i(ei);
            p.z(static_cast<Eigen::Index>(zl.e_r()) + k) = u_kvl(ei);
            break;
        }
        default: {
            const auto k = col - ext_off;
            p.z(static_cast<Eigen::Index>(zl.f_p()) + k) = -es.i(ei);
            p.z(static_cast<Eigen::Index>(zl.e_p()) + k) = u_kvl(ei);
        }
        }
    }
    (void)ml;
    return p;
}

// pH point back to MNA c/f unknowns (phi, q_C, psi_L, i_L, i_V, i_T).
inline MnaPoint ph_to_mna(const AssembledCircuit& a, const MnaSystem& mna, double t, const PhPoint& p) {
    const auto& s = a.system;
    const auto zl = ph::z_layout(s);
    const auto& b = a.blocks;
    const auto e0 = static_cast<Eigen::Index>(zl.e());
    const auto res_off = detail::coord_kind_offset(s, PortKind::resistive);
    const auto ext_off = detail::coord_kind_offset(s, PortKind::external);
    const auto nn = static_cast<Eigen::Index>(b.n()), mc = static_cast<Eigen::Index>(b.C.size()), ml = static_cast<Eigen::Index>(b.L.size()),
               mv = static_cast<Eigen::Index>(b.V.size());
    MnaPoint m;
    m.t = t;
    m.x = Vector::Zero(static_cast<Eigen::Index>(mna.dim()));
    m.xdot = Vector::Zero(m.x.size());
    for (std::size_t r = 0; r < a.node_coord.size(); ++r) m.x(static_cast<Eigen::Index>(r)) = p.z(e0 + static_cast<Eigen::Index>(a.node_coord[r]));
    for (Eigen::Index k = 0; k < mc; ++k) {
        const auto col = static_cast<Eigen::Index>(a.edge_coord[b.C[static_cast<std::size_t>(k)]]);
        m.x(nn + k) = p.x(col);
        m.xdot(nn + k) = p.xdot(col);
    }
    for (Eigen::Index k = 0; k < ml; ++k) {
        const auto col = static_cast<Eigen::Index>(a.edge_coord[b.L[static_cast<std::size_t>(k)]]);
        m.x(nn + mc + k) = p.x(col);
        m.xdot(nn + mc + k) = p.xdot(col);
        m.x(nn + mc + ml + k) = p.z(e0 + col);
    }
    for (Eigen::Index k = 0; k < mv; ++k) {
        const auto col = static_cast<Eigen::Index>(a.edge_coord[b.V[static_cast<std::size_t>(k)]]);
        m.x(nn + mc + 2 * ml + k) = -p.z(static_cast<Eigen::Index>(zl.f_p()) + col - ext_off);
    }
    Eigen::Index off = nn + mc + 2 * ml + mv;
    for (const auto& d : detail::nodal_layout(b, a.components).transformers)
        for (auto e : d.edges) m.x(off++) = -p.z(static_cast<Eigen::Index>(zl.f_r()) + static_cast<Eigen::Index>(a.edge_coord[e]) - res_off);
    return m;
}

namespace detail {

// Minimum-norm Gauss-Newton onto {r(v) = 0}.
inline Vector project(const std::function<Vector(const Vector&)>& r, Vector v, const std::function<Matrix(const Vector&)>& jac,
                      int iterations = 50) {
    for (int it = 0; it < iterations; ++it) {
        const Vector rv = r(v);
        if (!rv.allFinite()) throw Error(ErrorKind::EvaluationFailure, "non-finite residual in projection");
        if (linalg::max_abs(rv) <= 1e-14 * (1.0 + linalg::max_abs(v))) break;
        const Matrix j = jac(v);
        Eigen::CompleteOrthogonalDecomposition<Matrix> cod(j);
        const Vector step = cod.solve(rv);
        double lambda = 1.0;
        const double n0 = rv.norm();
        Vector next = v - step;
        while (lambda > 1e-6 && !(r(next).norm() < n0)) {
            lambda *= 0.5;
            next = v - lambda * step;
        }
        if (lambda <= 1e-6) break;
        v = next;
    }
    return v;
}

inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& r, const Vector& v) {
    const Vector r0 = r(v);
    Matrix j(r0.size(), v.size());
    for (Eigen::Index c = 0; c < v.size(); ++c) {
        const double h = 1e-7 * std::max(1.0, std::abs(v(c)));
        Vector vp = v, vm = v;
        vp(c) += h;
        vm(c) -= h;
        j.col(c) = (r(vp) - r(vm)) / (2.0 * h);
    }
    return j;
}

} // namespace detail

struct EquivalenceReport {
    std::size_t samples = 0;
    double mna_to_ph = 0.0;  // worst pH residual at projected MNA solutions
    double ph_to_mna = 0.0;  // worst MNA residual at projected pH solutions
    double witness() const { return std::max(mna_to_ph, ph_to_mna); }
    bool ok(double tol = 1e-9) const { return witness() <= tol; }
};

// Each sample is projected onto the solution set of one formulation, mapped across, and the other
// residual is evaluated there (relative to 1 + the largest coordinate).
inline EquivalenceReport ph_mna_equivalence(const AssembledCircuit& a, const MnaSystem& mna, const std::vector<MnaPoint>& samples) {
    if (mna.form != Formulation::mna_charge_flux) throw Error(ErrorKind::UnsupportedFormulation, "equivalence needs the charge/flux form");
    EquivalenceReport rep;
    const auto n = static_cast<Eigen::Index>(mna.dim());
    const auto zl = ph::z_layout(a.system);
    const auto ns = static_cast<Eigen::Index>(zl.n_storage), nz = static_cast<Eigen::Index>(zl.size());
    for (const auto& s : samples) {
        const double t = s.t;
        // MNA side
        auto rm = [&](const Vector& v) { return Vector(mna.residual(t, v.head(n), v.tail(n))); };
        auto jm = [&](const Vector& v) {
            Matrix j(n, 2 * n);
            j << mna.jac_x(t, v.head(n), v.tail(n)), mna.jac_xdot(t, v.head(n), v.tail(n));
            return j;
        };
        Vector v(2 * n);
        v << s.x, s.xdot;
        v = detail::project(rm, v, jm);
        const MnaPoint on_mna{t, v.head(n), v.tail(n)};
        const PhPoint mapped = mna_to_ph(a, mna, on_mna);
        rep.mna_to_ph = std::max(rep.mna_to_ph, linalg::max_abs(full_ph_residual(a, t, mapped)) / (1.0 + linalg::max_abs(v)));

        // pH side, started from the image of the unprojected sample
        auto pack = [&](const PhPoint& p) {
            Vector w(2 * ns + nz);
            w << p.x, p.xdot, p.z;
            return w;
        };
        auto unpack = [&](const Vector& w) { return PhPoint{w.head(ns), w.segment(ns, ns), w.tail(nz)}; };
        auto rp = [&](const Vector& w) { return full_ph_residual(a, t, unpack(w)); };
        auto jp = [&](const Vector& w) { return detail::fd_jacobian(rp, w); };
        const Vector w = detail::project(rp, pack(mna_to_ph(a, mna, s)), jp);
        const MnaPoint back = ph_to_mna(a, mna, t, unpack(w));
        rep.ph_to_mna = std::max(rep.ph_to_mna, linalg::max_abs(mna.residual(t, back.x, back.xdot)) / (1.0 + linalg::max_abs(w)));
        ++rep.samples;
    }
    return rep;
}

} // namespace phcirc::assembly
