#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "errors.hpp"
#include "linalg.hpp"

namespace phcirc::ph {

enum class PortKind { storage = 0, resistive = 1, external = 2, link = 3 };

inline const char* to_string(PortKind k) {
    switch (k) {
    case PortKind::storage: return "storage";
    case PortKind::resistive: return "resistive";
    case PortKind::external: return "external";
    case PortKind::link: return "link";
    }
    return "?";
}

inline PortKind port_kind_from_string(const std::string& s) {
    if (s == "storage") return PortKind::storage;
    if (s == "resistive") return PortKind::resistive;
    if (s == "external") return PortKind::external;
    if (s == "link") return PortKind::link;
    throw Error(ErrorKind::ShapeMismatch, "unknown port kind " + s);
}

struct PortCoord {
    PortKind kind;
    std::string label;
    bool operator==(const PortCoord&) const = default;
};

// One entry per coordinate; coordinates are grouped storage, resistive, external, link.
using PortLayout = std::vector<PortCoord>;

inline std::size_t count_kind(const PortLayout& layout, PortKind k) {
    return static_cast<std::size_t>(std::count_if(layout.begin(), layout.end(), [k](const PortCoord& c) { return c.kind == k; }));
}

inline std::size_t offset_of(const PortLayout& layout, PortKind k) {
    std::size_t off = 0;
    for (const auto& c : layout)
        if (static_cast<int>(c.kind) < static_cast<int>(k)) ++off;
    return off;
}

inline bool is_grouped(const PortLayout& layout) {
    return std::is_sorted(layout.begin(), layout.end(),
                          [](const PortCoord& a, const PortCoord& b) { return static_cast<int>(a.kind) < static_cast<int>(b.kind); });
}

inline PortLayout uniform_layout(PortKind k, std::size_t n, const std::string& prefix) {
    PortLayout out;
    for (std::size_t i = 0; i < n; ++i) out.push_back({k, prefix + std::to_string(i)});
    return out;
}

// ---------------------------------------------------------------- Dirac structures

// D = {(f, e) : K f + L e = 0}
struct DiracKernel {
    Matrix K;
    Matrix L;
    PortLayout layout;

    std::size_t dim() const { return static_cast<std::size_t>(K.cols()); }
};

inline bool is_dirac(const Matrix& k, const Matrix& l, double tol = linalg::kDefaultRankTol) {
    if (k.rows() != k.cols() || l.rows() != l.cols() || k.rows() != l.rows())
        throw Error(ErrorKind::ShapeMismatch, "K and L must be square of equal size");
    const auto n = k.rows();
    if (n == 0) return true;
    const Matrix sym = k * l.transpose() + l * k.transpose();
    if (linalg::max_abs(sym) > tol) return false;
    Matrix kl(n, 2 * n);
    kl << k, l;
    return linalg::numerical_rank(kl, tol) == static_cast<std::size_t>(n);
}

// Candidates coming out of kernel_from_span may have the wrong row count; those are not Dirac.
inline bool is_dirac(const DiracKernel& d, double tol = linalg::kDefaultRankTol) {
    if (d.K.rows() != d.K.cols() || d.L.rows() != d.L.cols() || d.K.rows() != d.L.rows()) return false;
    return is_dirac(d.K, d.L, tol);
}

inline bool dirac_contains(const DiracKernel& d, const Vector& f, const Vector& e, double tol = linalg::kDefaultRankTol) {
    if (f.size() != d.K.cols() || e.size() != d.L.cols()) throw Error(ErrorKind::ShapeMismatch, "port vector size");
    return linalg::max_abs(Vector(d.K * f + d.L * e)) <= tol;
}

// Basis of D as columns of a 2n x dim(D) matrix, flows stacked above efforts.
inline Matrix dirac_span(const DiracKernel& d, double tol = linalg::kDefaultRankTol) {
    Matrix kl(d.K.rows(), d.K.cols() + d.L.cols());
    kl << d.K, d.L;
    return linalg::null_space(kl, tol);
}

// Kernel representation of span(basis); rows are the orthogonal complement in reduced echelon form.
inline DiracKernel kernel_from_span(const Matrix& basis, PortLayout layout, double tol = linalg::kDefaultRankTol) {
    if (basis.rows() % 2 != 0) throw Error(ErrorKind::ShapeMismatch, "span basis must have 2n rows");
    const Eigen::Index n = basis.rows() / 2;
    if (!layout.empty() && static_cast<Eigen::Index>(layout.size()) != n)
        throw Error(ErrorKind::ShapeMismatch, "layout size differs from span dimension");
    Matrix rows;
    if (basis.cols() == 0) {
        rows = Matrix::Identity(2 * n, 2 * n);
    } else {
        const Matrix comp = linalg::null_space(basis.transpose(), tol);
        rows = comp.cols() ? linalg::rref(comp.transpose()) : Matrix(0, 2 * n);
    }
    DiracKernel d;
    d.K = rows.leftCols(n);
    d.L = rows.rightCols(n);
    d.layout = std::move(layout);
    return d;
}

inline DiracKernel canonical(const DiracKernel& d) {
    Matrix kl(d.K.rows(), d.K.cols() + d.L.cols());
    kl << d.K, d.L;
    const Matrix r = linalg::rref(kl);
    return {r.leftCols(d.K.cols()), r.rightCols(d.L.cols()), d.layout};
}

// Mutual containment of two kernel representations over the same coordinates.
inline bool same_dirac(const DiracKernel& a, const DiracKernel& b, double tol = 1e-9) {
    if (a.dim() != b.dim()) return false;
    const auto n = static_cast<Eigen::Index>(a.dim());
    auto contained = [&](const DiracKernel& x, const DiracKernel& y) {
        const Matrix span = dirac_span(x);
        return linalg::max_abs(Matrix(y.K * span.topRows(n) + y.L * span.bottomRows(n))) <= tol;
    };
    return dirac_span(a).cols() == dirac_span(b).cols() && contained(a, b) && contained(b, a);
}

// ---------------------------------------------------------------- Lagrange subspaces

// {(x, e) : S^T x = P^T e}
struct LinearLagrange {
    Matrix S;
    Matrix P;
    std::size_t dim() const { return static_cast<std::size_t>(S.rows()); }
};

inline bool is_linear_lagrange(const Matrix& s, const Matrix& p, double tol = linalg::kDefaultRankTol) {
    if (s.rows() != s.cols() || p.rows() != p.cols() || s.rows() != p.rows())
        throw Error(ErrorKind::ShapeMismatch, "S and P must be square of equal size");
    const auto n = s.rows();
    if (n == 0) return true;
    const Matrix sp = s.transpose() * p;
    if (linalg::max_abs(Matrix(sp - sp.transpose())) > tol) return false;
    Matrix st(n, 2 * n);
    st << s.transpose(), p.transpose();
    return linalg::numerical_rank(st, tol) == static_cast<std::size_t>(n);
}

struct GradientLagrange {
    std::size_t dim = 0;
    std::function<double(const Vector&)> hamiltonian;
    std::function<Vector(const Vector&)> gradient;
    std::function<Matrix(const Vector&)> hessian;  // optional
};

inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& q, const Vector& x) {
    const Vector q0 = q(x);
    Matrix j(q0.size(), x.size());
    for (Eigen::Index c = 0; c < x.size(); ++c) {
        const double h = 1e-6 * std::max(1.0, std::abs(x(c)));
        Vector xp = x, xm = x;
        xp(c) += h;
        xm(c) -= h;
        j.col(c) = (q(xp) - q(xm)) / (2.0 * h);
    }
    return j;
}

struct CheckResult {
    bool ok = true;
    double worst = 0.0;     // largest violation seen
    std::size_t where = 0;  // sample index of the worst violation
    explicit operator bool() const { return ok; }
};

// A vector field is locally a gradient iff its Jacobian is symmetric.
inline CheckResult gradient_field_check(const std::function<Vector(const Vector&)>& q, const std::vector<Vector>& samples,
                                        double tol = 1e-6) {
    CheckResult r;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        Matrix j;
        try {
            j = fd_jacobian(q, samples[i]);
        } catch (const std::exception& ex) {
            throw Error(ErrorKind::EvaluationFailure, ex.what());
        }
        if (!j.allFinite()) throw Error(ErrorKind::EvaluationFailure, "non-finite Jacobian entry");
        if (j.rows() != j.cols()) throw Error(ErrorKind::ShapeMismatch, "vector field is not square");
        const double asym = linalg::max_abs(Matrix(j - j.transpose())) / (1.0 + linalg::max_abs(j));
        if (asym > r.worst) {
            r.worst = asym;
            r.where = i;
        }
        if (asym > tol) r.ok = false;
    }
    return r;
}

// Gradient must match finite differences of the Hamiltonian and be a gradient field.
inline CheckResult gradient_lagrange_check(const GradientLagrange& g, const std::vector<Vector>& samples, double tol = 1e-6) {
    CheckResult r = gradient_field_check(g.gradient, samples, tol);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Vector& x = samples[i];
        const Vector grad = g.gradient(x);
        if (static_cast<std::size_t>(grad.size()) != g.dim) throw Error(ErrorKind::ShapeMismatch, "gradient size");
        for (Eigen::Index c = 0; c < x.size(); ++c) {
            const double h = 1e-5 * std::max(1.0, std::abs(x(c)));
            Vector xp = x, xm = x;
            xp(c) += h;
            xm(c) -= h;
            const double fd = (g.hamiltonian(xp) - g.hamiltonian(xm)) / (2.0 * h);
            const double err = std::abs(fd - grad(c)) / (1.0 + std::abs(grad(c)));
            if (err > r.worst) {
                r.worst = err;
                r.where = i;
            }
            if (err > tol) r.ok = false;
        }
    }
    return r;
}

using LagrangeBlock = std::variant<LinearLagrange, GradientLagrange>;

struct Lagrange {
    std::vector<LagrangeBlock> blocks;

    std::size_t dim() const {
        std::size_t n = 0;
        for (const auto& b : blocks)
            n += std::visit([](const auto& x) -> std::size_t {
                if constexpr (std::is_same_v<std::decay_t<decltype(x)>, GradientLagrange>) return x.dim;
                else return x.dim();
            }, b);
        return n;
    }

    // Linear blocks: S^T x - P^T e; gradient blocks: e - grad H(x).
    Vector residual(const Vector& x, const Vector& e) const {
        Vector r(x.size());
        Eigen::Index off = 0;
        for (const auto& b : blocks) {
            if (const auto* lin = std::get_if<LinearLagrange>(&b)) {
                const auto n = static_cast<Eigen::Index>(lin->dim());
                r.segment(off, n) = lin->S.transpose() * x.segment(off, n) - lin->P.transpose() * e.segment(off, n);
                off += n;
            } else {
                const auto& g = std::get<GradientLagrange>(b);
                const auto n = static_cast<Eigen::Index>(g.dim);
                r.segment(off, n) = e.segment(off, n) - g.gradient(Vector(x.segment(off, n)));
                off += n;
            }
        }
        return r;
    }

    // Sum of the Hamiltonians of the gradient blocks.
    double energy(const Vector& x) const {
        double h = 0.0;
        Eigen::Index off = 0;
        for (const auto& b : blocks) {
            if (const auto* lin = std::get_if<LinearLagrange>(&b)) {
                off += static_cast<Eigen::Index>(lin->dim());
            } else {
                const auto& g = std::get<GradientLagrange>(b);
                h += g.hamiltonian(Vector(x.segment(off, static_cast<Eigen::Index>(g.dim))));
                off += static_cast<Eigen::Index>(g.dim);
            }
        }
        return h;
    }
};

// ---------------------------------------------------------------- resistive relations

enum class ResistiveForm { conductance, resistance, implicit };

// Pairs (f, e) with e^T f <= 0.
//   conductance: f = -g(e)
//   resistance:  e = r(-f)
//   implicit:    residual(f, e) = 0
struct ResistiveRelation {
    ResistiveForm form = ResistiveForm::conductance;
    std::size_t dim = 0;
    std::string name;
    std::function<Vector(const Vector&)> map;
    std::function<Vector(const Vector&, const Vector&)> implicit_residual;
    // Produces a member (f, e) from a free parameter vector of length dim.
    std::function<std::pair<Vector, Vector>(const Vector&)> parametrize;
    // Optional membership test overriding the residual-based one.
    std::function<bool(const Vector&, const Vector&, double)> predicate;

    Vector residual(const Vector& f, const Vector& e) const {
        switch (form) {
        case ResistiveForm::conductance: return f + map(e);
        case ResistiveForm::resistance: return e - map(Vector(-f));
        case ResistiveForm::implicit: return implicit_residual(f, e);
        }
        return Vector();
    }

    bool contains(const Vector& f, const Vector& e, double tol = 1e-9) const {
        if (predicate) return predicate(f, e, tol);
        return linalg::max_abs(residual(f, e)) <= tol * (1.0 + linalg::max_abs(f) + linalg::max_abs(e));
    }

    std::pair<Vector, Vector> member(const Vector& p) const {
        if (parametrize) return parametrize(p);
        switch (form) {
        case ResistiveForm::conductance: return {Vector(-map(p)), p};
        case ResistiveForm::resistance: return {Vector(-p), map(p)};
        case ResistiveForm::implicit: break;
        }
        throw Error(ErrorKind::ShapeMismatch, "implicit relation " + name + " has no parametrization");
    }
};

inline CheckResult resistive_check(const ResistiveRelation& r, const std::vector<std::pair<Vector, Vector>>& samples,
                                   double tol = 1e-12) {
    CheckResult out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double p = samples[i].second.dot(samples[i].first);
        if (!std::isfinite(p)) throw Error(ErrorKind::EvaluationFailure, "non-finite power in " + r.name);
        if (p > out.worst) {
            out.worst = p;
            out.where = i;
        }
        if (p > tol) out.ok = false;
    }
    return out;
}

struct Resistive {
    std::vector<ResistiveRelation> blocks;

    std::size_t dim() const {
        std::size_t n = 0;
        for (const auto& b : blocks) n += b.dim;
        return n;
    }

    Vector residual(const Vector& f, const Vector& e) const {
        Vector r(f.size());
        Eigen::Index off = 0;
        for (const auto& b : blocks) {
            const auto n = static_cast<Eigen::Index>(b.dim);
            r.segment(off, n) = b.residual(Vector(f.segment(off, n)), Vector(e.segment(off, n)));
            off += n;
        }
        return r;
    }
};

// ---------------------------------------------------------------- port-Hamiltonian systems

struct PHSystem {
    DiracKernel dirac;
    Lagrange lagrange;
    Resistive resistive;

    std::size_t dim() const { return dirac.dim(); }
    std::size_t n_storage() const { return count_kind(dirac.layout, PortKind::storage); }
    std::size_t n_resistive() const { return count_kind(dirac.layout, PortKind::resistive); }
    std::size_t n_external() const { return count_kind(dirac.layout, PortKind::external); }
    std::size_t n_link() const { return count_kind(dirac.layout, PortKind::link); }

    void validate() const {
        if (dirac.layout.size() != dim()) throw Error(ErrorKind::ShapeMismatch, "layout size differs from Dirac dimension");
        if (!is_grouped(dirac.layout)) throw Error(ErrorKind::ShapeMismatch, "port layout is not grouped by kind");
        if (lagrange.dim() != n_storage()) throw Error(ErrorKind::ShapeMismatch, "Lagrange dimension differs from storage ports");
        if (resistive.dim() != n_resistive()) throw Error(ErrorKind::ShapeMismatch, "resistive dimension differs from resistive ports");
    }
};

namespace detail {

// Stable permutation grouping coordinates by kind.
inline std::vector<std::size_t> grouping_permutation(const PortLayout& layout) {
    std::vector<std::size_t> perm(layout.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
        return static_cast<int>(layout[a].kind) < static_cast<int>(layout[b].kind);
    });
    return perm;
}

inline Matrix permute_columns(const Matrix& m, const std::vector<std::size_t>& perm) {
    Matrix out(m.rows(), static_cast<Eigen::Index>(perm.size()));
    for (std::size_t j = 0; j < perm.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = m.col(static_cast<Eigen::Index>(perm[j]));
    return out;
}

} // namespace detail

// Disjoint union; coordinates regrouped storage, resistive, external, link in declaration order.
inline PHSystem product(const std::vector<PHSystem>& systems) {
    PHSystem out;
    Matrix k(0, 0), l(0, 0);
    PortLayout layout;
    for (const auto& s : systems) {
        s.validate();
        k = linalg::block_diag(k, s.dirac.K);
        l = linalg::block_diag(l, s.dirac.L);
        layout.insert(layout.end(), s.dirac.layout.begin(), s.dirac.layout.end());
        out.lagrange.blocks.insert(out.lagrange.blocks.end(), s.lagrange.blocks.begin(), s.lagrange.blocks.end());
        out.resistive.blocks.insert(out.resistive.blocks.end(), s.resistive.blocks.begin(), s.resistive.blocks.end());
    }
    const auto perm = detail::grouping_permutation(layout);
    out.dirac.K = detail::permute_columns(k, perm);
    out.dirac.L = detail::permute_columns(l, perm);
    for (auto p : perm) out.dirac.layout.push_back(layout[p]);
    return out;
}

// Composition over the shared link ports: efforts identified, flows of sys2 negated.
inline PHSystem interconnect(const PHSystem& sys1, const PHSystem& sys2, double tol = linalg::kDefaultRankTol) {
    sys1.validate();
    sys2.validate();
    const auto& lay1 = sys1.dirac.layout;
    const auto& lay2 = sys2.dirac.layout;
    const std::size_t b = sys1.n_link();
    if (b != sys2.n_link())
        throw Error(ErrorKind::LinkMismatch, "link dimensions " + std::to_string(b) + " and " + std::to_string(sys2.n_link()));
    const std::size_t a1 = sys1.dim() - b, a2 = sys2.dim() - b;
    const auto fa = static_cast<Eigen::Index>(a1 + a2);
    const auto total = static_cast<Eigen::Index>(a1 + a2 + b);  // unknown flows, then the same count of efforts

    const auto n1 = static_cast<Eigen::Index>(sys1.dim()), n2 = static_cast<Eigen::Index>(sys2.dim());
    Matrix m = Matrix::Zero(n1 + n2, 2 * total);
    // Links come last in a grouped layout.
    for (Eigen::Index j = 0; j < n1; ++j) {
        const bool is_link = lay1[static_cast<std::size_t>(j)].kind == PortKind::link;
        const Eigen::Index col = is_link ? fa + (j - static_cast<Eigen::Index>(a1)) : j;
        m.block(0, col, n1, 1) += sys1.dirac.K.col(j);
        m.block(0, total + col, n1, 1) += sys1.dirac.L.col(j);
    }
    for (Eigen::Index j = 0; j < n2; ++j) {
        const bool is_link = lay2[static_cast<std::size_t>(j)].kind == PortKind::link;
        const Eigen::Index col = is_link ? fa + (j - static_cast<Eigen::Index>(a2)) : static_cast<Eigen::Index>(a1) + j;
        const double sign = is_link ? -1.0 : 1.0;
        m.block(n1, col, n2, 1) += sign * sys2.dirac.K.col(j);
        m.block(n1, total + col, n2, 1) += sys2.dirac.L.col(j);
    }
    const Matrix null = linalg::null_space(m, tol);

    PortLayout layout;
    for (std::size_t j = 0; j < a1; ++j) layout.push_back(lay1[j]);
    for (std::size_t j = 0; j < a2; ++j) layout.push_back(lay2[j]);
    const auto perm = detail::grouping_permutation(layout);
    const auto na = static_cast<Eigen::Index>(perm.size());
    Matrix span(2 * na, null.cols());
    PortLayout grouped;
    for (Eigen::Index j = 0; j < na; ++j) {
        const auto src = static_cast<Eigen::Index>(perm[static_cast<std::size_t>(j)]);
        span.row(j) = null.row(src);
        span.row(na + j) = null.row(total + src);
        grouped.push_back(layout[static_cast<std::size_t>(src)]);
    }
    PHSystem out;
    out.dirac = kernel_from_span(span, grouped, tol);
    if (!is_dirac(out.dirac, tol))
        throw Error(ErrorKind::NotDirac, "interconnection produced a " + std::to_string(out.dirac.K.rows()) + "-row kernel on " +
                                             std::to_string(na) + " coordinates");
    out.lagrange.blocks = sys1.lagrange.blocks;
    out.lagrange.blocks.insert(out.lagrange.blocks.end(), sys2.lagrange.blocks.begin(), sys2.lagrange.blocks.end());
    out.resistive.blocks = sys1.resistive.blocks;
    out.resistive.blocks.insert(out.resistive.blocks.end(), sys2.resistive.blocks.begin(), sys2.resistive.blocks.end());
    out.validate();
    return out;
}

// Offsets of the algebraic unknowns z = (f_R, f_P, f_link, e) for a system.
struct ZLayout {
    std::size_t n_storage, n_resistive, n_external, n_link;
    std::size_t f_r() const { return 0; }
    std::size_t f_p() const { return n_resistive; }
    std::size_t f_link() const { return n_resistive + n_external; }
    std::size_t e() const { return n_resistive + n_external + n_link; }
    std::size_t e_l() const { return e(); }
    std::size_t e_r() const { return e() + n_storage; }
    std::size_t e_p() const { return e_r() + n_resistive; }
    std::size_t e_link() const { return e_p() + n_external; }
    std::size_t size() const { return e_link() + n_link; }
    std::size_t n() const { return n_storage + n_resistive + n_external + n_link; }
};

inline ZLayout z_layout(const PHSystem& s) { return {s.n_storage(), s.n_resistive(), s.n_external(), s.n_link()}; }

// Stacks Dirac rows, Lagrange rows and resistive rows for flows f = (-xdot, f_R, f_P, f_link).
inline Vector ph_residual(const PHSystem& sys, double /*t*/, const Vector& x, const Vector& xdot, const Vector& z) {
    const auto zl = z_layout(sys);
    const auto ns = static_cast<Eigen::Index>(zl.n_storage), nr = static_cast<Eigen::Index>(zl.n_resistive);
    if (static_cast<std::size_t>(x.size()) != zl.n_storage || xdot.size() != x.size() || static_cast<std::size_t>(z.size()) != zl.size())
        throw Error(ErrorKind::ShapeMismatch, "ph_residual argument sizes");
    const auto n = static_cast<Eigen::Index>(zl.n());
    Vector f(n);
    f << -xdot, z.head(n - ns);
    const Vector e = z.segment(static_cast<Eigen::Index>(zl.e()), n);
    Vector r(n + ns + nr);
    r.head(n) = sys.dirac.K * f + sys.dirac.L * e;
    r.segment(n, ns) = sys.lagrange.residual(x, e.head(ns));
    r.segment(n + ns, nr) = sys.resistive.residual(Vector(f.segment(ns, nr)), Vector(e.segment(ns, nr)));
    return r;
}

} // namespace phcirc::ph
