#pragma once

// Independent reference computations used by the test suites.

#include <boost/multiprecision/cpp_dec_float.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "phcirc/graph.hpp"
#include "phcirc/ph_core.hpp"

namespace oracle {

using phcirc::IntMatrix;
using phcirc::Matrix;
using phcirc::Vector;
using hp = boost::multiprecision::cpp_dec_float_50;

// Component count by depth-first search over an adjacency list.
inline std::size_t component_count(const phcirc::graph::DirectedGraph& g) {
    const auto n = g.vertex_count();
    std::vector<std::vector<std::size_t>> adj(n);
    for (const auto& e : g.edges()) {
        adj[e.init].push_back(e.ter);
        adj[e.ter].push_back(e.init);
    }
    std::vector<bool> seen(n, false);
    std::size_t count = 0;
    for (std::size_t s = 0; s < n; ++s) {
        if (seen[s]) continue;
        ++count;
        std::vector<std::size_t> stack{s};
        seen[s] = true;
        while (!stack.empty()) {
            auto v = stack.back();
            stack.pop_back();
            for (auto w : adj[v])
                if (!seen[w]) {
                    seen[w] = true;
                    stack.push_back(w);
                }
        }
    }
    return count;
}

// Rank by Gaussian elimination with partial pivoting in long double.
inline std::size_t elimination_rank(const IntMatrix& a) {
    std::vector<std::vector<long double>> m(static_cast<std::size_t>(a.rows()), std::vector<long double>(static_cast<std::size_t>(a.cols())));
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) m[i][j] = static_cast<long double>(a(i, j));
    std::size_t rank = 0;
    const std::size_t rows = m.size(), cols = rows ? m[0].size() : 0;
    for (std::size_t c = 0; c < cols && rank < rows; ++c) {
        std::size_t piv = rank;
        for (std::size_t r = rank; r < rows; ++r)
            if (std::fabs(m[r][c]) > std::fabs(m[piv][c])) piv = r;
        if (std::fabs(m[piv][c]) < 1e-9L) continue;
        std::swap(m[piv], m[rank]);
        for (std::size_t r = rank + 1; r < rows; ++r) {
            const long double f = m[r][c] / m[rank][c];
            for (std::size_t j = c; j < cols; ++j) m[r][j] -= f * m[rank][j];
        }
        ++rank;
    }
    return rank;
}

inline phcirc::graph::DirectedGraph random_graph(std::mt19937_64& rng, std::size_t n, std::size_t m) {
    phcirc::graph::DirectedGraph g;
    for (std::size_t v = 0; v < n; ++v) g.add_vertex("v" + std::to_string(v + 1));
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t e = 0; e < m; ++e) {
        std::size_t a = pick(rng), b = pick(rng);
        while (b == a) b = pick(rng);
        g.add_edge("e" + std::to_string(e + 1), a, b);
    }
    return g;
}

// Ground the first vertex of every component.
inline phcirc::graph::GroundSet ground_each_component(const phcirc::graph::DirectedGraph& g) {
    const auto c = phcirc::graph::connected_components(g);
    std::vector<bool> done(c.count, false);
    phcirc::graph::GroundSet s;
    for (std::size_t v = 0; v < g.vertex_count(); ++v)
        if (!done[c.label[v]]) {
            done[c.label[v]] = true;
            s.vertices.push_back(v);
        }
    return s;
}

// Random Dirac structure {(J e + G l, e) : G^T e = 0} with small integer data.
inline Matrix random_dirac_span(std::mt19937_64& rng, std::size_t n, std::size_t constraints) {
    std::uniform_int_distribution<int> d(-2, 2);
    const auto nn = static_cast<Eigen::Index>(n), c = static_cast<Eigen::Index>(constraints);
    Matrix j = Matrix::Zero(nn, nn);
    for (Eigen::Index a = 0; a < nn; ++a)
        for (Eigen::Index b = a + 1; b < nn; ++b) {
            j(a, b) = d(rng);
            j(b, a) = -j(a, b);
        }
    Matrix g(nn, c);
    for (Eigen::Index a = 0; a < nn; ++a)
        for (Eigen::Index b = 0; b < c; ++b) g(a, b) = d(rng);
    const Matrix ker = c ? phcirc::linalg::null_space(g.transpose(), 1e-10, false) : Matrix(Matrix::Identity(nn, nn));
    Matrix span(2 * nn, ker.cols() + c);
    span.topLeftCorner(nn, ker.cols()) = j * ker;
    span.bottomLeftCorner(nn, ker.cols()) = ker;
    span.topRightCorner(nn, c) = g;
    span.bottomRightCorner(nn, c).setZero();
    return span;
}

inline hp hp_exp(double x) { return boost::multiprecision::exp(hp(x)); }

inline double pn_current(double u, double a, double b) {
    return static_cast<double>(hp(a) * (boost::multiprecision::exp(hp(u) / hp(b)) - 1));
}

inline std::pair<double, double> ebers_moll(double u_bc, double u_be, double i_s, double v_t, double af, double ar) {
    const hp ec = boost::multiprecision::exp(hp(u_bc) / hp(v_t)) - 1;
    const hp ee = boost::multiprecision::exp(hp(u_be) / hp(v_t)) - 1;
    const hp ic = hp(i_s) * ee - hp(i_s) / hp(ar) * ec;
    const hp ie = hp(i_s) / hp(af) * ee - hp(i_s) * ec;
    return {static_cast<double>(ic), static_cast<double>(ie)};
}

} // namespace oracle
