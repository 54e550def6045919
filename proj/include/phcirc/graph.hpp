#pragma once

#include <algorithm>
#include <numeric>
#include <ostream>
#include <queue>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "errors.hpp"
#include "linalg.hpp"

namespace phcirc::graph {

struct Edge {
    std::string name;
    std::size_t init;
    std::size_t ter;
};

// Finite directed multigraph without self-loops. Vertex and edge order is insertion order.
class DirectedGraph {
public:
    std::size_t add_vertex(const std::string& name) {
        auto it = index_.find(name);
        if (it != index_.end()) return it->second;
        vertices_.push_back(name);
        index_.emplace(name, vertices_.size() - 1);
        return vertices_.size() - 1;
    }

    std::size_t add_edge(const std::string& name, std::size_t init, std::size_t ter) {
        if (init >= vertices_.size() || ter >= vertices_.size())
            throw Error(ErrorKind::ShapeMismatch, "edge " + name + " references unknown vertex");
        if (init == ter) throw Error(ErrorKind::LoopEdge, "edge " + name + " starts and ends at " + vertices_[init]);
        edges_.push_back({name, init, ter});
        return edges_.size() - 1;
    }

    std::size_t add_edge(const std::string& name, const std::string& init, const std::string& ter) {
        const auto a = add_vertex(init);
        const auto b = add_vertex(ter);
        return add_edge(name, a, b);
    }

    std::size_t vertex_count() const { return vertices_.size(); }
    std::size_t edge_count() const { return edges_.size(); }
    const std::vector<std::string>& vertices() const { return vertices_; }
    const std::vector<Edge>& edges() const { return edges_; }
    const Edge& edge(std::size_t e) const { return edges_.at(e); }

    std::size_t vertex_index(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error(ErrorKind::ShapeMismatch, "unknown vertex " + name);
        return it->second;
    }
    bool has_vertex(const std::string& name) const { return index_.count(name) != 0; }

private:
    std::vector<std::string> vertices_;
    std::vector<Edge> edges_;
    std::unordered_map<std::string, std::size_t> index_;
};

class UnionFind {
public:
    explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
    std::size_t find(std::size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }
    bool unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        parent_[std::max(a, b)] = std::min(a, b);
        return true;
    }

private:
    std::vector<std::size_t> parent_;
};

// +1 at the initial vertex, -1 at the terminal vertex.
inline IntMatrix incidence_matrix(const DirectedGraph& g) {
    IntMatrix a = IntMatrix::Zero(static_cast<Eigen::Index>(g.vertex_count()), static_cast<Eigen::Index>(g.edge_count()));
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
        a(static_cast<Eigen::Index>(g.edge(e).init), static_cast<Eigen::Index>(e)) = 1;
        a(static_cast<Eigen::Index>(g.edge(e).ter), static_cast<Eigen::Index>(e)) = -1;
    }
    return a;
}

struct Components {
    std::vector<std::size_t> label;  // component id per vertex, ids ordered by first vertex
    std::size_t count = 0;
};

inline Components connected_components(const DirectedGraph& g) {
    UnionFind uf(g.vertex_count());
    for (const auto& e : g.edges()) uf.unite(e.init, e.ter);
    Components c;
    c.label.assign(g.vertex_count(), 0);
    std::unordered_map<std::size_t, std::size_t> ids;
    for (std::size_t v = 0; v < g.vertex_count(); ++v) {
        auto root = uf.find(v);
        auto it = ids.find(root);
        if (it == ids.end()) it = ids.emplace(root, ids.size()).first;
        c.label[v] = it->second;
    }
    c.count = ids.size();
    return c;
}

struct GroundSet {
    std::vector<std::size_t> vertices;
};

inline void validate_ground(const DirectedGraph& g, const GroundSet& s) {
    const auto comps = connected_components(g);
    std::vector<int> seen(comps.count, -1);
    for (auto v : s.vertices) {
        if (v >= g.vertex_count()) throw Error(ErrorKind::GroundSetViolation, "ground vertex out of range");
        auto c = comps.label[v];
        if (seen[c] >= 0)
            throw Error(ErrorKind::GroundSetViolation,
                        "vertices " + g.vertices()[static_cast<std::size_t>(seen[c])] + " and " + g.vertices()[v] +
                            " ground the same component");
        seen[c] = static_cast<int>(v);
    }
}

// Vertices that keep a row in the reduced incidence matrix, in vertex order.
inline std::vector<std::size_t> kept_vertices(const DirectedGraph& g, const GroundSet& s) {
    std::vector<bool> grounded(g.vertex_count(), false);
    for (auto v : s.vertices) grounded.at(v) = true;
    std::vector<std::size_t> out;
    for (std::size_t v = 0; v < g.vertex_count(); ++v)
        if (!grounded[v]) out.push_back(v);
    return out;
}

inline IntMatrix reduced_incidence(const DirectedGraph& g, const GroundSet& s) {
    validate_ground(g, s);
    const IntMatrix a0 = incidence_matrix(g);
    const auto keep = kept_vertices(g, s);
    IntMatrix a(static_cast<Eigen::Index>(keep.size()), a0.cols());
    for (std::size_t r = 0; r < keep.size(); ++r) a.row(static_cast<Eigen::Index>(r)) = a0.row(static_cast<Eigen::Index>(keep[r]));
    return a;
}

struct SpanningForest {
    std::vector<std::size_t> edges;  // tree edges in edge order
};

// Greedy in edge order.
inline SpanningForest spanning_forest(const DirectedGraph& g) {
    UnionFind uf(g.vertex_count());
    SpanningForest f;
    for (std::size_t e = 0; e < g.edge_count(); ++e)
        if (uf.unite(g.edge(e).init, g.edge(e).ter)) f.edges.push_back(e);
    return f;
}

inline std::vector<std::size_t> chords(const DirectedGraph& g, const SpanningForest& f) {
    std::vector<bool> tree(g.edge_count(), false);
    for (auto e : f.edges) tree.at(e) = true;
    std::vector<std::size_t> out;
    for (std::size_t e = 0; e < g.edge_count(); ++e)
        if (!tree[e]) out.push_back(e);
    return out;
}

// One row per chord: chord entry +1, tree edges on the closing path +1 if traversed along
// their orientation and -1 against it.
inline IntMatrix fundamental_cycle_matrix(const DirectedGraph& g, const SpanningForest& f) {
    const std::size_t n = g.vertex_count();
    UnionFind uf(n);
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adj(n);  // (neighbour, edge)
    for (auto e : f.edges) {
        if (e >= g.edge_count()) throw Error(ErrorKind::NotAForest, "edge index out of range");
        const auto& ed = g.edge(e);
        if (!uf.unite(ed.init, ed.ter)) throw Error(ErrorKind::NotAForest, "edge " + ed.name + " closes a cycle");
        adj[ed.init].push_back({ed.ter, e});
        adj[ed.ter].push_back({ed.init, e});
    }
    const auto comps = connected_components(g);
    if (f.edges.size() != n - comps.count)
        throw Error(ErrorKind::NotAForest, "forest does not span every component");

    const auto ch = chords(g, f);
    IntMatrix b = IntMatrix::Zero(static_cast<Eigen::Index>(ch.size()), static_cast<Eigen::Index>(g.edge_count()));
    std::vector<std::size_t> parent(n), via(n);
    std::vector<bool> seen(n);
    for (std::size_t row = 0; row < ch.size(); ++row) {
        const auto& chord = g.edge(ch[row]);
        std::fill(seen.begin(), seen.end(), false);
        std::queue<std::size_t> q;
        q.push(chord.init);
        seen[chord.init] = true;
        while (!q.empty()) {
            auto v = q.front();
            q.pop();
            for (auto [w, e] : adj[v])
                if (!seen[w]) {
                    seen[w] = true;
                    parent[w] = v;
                    via[w] = e;
                    q.push(w);
                }
        }
        const auto r = static_cast<Eigen::Index>(row);
        b(r, static_cast<Eigen::Index>(ch[row])) = 1;
        for (std::size_t v = chord.ter; v != chord.init; v = parent[v]) {
            const auto& te = g.edge(via[v]);
            b(r, static_cast<Eigen::Index>(via[v])) = (te.init == v && te.ter == parent[v]) ? 1 : -1;
        }
    }
    return b;
}

inline bool verify_cutset_cycle_duality(const IntMatrix& a, const IntMatrix& b) {
    if (a.cols() != b.cols()) throw Error(ErrorKind::ShapeMismatch, "A and B have different edge counts");
    if (b.rows() > 0 && a.rows() > 0 && (a * b.transpose()).cwiseAbs().maxCoeff() != 0) return false;
    return linalg::integer_rank(a) + linalg::integer_rank(b) == static_cast<std::size_t>(a.cols());
}

inline IntMatrix select_columns(const IntMatrix& m, const std::vector<std::size_t>& cols) {
    IntMatrix out(m.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = m.col(static_cast<Eigen::Index>(cols[j]));
    return out;
}

template <class M>
void write_csv(std::ostream& os, const M& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) os << ',';
            os << m(i, j);
        }
        os << '\n';
    }
}

// "rows cols" header followed by one "i j value" line per nonzero.
template <class M>
void write_triplets(std::ostream& os, const M& m) {
    os << m.rows() << ' ' << m.cols() << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            if (m(i, j) != 0) os << i << ' ' << j << ' ' << m(i, j) << '\n';
}

inline IntMatrix read_triplets(std::istream& is) {
    Eigen::Index rows = 0, cols = 0;
    if (!(is >> rows >> cols)) throw Error(ErrorKind::IoError, "missing triplet header");
    IntMatrix m = IntMatrix::Zero(rows, cols);
    Eigen::Index i, j;
    std::int64_t v;
    while (is >> i >> j >> v) {
        if (i < 0 || j < 0 || i >= rows || j >= cols) throw Error(ErrorKind::IoError, "triplet out of range");
        m(i, j) = v;
    }
    return m;
}

} // namespace phcirc::graph
