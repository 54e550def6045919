#pragma once

#include <cmath>

#include <nlohmann/json.hpp>

#include "ph_core.hpp"

namespace phcirc::json {

using nlohmann::json;

// Integer-valued entries are written as integers; everything else as the shortest round-tripping double.
inline json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const double v = m(i, j);
            if (std::isfinite(v) && v == std::trunc(v) && std::abs(v) < 9.0e15) row.push_back(static_cast<std::int64_t>(v));
            else row.push_back(v);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline json matrix_to_json(const IntMatrix& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Matrix matrix_from_json(const json& j, Eigen::Index cols_if_empty = 0) {
    if (!j.is_array()) throw Error(ErrorKind::ShapeMismatch, "matrix must be an array of rows");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const Eigen::Index cols = rows ? static_cast<Eigen::Index>(j[0].size()) : cols_if_empty;
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        if (static_cast<Eigen::Index>(j[static_cast<std::size_t>(i)].size()) != cols) throw Error(ErrorKind::ShapeMismatch, "ragged matrix");
        for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

inline json layout_to_json(const ph::PortLayout& l) {
    json out = json::array();
    for (const auto& c : l) out.push_back({{"kind", ph::to_string(c.kind)}, {"label", c.label}});
    return out;
}

inline ph::PortLayout layout_from_json(const json& j) {
    ph::PortLayout l;
    for (const auto& c : j) l.push_back({ph::port_kind_from_string(c.at("kind").get<std::string>()), c.at("label").get<std::string>()});
    return l;
}

inline json to_json(const ph::DiracKernel& d) {
    return {{"n", d.dim()}, {"K", matrix_to_json(d.K)}, {"L", matrix_to_json(d.L)}, {"layout", layout_to_json(d.layout)}};
}

inline ph::DiracKernel dirac_from_json(const json& j) {
    const auto n = j.at("n").get<Eigen::Index>();
    ph::DiracKernel d{matrix_from_json(j.at("K"), n), matrix_from_json(j.at("L"), n), layout_from_json(j.at("layout"))};
    if (d.K.cols() != n || d.L.cols() != n || d.K.rows() != d.L.rows()) throw Error(ErrorKind::ShapeMismatch, "Dirac matrices do not match n");
    return d;
}

inline json to_json(const ph::LinearLagrange& l) {
    return {{"n", l.dim()}, {"S", matrix_to_json(l.S)}, {"P", matrix_to_json(l.P)}};
}

inline ph::LinearLagrange lagrange_from_json(const json& j) {
    const auto n = j.at("n").get<Eigen::Index>();
    return {matrix_from_json(j.at("S"), n), matrix_from_json(j.at("P"), n)};
}

} // namespace phcirc::json
