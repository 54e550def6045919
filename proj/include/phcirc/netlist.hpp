#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "components.hpp"
#include "graph.hpp"

namespace phcirc::netlist {

using components::ComponentKind;
using components::ComponentModel;

struct Analysis {
    enum class Kind { tran, op };
    Kind kind = Kind::op;
    double tstop = 0.0;
    double dt = 0.0;
    bool uic = false;  // start from the IC= values instead of the operating point
    bool operator==(const Analysis&) const = default;
};

struct Netlist {
    std::string title;
    std::vector<ComponentModel> components;
    std::vector<int> lines;             // source line per component
    std::vector<std::string> grounds;   // node names from .ground
    std::vector<Analysis> analyses;

    std::optional<Analysis> tran() const {
        for (const auto& a : analyses)
            if (a.kind == Analysis::Kind::tran) return a;
        return std::nullopt;
    }
    const ComponentModel& component(const std::string& name) const {
        for (const auto& c : components)
            if (c.name == name) return c;
        throw Error(ErrorKind::UnknownComponent, "no component " + name);
    }
    // Statement sequence equality; source lines are not part of it.
    bool same_statements(const Netlist& o) const {
        return title == o.title && components == o.components && grounds == o.grounds && analyses == o.analyses;
    }
};

namespace detail {

inline std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

struct Token {
    std::string text;
    int column;
};

// Whitespace separated; a parenthesised group stays in one token (inner blanks collapsed),
// and "key = value" is glued to "key=value".
inline std::vector<Token> tokenize(const std::string& line, int line_no) {
    std::vector<Token> raw;
    std::size_t i = 0;
    while (i < line.size()) {
        if (std::isspace(static_cast<unsigned char>(line[i]))) {
            ++i;
            continue;
        }
        const std::size_t start = i;
        std::string tok;
        if (line[i] == '=') {
            tok = "=";
            ++i;
        } else {
            int depth = 0;
            while (i < line.size() && (depth > 0 || (!std::isspace(static_cast<unsigned char>(line[i])) && line[i] != '='))) {
                if (line[i] == '(') ++depth;
                if (line[i] == ')' && --depth < 0)
                    throw ParseError(ErrorKind::SyntaxError, "unbalanced ')'", line_no, static_cast<int>(i) + 1);
                if (!std::isspace(static_cast<unsigned char>(line[i]))) tok += line[i];
                else if (tok.back() != ' ' && tok.back() != '(') tok += ' ';
                ++i;
            }
            if (depth > 0) throw ParseError(ErrorKind::SyntaxError, "unclosed '('", line_no, static_cast<int>(start) + 1);
        }
        raw.push_back({tok, static_cast<int>(start) + 1});
    }
    std::vector<Token> out;
    for (std::size_t k = 0; k < raw.size(); ++k) {
        if (raw[k].text == "=") {
            if (out.empty() || k + 1 >= raw.size() || raw[k + 1].text == "=")
                throw ParseError(ErrorKind::SyntaxError, "dangling '='", line_no, raw[k].column);
            out.back().text += "=" + raw[k + 1].text;
            ++k;
        } else {
            out.push_back(raw[k]);
        }
    }
    return out;
}

// Plain float with an optional SPICE scale suffix (f p n u m k meg g t); trailing unit letters are ignored.
inline std::optional<double> parse_value(const std::string& s) {
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc()) return std::nullopt;
    std::string rest = lower(std::string(ptr, last));
    double scale = 1.0;
    if (rest.rfind("meg", 0) == 0) {
        scale = 1e6;
        rest = rest.substr(3);
    } else if (!rest.empty()) {
        switch (rest[0]) {
        case 'f': scale = 1e-15; break;
        case 'p': scale = 1e-12; break;
        case 'n': scale = 1e-9; break;
        case 'u': scale = 1e-6; break;
        case 'm': scale = 1e-3; break;
        case 'k': scale = 1e3; break;
        case 'g': scale = 1e9; break;
        case 't': scale = 1e12; break;
        default: scale = 0.0;
        }
        if (scale == 0.0) return std::nullopt;
        rest = rest.substr(1);
    }
    if (!std::all_of(rest.begin(), rest.end(), [](unsigned char c) { return std::isalpha(c); })) return std::nullopt;
    return v * scale;
}

inline double value_or_throw(const std::string& s, int line, int col) {
    auto v = parse_value(s);
    if (!v || !std::isfinite(*v)) throw ParseError(ErrorKind::SyntaxError, "bad number '" + s + "'", line, col);
    return *v;
}

// name(a,b,...) or name(a b ...) with numeric arguments
inline std::pair<std::string, std::vector<double>> parse_call(const std::string& s, int line, int col) {
    const auto open = s.find('(');
    if (open == std::string::npos || s.back() != ')') throw ParseError(ErrorKind::SyntaxError, "expected f(...) in '" + s + "'", line, col);
    std::vector<double> args;
    std::string inner = s.substr(open + 1, s.size() - open - 2);
    std::replace(inner.begin(), inner.end(), ',', ' ');
    std::stringstream in(inner);
    std::string item;
    while (in >> item) args.push_back(value_or_throw(item, line, col));
    return {lower(s.substr(0, open)), args};
}

inline ScalarLaw parse_law(const std::string& s, int line, int col, bool hamiltonian) {
    auto [name, args] = parse_call(s, line, col);
    if (name == "poly") {
        if (args.empty()) throw ParseError(ErrorKind::SyntaxError, "poly() needs coefficients", line, col);
        return ScalarLaw::poly(args);
    }
    if (name == "tanh" && !hamiltonian && args.size() == 2) return {ScalarLaw::Kind::tanh, args};
    if (name == "logcosh" && hamiltonian && args.size() == 2) return {ScalarLaw::Kind::logcosh, args};
    throw ParseError(ErrorKind::SyntaxError, "unknown law '" + s + "'", line, col);
}

inline Waveform parse_waveform(const std::vector<Token>& toks, std::size_t from, int line) {
    if (from >= toks.size()) throw ParseError(ErrorKind::SyntaxError, "missing source value", line);
    const auto& t = toks[from];
    const std::string key = lower(t.text);
    if (key == "dc") {
        if (from + 2 != toks.size()) throw ParseError(ErrorKind::SyntaxError, "expected DC <value>", line, t.column);
        return Waveform::dc(value_or_throw(toks[from + 1].text, line, toks[from + 1].column));
    }
    if (key.rfind("sin(", 0) == 0) {
        if (from + 1 != toks.size()) throw ParseError(ErrorKind::SyntaxError, "unexpected text after SIN(...)", line, toks[from + 1].column);
        auto [name, a] = parse_call(t.text, line, t.column);
        if (a.size() < 3 || a.size() > 4) throw ParseError(ErrorKind::SyntaxError, "SIN needs (offset,amplitude,frequency[,phase])", line, t.column);
        return Waveform::sine(a[0], a[1], a[2], a.size() == 4 ? a[3] : 0.0);
    }
    if (from + 1 != toks.size()) throw ParseError(ErrorKind::SyntaxError, "unexpected source arguments", line, toks[from + 1].column);
    return Waveform::dc(value_or_throw(t.text, line, t.column));
}

struct KeyValue {
    std::string key;  // lower case
    std::string value;
    int column;
};

inline std::vector<KeyValue> key_values(const std::vector<Token>& toks, std::size_t from, int line) {
    std::vector<KeyValue> out;
    for (std::size_t k = from; k < toks.size(); ++k) {
        const auto eq = toks[k].text.find('=');
        if (eq == std::string::npos) out.push_back({lower(toks[k].text), "", toks[k].column});
        else out.push_back({lower(toks[k].text.substr(0, eq)), toks[k].text.substr(eq + 1), toks[k].column});
        if (eq != std::string::npos && out.back().value.empty())
            throw ParseError(ErrorKind::SyntaxError, "missing value for " + out.back().key, line, toks[k].column);
    }
    return out;
}

[[noreturn]] inline void unexpected(const KeyValue& kv, int line) {
    throw ParseError(ErrorKind::SyntaxError, "unexpected parameter '" + kv.key + "'", line, kv.column);
}

inline ComponentModel parse_component(const std::vector<Token>& toks, int line) {
    const std::string& name = toks[0].text;
    const char letter = static_cast<char>(std::toupper(static_cast<unsigned char>(name[0])));
    std::size_t nodes = 2;
    ComponentKind kind;
    switch (letter) {
    case 'C': kind = ComponentKind::capacitor; break;
    case 'L': kind = ComponentKind::inductor; break;
    case 'R': kind = ComponentKind::resistor; break;
    case 'D': kind = ComponentKind::diode; break;
    case 'T': kind = ComponentKind::transformer; nodes = 4; break;
    case 'Q': kind = ComponentKind::transistor; nodes = 3; break;
    case 'V': kind = ComponentKind::voltage_source; break;
    case 'I': kind = ComponentKind::current_source; break;
    case 'O': kind = ComponentKind::sink; break;
    default: throw ParseError(ErrorKind::UnknownComponent, "unknown component type '" + std::string(1, name[0]) + "'", line, toks[0].column);
    }
    if (toks.size() < nodes + 1) throw ParseError(ErrorKind::SyntaxError, name + " needs " + std::to_string(nodes) + " nodes", line, toks[0].column);
    ComponentModel c{kind, name, {}, {}};
    for (std::size_t k = 1; k <= nodes; ++k) {
        if (toks[k].text.find_first_of("=()") != std::string::npos)
            throw ParseError(ErrorKind::SyntaxError, "bad node name '" + toks[k].text + "'", line, toks[k].column);
        c.terminals.push_back(toks[k].text);
    }
    for (auto [a, b] : c.port_terminals())
        if (c.terminals[a] == c.terminals[b])
            throw ParseError(ErrorKind::LoopEdge, name + " connects node " + c.terminals[a] + " to itself", line, toks[1].column);

    const std::size_t rest = nodes + 1;
    if (c.is_source()) {
        c.params = components::SourceParams{parse_waveform(toks, rest, line)};
        return c;
    }
    const auto kvs = key_values(toks, rest, line);
    switch (kind) {
    case ComponentKind::capacitor:
    case ComponentKind::inductor: {
        components::StorageParams p;
        bool have = false;
        const std::string unit = kind == ComponentKind::capacitor ? "c" : "l";
        for (std::size_t k = 0; k < kvs.size(); ++k) {
            const auto& kv = kvs[k];
            if ((kv.key == unit && !kv.value.empty()) || (k == 0 && kv.value.empty() && parse_value(kv.key))) {
                const double v = value_or_throw(kv.value.empty() ? toks[rest + k].text : kv.value, line, kv.column);
                if (!(v > 0.0)) throw ParseError(ErrorKind::BadParams, name + " needs a positive value", line, kv.column);
                p.hamiltonian = ScalarLaw::quadratic_energy(v);
                have = true;
            } else if (kv.key == "h" && !kv.value.empty()) {
                p.hamiltonian = parse_law(kv.value, line, kv.column, true);
                have = true;
            } else if (kv.key == "ic" && !kv.value.empty()) {
                p.initial = value_or_throw(kv.value, line, kv.column);
            } else {
                unexpected(kv, line);
            }
        }
        if (!have) throw ParseError(ErrorKind::SyntaxError, name + " needs " + (unit == "c" ? "C=" : "L=") + " or H=", line, toks[0].column);
        c.params = p;
        break;
    }
    case ComponentKind::resistor: {
        components::ResistorParams p;
        bool have = false;
        for (std::size_t k = 0; k < kvs.size(); ++k) {
            const auto& kv = kvs[k];
            if (have) unexpected(kv, line);
            if ((kv.key == "r" && !kv.value.empty()) || (k == 0 && kv.value.empty() && parse_value(kv.key))) {
                p = {components::ResistorForm::resistance, ScalarLaw::linear(value_or_throw(kv.value.empty() ? toks[rest].text : kv.value, line, kv.column))};
            } else if (kv.key == "g" && !kv.value.empty()) {
                p = {components::ResistorForm::conductance, ScalarLaw::linear(value_or_throw(kv.value, line, kv.column))};
            } else if (kv.key == "law" && !kv.value.empty()) {
                p = {components::ResistorForm::conductance, parse_law(kv.value, line, kv.column, false)};
            } else if (kv.key == "rlaw" && !kv.value.empty()) {
                p = {components::ResistorForm::resistance, parse_law(kv.value, line, kv.column, false)};
            } else {
                unexpected(kv, line);
            }
            have = true;
        }
        if (!have) throw ParseError(ErrorKind::SyntaxError, name + " needs R=, G=, law= or rlaw=", line, toks[0].column);
        c.params = p;
        break;
    }
    case ComponentKind::diode: {
        components::DiodeParams p;
        for (const auto& kv : kvs) {
            if (kv.key == "ideal" && kv.value.empty()) p.ideal = true;
            else if (kv.key == "a" && !kv.value.empty()) p.a = value_or_throw(kv.value, line, kv.column);
            else if (kv.key == "b" && !kv.value.empty()) p.b = value_or_throw(kv.value, line, kv.column);
            else unexpected(kv, line);
        }
        if (p.ideal && kvs.size() > 1) throw ParseError(ErrorKind::SyntaxError, "ideal diode takes no A= or B=", line, toks[0].column);
        c.params = p;
        break;
    }
    case ComponentKind::transformer: {
        components::TransformerParams p;
        bool have = false;
        for (const auto& kv : kvs) {
            if (kv.key == "ratio" && !kv.value.empty()) {
                p.ratio = value_or_throw(kv.value, line, kv.column);
                have = true;
            } else {
                unexpected(kv, line);
            }
        }
        if (!have) throw ParseError(ErrorKind::SyntaxError, name + " needs ratio=", line, toks[0].column);
        c.params = p;
        break;
    }
    case ComponentKind::transistor: {
        components::TransistorParams p;
        for (const auto& kv : kvs) {
            if (kv.value.empty()) unexpected(kv, line);
            const double v = value_or_throw(kv.value, line, kv.column);
            if (kv.key == "is") p.i_s = v;
            else if (kv.key == "vt") p.v_t = v;
            else if (kv.key == "af") p.alpha_f = v;
            else if (kv.key == "ar") p.alpha_r = v;
            else unexpected(kv, line);
        }
        c.params = p;
        break;
    }
    default: break;
    }
    return c;
}

} // namespace detail

inline Netlist parse(const std::string& text) {
    // Join '+' continuations, keeping the line number of the first physical line.
    std::vector<std::pair<std::string, int>> logical;
    {
        std::istringstream in(text);
        std::string raw;
        int line_no = 0;
        while (std::getline(in, raw)) {
            ++line_no;
            if (!raw.empty() && raw.back() == '\r') raw.pop_back();
            const auto first = raw.find_first_not_of(" \t");
            if (first == std::string::npos || raw[first] == '*') continue;
            if (raw[first] == '+') {
                if (logical.empty()) throw ParseError(ErrorKind::SyntaxError, "continuation without a statement", line_no, static_cast<int>(first) + 1);
                logical.back().first += " " + raw.substr(first + 1);
                continue;
            }
            logical.push_back({raw, line_no});
        }
    }

    Netlist n;
    std::set<std::string> names;
    for (const auto& [text_line, line] : logical) {
        const auto toks = detail::tokenize(text_line, line);
        if (toks.empty()) continue;
        if (toks[0].text[0] == '.') {
            const std::string d = detail::lower(toks[0].text);
            if (d == ".end") break;
            if (d == ".title") {
                const auto pos = text_line.find_first_not_of(" \t", text_line.find_first_of(" \t", text_line.find('.')));
                n.title = pos == std::string::npos ? "" : text_line.substr(pos);
                while (!n.title.empty() && std::isspace(static_cast<unsigned char>(n.title.back()))) n.title.pop_back();
            } else if (d == ".ground") {
                if (toks.size() < 2) throw ParseError(ErrorKind::SyntaxError, ".ground needs at least one node", line, toks[0].column);
                for (std::size_t k = 1; k < toks.size(); ++k) n.grounds.push_back(toks[k].text);
            } else if (d == ".tran") {
                if (toks.size() < 3 || toks.size() > 4) throw ParseError(ErrorKind::SyntaxError, ".tran needs <tstop> <dt> [uic]", line, toks[0].column);
                Analysis a{Analysis::Kind::tran, detail::value_or_throw(toks[1].text, line, toks[1].column),
                           detail::value_or_throw(toks[2].text, line, toks[2].column), false};
                if (toks.size() == 4) {
                    if (detail::lower(toks[3].text) != "uic") throw ParseError(ErrorKind::SyntaxError, "expected uic", line, toks[3].column);
                    a.uic = true;
                }
                if (!(a.tstop > 0.0 && a.dt > 0.0)) throw ParseError(ErrorKind::SyntaxError, ".tran needs positive tstop and dt", line, toks[1].column);
                n.analyses.push_back(a);
            } else if (d == ".op") {
                if (toks.size() != 1) throw ParseError(ErrorKind::SyntaxError, ".op takes no arguments", line, toks[1].column);
                n.analyses.push_back({});
            } else {
                throw ParseError(ErrorKind::UnknownDirective, "unknown directive " + toks[0].text, line, toks[0].column);
            }
            continue;
        }
        auto c = detail::parse_component(toks, line);
        if (!names.insert(detail::lower(c.name)).second)
            throw ParseError(ErrorKind::DuplicateName, "duplicate component name " + c.name, line, toks[0].column);
        try {
            components::validate(c);
        } catch (const ParseError&) {
            throw;
        } catch (const Error& e) {
            throw ParseError(e.kind(), e.detail(), line, toks[0].column);
        }
        n.components.push_back(std::move(c));
        n.lines.push_back(line);
    }
    return n;
}

inline std::string serialize(const Netlist& n) {
    std::ostringstream out;
    if (!n.title.empty()) out << ".title " << n.title << '\n';
    for (const auto& c : n.components) {
        out << c.name;
        for (const auto& t : c.terminals) out << ' ' << t;
        std::visit(
            [&](const auto& p) {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, components::StorageParams>) {
                    const double cap = p.hamiltonian.quadratic_capacity();
                    const char* unit = c.kind == ComponentKind::capacitor ? "C" : "L";
                    if (cap > 0.0 && ScalarLaw::quadratic_energy(cap) == p.hamiltonian) out << ' ' << unit << '=' << format_number(cap);
                    else out << " H=" << p.hamiltonian.to_string();
                    if (p.initial) out << " IC=" << format_number(*p.initial);
                } else if constexpr (std::is_same_v<T, components::ResistorParams>) {
                    const bool lin = p.law.is_linear();
                    if (p.form == components::ResistorForm::resistance)
                        out << (lin ? " R=" + format_number(p.law.coeffs[1]) : " rlaw=" + p.law.to_string());
                    else
                        out << (lin ? " G=" + format_number(p.law.coeffs[1]) : " law=" + p.law.to_string());
                } else if constexpr (std::is_same_v<T, components::DiodeParams>) {
                    if (p.ideal) out << " ideal";
                    else out << " A=" << format_number(p.a) << " B=" << format_number(p.b);
                } else if constexpr (std::is_same_v<T, components::TransformerParams>) {
                    out << " ratio=" << format_number(p.ratio);
                } else if constexpr (std::is_same_v<T, components::TransistorParams>) {
                    out << " IS=" << format_number(p.i_s) << " VT=" << format_number(p.v_t) << " AF=" << format_number(p.alpha_f)
                        << " AR=" << format_number(p.alpha_r);
                } else {
                    out << ' ' << p.waveform.to_string();
                }
            },
            c.params);
        out << '\n';
    }
    if (!n.grounds.empty()) {
        out << ".ground";
        for (const auto& g : n.grounds) out << ' ' << g;
        out << '\n';
    }
    for (const auto& a : n.analyses) {
        if (a.kind == Analysis::Kind::op) out << ".op\n";
        else out << ".tran " << format_number(a.tstop) << ' ' << format_number(a.dt) << (a.uic ? " uic" : "") << '\n';
    }
    out << ".end\n";
    return out.str();
}

struct CircuitGraph {
    graph::DirectedGraph graph;
    graph::GroundSet grounds;
    std::vector<std::vector<std::size_t>> component_edges;  // edge indices per component
    std::vector<std::string> warnings;
};

namespace detail {

// Integers compare numerically and sort before other names.
inline bool node_less(const std::string& a, const std::string& b) {
    auto as_int = [](const std::string& s) -> std::optional<long long> {
        long long v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
        return v;
    };
    const auto ia = as_int(a), ib = as_int(b);
    if (ia && ib) return *ia < *ib;
    if (ia || ib) return ia.has_value();
    return a < b;
}

} // namespace detail

inline CircuitGraph build_graph(const Netlist& n) {
    CircuitGraph cg;
    for (const auto& c : n.components)
        for (const auto& t : c.terminals) cg.graph.add_vertex(t);
    for (const auto& c : n.components) {
        std::vector<std::size_t> edges;
        const auto names = c.edge_names();
        const auto pt = c.port_terminals();
        for (std::size_t p = 0; p < pt.size(); ++p)
            edges.push_back(cg.graph.add_edge(names[p], cg.graph.vertex_index(c.terminals[pt[p].first]),
                                              cg.graph.vertex_index(c.terminals[pt[p].second])));
        cg.component_edges.push_back(std::move(edges));
    }
    for (const auto& g : n.grounds) {
        if (!cg.graph.has_vertex(g)) throw Error(ErrorKind::GroundSetViolation, "ground node " + g + " is not used by any component");
        const auto v = cg.graph.vertex_index(g);
        if (std::find(cg.grounds.vertices.begin(), cg.grounds.vertices.end(), v) != cg.grounds.vertices.end())
            throw Error(ErrorKind::GroundSetViolation, "ground node " + g + " listed twice");
        cg.grounds.vertices.push_back(v);
    }
    graph::validate_ground(cg.graph, cg.grounds);

    const auto comps = graph::connected_components(cg.graph);
    std::vector<bool> grounded(comps.count, false);
    for (auto v : cg.grounds.vertices) grounded[comps.label[v]] = true;
    for (std::size_t k = 0; k < comps.count; ++k) {
        if (grounded[k]) continue;
        std::optional<std::size_t> best;
        for (std::size_t v = 0; v < cg.graph.vertex_count(); ++v)
            if (comps.label[v] == k && (!best || detail::node_less(cg.graph.vertices()[v], cg.graph.vertices()[*best]))) best = v;
        cg.grounds.vertices.push_back(*best);
        cg.warnings.push_back("auto-grounded node " + cg.graph.vertices()[*best]);
    }
    std::sort(cg.grounds.vertices.begin(), cg.grounds.vertices.end());
    return cg;
}

} // namespace phcirc::netlist
