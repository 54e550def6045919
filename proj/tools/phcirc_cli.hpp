#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "phcirc/assembly.hpp"
#include "phcirc/components.hpp"
#include "phcirc/json.hpp"
#include "phcirc/solver.hpp"

namespace phcirc::cli {

using nlohmann::json;

enum class Command { check, assemble, simulate, verify, mna, mla };
enum class Format { csv, json };

struct CliConfig {
    Command command = Command::check;
    std::string input;
    std::string output;  // stdout when empty
    Format format = Format::csv;
    std::optional<double> dt, tstop;
    solver::Method method = solver::Method::backward_euler;
    assembly::Formulation formulation = assembly::Formulation::mna_charge_flux;
    bool uic = false;
    std::uint64_t seed = 0;
};

enum class LogLevel { error = 0, info = 1, debug = 2 };

inline LogLevel log_level() {
    const char* v = std::getenv("PHCIRC_LOG");
    if (!v) return LogLevel::error;
    const std::string s(v);
    if (s == "debug") return LogLevel::debug;
    if (s == "info") return LogLevel::info;
    return LogLevel::error;
}

class Logger {
public:
    Logger(std::ostream& err, LogLevel level) : err_(err), level_(level) {}

    void info(const std::string& msg) const { emit(LogLevel::info, "info", msg); }
    void debug(const std::string& msg) const { emit(LogLevel::debug, "debug", msg); }

private:
    void emit(LogLevel at, const char* name, const std::string& msg) const {
        if (level_ >= at) err_ << json{{"level", name}, {"message", msg}}.dump() << '\n';
    }
    std::ostream& err_;
    LogLevel level_;
};

inline json diagnostic(const std::exception& e) {
    json d{{"level", "error"}};
    if (const auto* pe = dynamic_cast<const ParseError*>(&e)) {
        d["error"] = to_string(pe->kind());
        d["message"] = pe->message();
        d["line"] = pe->line();
        if (pe->column() > 0) d["column"] = pe->column();
    } else if (const auto* se = dynamic_cast<const SolverError*>(&e)) {
        d["error"] = to_string(se->kind());
        d["message"] = se->detail();
        d["t"] = se->time();
        if (std::isfinite(se->residual_norm())) d["residual_norm"] = se->residual_norm();
    } else if (const auto* pe2 = dynamic_cast<const Error*>(&e)) {
        d["error"] = to_string(pe2->kind());
        d["message"] = pe2->detail();
    } else {
        d["error"] = "InternalError";
        d["message"] = e.what();
    }
    return d;
}

inline std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline json int_block(const IntMatrix& m) { return phcirc::json::matrix_to_json(m); }

inline json blocks_json(const assembly::CircuitBlocks& b) {
    return {{"nodes", b.nodes},    {"edges", b.edges},    {"A", int_block(b.A)},     {"B", int_block(b.B)},
            {"A_R", int_block(b.A_R)}, {"A_L", int_block(b.A_L)}, {"A_C", int_block(b.A_C)}, {"A_I", int_block(b.A_I)},
            {"A_V", int_block(b.A_V)}, {"B_R", int_block(b.B_R)}, {"B_L", int_block(b.B_L)}, {"B_C", int_block(b.B_C)},
            {"B_I", int_block(b.B_I)}, {"B_V", int_block(b.B_V)}};
}

inline json graph_json(const assembly::Circuit& c) {
    const auto& g = c.graph.graph;
    std::vector<std::string> grounds;
    for (auto v : c.graph.grounds.vertices) grounds.push_back(g.vertices()[v]);
    return {{"n", g.vertex_count()}, {"m", g.edge_count()}, {"k", graph::connected_components(g).count}, {"grounds", grounds}};
}

// ---------------------------------------------------------------- commands

inline int cmd_check(const CliConfig&, const assembly::Circuit& c, std::ostream& out) {
    std::vector<std::string> warnings = c.graph.warnings;
    const auto& g = c.graph.graph;
    std::vector<std::size_t> degree(g.vertex_count(), 0);
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
        ++degree[g.edge(e).init];
        ++degree[g.edge(e).ter];
    }
    for (std::size_t v = 0; v < g.vertex_count(); ++v)
        if (degree[v] == 1) warnings.push_back("node " + g.vertices()[v] + " has a single connection");
    assembly::kirchhoff_dirac(g, c.graph.grounds);
    out << json{{"title", c.netlist.title}, {"errors", json::array()}, {"warnings", warnings}, {"graph", graph_json(c)}}.dump(2) << '\n';
    return 0;
}

inline int cmd_assemble(const CliConfig&, const assembly::Circuit& c, std::ostream& out) {
    const auto a = assembly::assemble(c);
    json j = phcirc::json::to_json(a.system.dirac);
    j["title"] = c.netlist.title;
    j["blocks"] = blocks_json(a.blocks);
    j["is_dirac"] = ph::is_dirac(a.system.dirac);
    out << j.dump(2) << '\n';
    return 0;
}

inline int cmd_formulation(const CliConfig& cfg, const assembly::Circuit& c, std::ostream& out) {
    const auto b = assembly::circuit_blocks(c);
    const auto f = cfg.command == Command::mla ? assembly::Formulation::mla
                   : cfg.formulation == assembly::Formulation::mla ? assembly::Formulation::mna_charge_flux
                                                                    : cfg.formulation;
    const auto dae = assembly::formulate(f, b, c.netlist.components);
    json rows = json::array(), cols = json::array();
    for (const auto& [name, count] : dae.row_blocks) rows.push_back({{"name", name}, {"rows", count}});
    for (const auto& [name, count] : dae.unknown_blocks) cols.push_back({{"name", name}, {"size", count}});
    std::vector<int> diff(dae.differential.begin(), dae.differential.end());
    json j{{"formulation", assembly::to_string(f)}, {"rows", dae.rows()}, {"unknowns", dae.unknowns}, {"dim", dae.dim()},
           {"differential", diff},         {"row_blocks", rows}, {"unknown_blocks", cols},   {"blocks", blocks_json(b)}};
    out << j.dump(2) << '\n';
    return 0;
}

inline solver::IntegratorConfig integrator(const CliConfig& cfg, const netlist::Netlist& n) {
    solver::IntegratorConfig ic;
    ic.method = cfg.method;
    const auto tran = n.tran();
    if (cfg.dt) ic.dt = *cfg.dt;
    else if (tran) ic.dt = tran->dt;
    return ic;
}

inline double stop_time(const CliConfig& cfg, const netlist::Netlist& n, double dt) {
    if (cfg.tstop) return *cfg.tstop;
    if (const auto tran = n.tran()) return tran->tstop;
    return 1000.0 * dt;
}

inline solver::Start start_of(const CliConfig& cfg, const netlist::Netlist& n) {
    return cfg.uic ? solver::Start::initial_conditions : solver::start_for(n);
}

inline void write_trajectory(const solver::Trajectory& tr, Format f, std::ostream& os) {
    if (f == Format::csv) {
        tr.write_csv(os);
        return;
    }
    json cols = json::array({"t"});
    for (const auto& n : tr.names) cols.push_back(n);
    for (const char* n : {"H", "P_S", "D", "balance_err"}) cols.push_back(n);
    json rows = json::array();
    for (std::size_t k = 0; k < tr.size(); ++k) {
        json r = json::array({tr.times[k]});
        for (double v : tr.observables[k]) r.push_back(v);
        for (double v : {tr.H[k], tr.P_S[k], tr.D[k], tr.balance_err[k]}) r.push_back(v);
        rows.push_back(std::move(r));
    }
    os << json{{"columns", cols}, {"rows", rows}}.dump() << '\n';
}

inline int cmd_simulate(const CliConfig& cfg, const assembly::Circuit& c, std::ostream& out, const Logger& log) {
    const auto cp = solver::circuit_problem(c, cfg.formulation);
    const auto ic = integrator(cfg, c.netlist);
    const double tstop = stop_time(cfg, c.netlist, ic.dt);
    log.info("simulating " + std::string(assembly::to_string(cfg.formulation)) + " with " + solver::to_string(ic.method) + ", dt " +
             std::to_string(ic.dt) + ", tstop " + std::to_string(tstop));
    const auto tr = solver::simulate(cp.problem, ic, tstop, start_of(cfg, c.netlist));
    log.info(std::to_string(tr.size()) + " rows, " + std::to_string(tr.total_iterations) + " Newton iterations, " +
             std::to_string(tr.halvings) + " halvings");
    if (cfg.output.empty()) {
        write_trajectory(tr, cfg.format, out);
    } else {
        std::ofstream f(cfg.output);
        if (!f) throw Error(ErrorKind::IoError, "cannot write " + cfg.output);
        write_trajectory(tr, cfg.format, f);
    }
    return 0;
}

// ---------------------------------------------------------------- verify

struct SuiteCount {
    std::string name;
    std::size_t passed = 0, total = 0;
    std::string first_failure;

    void record(bool ok, const std::string& what) {
        ++total;
        if (ok) ++passed;
        else if (first_failure.empty()) first_failure = what;
    }
};

inline Vector normal_vector(std::mt19937_64& rng, Eigen::Index n) {
    std::normal_distribution<double> d;
    Vector v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

inline void dirac_checks(SuiteCount& s, const std::string& what, const ph::DiracKernel& d, std::mt19937_64& rng) {
    s.record(ph::is_dirac(d, 1e-10), what + " is Dirac");
    const Matrix span = ph::dirac_span(d);
    const auto n = static_cast<Eigen::Index>(d.dim());
    for (int k = 0; k < 100; ++k) {
        const Vector w = span * normal_vector(rng, span.cols());
        const Vector f = w.head(n), e = w.tail(n);
        s.record(std::abs(e.dot(f)) <= 1e-10 * (1.0 + f.norm() * e.norm()), what + " member " + std::to_string(k));
    }
}

inline SuiteCount suite_dirac(const assembly::Circuit& c, std::mt19937_64& rng) {
    SuiteCount s{"dirac"};
    const auto k = assembly::kirchhoff_dirac(c.graph.graph, c.graph.grounds);
    dirac_checks(s, "Kirchhoff structure", k.system.dirac, rng);
    const auto a = assembly::assemble(c);
    dirac_checks(s, "assembled structure", a.system.dirac, rng);
    s.record(ph::same_dirac(a.system.dirac, assembly::closed_form_kernel(a)), "closed form");
    return s;
}

inline SuiteCount suite_kirchhoff(const solver::CircuitProblem& cp, const solver::Trajectory& tr) {
    SuiteCount s{"kirchhoff"};
    const Matrix a = cp.blocks.A.cast<double>();
    for (std::size_t k = 0; k < tr.size(); ++k) {
        const auto es = cp.dae.edges(tr.times[k], tr.states[k], tr.rates[k]);
        const double kcl = linalg::max_abs(Vector(a * es.i)), kvl = linalg::max_abs(Vector(es.u - a.transpose() * es.phi));
        const double tel = std::abs(es.u.dot(es.i)), abs_sum = es.u.cwiseProduct(es.i).cwiseAbs().sum();
        const bool ok = kcl <= 1e-9 * linalg::max_abs(es.i) && kvl <= 1e-9 * linalg::max_abs(es.u) && tel <= 1e-9 * abs_sum;
        s.record(ok, "step at t=" + std::to_string(tr.times[k]));
    }
    return s;
}

inline SuiteCount suite_energy(const solver::Trajectory& tr, double dt) {
    SuiteCount s{"energy"};
    double max_ps = 0.0, max_h = 0.0;
    for (std::size_t k = 0; k < tr.size(); ++k) {
        max_ps = std::max(max_ps, std::abs(tr.P_S[k]));
        max_h = std::max(max_h, std::abs(tr.H[k]));
    }
    const double bound = 10.0 * dt * max_ps + 1e-12 * (1.0 + max_h);
    for (std::size_t k = 0; k < tr.size(); ++k)
        s.record(tr.balance_err[k] <= bound && tr.D[k] >= -1e-12, "step at t=" + std::to_string(tr.times[k]));
    return s;
}

inline SuiteCount suite_equivalence(const assembly::Circuit& c, const solver::CircuitProblem& cp, const solver::Trajectory& tr,
                                    std::mt19937_64& rng) {
    SuiteCount s{"equivalence"};
    const auto a = assembly::assemble(c);
    std::uniform_int_distribution<std::size_t> pick(0, tr.size() - 1);
    std::normal_distribution<double> nd;
    for (int k = 0; k < 20; ++k) {
        const auto i = pick(rng);
        Vector x = tr.states[i], xd = tr.rates[i];
        for (Eigen::Index j = 0; j < x.size(); ++j) {
            x(j) += 1e-3 * (1.0 + std::abs(x(j))) * nd(rng) * (x(j) != 0.0 ? 1.0 : 1e-3);
            xd(j) += 1e-3 * (1.0 + std::abs(xd(j))) * nd(rng) * (xd(j) != 0.0 ? 1.0 : 1e-3);
        }
        const auto rep = assembly::ph_mna_equivalence(a, cp.dae, {{tr.times[i], x, xd}});
        s.record(rep.ok(1e-9), "sample " + std::to_string(k));
    }
    return s;
}

inline int cmd_verify(const CliConfig& cfg, const assembly::Circuit& c, std::ostream& out, const Logger& log) {
    std::mt19937_64 rng(cfg.seed);
    std::vector<SuiteCount> suites;
    suites.push_back(suite_dirac(c, rng));
    log.info("dirac suite done");

    const auto cp = solver::circuit_problem(c, assembly::Formulation::mna_charge_flux);
    auto ic = integrator(cfg, c.netlist);
    double tstop = stop_time(cfg, c.netlist, ic.dt);
    if (!cfg.tstop) tstop = std::min(tstop, 5000.0 * ic.dt);
    const auto tr = solver::simulate(cp.problem, ic, tstop, start_of(cfg, c.netlist));
    log.info("short run: " + std::to_string(tr.size()) + " steps");
    suites.push_back(suite_kirchhoff(cp, tr));
    suites.push_back(suite_energy(tr, ic.dt));
    suites.push_back(suite_equivalence(c, cp, tr, rng));

    bool all = true;
    json js = json::array();
    for (const auto& s : suites) {
        all = all && s.passed == s.total;
        json j{{"suite", s.name}, {"passed", s.passed}, {"total", s.total}};
        if (!s.first_failure.empty()) j["first_failure"] = s.first_failure;
        js.push_back(std::move(j));
    }
    out << json{{"seed", cfg.seed}, {"suites", js}, {"ok", all}}.dump(2) << '\n';
    return all ? 0 : 1;
}

// ---------------------------------------------------------------- entry

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Port-Hamiltonian circuit compiler and simulator", "phcirc"};
    app.require_subcommand(1);
    CliConfig cfg;
    std::string method = "be", formulation = "mna-cf", format = "csv", emit = "json";

    auto add_input = [&](CLI::App* sub) { sub->add_option("netlist", cfg.input, "netlist file")->required(); };
    auto* check = app.add_subcommand("check", "parse and lint a netlist");
    add_input(check);
    auto* assemble = app.add_subcommand("assemble", "emit the assembled Dirac structure and incidence blocks");
    add_input(assemble);
    assemble->add_option("--emit", emit, "output format")->check(CLI::IsMember({"json"}));
    auto* simulate = app.add_subcommand("simulate", "run a transient simulation");
    add_input(simulate);
    simulate->add_option("-o,--output", cfg.output, "output file (stdout by default)");
    simulate->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    simulate->add_option("--dt", cfg.dt, "time step")->check(CLI::PositiveNumber);
    simulate->add_option("--tstop", cfg.tstop, "stop time")->check(CLI::PositiveNumber);
    simulate->add_option("--method", method, "be or trap")->check(CLI::IsMember({"be", "trap"}));
    simulate->add_option("--formulation", formulation, "mna-cf, mna or mla")->check(CLI::IsMember({"mna-cf", "mna", "mla"}));
    simulate->add_flag("--uic", cfg.uic, "start from the IC= values");
    auto* verify = app.add_subcommand("verify", "run the property suites on a netlist");
    add_input(verify);
    verify->add_option("--seed", cfg.seed, "seed for the randomized checks");
    verify->add_option("--dt", cfg.dt, "time step of the short run")->check(CLI::PositiveNumber);
    verify->add_option("--tstop", cfg.tstop, "length of the short run")->check(CLI::PositiveNumber);
    verify->add_flag("--uic", cfg.uic, "start from the IC= values");
    auto* mna = app.add_subcommand("mna", "nodal formulation dimensions and blocks");
    add_input(mna);
    mna->add_option("--formulation", formulation, "mna-cf or mna")->check(CLI::IsMember({"mna-cf", "mna"}));
    auto* mla = app.add_subcommand("mla", "loop formulation dimensions and blocks");
    add_input(mla);

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << json{{"level", "error"}, {"error", "UsageError"}, {"message", e.what()}}.dump() << '\n';
        return 2;
    }

    const CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    cfg.command = name == "check"      ? Command::check
                  : name == "assemble" ? Command::assemble
                  : name == "simulate" ? Command::simulate
                  : name == "verify"   ? Command::verify
                  : name == "mna"      ? Command::mna
                                       : Command::mla;
    cfg.method = method == "trap" ? solver::Method::trapezoidal : solver::Method::backward_euler;
    cfg.formulation = formulation == "mna"   ? assembly::Formulation::mna
                      : formulation == "mla" ? assembly::Formulation::mla
                                             : assembly::Formulation::mna_charge_flux;
    cfg.format = format == "json" ? Format::json : Format::csv;

    const Logger log(err, log_level());
    try {
        log.debug("reading " + cfg.input);
        const auto circuit = assembly::load_circuit(read_text(cfg.input));
        for (const auto& w : circuit.graph.warnings) log.info(w);
        switch (cfg.command) {
        case Command::check: return cmd_check(cfg, circuit, out);
        case Command::assemble: return cmd_assemble(cfg, circuit, out);
        case Command::simulate: return cmd_simulate(cfg, circuit, out, log);
        case Command::verify: return cmd_verify(cfg, circuit, out, log);
        case Command::mna:
        case Command::mla: return cmd_formulation(cfg, circuit, out);
        }
    } catch (const std::exception& e) {
        err << diagnostic(e).dump() << '\n';
        return 1;
    }
    return 1;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, out, err);
}

} // namespace phcirc::cli
