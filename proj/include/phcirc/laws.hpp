#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace phcirc {

// Shortest decimal text that parses back to the same double.
inline std::string format_number(double v) {
    char buf[32];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

// Scalar maps used for Hamiltonians and resistor laws.
//   poly(c0,c1,...)  sum c_k x^k
//   tanh(a,b)        a tanh(b x)
//   logcosh(a,b)     (a/b) log cosh(b x), whose derivative is tanh(a,b)
struct ScalarLaw {
    enum class Kind { poly, tanh, logcosh };
    Kind kind = Kind::poly;
    std::vector<double> coeffs;

    static ScalarLaw poly(std::vector<double> c) { return {Kind::poly, std::move(c)}; }
    static ScalarLaw linear(double k) { return poly({0.0, k}); }
    // H(x) = x^2 / (2 c)
    static ScalarLaw quadratic_energy(double c) { return poly({0.0, 0.0, 0.5 / c}); }

    double value(double x) const {
        switch (kind) {
        case Kind::poly: {
            double acc = 0.0;
            for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = acc * x + *it;
            return acc;
        }
        case Kind::tanh: return coeffs[0] * std::tanh(coeffs[1] * x);
        case Kind::logcosh: {
            const double y = std::abs(coeffs[1] * x);
            // log cosh y = y + log1p(exp(-2y)) - log 2, stable for large y
            return coeffs[0] / coeffs[1] * (y + std::log1p(std::exp(-2.0 * y)) - std::numbers::ln2);
        }
        }
        return 0.0;
    }

    double derivative(double x) const {
        switch (kind) {
        case Kind::poly: {
            double acc = 0.0;
            for (std::size_t k = coeffs.size(); k-- > 1;) acc = acc * x + static_cast<double>(k) * coeffs[k];
            return acc;
        }
        case Kind::tanh: {
            const double t = std::tanh(coeffs[1] * x);
            return coeffs[0] * coeffs[1] * (1.0 - t * t);
        }
        case Kind::logcosh: return coeffs[0] * std::tanh(coeffs[1] * x);
        }
        return 0.0;
    }

    double second(double x) const {
        switch (kind) {
        case Kind::poly: {
            double acc = 0.0;
            for (std::size_t k = coeffs.size(); k-- > 2;) acc = acc * x + static_cast<double>(k * (k - 1)) * coeffs[k];
            return acc;
        }
        case Kind::tanh: {
            const double t = std::tanh(coeffs[1] * x);
            return -2.0 * coeffs[0] * coeffs[1] * coeffs[1] * t * (1.0 - t * t);
        }
        case Kind::logcosh: {
            const double t = std::tanh(coeffs[1] * x);
            return coeffs[0] * coeffs[1] * (1.0 - t * t);
        }
        }
        return 0.0;
    }

    // Index k if the polynomial is c0 + c_k x^k, otherwise 0.
    std::size_t single_power() const {
        if (kind != Kind::poly) return 0;
        std::size_t found = 0;
        for (std::size_t k = 1; k < coeffs.size(); ++k)
            if (coeffs[k] != 0.0) {
                if (found) return 0;
                found = k;
            }
        return found;
    }

    bool is_linear() const { return kind == Kind::poly && single_power() == 1 && coeffs[0] == 0.0; }
    // H(x) = x^2 / (2c) with c returned; 0 if not of that form.
    double quadratic_capacity() const {
        if (kind != Kind::poly || single_power() != 2 || coeffs[0] != 0.0) return 0.0;
        return 0.5 / coeffs[2];
    }

    std::string to_string() const {
        std::string s = kind == Kind::poly ? "poly(" : kind == Kind::tanh ? "tanh(" : "logcosh(";
        for (std::size_t i = 0; i < coeffs.size(); ++i) s += (i ? "," : "") + format_number(coeffs[i]);
        return s + ")";
    }

    bool operator==(const ScalarLaw&) const = default;
};

namespace detail {

inline double odd_root(double y, std::size_t p) {
    if (p == 1) return y;
    if (p == 3) return std::cbrt(y);
    return std::copysign(std::pow(std::abs(y), 1.0 / static_cast<double>(p)), y);
}

// Solves f(x) = y for increasing f: geometric bracketing, then Newton safeguarded by bisection.
inline double solve_increasing(const std::function<double(double)>& f, const std::function<double(double)>& df, double y,
                               const std::string& what) {
    double lo = -1.0, hi = 1.0;
    int grow = 0;
    while (!(f(lo) <= y) && grow < 1100) {
        lo *= 2.0;
        ++grow;
    }
    grow = 0;
    while (!(f(hi) >= y) && grow < 1100) {
        hi *= 2.0;
        ++grow;
    }
    if (!(f(lo) <= y && f(hi) >= y)) throw Error(ErrorKind::NonInvertibleConstitutive, what + " cannot reach " + std::to_string(y));
    double x = 0.5 * (lo + hi);
    if (lo <= 0.0 && hi >= 0.0) x = 0.0;
    for (int it = 0; it < 200; ++it) {
        const double fx = f(x) - y;
        if (fx == 0.0) return x;
        if (fx > 0.0) hi = x;
        else lo = x;
        const double d = df(x);
        double next = d > 0.0 && std::isfinite(d) ? x - fx / d : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - x) <= 1e-15 * std::max(1.0, std::abs(x))) return next;
        x = next;
    }
    return x;
}

} // namespace detail

// x with law.value(x) = y.
inline double invert_value(const ScalarLaw& law, double y) {
    if (law.kind == ScalarLaw::Kind::poly) {
        const auto p = law.single_power();
        if (p % 2 == 1) return detail::odd_root((y - law.coeffs[0]) / law.coeffs[p], p);
    }
    if (law.kind == ScalarLaw::Kind::tanh) {
        const double r = y / law.coeffs[0];
        if (std::abs(r) >= 1.0) throw Error(ErrorKind::NonInvertibleConstitutive, law.to_string() + " saturates below " + std::to_string(y));
        return std::atanh(r) / law.coeffs[1];
    }
    return detail::solve_increasing([&](double x) { return law.value(x); }, [&](double x) { return law.derivative(x); }, y,
                                    law.to_string());
}

// x with law.derivative(x) = y, i.e. the state belonging to an effort.
inline double invert_derivative(const ScalarLaw& law, double y) {
    if (law.kind == ScalarLaw::Kind::poly) {
        const auto p = law.single_power();
        if (p >= 2 && (p - 1) % 2 == 1) return detail::odd_root(y / (static_cast<double>(p) * law.coeffs[p]), p - 1);
    }
    if (law.kind == ScalarLaw::Kind::logcosh) {
        const double r = y / law.coeffs[0];
        if (std::abs(r) >= 1.0) throw Error(ErrorKind::NonInvertibleConstitutive, law.to_string() + " saturates below " + std::to_string(y));
        return std::atanh(r) / law.coeffs[1];
    }
    return detail::solve_increasing([&](double x) { return law.derivative(x); }, [&](double x) { return law.second(x); }, y,
                                    law.to_string());
}

// Prescribed port signal: DC v or SIN(offset, amplitude, frequency[, phase in radians]).
struct Waveform {
    enum class Kind { dc, sin };
    Kind kind = Kind::dc;
    double offset = 0.0;
    double amplitude = 0.0;
    double frequency = 0.0;
    double phase = 0.0;

    static Waveform dc(double v) { return {Kind::dc, v, 0.0, 0.0, 0.0}; }
    static Waveform sine(double o, double a, double f, double ph = 0.0) { return {Kind::sin, o, a, f, ph}; }

    double value(double t) const {
        if (kind == Kind::dc) return offset;
        return offset + amplitude * std::sin(2.0 * std::numbers::pi * frequency * t + phase);
    }

    double max_abs() const { return kind == Kind::dc ? std::abs(offset) : std::abs(offset) + std::abs(amplitude); }

    std::string to_string() const {
        if (kind == Kind::dc) return "DC " + format_number(offset);
        std::string s = "SIN(" + format_number(offset) + "," + format_number(amplitude) + "," + format_number(frequency);
        if (phase != 0.0) s += "," + format_number(phase);
        return s + ")";
    }

    bool operator==(const Waveform&) const = default;
};

} // namespace phcirc
