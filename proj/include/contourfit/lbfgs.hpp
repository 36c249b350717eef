#ifndef CONTOURFIT_LBFGS_HPP
#define CONTOURFIT_LBFGS_HPP

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <vector>

#include "contourfit/errors.hpp"

namespace contourfit {

struct LbfgsOptions {
    int memory = 10;
    int max_iterations = 500;
    double grad_tolerance = 1e-5; // on the infinity norm of the gradient
    double wolfe_c1 = 1e-4;
    double wolfe_c2 = 0.9;
    int max_line_search = 40;
};

enum class LbfgsStatus {
    Converged,        // gradient dropped below tolerance
    AlreadyOptimal,   // tolerance met at entry, no step taken
    MaxIterations,    // iteration budget exhausted
    LineSearchFailed, // no acceptable step; best-so-far returned
};

inline const char* to_string(LbfgsStatus s) {
    switch (s) {
        case LbfgsStatus::Converged: return "converged";
        case LbfgsStatus::AlreadyOptimal: return "already-optimal";
        case LbfgsStatus::MaxIterations: return "max-iterations";
        case LbfgsStatus::LineSearchFailed: return "line-search-failed";
    }
    return "?";
}

struct LbfgsResult {
    std::vector<double> x;
    double f = 0.0;
    std::vector<double> trace; // objective after every accepted step (incl. entry)
    LbfgsStatus status = LbfgsStatus::Converged;
    int iterations = 0;
};

/// Objective: fills `grad` (same length as x) and returns f(x).
using LbfgsObjective = std::function<double(const std::vector<double>&, std::vector<double>&)>;

namespace detail {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double inf_norm(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

// cubic minimizer of a bracketing interval; falls back to bisection
inline double interpolate_step(double a_lo, double f_lo, double g_lo, double a_hi, double f_hi) {
    const double d = a_hi - a_lo;
    if (d == 0.0) return a_lo;
    // quadratic through (a_lo, f_lo, g_lo) and (a_hi, f_hi)
    const double denom = 2.0 * (f_hi - f_lo - g_lo * d);
    double a = denom != 0.0 ? a_lo - g_lo * d * d / denom : a_lo + 0.5 * d;
    const double lo = std::min(a_lo, a_hi), hi = std::max(a_lo, a_hi);
    const double margin = 0.1 * (hi - lo);
    if (!(a > lo + margin) || !(a < hi - margin)) a = a_lo + 0.5 * d;
    return a;
}

} // namespace detail

/// Limited-memory BFGS with two-loop recursion and a strong-Wolfe line
/// search. A line-search failure is not an error: the best point seen so
/// far is returned with the corresponding status.
inline LbfgsResult lbfgs_minimize(const LbfgsObjective& objective, std::vector<double> x0,
                                  const LbfgsOptions& opt) {
    const std::size_t n = x0.size();
    LbfgsResult res;
    res.x = std::move(x0);

    std::vector<double> g(n);
    res.f = objective(res.x, g);
    res.trace.push_back(res.f);
    if (detail::inf_norm(g) < opt.grad_tolerance) {
        res.status = LbfgsStatus::AlreadyOptimal;
        return res;
    }

    std::deque<std::vector<double>> hist_s, hist_y;
    std::deque<double> hist_rho;
    std::vector<double> d(n), x_new(n), g_new(n);

    for (int iter = 0; iter < opt.max_iterations; ++iter) {
        // two-loop recursion for d = -H g
        d = g;
        std::vector<double> alpha_coef(hist_s.size());
        for (int k = static_cast<int>(hist_s.size()) - 1; k >= 0; --k) {
            alpha_coef[k] = hist_rho[k] * detail::dot(hist_s[k], d);
            for (std::size_t i = 0; i < n; ++i) d[i] -= alpha_coef[k] * hist_y[k][i];
        }
        if (!hist_s.empty()) {
            const double gamma = detail::dot(hist_s.back(), hist_y.back()) /
                                 detail::dot(hist_y.back(), hist_y.back());
            for (double& v : d) v *= gamma;
        }
        for (std::size_t k = 0; k < hist_s.size(); ++k) {
            const double beta = hist_rho[k] * detail::dot(hist_y[k], d);
            for (std::size_t i = 0; i < n; ++i) d[i] += hist_s[k][i] * (alpha_coef[k] - beta);
        }
        for (double& v : d) v = -v;

        double dg0 = detail::dot(d, g);
        if (dg0 >= 0.0) { // not a descent direction; restart from steepest descent
            hist_s.clear();
            hist_y.clear();
            hist_rho.clear();
            for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
            dg0 = detail::dot(d, g);
        }

        // strong-Wolfe line search (bracket + zoom); without curvature
        // history the direction is raw steepest descent, so the first trial
        // is scaled to a unit-length move
        const double f0 = res.f;
        double a_prev = 0.0, f_prev = f0, g_prev = dg0;
        double a = 1.0;
        if (hist_s.empty()) {
            const double dnorm = std::sqrt(detail::dot(d, d));
            if (dnorm > 1.0) a = 1.0 / dnorm;
        }
        const double a_max = 1e10;
        double a_lo = 0.0, a_hi = 0.0, f_lo = 0.0, g_lo = 0.0, f_hi = 0.0;
        bool bracketed = false, accepted = false;
        double f_a = f0, g_a = dg0;

        auto eval = [&](double step) {
            for (std::size_t i = 0; i < n; ++i) x_new[i] = res.x[i] + step * d[i];
            f_a = objective(x_new, g_new);
            g_a = detail::dot(g_new, d);
        };

        int ls = 0;
        for (; ls < opt.max_line_search; ++ls) {
            eval(a);
            if (f_a > f0 + opt.wolfe_c1 * a * dg0 || (ls > 0 && f_a >= f_prev)) {
                a_lo = a_prev;
                f_lo = f_prev;
                g_lo = g_prev;
                a_hi = a;
                f_hi = f_a;
                bracketed = true;
                break;
            }
            if (std::abs(g_a) <= -opt.wolfe_c2 * dg0) {
                accepted = true;
                break;
            }
            if (g_a >= 0.0) {
                a_lo = a;
                f_lo = f_a;
                g_lo = g_a;
                a_hi = a_prev;
                f_hi = f_prev;
                bracketed = true;
                break;
            }
            a_prev = a;
            f_prev = f_a;
            g_prev = g_a;
            a = std::min(2.0 * a, a_max);
        }
        if (bracketed && !accepted) {
            for (; ls < opt.max_line_search; ++ls) {
                a = detail::interpolate_step(a_lo, f_lo, g_lo, a_hi, f_hi);
                eval(a);
                if (f_a > f0 + opt.wolfe_c1 * a * dg0 || f_a >= f_lo) {
                    a_hi = a;
                    f_hi = f_a;
                } else {
                    if (std::abs(g_a) <= -opt.wolfe_c2 * dg0) {
                        accepted = true;
                        break;
                    }
                    if (g_a * (a_hi - a_lo) >= 0.0) {
                        a_hi = a_lo;
                        f_hi = f_lo;
                    }
                    a_lo = a;
                    f_lo = f_a;
                    g_lo = g_a;
                }
                if (std::abs(a_hi - a_lo) < 1e-16 * std::max(1.0, std::abs(a_lo))) break;
            }
        }
        if (!accepted) {
            // keep a strictly better point if the search stumbled on one
            if (f_a < res.f) {
                res.x = x_new;
                res.f = f_a;
                g = g_new;
                res.trace.push_back(res.f);
            }
            res.status = LbfgsStatus::LineSearchFailed;
            res.iterations = iter;
            return res;
        }

        // accepted step: update curvature history
        std::vector<double> s(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = x_new[i] - res.x[i];
            y[i] = g_new[i] - g[i];
        }
        res.x = x_new;
        res.f = f_a;
        g = g_new;
        res.trace.push_back(res.f);
        res.iterations = iter + 1;

        const double sy = detail::dot(s, y);
        if (sy > 1e-10 * std::sqrt(detail::dot(s, s)) * std::sqrt(detail::dot(y, y))) {
            hist_s.push_back(std::move(s));
            hist_y.push_back(std::move(y));
            hist_rho.push_back(1.0 / sy);
            if (static_cast<int>(hist_s.size()) > opt.memory) {
                hist_s.pop_front();
                hist_y.pop_front();
                hist_rho.pop_front();
            }
        }

        if (detail::inf_norm(g) < opt.grad_tolerance) {
            res.status = LbfgsStatus::Converged;
            return res;
        }
    }
    res.status = LbfgsStatus::MaxIterations;
    return res;
}

} // namespace contourfit

#endif
