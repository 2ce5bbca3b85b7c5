#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dirac.hpp"
#include "smooth_map.hpp"
#include "symmetry.hpp"

namespace mdirac {

inline constexpr double tau_proj_step = 1e-10;

enum class Method { Rk4, ProjectedRk4, ImplicitMidpoint };

inline const char* to_string(Method m) {
    switch (m) {
        case Method::Rk4: return "rk4";
        case Method::ProjectedRk4: return "projected_rk4";
        default: return "implicit_midpoint";
    }
}

inline Method method_from_string(const std::string& s) {
    if (s == "rk4") return Method::Rk4;
    if (s == "projected_rk4") return Method::ProjectedRk4;
    if (s == "implicit_midpoint") return Method::ImplicitMidpoint;
    throw std::invalid_argument("unknown integration method '" + s + "'");
}

struct NamedFn {
    std::string name;
    SmoothMap f;  // scalar
};

struct Trajectory {
    std::vector<double> times;
    std::vector<Vec> states;
    std::map<std::string, std::vector<double>> diagnostics;
    double max_projection_residual = 0;
};

struct IntegrateOptions {
    Method method = Method::Rk4;
    const ConstraintSet* constraints = nullptr;  // projected_rk4
    std::vector<NamedFn> monitors;
    int sample_every = 1;
};

inline Vec rk4_step(const SmoothMap& f, const Vec& x, double dt) {
    Vec k1 = f.eval(x);
    Vec k2 = f.eval(x + 0.5 * dt * k1);
    Vec k3 = f.eval(x + 0.5 * dt * k2);
    Vec k4 = f.eval(x + dt * k3);
    return x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4);
}

// Newton on y - x - dt f((x+y)/2) = 0 with the field jacobian.
inline Vec implicit_midpoint_step(const SmoothMap& f, const Vec& x, double dt) {
    Vec y = rk4_step(f, x, dt);
    const long n = x.size();
    for (int it = 0; it < 25; ++it) {
        Vec mid = 0.5 * (x + y);
        Vec r = y - x - dt * f.eval(mid);
        if (r.cwiseAbs().maxCoeff() < 1e-15 * std::max(1.0, y.cwiseAbs().maxCoeff())) break;
        Mat jf = f.jacobian(mid);
        Mat jm = Mat::Identity(n, n) - 0.5 * dt * jf;
        y -= jm.partialPivLu().solve(r);
    }
    return y;
}

inline Trajectory integrate(const SmoothMap& field, const Vec& x0, double t_end, double dt,
                            const IntegrateOptions& opt = {}) {
    if (!(dt > 0) || !(t_end >= 0)) throw std::invalid_argument("need dt > 0 and T >= 0");
    if (field.domain_dim() != x0.size() || field.codomain_dim() != x0.size())
        throw std::invalid_argument("field shape does not match the state");
    if (opt.method == Method::ProjectedRk4) {
        if (!opt.constraints) throw std::invalid_argument("projected_rk4 needs a constraint set");
        if (make_context(*opt.constraints, x0).cls != ConstraintClass::SecondClass)
            throw std::domain_error("projection constraints are not second-class at x0");
    }
    const long steps = std::lround(t_end / dt);
    Trajectory tr;
    auto record = [&](double t, const Vec& x) {
        tr.times.push_back(t);
        tr.states.push_back(x);
        for (const auto& m : opt.monitors) tr.diagnostics[m.name].push_back(m.f.value(x));
    };
    Vec x = x0;
    record(0.0, x);
    for (long s = 1; s <= steps; ++s) {
        switch (opt.method) {
            case Method::Rk4: x = rk4_step(field, x, dt); break;
            case Method::ImplicitMidpoint: x = implicit_midpoint_step(field, x, dt); break;
            case Method::ProjectedRk4: {
                x = rk4_step(field, x, dt);
                ProjectionResult pr = project_onto(*opt.constraints, x, 10, 1e-12);
                if (!pr.converged || pr.residual >= tau_proj_step)
                    throw std::runtime_error("projection diverged at step " + std::to_string(s));
                x = pr.x;
                tr.max_projection_residual = std::max(tr.max_projection_residual, pr.residual);
                break;
            }
        }
        if (!x.allFinite()) throw std::runtime_error("non-finite state at step " + std::to_string(s));
        if (s % opt.sample_every == 0 || s == steps) record(s * dt, x);
    }
    return tr;
}

inline std::map<std::string, double> conserved_monitor(const Trajectory& tr, const std::vector<NamedFn>& fns) {
    std::map<std::string, double> out;
    for (const auto& f : fns) {
        const double f0 = f.f.value(tr.states.front());
        double m = 0;
        for (const auto& x : tr.states) m = std::max(m, std::abs(f.f.value(x) - f0));
        out[f.name] = m;
    }
    return out;
}

struct FlowCompareReport {
    double max_divergence = 0;
    double final_divergence = 0;
};

inline FlowCompareReport flow_compare(const SmoothMap& a, const SmoothMap& b, const Vec& x0, double t_end,
                                      double dt, Method method = Method::Rk4) {
    if (method == Method::ProjectedRk4) throw std::invalid_argument("flow_compare uses unprojected steps");
    IntegrateOptions opt;
    opt.method = method;
    Trajectory ta = integrate(a, x0, t_end, dt, opt), tb = integrate(b, x0, t_end, dt, opt);
    FlowCompareReport r;
    for (std::size_t i = 0; i < ta.states.size(); ++i)
        r.max_divergence = std::max(r.max_divergence, (ta.states[i] - tb.states[i]).norm());
    r.final_divergence = (ta.states.back() - tb.states.back()).norm();
    return r;
}

// Field of f for the slice Dirac bracket (full constraint set).
inline SmoothMap dirac_field(const SmoothMap& h, const ConstraintSet& cs) {
    const int n = h.domain_dim();
    return SmoothMap::analytic(
        n, n, [h, cs](const Vec& x) { return dirac_project(h, make_context(cs, x)); },
        [h, cs, n](const Vec& x) {
            // jacobian by central differences (used only by implicit_midpoint)
            const double e = 1e-6;
            Mat j(n, n);
            for (int c = 0; c < n; ++c) {
                Vec xp = x, xm = x;
                xp[c] += e;
                xm[c] -= e;
                j.col(c) = (dirac_project(h, make_context(cs, xp)) - dirac_project(h, make_context(cs, xm))) / (2 * e);
            }
            return j;
        },
        nullptr, "X_D(" + h.name() + ")");
}

// Canonical field when cs is empty, Dirac field otherwise.
inline SmoothMap bracket_field(const SmoothMap& h, const ConstraintSet& cs) {
    return cs.size() ? dirac_field(h, cs) : hamiltonian_vector_field(h);
}

struct RelatednessReport {
    std::vector<double> eps;
    std::vector<double> max_residual;  // per eps, over probes and test functions
    bool pass = false;
};

// |{H_eps, f}_D - {H_eps, f}_M| on probes of N.
inline RelatednessReport relatedness_check(const std::function<SmoothMap(double)>& h_eps, const SliceModel& s,
                                           const std::vector<Vec>& probes, const std::vector<double>& eps_list,
                                           const std::vector<NamedFn>& tests, double tau = 1e-8) {
    RelatednessReport r;
    r.pass = !probes.empty() && !eps_list.empty();
    for (double e : eps_list) {
        SmoothMap h = h_eps(e);
        double m = 0;
        for (const auto& x : probes) {
            DiracContext full = make_context(s.full, x);
            Vec gh = h.gradient(x);
            std::optional<DiracContext> base;
            if (s.base.size()) base = make_context(s.base, x);
            for (const auto& f : tests) {
                Vec gf = f.f.gradient(x);
                const double bd = dirac_bracket_gradients(gh, gf, full);
                const double bm = base ? dirac_bracket_gradients(gh, gf, *base) : canonical_bracket(gh, gf);
                m = std::max(m, std::abs(bd - bm));
            }
        }
        r.eps.push_back(e);
        r.max_residual.push_back(m);
        r.pass = r.pass && m < tau;
    }
    return r;
}

inline std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// header t,x1..x{n},diag:<name>...
inline void write_csv(const Trajectory& tr, std::ostream& os) {
    const long n = tr.states.empty() ? 0 : tr.states.front().size();
    os << "t";
    for (long i = 1; i <= n; ++i) os << ",x" << i;
    for (const auto& [name, _] : tr.diagnostics) os << ",diag:" << name;
    os << "\n";
    for (std::size_t s = 0; s < tr.times.size(); ++s) {
        os << format_g17(tr.times[s]);
        for (long i = 0; i < n; ++i) os << "," << format_g17(tr.states[s][i]);
        for (const auto& [name, v] : tr.diagnostics) os << "," << format_g17(v[s]);
        os << "\n";
    }
}

}  // namespace mdirac
