#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "birkhoff.hpp"
#include "dirac.hpp"
#include "poly.hpp"
#include "smooth_map.hpp"
#include "symmetry.hpp"

namespace mdirac {

inline constexpr double tau_re = 1e-10;
inline constexpr double tau_filter = 1e-8;
inline constexpr double tau_canonical = 1e-9;

// ---------------------------------------------------------------------------
// Double spherical pendulum on R^12 = (q1, q2, p1, p2), q_i, p_i in R^3.

struct DspParams {
    double m1 = 1, m2 = 1, l1 = 1, l2 = 1, g = 0;

    void validate() const {
        if (!(m1 > 0 && m2 > 0 && l1 > 0 && l2 > 0)) throw std::invalid_argument("masses and lengths must be > 0");
        if (!(g >= 0) || !std::isfinite(g)) throw std::invalid_argument("gravity must be finite and >= 0");
    }
    double delta() const { return m1 * m2 * l1 * l1 * l2 * l2; }
    double a11() const { return m2 * l2 * l2 / delta(); }
    double a22() const { return (m1 + m2) * l1 * l1 / delta(); }
    double a12() const { return -m2 * l1 * l2 / delta(); }
    double A() const { return (m1 + m2) * l1 * l1; }
    double B() const { return m2 * l2 * l2; }
    double C() const { return 2 * m2 * l1 * l2; }
};

namespace dsp {
inline constexpr int n = 12;
inline int q1(int c) { return c; }
inline int q2(int c) { return 3 + c; }
inline int p1(int c) { return 6 + c; }
inline int p2(int c) { return 9 + c; }

inline Eigen::Vector3d e3() { return {0, 0, 1}; }
inline Eigen::Vector3d seg(const Vec& x, int off) { return x.segment<3>(off); }
}  // namespace dsp

inline Poly dsp_hamiltonian_poly(const DspParams& p, int k = max_trunc_degree) {
    p.validate();
    using namespace dsp;
    Poly h(n, k);
    for (int c = 0; c < 3; ++c) {
        h.add_term(2 * expo::unit(p1(c)), 0.5 * p.a11());
        h.add_term(2 * expo::unit(p2(c)), 0.5 * p.a22());
        h.add_term(expo::unit(p1(c)) + expo::unit(p2(c)), p.a12());
    }
    h.add_term(expo::unit(q1(2)), (p.m1 + p.m2) * p.g * p.l1);
    h.add_term(expo::unit(q2(2)), p.m2 * p.g * p.l2);
    return h.normalize();
}

inline SmoothMap dsp_hamiltonian(const DspParams& p) { return SmoothMap::from_poly(dsp_hamiltonian_poly(p), "H"); }

// Rotation about e3 acting diagonally on both links.
inline GroupAction dsp_action() {
    Mat e = Mat::Zero(3, 3);
    e(0, 1) = -1;
    e(1, 0) = 1;
    Mat a = Mat::Zero(6, 6);
    a.topLeftCorner(3, 3) = e;
    a.bottomRightCorner(3, 3) = e;
    return GroupAction{{a}, true};
}

inline Poly dsp_momentum_poly(int k = max_trunc_degree) { return momentum_poly(dsp_action().generators[0], k); }

// (|q1|^2 - 1, q1.p1, |q2|^2 - 1, q2.p2)
inline ConstraintSet sphere_constraints(int links, int k = max_trunc_degree) {
    const int n = 6 * links;
    const int m = 3 * links;
    ConstraintSet cs;
    for (int l = 0; l < links; ++l) {
        Poly g(n, k), f(n, k);
        for (int c = 0; c < 3; ++c) {
            g.add_term(2 * expo::unit(3 * l + c), 1.0);
            f.add_term(expo::unit(3 * l + c) + expo::unit(m + 3 * l + c), 1.0);
        }
        g.add_term(0, -1.0);
        cs.phi.push_back(SmoothMap::from_poly(g.normalize(), "sphere" + std::to_string(l + 1)));
        cs.phi.push_back(SmoothMap::from_poly(f.normalize(), "tangency" + std::to_string(l + 1)));
    }
    return cs;
}

inline ConstraintSet dsp_sphere_constraints() { return sphere_constraints(2); }

// Kinetic metric on the ambient configuration R^6 (constant).
inline Mat dsp_metric(const DspParams& p) {
    Mat g = Mat::Zero(6, 6);
    for (int c = 0; c < 3; ++c) {
        g(c, c) = p.A();
        g(3 + c, 3 + c) = p.B();
        g(c, 3 + c) = g(3 + c, c) = 0.5 * p.C();
    }
    return g;
}

inline LockedInertia dsp_locked_inertia(const DspParams& p) {
    Mat g = dsp_metric(p);
    return LockedInertia{[g](const Vec&) { return g; }, dsp_action()};
}

enum class DspCase { Static = 1, HorizontalAligned = 2, Link1Horizontal = 3, Link2Horizontal = 4 };

inline const char* to_string(DspCase c) {
    switch (c) {
        case DspCase::Static: return "static";
        case DspCase::HorizontalAligned: return "horizontal_aligned";
        case DspCase::Link1Horizontal: return "link1_horizontal";
        default: return "link2_horizontal";
    }
}

struct RelativeEquilibrium {
    Vec x0;
    double omega = 0;
    double mu = 0;
    DspCase case_id = DspCase::Static;
    double residual = 0;
    Vec multipliers;  // sphere multipliers of dH_Omega = sum lambda d phi
    bool singular_stratum = false;
    int newton_iterations = 0;
};

// Specify either the momentum value or the angular velocity.
struct SpinSpec {
    std::optional<double> mu;
    std::optional<double> omega;
};

inline Eigen::Vector3d unit_x() { return {1, 0, 0}; }

// Residual of the constrained critical-point system in y = (x, Omega, lambda).
struct DspNewtonSystem {
    Poly h, j;
    ConstraintSet sph;
    double mu;

    Vec residual(const Vec& y) const {
        Vec x = y.head(12);
        const double om = y[12];
        Vec lam = y.tail(4);
        Vec f(17);
        Vec gh = poly_gradient(h, x), gj = poly_gradient(j, x);
        Mat gp = sph.gradients(x);
        f.head(12) = gh - om * gj - gp.transpose() * lam;
        f.segment(12, 4) = sph.values(x);
        f[16] = j.eval(x) - mu;
        return f;
    }

    Mat jacobian(const Vec& y) const {
        Vec x = y.head(12);
        const double om = y[12];
        Vec lam = y.tail(4);
        Mat jm = Mat::Zero(17, 17);
        Mat hh = SmoothMap::from_poly(h).hessian(x)[0];
        Mat hj = SmoothMap::from_poly(j).hessian(x)[0];
        Mat top = hh - om * hj;
        for (int i = 0; i < 4; ++i) top -= lam[i] * sph.phi[i].hessian(x)[0];
        Mat gp = sph.gradients(x);
        jm.topLeftCorner(12, 12) = top;
        jm.block(0, 12, 12, 1) = -poly_gradient(j, x);
        jm.block(0, 13, 12, 4) = -gp.transpose();
        jm.block(12, 0, 4, 12) = gp;
        jm.block(16, 0, 1, 12) = poly_gradient(j, x).transpose();
        return jm;
    }
};

inline RelativeEquilibrium dsp_equilibria(const DspParams& p, DspCase cs, SpinSpec spin = {}) {
    p.validate();
    using dsp::e3;
    const double A = p.A(), B = p.B(), C = p.C();
    Eigen::Vector3d q1, q2;
    switch (cs) {
        case DspCase::Static:
            q1 = -e3();
            q2 = -e3();
            break;
        case DspCase::HorizontalAligned:
            q1 = unit_x();
            q2 = unit_x();
            break;
        case DspCase::Link1Horizontal: {
            const double r = p.l1 / p.l2;  // = C / 2B
            if (r > 1) throw std::domain_error("case 3 requires l1/l2 <= 1");
            q1 = unit_x();
            q2 = -r * unit_x() + std::sqrt(std::max(0.0, 1 - r * r)) * e3();
            break;
        }
        case DspCase::Link2Horizontal: {
            const double r = (p.m2 / (p.m1 + p.m2)) * (p.l2 / p.l1);  // = C / 2A
            if (r > 1) throw std::domain_error("case 4 requires (m2/(m1+m2))(l2/l1) <= 1");
            q2 = unit_x();
            q1 = -r * unit_x() - std::sqrt(std::max(0.0, 1 - r * r)) * e3();
            break;
        }
    }
    Vec x0 = Vec::Zero(12);
    x0.segment<3>(0) = q1;
    x0.segment<3>(3) = q2;
    RelativeEquilibrium re;
    re.case_id = cs;
    const Poly h = dsp_hamiltonian_poly(p), j = dsp_momentum_poly();
    const ConstraintSet sph = dsp_sphere_constraints();
    if (cs == DspCase::Static) {
        re.x0 = x0;
        re.singular_stratum = true;
        Mat gp = sph.gradients(x0);
        Vec gh = poly_gradient(h, x0);
        re.multipliers = gp.transpose().colPivHouseholderQr().solve(gh);
        re.residual = (gh - gp.transpose() * re.multipliers).norm();
        return re;
    }
    Vec qv(6);
    qv << q1, q2;
    const double inertia = dsp_locked_inertia(p).value(qv)(0, 0);
    double om;
    if (spin.omega)
        om = *spin.omega;
    else if (spin.mu)
        om = *spin.mu / inertia;
    else
        throw std::invalid_argument("either mu or Omega is required");
    const double mu = spin.mu ? *spin.mu : inertia * om;
    if (mu == 0) throw std::domain_error("mu = 0 lies on the singular stratum; use the static case");
    const Eigen::Vector3d w1 = e3().cross(q1), w2 = e3().cross(q2);
    x0.segment<3>(6) = om * (A * w1 + 0.5 * C * w2);
    x0.segment<3>(9) = om * (B * w2 + 0.5 * C * w1);
    DspNewtonSystem sys{h, j, sph, mu};
    Vec y(17);
    y.head(12) = x0;
    y[12] = om;
    {
        Mat gp = sph.gradients(x0);
        Vec rhs = poly_gradient(h, x0) - om * poly_gradient(j, x0);
        y.tail(4) = gp.transpose().colPivHouseholderQr().solve(rhs);
    }
    // Damped Gauss-Newton; the rotation orbit makes the Jacobian rank-deficient
    // so the minimum-norm step is used.
    Vec f = sys.residual(y);
    int it = 0;
    for (; it < 60 && f.norm() > 1e-14; ++it) {
        Mat jm = sys.jacobian(y);
        Eigen::CompleteOrthogonalDecomposition<Mat> cod(jm);
        cod.setThreshold(1e-12);
        Vec step = cod.solve(f);
        double t = 1;
        Vec yn = y - step;
        Vec fn = sys.residual(yn);
        while (fn.norm() >= f.norm() && t > 1e-6) {
            t *= 0.5;
            yn = y - t * step;
            fn = sys.residual(yn);
        }
        if (fn.norm() >= f.norm()) break;
        y = yn;
        f = fn;
    }
    re.x0 = y.head(12);
    re.omega = y[12];
    re.mu = mu;
    re.multipliers = y.tail(4);
    re.residual = f.norm();
    re.newton_iterations = it;
    const double cviol = sph.values(re.x0).cwiseAbs().maxCoeff();
    if (re.residual >= tau_re || cviol >= 1e-12 || std::abs(j.eval(re.x0) - mu) >= 1e-10)
        throw std::runtime_error("relative-equilibrium Newton did not converge (residual " +
                                 std::to_string(re.residual) + ")");
    return re;
}

// Tangent directions of S^2 x S^2 at q0, orthogonal to the orbit direction.
inline Mat dsp_slice_directions(const Vec& q0) {
    Mat c = Mat::Zero(3, 6);
    c.block<1, 3>(0, 0) = q0.segment<3>(0).transpose();
    c.block<1, 3>(1, 3) = q0.segment<3>(3).transpose();
    Vec xi = dsp_action().generators[0] * q0;
    c.row(2) = xi.transpose();
    Eigen::JacobiSVD<Mat> svd(c, Eigen::ComputeFullV);
    int rank = 0;
    for (int i = 0; i < svd.singularValues().size(); ++i)
        if (svd.singularValues()[i] > 1e-12) ++rank;
    return svd.matrixV().rightCols(6 - rank);
}

// ---------------------------------------------------------------------------
// Pipeline

struct DspPipelineResult {
    RelativeEquilibrium re;
    SliceModel slice;
    Poly h_omega;
    DriftReport drift_quadratic;  // H_{2,Omega} on the tangent model
    DriftReport drift_full;       // H_Omega on the actual slice
    StationarityReport stationarity;
    bool normalized = false;
    DarbouxFrame frame;
    double chart_residual = 0;
    double darboux_residual_chart = 0;
    double darboux_residual_dirac = 0;
    NormalFormResult nf_chart;
    NormalFormResult nf_dirac;
    std::map<int, double> path_agreement;
    double symplectic_defect_chart = 0;
    double conjugation_residual_chart = 0;
    std::string normalization_error;  // set when the quadratic part is out of scope
    std::vector<std::string> notes;
};

inline Poly poly_hessian_form(const Poly& f, const Vec& x0, int k) {
    Composer<double> comp(shifted_coordinates<double>(x0, k));
    return comp(f.with_max_degree(k)).homogeneous(2);
}

// Linearised copy of a constraint set at x0 (affine constraints).
inline ConstraintSet linearized(const ConstraintSet& cs, const Vec& x0) {
    ConstraintSet out;
    Mat g = cs.gradients(x0);
    for (int i = 0; i < cs.size(); ++i) out.phi.push_back(affine_constraint(g.row(i).transpose(), x0, cs.phi[i].name()));
    return out;
}

inline std::vector<Vec> tangent_probes(const ConstraintSet& cs, const Vec& x0, int count, std::uint64_t seed,
                                       double sigma) {
    Mat g = cs.gradients(x0);
    Eigen::JacobiSVD<Mat> svd(g, Eigen::ComputeFullV);
    int rank = 0;
    for (int i = 0; i < svd.singularValues().size(); ++i)
        if (svd.singularValues()[i] > 1e-10) ++rank;
    Mat ker = svd.matrixV().rightCols(g.cols() - rank);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<Vec> out;
    for (int s = 0; s < count; ++s) {
        Vec c(ker.cols());
        for (int i = 0; i < c.size(); ++i) c[i] = sigma * nd(rng);
        out.push_back(x0 + ker * c);
    }
    return out;
}

// Slice w = (p0, 0) normalised: Upsilon = p0 . (q - q0), the kinetic-metric
// configuration slice orthogonal to the orbit.
inline Mat dsp_slice_normal(const Vec& x0) {
    Mat w = Mat::Zero(12, 1);
    w.block(0, 0, 6, 1) = x0.segment(6, 6);
    return w;
}

struct DspPipelineOptions {
    int k = 4;
    int n_probes = 100;
    std::uint64_t seed = 1;
    double probe_radius = 1e-2;
    bool dirac_path = true;
};

inline void run_normalization(DspPipelineResult& r, const DspPipelineOptions& opt);

inline DspPipelineResult dsp_pipeline(const DspParams& p, const RelativeEquilibrium& re,
                                      const DspPipelineOptions& opt = {}) {
    if (re.singular_stratum || re.mu == 0) {
        // mirrors the theorem hypotheses: the slice cannot be built at a fixed point
        GroupAction act = dsp_action();
        MomentumData mom = make_momentum(act, Vec::Constant(1, re.mu));
        (void)build_slice(dsp_sphere_constraints(), mom, re.x0);
    }
    DspPipelineResult r;
    r.re = re;
    GroupAction act = dsp_action();
    MomentumData mom = make_momentum(act, Vec::Constant(1, re.mu));
    ConstraintSet sph = dsp_sphere_constraints();
    r.slice = build_slice(sph, mom, re.x0, dsp_slice_normal(re.x0));
    Poly h = dsp_hamiltonian_poly(p), j = dsp_momentum_poly();
    r.h_omega = h - re.omega * j;
    SmoothMap h_om = SmoothMap::from_poly(r.h_omega, "H_Omega");

    // H_{2,Omega}: Hessian of H_Omega - sum lambda phi at x0, on the linearised slice.
    Poly lag = r.h_omega;
    for (int i = 0; i < 4; ++i) lag -= re.multipliers[i] * sph.phi[i].polys().front();
    Poly h2 = poly_hessian_form(lag, re.x0, 2);
    Composer<double> back(shifted_coordinates<double>(Vec(-re.x0), 2));
    SmoothMap h2map = SmoothMap::from_poly(back(h2), "H2_Omega");
    ConstraintSet sph_lin = linearized(sph, re.x0);
    MomentumData mom_lin = mom;
    mom_lin.phi = linearized(ConstraintSet{mom.phi}, re.x0).phi;
    SliceModel tangent = build_slice(sph_lin, mom_lin, re.x0, dsp_slice_normal(re.x0));
    auto tprobes = tangent_probes(tangent.full, re.x0, opt.n_probes, opt.seed, opt.probe_radius);
    r.drift_quadratic = check_drift_free(h2map, tangent, tprobes);

    auto probes = sample_probes(r.slice.full, re.x0, opt.n_probes, opt.seed, opt.probe_radius);
    r.drift_full = check_drift_free(h_om, r.slice, probes);

    r.stationarity = stationarity_test(dsp_locked_inertia(p), re.x0.head(6), dsp_slice_directions(re.x0.head(6)));
    if (!r.drift_quadratic.is_drift_free) {
        r.notes.push_back("H_{2,Omega} is not drift-free; normalization skipped");
        return r;
    }

    try {
        run_normalization(r, opt);
    } catch (const std::domain_error& e) {
        r.normalized = false;
        r.normalization_error = e.what();
        r.notes.push_back(std::string("normalization refused: ") + e.what());
    }
    return r;
}

inline void run_normalization(DspPipelineResult& r, const DspPipelineOptions& opt) {
    const int k = opt.k;
    const RelativeEquilibrium& re = r.re;
    r.frame = darboux_frame(r.slice);
    ChartSeries ch = chart_series(r.slice.full, r.frame, k);
    r.chart_residual = ch.max_residual;
    Composer<double> centred(shifted_coordinates<double>(re.x0, k));
    Poly hc_amb = centred(r.h_omega.with_max_degree(k));

    // chart path: exact pullback of the ambient form, Darboux-corrected
    DarbouxCorrection dc = darboux_correct(induced_form(ch.map), k);
    r.darboux_residual_chart = dc.residual;
    std::vector<Poly> chi_psi;
    {
        Composer<double> cp(dc.psi);
        for (const auto& c : ch.map) chi_psi.push_back(cp(c));
    }
    Poly h_chart = compose(hc_amb, chi_psi);
    r.nf_chart = birkhoff_normal_form(h_chart, PoissonStructure<double>::canonical(r.frame.d), k);
    r.symplectic_defect_chart = symplectic_defect(r.nf_chart.composed_transform, k - 1);
    r.conjugation_residual_chart = conjugation_residual(r.nf_chart);
    r.normalized = true;

    if (opt.dirac_path) {
        // Dirac path: series of the ambient Dirac structure restricted by the chart
        auto pid = dirac_structure_series(r.slice.full, re.x0, k);
        PolyMat<double> pin = restrict_structure(pid, ch);
        DarbouxCorrection dd = darboux_correct(structure_to_form(pin), k);
        r.darboux_residual_dirac = dd.residual;
        PolyMat<double> piv = pushforward_structure(pin, dd.psi);
        std::vector<Poly> chi_psi_d;
        Composer<double> cp(dd.psi);
        for (const auto& c : ch.map) chi_psi_d.push_back(cp(c));
        Poly h_d = compose(hc_amb, chi_psi_d);
        r.nf_dirac = birkhoff_normal_form(h_d, PoissonStructure<double>::structured(piv), k);
        for (int deg = 3; deg <= k; ++deg)
            r.path_agreement[deg] = max_coef_diff(r.nf_chart.resonant_terms[deg], r.nf_dirac.resonant_terms[deg]);
    }
}

// ---------------------------------------------------------------------------
// Moser-type constrained models

struct MoserModel {
    SmoothMap h;
    std::vector<SmoothMap> g_constraints;
    std::vector<SmoothMap> f_constraints;
    std::vector<SmoothMap> residual_integrals;

    ConstraintSet constraints() const {
        ConstraintSet cs;
        for (const auto& g : g_constraints) cs.phi.push_back(g);
        for (const auto& f : f_constraints) cs.phi.push_back(f);
        return cs;
    }
};

// H = |p|^2/2 + q.Aq/2 on R^6, G = (|q|^2 - 1)/2, F = q.p.
inline MoserModel neumann_model(const Mat& a) {
    if (a.rows() != 3 || a.cols() != 3) throw std::invalid_argument("A must be 3x3");
    if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-14) throw std::invalid_argument("A must be symmetric");
    const int n = 6, k = max_trunc_degree;
    Poly h(n, k), g(n, k), f(n, k);
    for (int i = 0; i < 3; ++i) {
        h.add_term(2 * expo::unit(3 + i), 0.5);
        for (int j = 0; j < 3; ++j)
            if (a(i, j) != 0) h.add_term(expo::unit(i) + expo::unit(j), 0.5 * a(i, j));
        g.add_term(2 * expo::unit(i), 0.5);
        f.add_term(expo::unit(i) + expo::unit(3 + i), 1.0);
    }
    g.add_term(0, -0.5);
    MoserModel m;
    m.h = SmoothMap::from_poly(h.normalize(), "H");
    m.g_constraints = {SmoothMap::from_poly(g.normalize(), "G1")};
    m.f_constraints = {SmoothMap::from_poly(f.normalize(), "F1")};
    m.residual_integrals = {m.h};
    return m;
}

// H = sum (p_i^2 + w_i^2 q_i^2)/2 on R^6 with the canonical pair (q3, p3).
inline MoserModel separable_model(const Eigen::Vector3d& w, bool broken = false) {
    const int n = 6, k = max_trunc_degree;
    auto osc = [&](int i) {
        Poly p(n, k);
        p.add_term(2 * expo::unit(3 + i), 0.5);
        p.add_term(2 * expo::unit(i), 0.5 * w[i] * w[i]);
        return p.normalize();
    };
    MoserModel m;
    m.h = SmoothMap::from_poly(osc(0) + osc(1) + osc(2), "H");
    m.g_constraints = {SmoothMap::from_poly(Poly::variable(n, k, 2), "G1")};
    Poly f1 = broken ? Poly::variable(n, k, 2) * Poly::variable(n, k, 5) : Poly::variable(n, k, 5);
    m.f_constraints = {SmoothMap::from_poly(f1, "F1")};
    m.residual_integrals = {SmoothMap::from_poly(osc(0), "F2"), SmoothMap::from_poly(osc(1), "F3")};
    return m;
}

struct CanonicalRelationReport {
    double max_defect = 0;
    bool pass = false;
};

inline CanonicalRelationReport canonical_relations(const MoserModel& m, const std::vector<Vec>& probes,
                                                   double tau = tau_canonical) {
    CanonicalRelationReport r;
    const std::size_t rr = m.g_constraints.size();
    for (const auto& x : probes)
        for (std::size_t i = 0; i < rr; ++i)
            for (std::size_t j = 0; j < rr; ++j) {
                Vec gi = m.g_constraints[i].gradient(x), gj = m.g_constraints[j].gradient(x);
                Vec fi = m.f_constraints[i].gradient(x), fj = m.f_constraints[j].gradient(x);
                r.max_defect = std::max({r.max_defect, std::abs(canonical_bracket(gi, gj)),
                                         std::abs(canonical_bracket(fi, fj)),
                                         std::abs(canonical_bracket(gi, fj) - (i == j ? 1.0 : 0.0))});
            }
    r.pass = !probes.empty() && r.max_defect < tau;
    return r;
}

struct FilterReport {
    CanonicalRelationReport relations;
    std::vector<std::string> names;
    std::vector<double> hamiltonian_bracket;  // max |{F_j, H}_D|
    double max_pairwise = 0;                  // max |{F_i, F_j}_D|
    bool pass = false;
};

inline FilterReport moser_filter_integrals(const MoserModel& m, const std::vector<Vec>& probes,
                                           double tau = tau_filter) {
    FilterReport r;
    r.relations = canonical_relations(m, probes);
    if (!r.relations.pass)
        throw std::domain_error("canonical relations fail at the probes (max defect " +
                                std::to_string(r.relations.max_defect) + ")");
    ConstraintSet cs = m.constraints();
    r.hamiltonian_bracket.assign(m.residual_integrals.size(), 0.0);
    for (const auto& f : m.residual_integrals) r.names.push_back(f.name());
    for (const auto& x : probes) {
        DiracContext ctx = make_context(cs, x);
        for (std::size_t i = 0; i < m.residual_integrals.size(); ++i) {
            const auto& fi = m.residual_integrals[i];
            r.hamiltonian_bracket[i] = std::max(r.hamiltonian_bracket[i], std::abs(dirac_bracket(fi, m.h, ctx)));
            for (std::size_t j = i + 1; j < m.residual_integrals.size(); ++j)
                r.max_pairwise = std::max(r.max_pairwise, std::abs(dirac_bracket(fi, m.residual_integrals[j], ctx)));
        }
    }
    r.pass = r.max_pairwise < tau;
    for (double v : r.hamiltonian_bracket) r.pass = r.pass && v < tau;
    return r;
}

// ---------------------------------------------------------------------------
// Kustaanheimo-Stiefel model on R^8 = (z, w), quaternions as (re, i, j, k).

using Quat = std::array<double, 4>;

inline Quat qmul(const Quat& a, const Quat& b) {
    return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}
inline Quat qconj(const Quat& a) { return {a[0], -a[1], -a[2], -a[3]}; }
inline Quat quat_i() { return {0, 1, 0, 0}; }

// Poly form of a bilinear quaternion expression is assembled from the table.
inline Poly ks_bilinear_poly(int k = max_trunc_degree) {
    // Re(zbar i w): expand over basis quaternions
    Poly bl(8, k);
    for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) {
            Quat ea{0, 0, 0, 0}, eb{0, 0, 0, 0};
            ea[a] = 1;
            eb[b] = 1;
            const double c = qmul(qmul(qconj(ea), quat_i()), eb)[0];
            if (c != 0) bl.add_term(expo::unit(a) + expo::unit(4 + b), c);
        }
    return bl.normalize();
}

struct KsModel {
    ConstraintSet level;  // {BL = 0}
    SmoothMap bl;
    SmoothMap hopf;  // R^4 -> R^3 (imaginary part of z i zbar)
};

inline Vec hopf_eval(const Vec& z) {
    Quat q{z[0], z[1], z[2], z[3]};
    Quat h = qmul(qmul(q, quat_i()), qconj(q));
    return Vec{{h[1], h[2], h[3]}};
}

inline Mat hopf_jacobian(const Vec& z) {
    Mat j(3, 4);
    Quat q{z[0], z[1], z[2], z[3]};
    for (int b = 0; b < 4; ++b) {
        Quat e{0, 0, 0, 0};
        e[b] = 1;
        // d(z i zbar) = e i zbar + z i ebar
        Quat t1 = qmul(qmul(e, quat_i()), qconj(q));
        Quat t2 = qmul(qmul(q, quat_i()), qconj(e));
        for (int r = 0; r < 3; ++r) j(r, b) = t1[r + 1] + t2[r + 1];
    }
    return j;
}

inline KsModel ks_model() {
    KsModel m;
    m.bl = SmoothMap::from_poly(ks_bilinear_poly(), "BL");
    m.level.phi = {m.bl};
    m.hopf = SmoothMap::analytic(4, 3, hopf_eval, hopf_jacobian, nullptr, "hopf");
    return m;
}

}  // namespace mdirac
