#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "dirac.hpp"
#include "poly.hpp"
#include "smooth_map.hpp"

namespace mdirac {

inline constexpr double tau_drift = 1e-7;
inline constexpr double tau_stat = 1e-8;

// Abelian action by linear generators A_i on Q = R^m, cotangent lifted to
// T*Q = R^{2m} as (A q, -A^T p).
struct GroupAction {
    std::vector<Mat> generators;
    bool abelian = true;

    int group_dim() const { return static_cast<int>(generators.size()); }
    int config_dim() const { return generators.empty() ? 0 : static_cast<int>(generators.front().rows()); }

    Mat lifted(int i) const {
        const Mat& a = generators.at(i);
        const long m = a.rows();
        Mat l = Mat::Zero(2 * m, 2 * m);
        l.topLeftCorner(m, m) = a;
        l.bottomRightCorner(m, m) = -a.transpose();
        return l;
    }

    Vec config_field(int i, const Vec& q) const { return generators.at(i) * q; }
    Vec phase_field(int i, const Vec& x) const { return lifted(i) * x; }

    double max_commutator() const {
        double m = 0;
        for (int i = 0; i < group_dim(); ++i)
            for (int j = 0; j < group_dim(); ++j) {
                Mat c = generators[i] * generators[j] - generators[j] * generators[i];
                m = std::max(m, c.cwiseAbs().maxCoeff());
            }
        return m;
    }

    // exp(t A_i) lifted to phase space
    Mat flow(int i, double t) const {
        Mat l = lifted(i) * t;
        return l.exp();
    }
};

inline Vec momentum_map(const GroupAction& act, const Vec& x) {
    const int m = act.config_dim();
    if (x.size() != 2 * m) throw std::invalid_argument("phase point dimension mismatch");
    Vec j(act.group_dim());
    for (int i = 0; i < act.group_dim(); ++i) j[i] = x.tail(m).dot(act.generators[i] * x.head(m));
    return j;
}

struct MomentumData {
    std::vector<SmoothMap> j_components;
    Vec mu;
    std::vector<SmoothMap> phi;  // Phi_i = J_i - mu_i
};

inline Poly momentum_poly(const Mat& a, int k = max_trunc_degree) {
    const int m = static_cast<int>(a.rows());
    Poly j(2 * m, k);
    for (int r = 0; r < m; ++r)
        for (int c = 0; c < m; ++c)
            if (a(r, c) != 0) j.add_term(expo::unit(m + r) + expo::unit(c), a(r, c));
    return j.normalize();
}

inline MomentumData make_momentum(const GroupAction& act, const Vec& mu) {
    if (mu.size() != act.group_dim()) throw std::invalid_argument("mu dimension mismatch");
    MomentumData md;
    md.mu = mu;
    for (int i = 0; i < act.group_dim(); ++i) {
        Poly j = momentum_poly(act.generators[i]);
        md.j_components.push_back(SmoothMap::from_poly(j, "J" + std::to_string(i + 1)));
        Poly phi = j - Poly::constant(j.n_vars(), j.max_degree(), mu[i]);
        md.phi.push_back(SmoothMap::from_poly(phi, "Phi" + std::to_string(i + 1)));
    }
    return md;
}

struct SliceModel {
    Vec x0;
    std::vector<SmoothMap> upsilon;
    Mat w;  // n x l, columns w_j
    ConstraintSet base;
    ConstraintSet full;  // base, then Phi, then Upsilon
    Mat b;               // b(j,i) = {Upsilon_j, Phi_i}(x0)
    ConstraintClass full_class = ConstraintClass::Degenerate;

    int n_base() const { return base.size(); }
    int ell() const { return static_cast<int>(upsilon.size()); }
};

inline SmoothMap affine_constraint(const Vec& w, const Vec& x0, std::string name) {
    const int n = static_cast<int>(w.size());
    Poly p(n, max_trunc_degree);
    for (int a = 0; a < n; ++a)
        if (w[a] != 0) p.add_term(expo::unit(a), w[a]);
    p.add_term(0, -w.dot(x0));
    p.normalize();
    return SmoothMap::from_poly(p, std::move(name));
}

// w defaults to the normalised generator directions X_{Phi_j}(x0).
inline SliceModel build_slice(const ConstraintSet& base, const MomentumData& mom, const Vec& x0,
                              std::optional<Mat> w_override = std::nullopt, const DiracTolerances& tol = {}) {
    if (base.size() && base.values(x0).cwiseAbs().maxCoeff() >= tol.tau_on_n)
        throw std::invalid_argument("x0 violates the base constraints");
    const int ell = static_cast<int>(mom.phi.size());
    Mat xi(x0.size(), ell);
    for (int i = 0; i < ell; ++i) {
        if (std::abs(mom.phi[i].value(x0)) >= tol.tau_on_n)
            throw std::invalid_argument("x0 is not on the momentum level");
        xi.col(i) = apply_j0(mom.phi[i].gradient(x0));
    }
    Mat gram = xi.transpose() * xi;
    const double gnorm = gram.size() ? gram.cwiseAbs().maxCoeff() : 0.0;
    if (ell == 0 || gnorm < tol.tau_sing || sigma_min(gram) <= tol.tau_sing * std::max(1.0, gnorm))
        throw std::domain_error("generator fields dependent at x0 (action not locally free; fixed point)");
    SliceModel s;
    s.x0 = x0;
    s.base = base;
    if (w_override) {
        if (w_override->rows() != x0.size() || w_override->cols() != ell)
            throw std::invalid_argument("slice override has the wrong shape");
        s.w = *w_override;
    } else {
        s.w = xi;
    }
    for (int j = 0; j < ell; ++j) s.w.col(j).normalize();
    s.b = s.w.transpose() * xi;
    if (sigma_min(s.b) <= tol.tau_sing)
        throw std::domain_error("slice cross-block B is singular at x0");
    for (int j = 0; j < ell; ++j)
        s.upsilon.push_back(affine_constraint(s.w.col(j), x0, "Upsilon" + std::to_string(j + 1)));
    s.full = base;
    for (const auto& f : mom.phi) s.full.phi.push_back(f);
    for (const auto& u : s.upsilon) s.full.phi.push_back(u);
    s.full_class = classify_matrix(constraint_matrix(s.full, x0), tol);
    return s;
}

// Field of F for the bracket on M: the base-constraint Dirac field, or the
// canonical field when there are no base constraints.
inline Vec base_field(const SmoothMap& f, const ConstraintSet& base, const Vec& x) {
    if (base.size() == 0) return apply_j0(f.gradient(x));
    return dirac_project(f, make_context(base, x));
}

struct DriftReport {
    std::vector<double> residuals;  // per probe, max over j
    double max_residual = 0;
    double hessian_cross_block = 0;
    double field_at_x0 = 0;
    bool is_drift_free = false;
    double tau = tau_drift;
};

// {Upsilon_j, F}_M = w_j . X_F^M.  The cross-block reported alongside is
// max |w_j . D(X_F^M)(x0) e| over an orthonormal basis e of T_{x0}C, with the
// field derivative taken by the fd oracle.
inline DriftReport check_drift_free(const SmoothMap& f, const SliceModel& s, const std::vector<Vec>& probes,
                                    const DiracTolerances& tol = {}, double tau = tau_drift) {
    DriftReport r;
    r.tau = tau;
    for (const auto& x : probes) {
        if (s.full.values(x).cwiseAbs().maxCoeff() >= tol.tau_on_n)
            throw std::invalid_argument("probe is off the slice constraint set");
        Vec xf = base_field(f, s.base, x);
        double m = (s.w.transpose() * xf).cwiseAbs().maxCoeff();
        r.residuals.push_back(m);
        r.max_residual = std::max(r.max_residual, m);
    }
    SmoothMap field = SmoothMap::analytic(
        static_cast<int>(s.x0.size()), static_cast<int>(s.x0.size()),
        [&](const Vec& x) { return base_field(f, s.base, x); }, [](const Vec&) { return Mat(); });
    Mat g = s.full.gradients(s.x0);
    Eigen::FullPivLU<Mat> lu(g);
    Mat ker = lu.kernel();
    Eigen::HouseholderQR<Mat> qr(ker);
    Mat basis = qr.householderQ() * Mat::Identity(ker.rows(), ker.cols());
    const double h = 1e-6;
    for (int c = 0; c < basis.cols(); ++c) {
        Vec d = (field.eval(s.x0 + h * basis.col(c)) - field.eval(s.x0 - h * basis.col(c))) / (2 * h);
        r.hessian_cross_block = std::max(r.hessian_cross_block, (s.w.transpose() * d).cwiseAbs().maxCoeff());
    }
    r.field_at_x0 = field.eval(s.x0).norm();
    r.is_drift_free = r.max_residual < tau && !probes.empty();
    return r;
}

// <I(q) xi, eta> = g_q(xi_Q(q), eta_Q(q)) with xi_Q(q) = A_xi q.
struct LockedInertia {
    std::function<Mat(const Vec&)> metric;
    GroupAction action;

    Mat value(const Vec& q) const {
        const int l = action.group_dim();
        Mat g = metric(q);
        Mat xi(q.size(), l);
        for (int i = 0; i < l; ++i) xi.col(i) = action.config_field(i, q);
        Mat out = xi.transpose() * g * xi;
        return 0.5 * (out + out.transpose());
    }
};

inline Mat locked_inertia(const LockedInertia& li, const Vec& q) { return li.value(q); }

struct StationarityReport {
    double max_directional_derivative = 0;
    std::vector<double> per_direction;
    bool stationary = false;
};

inline StationarityReport stationarity_test(const LockedInertia& li, const Vec& q0, const Mat& slice_dirs,
                                            double tau = tau_stat) {
    StationarityReport r;
    const double h = 1e-5;
    for (int d = 0; d < slice_dirs.cols(); ++d) {
        Vec dq = slice_dirs.col(d);
        Mat der = (li.value(q0 + h * dq) - li.value(q0 - h * dq)) / (2 * h);
        const double m = der.cwiseAbs().maxCoeff();
        r.per_direction.push_back(m);
        r.max_directional_derivative = std::max(r.max_directional_derivative, m);
    }
    r.stationary = r.max_directional_derivative < tau;
    return r;
}

}  // namespace mdirac
