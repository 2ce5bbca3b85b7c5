#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "poly.hpp"
#include "smooth_map.hpp"

namespace mdirac {

struct DiracTolerances {
    double tau_rank = 1e-8;
    double tau_sing = 1e-8;
    double tau_on_n = 1e-8;
    double tau_first = 1e-9;
};

enum class ConstraintClass { FirstClass, SecondClass, Degenerate };

inline const char* to_string(ConstraintClass c) {
    switch (c) {
        case ConstraintClass::FirstClass: return "first_class";
        case ConstraintClass::SecondClass: return "second_class";
        default: return "mixed_or_degenerate";
    }
}

// Scalar constraints phi_1..phi_k on ambient R^{2m}.  When every constraint
// carries a polynomial form it is stored in absolute ambient coordinates.
struct ConstraintSet {
    std::vector<SmoothMap> phi;

    int size() const { return static_cast<int>(phi.size()); }
    int ambient_dim() const { return phi.empty() ? 0 : phi.front().domain_dim(); }

    bool has_polys() const {
        for (const auto& f : phi)
            if (!f.has_polys()) return false;
        return !phi.empty();
    }

    Vec values(const Vec& x) const {
        Vec v(size());
        for (int i = 0; i < size(); ++i) v[i] = phi[i].value(x);
        return v;
    }

    // k x n, row i = grad phi_i
    Mat gradients(const Vec& x) const {
        Mat g(size(), x.size());
        for (int i = 0; i < size(); ++i) g.row(i) = phi[i].gradient(x).transpose();
        return g;
    }

    ConstraintSet joined(const ConstraintSet& o) const {
        ConstraintSet c = *this;
        c.phi.insert(c.phi.end(), o.phi.begin(), o.phi.end());
        return c;
    }
};

inline Mat constraint_matrix_from_gradients(const Mat& g) {
    Mat xj(g.cols(), g.rows());
    for (int i = 0; i < g.rows(); ++i) xj.col(i) = apply_j0(g.row(i).transpose());
    Mat c = g * xj;
    return 0.5 * (c - c.transpose());
}

inline Mat constraint_matrix(const ConstraintSet& cs, const Vec& x) {
    Mat g = cs.gradients(x);
    if (!g.allFinite()) throw std::domain_error("non-finite constraint gradient");
    return constraint_matrix_from_gradients(g);
}

inline double sigma_min(const Mat& m) {
    if (m.size() == 0) return 0.0;
    Eigen::JacobiSVD<Mat> svd(m);
    return svd.singularValues().minCoeff();
}

struct DiracContext {
    ConstraintSet cs;
    Vec point;
    Mat grads;   // k x n
    Mat c;       // k x k
    Mat c_inv;   // valid when SecondClass
    Mat xphi;    // n x k, columns X_{phi_j}
    double sigma_min_c = 0;
    double cond_c = std::numeric_limits<double>::infinity();
    ConstraintClass cls = ConstraintClass::Degenerate;

    bool second_class() const { return cls == ConstraintClass::SecondClass; }
};

inline ConstraintClass classify_matrix(const Mat& c, const DiracTolerances& tol) {
    if (c.size() == 0 || c.cwiseAbs().maxCoeff() < tol.tau_first) return ConstraintClass::FirstClass;
    Eigen::JacobiSVD<Mat> svd(c);
    const auto s = svd.singularValues();
    if (s.minCoeff() > tol.tau_sing * std::max(1.0, s.maxCoeff())) return ConstraintClass::SecondClass;
    return ConstraintClass::Degenerate;
}

inline DiracContext make_context(const ConstraintSet& cs, const Vec& x, const DiracTolerances& tol = {}) {
    DiracContext ctx;
    ctx.cs = cs;
    ctx.point = x;
    ctx.grads = cs.gradients(x);
    if (!ctx.grads.allFinite()) throw std::domain_error("non-finite constraint gradient");
    ctx.c = constraint_matrix_from_gradients(ctx.grads);
    ctx.xphi.resize(x.size(), cs.size());
    for (int i = 0; i < cs.size(); ++i) ctx.xphi.col(i) = apply_j0(ctx.grads.row(i).transpose());
    ctx.cls = classify_matrix(ctx.c, tol);
    if (cs.size() > 0) {
        Eigen::JacobiSVD<Mat> svd(ctx.c);
        const auto s = svd.singularValues();
        ctx.sigma_min_c = s.minCoeff();
        ctx.cond_c = s.minCoeff() > 0 ? s.maxCoeff() / s.minCoeff() : std::numeric_limits<double>::infinity();
    }
    if (ctx.second_class()) {
        Eigen::PartialPivLU<Mat> lu(ctx.c);
        ctx.c_inv = lu.inverse();
    }
    return ctx;
}

struct Classification {
    ConstraintClass cls;
    double max_abs_c = 0;
    double min_sigma = std::numeric_limits<double>::infinity();
};

inline Classification classify(const ConstraintSet& cs, const std::vector<Vec>& probes,
                               const DiracTolerances& tol = {}) {
    if (probes.empty()) throw std::invalid_argument("empty probe set");
    Classification out{ConstraintClass::FirstClass};
    bool all_first = true, all_second = true;
    for (const auto& x : probes) {
        if (cs.size() && cs.values(x).cwiseAbs().maxCoeff() >= tol.tau_on_n)
            throw std::invalid_argument("probe is not on the constraint set");
        Mat c = constraint_matrix(cs, x);
        const double mc = c.size() ? c.cwiseAbs().maxCoeff() : 0.0;
        out.max_abs_c = std::max(out.max_abs_c, mc);
        double smin = sigma_min(c);
        out.min_sigma = std::min(out.min_sigma, smin);
        ConstraintClass k = classify_matrix(c, tol);
        all_first = all_first && k == ConstraintClass::FirstClass;
        all_second = all_second && k == ConstraintClass::SecondClass;
    }
    out.cls = all_first ? ConstraintClass::FirstClass
              : all_second ? ConstraintClass::SecondClass
                           : ConstraintClass::Degenerate;
    return out;
}

inline void require_second_class(const DiracContext& ctx) {
    if (!ctx.second_class())
        throw std::domain_error("constraint matrix is singular (first-class or degenerate direction)");
}

// Coefficients c_j = sum_i {f,phi_i} C^{ij} of the Dirac correction.
inline Vec dirac_coefficients(const Vec& grad_f, const DiracContext& ctx) {
    require_second_class(ctx);
    Vec fphi = ctx.xphi.transpose() * grad_f;  // {f,phi_i} = grad f . J0 grad phi_i
    return ctx.c_inv.transpose() * fphi;
}

// P_N(X_f) = X_f - sum {f,phi_i} C^{ij} X_{phi_j}; acts on g as {g,f}_D.
inline Vec dirac_project_gradient(const Vec& grad_f, const DiracContext& ctx) {
    return apply_j0(grad_f) - ctx.xphi * dirac_coefficients(grad_f, ctx);
}

inline Vec dirac_project(const SmoothMap& f, const DiracContext& ctx) {
    return dirac_project_gradient(f.gradient(ctx.point), ctx);
}

inline double dirac_bracket_gradients(const Vec& gf, const Vec& gg, const DiracContext& ctx) {
    require_second_class(ctx);
    Vec fphi = ctx.xphi.transpose() * gf;        // {f,phi_i}
    Vec phig = -(ctx.xphi.transpose() * gg);     // {phi_j,g}
    return canonical_bracket(gf, gg) - fphi.dot(ctx.c_inv * phig);
}

inline double dirac_bracket(const SmoothMap& f, const SmoothMap& g, const DiracContext& ctx) {
    return dirac_bracket_gradients(f.gradient(ctx.point), g.gradient(ctx.point), ctx);
}

// Solves {H,G_k} = sum_s lambda_s {G_s,G_k}.
inline Vec moser_multipliers(const SmoothMap& h, const DiracContext& ctx) {
    require_second_class(ctx);
    Vec gh = h.gradient(ctx.point);
    Vec hk(ctx.cs.size());
    for (int k = 0; k < ctx.cs.size(); ++k) hk[k] = canonical_bracket(gh, ctx.grads.row(k).transpose());
    Eigen::PartialPivLU<Mat> lu(ctx.c.transpose());
    return lu.solve(hk);
}

inline Vec moser_field(const SmoothMap& h, const DiracContext& ctx) {
    Vec lam = moser_multipliers(h, ctx);
    return apply_j0(h.gradient(ctx.point)) - ctx.xphi * lam;
}

// Structure matrix Pi(y), y = x - x0, of the Dirac bracket as a truncated
// series: Pi = J0 + X C(y)^{-1} X^T with X the polynomial matrix of
// constraint fields and C^{-1} from the Neumann series around C(x0).
inline PoissonStructure<double> dirac_structure_series(const ConstraintSet& cs, const Vec& x0, int k) {
    if (!cs.has_polys()) throw std::invalid_argument("constraints lack polynomial forms");
    const int n = static_cast<int>(x0.size());
    if (n % 2) throw std::invalid_argument("odd ambient dimension");
    const int m = n / 2;
    auto shift = shifted_coordinates<double>(x0, k);
    Composer<double> comp(shift);
    std::vector<Poly> centred;
    for (const auto& f : cs.phi) centred.push_back(comp(f.polys().front().with_max_degree(k)));
    const int nc = cs.size();
    // X_{phi_i}: column i, component a
    PolyMat<double> xf(n, PolyVec<double>(nc, Poly(n, k)));
    for (int i = 0; i < nc; ++i)
        for (int a = 0; a < m; ++a) {
            xf[a][i] = centred[i].derivative(m + a);
            xf[m + a][i] = -centred[i].derivative(a);
        }
    PolyMat<double> c(nc, PolyVec<double>(nc, Poly(n, k)));
    for (int i = 0; i < nc; ++i)
        for (int j = 0; j < nc; ++j)
            if (i != j) c[i][j] = poisson_bracket(centred[i], centred[j], PoissonStructure<double>::canonical(m));
    Mat c0 = constant_part(c);
    if (classify_matrix(c0, {}) != ConstraintClass::SecondClass)
        throw std::domain_error("C(x0) is singular");
    PolyMat<double> cinv = neumann_inverse(c);
    PolyMat<double> xt(nc, PolyVec<double>(n, Poly(n, k)));
    for (int a = 0; a < n; ++a)
        for (int i = 0; i < nc; ++i) xt[i][a] = xf[a][i];
    PolyMat<double> corr = poly_matmul(poly_matmul(xf, cinv), xt);
    const Mat j0 = canonical_matrix(m);
    PolyMat<double> pi(n, PolyVec<double>(n, Poly(n, k)));
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
            Poly e = 0.5 * (corr[a][b] - corr[b][a]);
            if (j0(a, b) != 0) e += Poly::constant(n, k, j0(a, b));
            pi[a][b] = e;
        }
    return PoissonStructure<double>::structured(std::move(pi));
}

struct SingularityReport {
    Vec point;
    int rank_dphi = 0;
    double sigma_min_c = 0;
    double cond_c = std::numeric_limits<double>::infinity();
    std::vector<std::string> flags;

    bool has_flag(const std::string& f) const {
        for (const auto& s : flags)
            if (s == f) return true;
        return false;
    }
};

inline SingularityReport singularity_diagnostics(const ConstraintSet& cs, const Vec& x,
                                                 const DiracTolerances& tol = {}) {
    SingularityReport r;
    r.point = x;
    Mat g = cs.gradients(x);
    if (g.size() > 0 && g.allFinite()) {
        Eigen::JacobiSVD<Mat> svd(g);
        const auto s = svd.singularValues();
        const double thr = tol.tau_rank * std::max(1.0, s.maxCoeff());
        for (int i = 0; i < s.size(); ++i)
            if (s[i] > thr) ++r.rank_dphi;
        Mat c = constraint_matrix_from_gradients(g);
        Eigen::JacobiSVD<Mat> svc(c);
        const auto sc = svc.singularValues();
        r.sigma_min_c = sc.minCoeff();
        r.cond_c = sc.minCoeff() > 0 ? sc.maxCoeff() / sc.minCoeff() : std::numeric_limits<double>::infinity();
        if (classify_matrix(c, tol) != ConstraintClass::SecondClass) r.flags.push_back("not_second_class");
    } else {
        r.flags.push_back("not_second_class");
    }
    if (r.rank_dphi < cs.size()) r.flags.insert(r.flags.begin(), "not_regular_level");
    return r;
}

// Newton projection onto {phi = 0} along constraint gradients:
// solve phi(x + G^T lambda) = 0 with the Gram matrix G G^T.
struct ProjectionResult {
    Vec x;
    int iterations = 0;
    double residual = 0;
    bool converged = false;
};

inline ProjectionResult project_onto(const ConstraintSet& cs, const Vec& x, int max_iter = 10,
                                     double tol = 1e-12) {
    ProjectionResult r{x};
    if (cs.size() == 0) {
        r.converged = true;
        return r;
    }
    Mat g0 = cs.gradients(x);
    Vec lam = Vec::Zero(cs.size());
    for (int it = 0; it <= max_iter; ++it) {
        Vec y = x + g0.transpose() * lam;
        Vec c = cs.values(y);
        r.x = y;
        r.residual = c.cwiseAbs().maxCoeff();
        r.iterations = it;
        if (!std::isfinite(r.residual)) break;
        if (r.residual < tol) {
            r.converged = true;
            break;
        }
        if (it == max_iter) break;
        Mat jac = cs.gradients(y) * g0.transpose();
        lam -= jac.partialPivLu().solve(c);
    }
    return r;
}

// Seeded Gaussian perturbations of x0 (scale sigma) pulled back onto {phi = 0}.
inline std::vector<Vec> sample_probes(const ConstraintSet& cs, const Vec& x0, int count, std::uint64_t seed,
                                      double sigma = 1e-2, double tol = 1e-12) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<Vec> out;
    int attempts = 0;
    while (static_cast<int>(out.size()) < count) {
        if (++attempts > 20 * count + 20) throw std::runtime_error("probe projection keeps failing");
        Vec x = x0;
        for (int i = 0; i < x.size(); ++i) x[i] += sigma * nd(rng);
        ProjectionResult pr = project_onto(cs, x, 10, tol);
        if (pr.converged) out.push_back(pr.x);
    }
    return out;
}

}  // namespace mdirac
