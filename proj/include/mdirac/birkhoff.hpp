#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dirac.hpp"
#include "poly.hpp"
#include "smooth_map.hpp"
#include "symmetry.hpp"

namespace mdirac {

inline constexpr double tau_twin = 1e-8;
inline constexpr double tau_nf = 1e-9;
inline constexpr double tau_res = 1e-9;

using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using cplx = std::complex<double>;

// omega(a, b) = a^T J0 b
inline double omega(const Vec& a, const Vec& b) { return a.dot(apply_j0(b)); }

struct DarbouxFrame {
    Vec x0;
    Mat basis;  // n x 2d, columns (Q_1..Q_d, P_1..P_d)
    int d = 0;
};

inline DarbouxFrame darboux_frame_from_gradients(const Vec& x0, const Mat& grads) {
    const int n = static_cast<int>(x0.size());
    Mat ker;
    if (grads.rows() == 0) {
        ker = Mat::Identity(n, n);
    } else {
        Eigen::JacobiSVD<Mat> svd(grads, Eigen::ComputeFullV);
        const auto s = svd.singularValues();
        int rank = 0;
        for (int i = 0; i < s.size(); ++i)
            if (s[i] > 1e-10 * std::max(1.0, s[0])) ++rank;
        ker = svd.matrixV().rightCols(n - rank);
    }
    if (ker.cols() % 2) throw std::domain_error("odd-dimensional constraint tangent space");
    std::vector<Vec> pool;
    for (int c = 0; c < ker.cols(); ++c) pool.push_back(ker.col(c));
    const int d = static_cast<int>(pool.size()) / 2;
    Mat qs(n, d), ps(n, d);
    for (int j = 0; j < d; ++j) {
        // pivot: the pair with the largest symplectic product
        std::size_t bi = 0, bk = 1;
        double best = -1;
        for (std::size_t i = 0; i < pool.size(); ++i)
            for (std::size_t k = i + 1; k < pool.size(); ++k) {
                double w = std::abs(omega(pool[i], pool[k]));
                if (w > best) best = w, bi = i, bk = k;
            }
        if (best < 1e-10) throw std::logic_error("restricted symplectic form is degenerate on the kernel");
        Vec e = pool[bi], f = pool[bk];
        double w = omega(e, f);
        f /= w;
        // balance the pair so neither vector dominates
        const double sc = std::sqrt(f.norm() / e.norm());
        e *= sc;
        f /= sc;
        qs.col(j) = e;
        ps.col(j) = f;
        std::vector<Vec> rest;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            if (i == bi || i == bk) continue;
            Vec v = pool[i];
            v = v - omega(v, f) * e + omega(v, e) * f;
            rest.push_back(v);
        }
        // re-orthonormalise the remainder (spans are unchanged)
        if (!rest.empty()) {
            Mat r(n, rest.size());
            for (std::size_t i = 0; i < rest.size(); ++i) r.col(i) = rest[i];
            Eigen::HouseholderQR<Mat> qr(r);
            Mat qm = qr.householderQ() * Mat::Identity(n, r.cols());
            rest.clear();
            for (int i = 0; i < qm.cols(); ++i) rest.push_back(qm.col(i));
        }
        pool = rest;
    }
    DarbouxFrame fr;
    fr.x0 = x0;
    fr.d = d;
    fr.basis.resize(n, 2 * d);
    fr.basis << qs, ps;
    return fr;
}

inline DarbouxFrame darboux_frame(const SliceModel& s) {
    Mat c = constraint_matrix(s.full, s.x0);
    if (classify_matrix(c, {}) != ConstraintClass::SecondClass)
        throw std::domain_error("slice constraints are not second-class at x0");
    return darboux_frame_from_gradients(s.x0, s.full.gradients(s.x0));
}

inline DarbouxFrame darboux_frame(const ConstraintSet& cs, const Vec& x0) {
    return darboux_frame_from_gradients(x0, cs.gradients(x0));
}

// x = x0 + map(u); map = V u + h(u), h in span of grad phi_i(x0).
struct ChartSeries {
    Vec x0;
    std::vector<Poly> map;
    Mat v;
    double max_residual = 0;  // constraint coefficients through degree K
    int k = 0;
};

inline std::vector<Poly> centred_constraints(const ConstraintSet& cs, const Vec& x0, int k) {
    if (!cs.has_polys()) throw std::invalid_argument("constraints lack polynomial forms");
    Composer<double> comp(shifted_coordinates<double>(x0, k));
    std::vector<Poly> out;
    for (const auto& f : cs.phi) out.push_back(comp(f.polys().front().with_max_degree(k)));
    return out;
}

inline ChartSeries chart_series(const ConstraintSet& cs, const DarbouxFrame& fr, int k) {
    const int n = static_cast<int>(fr.x0.size());
    const int nu = 2 * fr.d;
    auto phic = centred_constraints(cs, fr.x0, k);
    Mat g = cs.gradients(fr.x0);  // k_c x n
    Mat gram = g * g.transpose();
    Eigen::FullPivLU<Mat> lu(gram);
    if (cs.size() && !lu.isInvertible()) throw std::domain_error("constraint Gram matrix is singular");
    ChartSeries ch;
    ch.x0 = fr.x0;
    ch.v = fr.basis;
    ch.k = k;
    ch.map = linear_coordinates<double>(fr.basis, k);
    for (int deg = 2; deg <= k && cs.size(); ++deg) {
        Composer<double> comp(ch.map);
        Vec dummy;
        std::vector<Poly> r;
        for (const auto& p : phic) r.push_back(comp(p).homogeneous(deg));
        // coefficients of each degree-deg monomial solve Gram * c = -r
        std::map<std::uint64_t, Vec> rhs;
        for (int i = 0; i < cs.size(); ++i)
            for (const auto& t : r[i].terms()) {
                auto& v = rhs[t.exp];
                if (v.size() == 0) v = Vec::Zero(cs.size());
                v[i] = t.coef;
            }
        for (const auto& [e, v] : rhs) {
            Vec c = -lu.solve(v);
            Vec dx = g.transpose() * c;
            for (int a = 0; a < n; ++a)
                if (dx[a] != 0) ch.map[a].add_term(e, dx[a]);
        }
        for (auto& p : ch.map) p.normalize();
    }
    Composer<double> comp(ch.map);
    for (const auto& p : phic) ch.max_residual = std::max(ch.max_residual, comp(p).max_abs_coef());
    (void)nu;
    return ch;
}

// ---------------------------------------------------------------------------
// Linear normalisation

struct QuadraticData {
    Mat s;
    Vec eta;
    Mat t;  // symplectic; T^T S T = diag(eta, eta)
};

inline Mat quadratic_matrix(const Poly& h) {
    const int n = h.n_vars();
    Mat s = Mat::Zero(n, n);
    for (const auto& t : h.terms()) {
        if (expo::degree(t.exp) != 2) continue;
        std::vector<int> idx;
        for (int i = 0; i < n; ++i)
            for (int r = 0; r < expo::get(t.exp, i); ++r) idx.push_back(i);
        if (idx[0] == idx[1])
            s(idx[0], idx[0]) += 2 * t.coef;
        else
            s(idx[0], idx[1]) += t.coef, s(idx[1], idx[0]) += t.coef;
    }
    return s;
}

// Semisimple elliptic case.  Repeated frequencies are split inside their
// eigenspace by diagonalising the Hermitian form -(i/2) v^H J0 v, whose sign
// on each vector is the Krein signature and becomes the sign of eta.
inline QuadraticData linear_normalize(const Mat& s_in) {
    const int n = static_cast<int>(s_in.rows());
    if (n % 2 || s_in.cols() != n) throw std::invalid_argument("S must be square of even size");
    const int d = n / 2;
    Mat s = 0.5 * (s_in + s_in.transpose());
    Mat j0 = canonical_matrix(d);
    Mat a = j0 * s;
    const double anorm = std::max(1e-300, a.norm());
    Eigen::EigenSolver<Mat> es(a);
    CVec ev = es.eigenvalues();
    std::vector<double> om;
    for (int i = 0; i < n; ++i) {
        if (std::abs(ev[i].real()) > 1e-7 * anorm)
            throw std::domain_error("hyperbolic quadratic part (out of scope)");
        if (std::abs(ev[i]) < 1e-9 * anorm) throw std::domain_error("zero eigenvalue in the quadratic part");
        if (ev[i].imag() > 0) om.push_back(ev[i].imag());
    }
    if (static_cast<int>(om.size()) != d) throw std::domain_error("eigenvalues are not in +-i omega pairs");
    std::sort(om.begin(), om.end());
    std::vector<std::vector<double>> clusters;
    for (double w : om) {
        if (!clusters.empty() && std::abs(w - clusters.back().back()) < 1e-6 * std::max(1.0, w))
            clusters.back().push_back(w);
        else
            clusters.push_back({w});
    }
    std::vector<std::pair<double, std::pair<Vec, Vec>>> modes;  // signed eta, (t_Q, t_P)
    for (const auto& cl : clusters) {
        double w = 0;
        for (double x : cl) w += x;
        w /= cl.size();
        const int r = static_cast<int>(cl.size());
        CMat m = a.cast<cplx>() - cplx(0, w) * CMat::Identity(n, n);
        Eigen::JacobiSVD<CMat> svd(m, Eigen::ComputeFullV);
        const auto sv = svd.singularValues();
        if (sv[n - r] > 1e-6 * anorm) throw std::domain_error("non-semisimple quadratic part");
        CMat vs = svd.matrixV().rightCols(r);
        CMat k = cplx(0, -0.5) * (vs.adjoint() * j0.cast<cplx>() * vs);
        k = 0.5 * (k + k.adjoint()).eval();
        Eigen::SelfAdjointEigenSolver<CMat> he(k);
        CMat u = vs * he.eigenvectors();
        for (int c = 0; c < r; ++c) {
            const double kappa = he.eigenvalues()[c];
            if (std::abs(kappa) < 1e-12) throw std::domain_error("degenerate Krein form");
            CVec v = u.col(c) / std::sqrt(std::abs(kappa));
            // fix the free phase: largest component real and positive
            int im = 0;
            for (int i = 1; i < n; ++i)
                if (std::abs(v[i]) > std::abs(v[im]) + 1e-12) im = i;
            v *= std::conj(v[im]) / std::abs(v[im]);
            Vec tq = v.real(), tp = v.imag();
            double eta = w;
            if (kappa < 0) {
                tp = -tp;
                eta = -w;
            }
            modes.push_back({eta, {tq, tp}});
        }
    }
    std::stable_sort(modes.begin(), modes.end(),
                     [](const auto& x, const auto& y) { return std::abs(x.first) < std::abs(y.first); });
    QuadraticData qd;
    qd.s = s;
    qd.eta.resize(d);
    qd.t.resize(n, n);
    for (int j = 0; j < d; ++j) {
        qd.eta[j] = modes[j].first;
        qd.t.col(j) = modes[j].second.first;
        qd.t.col(d + j) = modes[j].second.second;
    }
    return qd;
}

inline Poly normal_quadratic(const Vec& eta, int k) {
    const int d = static_cast<int>(eta.size());
    Poly h(2 * d, k);
    for (int j = 0; j < d; ++j) {
        h.add_term(2 * expo::unit(j), 0.5 * eta[j]);
        h.add_term(2 * expo::unit(d + j), 0.5 * eta[j]);
    }
    return h.normalize();
}

// ---------------------------------------------------------------------------
// Homological operator and resonant split

inline std::vector<std::uint64_t> monomial_basis(int n, int k) {
    std::vector<std::uint64_t> out;
    std::vector<int> e(n, 0);
    std::function<void(int, int)> rec = [&](int i, int left) {
        if (i == n - 1) {
            e[i] = left;
            out.push_back(expo::pack(e));
            return;
        }
        for (int a = left; a >= 0; --a) {
            e[i] = a;
            rec(i + 1, left - a);
        }
    };
    rec(0, k);
    std::sort(out.begin(), out.end(), expo::grlex_less);
    return out;
}

struct HomologicalOperator {
    Vec eta;
    int degree = 0;
    std::vector<std::uint64_t> basis;
    Mat l;  // column c = coefficients of {H2, basis[c]}
};

inline HomologicalOperator homological_matrix(const QuadraticData& q, int k) {
    const int d = static_cast<int>(q.eta.size());
    HomologicalOperator op;
    op.eta = q.eta;
    op.degree = k;
    op.basis = monomial_basis(2 * d, k);
    std::map<std::uint64_t, int> index;
    for (std::size_t i = 0; i < op.basis.size(); ++i) index[op.basis[i]] = static_cast<int>(i);
    const int K = std::max(k, 2);
    Poly h2 = normal_quadratic(q.eta, K);
    auto ps = PoissonStructure<double>::canonical(d);
    op.l = Mat::Zero(op.basis.size(), op.basis.size());
    for (std::size_t c = 0; c < op.basis.size(); ++c) {
        Poly m(2 * d, K);
        m.add_term(op.basis[c], 1.0);
        m.normalize();
        Poly b = poisson_bracket(h2, m, ps);
        for (const auto& t : b.terms()) op.l(index.at(t.exp), c) = t.coef;
    }
    return op;
}

// Q_j = (z_j + zb_j)/sqrt2, P_j = i (z_j - zb_j)/sqrt2, variables (z, zb).
inline CPoly to_complex(const Poly& f, int d) {
    const double r = 1.0 / std::sqrt(2.0);
    CMat m = CMat::Zero(2 * d, 2 * d);
    for (int j = 0; j < d; ++j) {
        m(j, j) = r;
        m(j, d + j) = r;
        m(d + j, j) = cplx(0, r);
        m(d + j, d + j) = cplx(0, -r);
    }
    CPoly fc = f.map_coefficients<cplx>([](double c) { return cplx(c, 0); });
    return compose(fc, linear_coordinates<cplx>(m, f.max_degree()));
}

// z_j = (Q_j - i P_j)/sqrt2, zb_j = (Q_j + i P_j)/sqrt2.
inline Poly to_real(const CPoly& g, int d, double* max_imag = nullptr) {
    const double r = 1.0 / std::sqrt(2.0);
    CMat m = CMat::Zero(2 * d, 2 * d);
    for (int j = 0; j < d; ++j) {
        m(j, j) = r;
        m(j, d + j) = cplx(0, -r);
        m(d + j, j) = r;
        m(d + j, d + j) = cplx(0, r);
    }
    CPoly f = compose(g, linear_coordinates<cplx>(m, g.max_degree()));
    double mi = 0;
    for (const auto& t : f.terms()) mi = std::max(mi, std::abs(t.coef.imag()));
    if (max_imag) *max_imag = mi;
    return f.map_coefficients<double>([](cplx c) { return c.real(); });
}

inline cplx homological_eigenvalue(std::uint64_t e, const Vec& eta) {
    const int d = static_cast<int>(eta.size());
    double s = 0;
    for (int j = 0; j < d; ++j) s += eta[j] * (expo::get(e, d + j) - expo::get(e, j));
    return cplx(0, s);
}

struct SplitResult {
    Poly res, nonres, gen;
    double min_nonzero_eigenvalue = std::numeric_limits<double>::infinity();
    bool near_resonance = false;
    double max_imag = 0;
};

// H_k = H_res + H_nr with H_res in ker L; gen solves L gen = -H_nr (so that
// exp(ad_gen) with ad_gen = {., gen} removes H_nr) and has no kernel part.
inline SplitResult split_resonant(const Poly& hk, const HomologicalOperator& l, double tau = tau_res) {
    const int d = static_cast<int>(l.eta.size());
    if (hk.n_vars() != 2 * d) throw std::invalid_argument("variable-count mismatch");
    for (const auto& t : hk.terms())
        if (expo::degree(t.exp) != l.degree) throw std::invalid_argument("H_k is not homogeneous of degree k");
    CPoly hc = to_complex(hk, d);
    CPoly res(2 * d, hk.max_degree()), gen(2 * d, hk.max_degree());
    SplitResult out;
    for (const auto& t : hc.terms()) {
        cplx lam = homological_eigenvalue(t.exp, l.eta);
        const double al = std::abs(lam);
        if (al < tau) {
            res.add_term(t.exp, t.coef);
        } else {
            out.min_nonzero_eigenvalue = std::min(out.min_nonzero_eigenvalue, al);
            if (al < 10 * tau) out.near_resonance = true;
            gen.add_term(t.exp, -t.coef / lam);
        }
    }
    res.normalize();
    gen.normalize();
    double mi1 = 0, mi2 = 0;
    out.res = to_real(res, d, &mi1);
    out.gen = to_real(gen, d, &mi2);
    out.nonres = hk - out.res;
    out.max_imag = std::max(mi1, mi2);
    return out;
}

// ---------------------------------------------------------------------------
// Normal form

struct NormalFormResult {
    int k = 0;
    QuadraticData h2;
    std::map<int, Poly> resonant_terms;
    std::map<int, Poly> generators;
    std::vector<Poly> composed_transform;  // w -> Z(w)
    std::map<int, double> residual_report;  // max coef of {H_k^NF, H2}
    std::map<int, double> min_divisor;
    std::vector<std::string> warnings;
    Poly h_nf;        // full normalised Hamiltonian in w
    Poly h_start;     // input expressed in w = T^{-1} u
    PoissonStructure<double> ps_w;
};

// Structure matrix in new linear coordinates u = T w: T^{-1} Pi(T w) T^{-T}.
inline PolyMat<double> transform_structure(const PolyMat<double>& pi, const Mat& t, int k) {
    const int n = static_cast<int>(t.rows());
    Mat ti = t.inverse();
    Composer<double> comp(linear_coordinates<double>(t, k));
    PolyMat<double> pu(n, PolyVec<double>(n, Poly(n, k)));
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) pu[a][b] = comp(pi[a][b].with_max_degree(k));
    PolyMat<double> out(n, PolyVec<double>(n, Poly(n, k)));
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
            Poly e(n, k);
            for (int c = 0; c < n; ++c) {
                if (ti(a, c) == 0) continue;
                for (int dd = 0; dd < n; ++dd)
                    if (ti(b, dd) != 0 && !pu[c][dd].is_zero()) e += (ti(a, c) * ti(b, dd)) * pu[c][dd];
            }
            out[a][b] = e;
        }
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
            if (a < b) {
                Poly e = 0.5 * (out[a][b] - out[b][a]);
                out[a][b] = e;
                out[b][a] = -e;
            } else if (a == b) {
                out[a][a] = Poly(n, k);
            }
    return out;
}

inline NormalFormResult birkhoff_normal_form(const Poly& h, const PoissonStructure<double>& ps, int k) {
    const int n = h.n_vars();
    if (n % 2) throw std::invalid_argument("odd number of slice variables");
    const int d = n / 2;
    if (h.homogeneous(1).max_abs_coef() > 1e-9) throw std::domain_error("dH(0) != 0: not an equilibrium");
    if (ps.kind == PoissonStructure<double>::Kind::Structured) {
        Mat c0 = constant_part(ps.pi);
        if ((c0 - canonical_matrix(d)).cwiseAbs().maxCoeff() > 1e-9)
            throw std::domain_error("structure is not canonical at the origin");
    }
    NormalFormResult r;
    r.k = k;
    r.h2 = linear_normalize(quadratic_matrix(h));
    Composer<double> lin(linear_coordinates<double>(r.h2.t, k));
    Poly hw = lin(h.with_max_degree(k));
    r.h_start = hw;
    r.ps_w = ps.kind == PoissonStructure<double>::Kind::Canonical
                 ? PoissonStructure<double>::canonical(d)
                 : PoissonStructure<double>::structured(transform_structure(ps.pi, r.h2.t, k));
    auto canon = PoissonStructure<double>::canonical(d);
    for (int a = 0; a < n; ++a) r.composed_transform.push_back(Poly::variable(n, k, a));
    Poly h2 = hw.homogeneous(2);
    Poly cur = hw;
    for (int deg = 3; deg <= k; ++deg) {
        HomologicalOperator op = homological_matrix(r.h2, deg);
        SplitResult sp = split_resonant(cur.homogeneous(deg), op);
        if (sp.near_resonance)
            r.warnings.push_back("near resonance at degree " + std::to_string(deg) +
                                 ", min |eigenvalue| = " + std::to_string(sp.min_nonzero_eigenvalue));
        r.min_divisor[deg] = sp.min_nonzero_eigenvalue;
        r.generators[deg] = sp.gen;
        if (!sp.gen.is_zero()) {
            cur = lie_transform(cur, sp.gen, r.ps_w);
            for (auto& z : r.composed_transform) z = lie_transform(z, sp.gen, r.ps_w);
        }
        r.resonant_terms[deg] = cur.homogeneous(deg);
    }
    r.h_nf = cur;
    for (int deg = 3; deg <= k; ++deg)
        r.residual_report[deg] = poisson_bracket(r.resonant_terms[deg], h2, canon).max_abs_coef();
    return r;
}

// max over a,b of coefficients of {Z_a, Z_b} - J through degree kmax
inline double symplectic_defect(const std::vector<Poly>& z, int kmax) {
    const int n = static_cast<int>(z.size());
    const int d = n / 2;
    auto canon = PoissonStructure<double>::canonical(d);
    Mat j0 = canonical_matrix(d);
    double m = 0;
    for (int a = 0; a < n; ++a)
        for (int b = a + 1; b < n; ++b) {
            Poly br = poisson_bracket(z[a], z[b], canon).truncated(kmax);
            br -= Poly::constant(br.n_vars(), br.max_degree(), j0(a, b));
            m = std::max(m, br.max_abs_coef());
        }
    return m;
}

// H_start o Z against H2 + sum of resonant terms, through degree K.
inline double conjugation_residual(const NormalFormResult& r) {
    Poly lhs = compose(r.h_start, r.composed_transform);
    Poly rhs = r.h_start.homogeneous(0) + r.h_start.homogeneous(2);
    for (const auto& [deg, p] : r.resonant_terms) rhs += p;
    return max_coef_diff(lhs.truncated(r.k), rhs.truncated(r.k));
}

// ---------------------------------------------------------------------------
// Chart geometry: induced form, restricted Dirac structure, Darboux correction

// W(u) = Dchi^T J0 Dchi for x = x0 + chi(u).
inline PolyMat<double> induced_form(const std::vector<Poly>& chi) {
    const int n = static_cast<int>(chi.size()), m = n / 2;
    const int nu = chi.front().n_vars();
    const int k = chi.front().max_degree();
    PolyMat<double> dchi(n, PolyVec<double>(nu));
    for (int a = 0; a < n; ++a)
        for (int i = 0; i < nu; ++i) dchi[a][i] = chi[a].derivative(i);
    PolyMat<double> w(nu, PolyVec<double>(nu, Poly(nu, k)));
    for (int i = 0; i < nu; ++i)
        for (int j = i + 1; j < nu; ++j) {
            Poly e(nu, k);
            for (int a = 0; a < m; ++a) {
                e += dchi[a][i] * dchi[m + a][j];
                e -= dchi[m + a][i] * dchi[a][j];
            }
            w[i][j] = e;
            w[j][i] = -e;
        }
    return w;
}

// Pi_N(u) = L Pi_D(chi(u)) L^T with L = (V^T V)^{-1} V^T, the linear
// extension of the chart coordinates (L annihilates the gradient complement).
inline PolyMat<double> restrict_structure(const PoissonStructure<double>& pid, const ChartSeries& ch) {
    const int n = static_cast<int>(ch.x0.size());
    const int nu = static_cast<int>(ch.v.cols());
    const int k = ch.k;
    Mat l = (ch.v.transpose() * ch.v).ldlt().solve(ch.v.transpose());
    PolyMat<double> mid(nu, PolyVec<double>(nu, Poly(n, k)));
    for (int i = 0; i < nu; ++i)
        for (int j = i + 1; j < nu; ++j) {
            Poly e(n, k);
            for (int a = 0; a < n; ++a) {
                if (l(i, a) == 0) continue;
                for (int b = 0; b < n; ++b)
                    if (l(j, b) != 0 && !pid.pi[a][b].is_zero()) e += (l(i, a) * l(j, b)) * pid.pi[a][b].with_max_degree(k);
            }
            mid[i][j] = e;
        }
    Composer<double> comp(ch.map);
    PolyMat<double> out(nu, PolyVec<double>(nu, Poly(nu, k)));
    for (int i = 0; i < nu; ++i)
        for (int j = i + 1; j < nu; ++j) {
            out[i][j] = comp(mid[i][j]);
            out[j][i] = -out[i][j];
        }
    return out;
}

// W = -Pi^{-1} (form matrix of a nondegenerate Poisson matrix).
inline PolyMat<double> structure_to_form(const PolyMat<double>& pi) {
    PolyMat<double> inv = neumann_inverse(pi);
    for (auto& row : inv)
        for (auto& e : row) e *= -1.0;
    return inv;
}

inline PolyMat<double> pullback_form(const PolyMat<double>& w, const std::vector<Poly>& psi) {
    const int n = static_cast<int>(psi.size());
    const int k = psi.front().max_degree();
    Composer<double> comp(psi);
    PolyMat<double> wp(n, PolyVec<double>(n, Poly(n, k)));
    for (int a = 0; a < n; ++a)
        for (int b = a + 1; b < n; ++b) {
            wp[a][b] = comp(w[a][b].with_max_degree(k));
            wp[b][a] = -wp[a][b];
        }
    PolyMat<double> dp(n, PolyVec<double>(n));
    for (int a = 0; a < n; ++a)
        for (int i = 0; i < n; ++i) dp[a][i] = psi[a].derivative(i);
    PolyMat<double> dpt(n, PolyVec<double>(n));
    for (int a = 0; a < n; ++a)
        for (int i = 0; i < n; ++i) dpt[i][a] = dp[a][i];
    return poly_matmul(poly_matmul(dpt, wp), dp);
}

struct DarbouxCorrection {
    std::vector<Poly> psi;  // u = psi(v)
    double residual = 0;    // max coef of psi^*W - J through degree K-1
};

// Moser/homotopy correction degree by degree: for the closed degree-m part R
// of psi^*W - J, beta = (1/(m+2)) i_E R has d beta = R and the vector field
// Y = -J beta of degree m+1 cancels R since L_Y J = d(i_Y J) = -R.
inline DarbouxCorrection darboux_correct(const PolyMat<double>& w, int k) {
    const int n = static_cast<int>(w.size());
    const int d = n / 2;
    Mat j = canonical_matrix(d);
    Mat w0 = constant_part(w);
    if ((w0 - j).cwiseAbs().maxCoeff() > 1e-9) throw std::domain_error("form is not canonical at the origin");
    DarbouxCorrection dc;
    for (int a = 0; a < n; ++a) dc.psi.push_back(Poly::variable(n, k, a));
    for (int m = 1; m <= k - 1; ++m) {
        PolyMat<double> wp = pullback_form(w, dc.psi);
        std::vector<Poly> beta(n, Poly(n, k));
        for (int b = 0; b < n; ++b) {
            Poly e(n, k);
            for (int a = 0; a < n; ++a) {
                Poly rab = wp[a][b].homogeneous(m);
                if (!rab.is_zero()) e += Poly::variable(n, k, a) * rab;
            }
            beta[b] = e * (1.0 / (m + 2));
        }
        std::vector<Poly> sub;
        for (int a = 0; a < n; ++a) {
            Poly y(n, k);
            for (int b = 0; b < n; ++b)
                if (j(a, b) != 0) y += (-j(a, b)) * beta[b];
            sub.push_back(Poly::variable(n, k, a) + y);
        }
        Composer<double> comp(sub);
        for (auto& p : dc.psi) p = comp(p);
    }
    PolyMat<double> wp = pullback_form(w, dc.psi);
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
            Poly e = wp[a][b].truncated(k - 1);
            if (j(a, b) != 0) e -= Poly::constant(n, k - 1, j(a, b));
            dc.residual = std::max(dc.residual, e.max_abs_coef());
        }
    return dc;
}

// Pi transported along u = psi(v): Dpsi^{-1} Pi(psi(v)) Dpsi^{-T}.
inline PolyMat<double> pushforward_structure(const PolyMat<double>& pi, const std::vector<Poly>& psi) {
    const int n = static_cast<int>(psi.size());
    const int k = psi.front().max_degree();
    Composer<double> comp(psi);
    PolyMat<double> pp(n, PolyVec<double>(n, Poly(n, k)));
    for (int a = 0; a < n; ++a)
        for (int b = a + 1; b < n; ++b) {
            pp[a][b] = comp(pi[a][b].with_max_degree(k));
            pp[b][a] = -pp[a][b];
        }
    PolyMat<double> dp(n, PolyVec<double>(n));
    for (int a = 0; a < n; ++a)
        for (int i = 0; i < n; ++i) dp[a][i] = psi[a].derivative(i);
    PolyMat<double> inv = neumann_inverse(dp);
    PolyMat<double> invt(n, PolyVec<double>(n));
    for (int a = 0; a < n; ++a)
        for (int i = 0; i < n; ++i) invt[i][a] = inv[a][i];
    PolyMat<double> out = poly_matmul(poly_matmul(inv, pp), invt);
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
            if (a < b) {
                Poly e = 0.5 * (out[a][b] - out[b][a]);
                out[a][b] = e;
                out[b][a] = -e;
            } else if (a == b) {
                out[a][a] = Poly(n, k);
            }
    return out;
}

// ---------------------------------------------------------------------------

struct IntertwiningReport {
    std::vector<double> residuals;
    double max_residual = 0;
    bool pass = false;
};

// || P_N(X_F) - X_F^M || over probes on N, with M the base-constraint bracket.
inline IntertwiningReport intertwining_check(const SmoothMap& f, const SliceModel& s, const std::vector<Vec>& probes,
                                             double tau = tau_twin) {
    IntertwiningReport r;
    for (const auto& x : probes) {
        Vec xd = dirac_project(f, make_context(s.full, x));
        Vec xm = base_field(f, s.base, x);
        const double e = (xd - xm).norm();
        r.residuals.push_back(e);
        r.max_residual = std::max(r.max_residual, e);
    }
    r.pass = !probes.empty() && r.max_residual < tau;
    return r;
}

}  // namespace mdirac
