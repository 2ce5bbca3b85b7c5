#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "poly.hpp"

namespace mdirac {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Standard pairing on R^{2m} with coordinates (q_1..q_m, p_1..p_m):
// J0 = [[0, I], [-I, 0]], {f,g} = grad f^T J0 grad g, X_f = J0 grad f.
inline Mat canonical_matrix(int m) {
    Mat j = Mat::Zero(2 * m, 2 * m);
    j.topRightCorner(m, m) = Mat::Identity(m, m);
    j.bottomLeftCorner(m, m) = -Mat::Identity(m, m);
    return j;
}

inline Vec apply_j0(const Vec& g) {
    const long m = g.size() / 2;
    Vec x(g.size());
    x.head(m) = g.tail(m);
    x.tail(m) = -g.head(m);
    return x;
}

inline double canonical_bracket(const Vec& gf, const Vec& gg) { return gf.dot(apply_j0(gg)); }

struct PhasePoint {
    Vec coords;
};

enum class MapSource { Analytic, FromPoly, FiniteDifference };

class SmoothMap {
public:
    using EvalFn = std::function<Vec(const Vec&)>;
    using JacFn = std::function<Mat(const Vec&)>;
    using HessFn = std::function<std::vector<Mat>(const Vec&)>;

    SmoothMap() = default;

    static SmoothMap analytic(int domain, int codomain, EvalFn f, JacFn j, HessFn h = nullptr,
                              std::string name = {}) {
        SmoothMap m;
        m.domain_ = domain;
        m.codomain_ = codomain;
        m.eval_ = std::move(f);
        m.jac_ = std::move(j);
        m.hess_ = std::move(h);
        m.source_ = MapSource::Analytic;
        m.name_ = std::move(name);
        return m;
    }

    // Scalar analytic map from value and gradient.
    static SmoothMap scalar(int domain, std::function<double(const Vec&)> f,
                            std::function<Vec(const Vec&)> grad, std::string name = {}) {
        return analytic(
            domain, 1, [f](const Vec& x) { return Vec::Constant(1, f(x)); },
            [grad](const Vec& x) { return Mat(grad(x).transpose()); }, nullptr, std::move(name));
    }

    static SmoothMap from_polys(std::vector<Poly> comps, std::string name = {}) {
        if (comps.empty()) throw std::invalid_argument("no components");
        const int n = comps.front().n_vars();
        for (const auto& c : comps)
            if (c.n_vars() != n) throw std::invalid_argument("component variable mismatch");
        auto polys = std::make_shared<std::vector<Poly>>(comps);
        auto grads = std::make_shared<std::vector<std::vector<Poly>>>();
        for (const auto& c : comps) {
            std::vector<Poly> g;
            for (int i = 0; i < n; ++i) g.push_back(c.derivative(i));
            grads->push_back(std::move(g));
        }
        auto hess = std::make_shared<std::vector<std::vector<std::vector<Poly>>>>();
        for (const auto& g : *grads) {
            std::vector<std::vector<Poly>> h;
            for (int i = 0; i < n; ++i) {
                std::vector<Poly> row;
                for (int j = 0; j < n; ++j) row.push_back(g[i].derivative(j));
                h.push_back(std::move(row));
            }
            hess->push_back(std::move(h));
        }
        SmoothMap m;
        m.domain_ = n;
        m.codomain_ = static_cast<int>(comps.size());
        m.eval_ = [polys](const Vec& x) {
            Vec v(polys->size());
            for (std::size_t i = 0; i < polys->size(); ++i) v[i] = (*polys)[i].eval(x);
            return v;
        };
        m.jac_ = [grads, n](const Vec& x) {
            Mat j(grads->size(), n);
            for (std::size_t i = 0; i < grads->size(); ++i)
                for (int a = 0; a < n; ++a) j(i, a) = (*grads)[i][a].eval(x);
            return j;
        };
        m.hess_ = [hess, n](const Vec& x) {
            std::vector<Mat> out;
            for (const auto& h : *hess) {
                Mat mm(n, n);
                for (int a = 0; a < n; ++a)
                    for (int b = 0; b < n; ++b) mm(a, b) = h[a][b].eval(x);
                out.push_back(mm);
            }
            return out;
        };
        m.source_ = MapSource::FromPoly;
        m.polys_ = polys;
        m.name_ = std::move(name);
        return m;
    }

    static SmoothMap from_poly(const Poly& p, std::string name = {}) { return from_polys({p}, std::move(name)); }

    int domain_dim() const { return domain_; }
    int codomain_dim() const { return codomain_; }
    MapSource source() const { return source_; }
    const std::string& name() const { return name_; }
    bool has_polys() const { return static_cast<bool>(polys_); }
    const std::vector<Poly>& polys() const {
        if (!polys_) throw std::logic_error("map has no polynomial form");
        return *polys_;
    }
    bool has_hessian() const { return static_cast<bool>(hess_); }

    Vec eval(const Vec& x) const {
        check(x);
        return eval_(x);
    }
    Mat jacobian(const Vec& x) const {
        check(x);
        return jac_(x);
    }
    double value(const Vec& x) const { return eval(x)[0]; }
    Vec gradient(const Vec& x) const { return jacobian(x).row(0).transpose(); }

    // Second derivatives fall back to central differences of the analytic
    // jacobian when no closed form was supplied.
    std::vector<Mat> hessian(const Vec& x) const {
        check(x);
        if (hess_) return hess_(x);
        const double h = 1e-5 * std::max(1.0, x.cwiseAbs().maxCoeff());
        std::vector<Mat> out(codomain_, Mat::Zero(domain_, domain_));
        for (int j = 0; j < domain_; ++j) {
            Vec xp = x, xm = x;
            xp[j] += h;
            xm[j] -= h;
            Mat d = (jac_(xp) - jac_(xm)) / (2 * h);
            for (int c = 0; c < codomain_; ++c) out[c].col(j) = d.row(c).transpose();
        }
        for (auto& m : out) m = 0.5 * (m + m.transpose()).eval();
        return out;
    }

    SmoothMap renamed(std::string n) const {
        SmoothMap m = *this;
        m.name_ = std::move(n);
        return m;
    }

    // Pointwise linear combination a*f + b*g (scalar or vector, same shape).
    friend SmoothMap combine(double a, const SmoothMap& f, double b, const SmoothMap& g) {
        if (f.domain_ != g.domain_ || f.codomain_ != g.codomain_) throw std::invalid_argument("shape mismatch");
        SmoothMap m = SmoothMap::analytic(
            f.domain_, f.codomain_, [=](const Vec& x) { return Vec(a * f.eval(x) + b * g.eval(x)); },
            [=](const Vec& x) { return Mat(a * f.jacobian(x) + b * g.jacobian(x)); });
        if (f.hess_ && g.hess_)
            m.hess_ = [=](const Vec& x) {
                auto hf = f.hess_(x), hg = g.hess_(x);
                for (std::size_t c = 0; c < hf.size(); ++c) hf[c] = a * hf[c] + b * hg[c];
                return hf;
            };
        if (f.polys_ && g.polys_) {
            std::vector<Poly> ps;
            for (std::size_t c = 0; c < f.polys_->size(); ++c)
                ps.push_back(a * (*f.polys_)[c] + b * (*g.polys_)[c]);
            m = SmoothMap::from_polys(ps);
        }
        return m;
    }

private:
    void check(const Vec& x) const {
        if (x.size() != domain_) throw std::invalid_argument("point dimension mismatch");
    }

    int domain_ = 0;
    int codomain_ = 0;
    EvalFn eval_;
    JacFn jac_;
    HessFn hess_;
    MapSource source_ = MapSource::Analytic;
    std::shared_ptr<std::vector<Poly>> polys_;
    std::string name_;
};

struct Jet {
    Mat jacobian;
    std::optional<std::vector<Mat>> hessian;
};

inline Jet fd_jet(const SmoothMap& f, const Vec& x, int order) {
    if (order != 1 && order != 2) throw std::invalid_argument("order must be 1 or 2");
    const int n = f.domain_dim(), c = f.codomain_dim();
    const double scale = std::max(1.0, x.cwiseAbs().maxCoeff());
    auto eval = [&](const Vec& y) {
        Vec v = f.eval(y);
        if (!v.allFinite()) throw std::domain_error("non-finite evaluation near the jet point");
        return v;
    };
    Jet jet;
    const double h = 1e-5 * scale;
    jet.jacobian.resize(c, n);
    for (int j = 0; j < n; ++j) {
        Vec xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        jet.jacobian.col(j) = (eval(xp) - eval(xm)) / (2 * h);
    }
    if (order == 2) {
        const double h2 = 1e-4 * scale;
        std::vector<Mat> hs(c, Mat::Zero(n, n));
        for (int a = 0; a < n; ++a)
            for (int b = a; b < n; ++b) {
                Vec pp = x, pm = x, mp = x, mm = x;
                pp[a] += h2, pp[b] += h2;
                pm[a] += h2, pm[b] -= h2;
                mp[a] -= h2, mp[b] += h2;
                mm[a] -= h2, mm[b] -= h2;
                Vec d = (eval(pp) - eval(pm) - eval(mp) + eval(mm)) / (4 * h2 * h2);
                for (int k = 0; k < c; ++k) hs[k](a, b) = hs[k](b, a) = d[k];
            }
        jet.hessian = std::move(hs);
    }
    return jet;
}

inline SmoothMap hamiltonian_vector_field(const SmoothMap& h) {
    if (h.codomain_dim() != 1) throw std::invalid_argument("Hamiltonian must be scalar");
    const int n = h.domain_dim();
    if (n % 2 != 0) throw std::invalid_argument("odd phase-space dimension");
    const Mat j0 = canonical_matrix(n / 2);
    return SmoothMap::analytic(
        n, n, [h](const Vec& x) { return apply_j0(h.gradient(x)); },
        [h, j0](const Vec& x) { return Mat(j0 * h.hessian(x)[0]); }, nullptr, "X_" + h.name());
}

// Relative error used by the jet cross-checks.
inline double relative_error(const Mat& a, const Mat& b) {
    const double s = std::max({1.0, a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff()});
    return (a - b).cwiseAbs().maxCoeff() / s;
}

}  // namespace mdirac
