#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace mdirac {

inline constexpr double tau_coeff = 1e-12;
inline constexpr int max_vars = 16;
inline constexpr int max_trunc_degree = 15;

// Exponent tuple packed four bits per variable, variable 0 in the most
// significant nibble, so integer order on the packed word is lex order with
// x1 leading.  Total degree <= 15 keeps every nibble from overflowing, which
// makes monomial multiplication a plain integer add.
namespace expo {

inline constexpr int shift(int i) { return 4 * (max_vars - 1 - i); }

inline int get(std::uint64_t e, int i) { return static_cast<int>((e >> shift(i)) & 0xFu); }

inline std::uint64_t unit(int i) { return std::uint64_t{1} << shift(i); }

inline int degree(std::uint64_t e) {
    std::uint64_t x = (e & 0x0F0F0F0F0F0F0F0Full) + ((e >> 4) & 0x0F0F0F0F0F0F0F0Full);
    return static_cast<int>((x * 0x0101010101010101ull) >> 56);
}

inline std::uint64_t pack(const std::vector<int>& a) {
    std::uint64_t e = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] < 0 || a[i] > 15) throw std::invalid_argument("exponent out of range");
        e |= static_cast<std::uint64_t>(a[i]) << shift(static_cast<int>(i));
    }
    return e;
}

inline std::vector<int> unpack(std::uint64_t e, int n) {
    std::vector<int> a(n);
    for (int i = 0; i < n; ++i) a[i] = get(e, i);
    return a;
}

// Graded-lex position key: lower total degree first, then lex.
inline bool grlex_less(std::uint64_t a, std::uint64_t b) {
    int da = degree(a), db = degree(b);
    return da != db ? da < db : a > b;
}

}  // namespace expo

template <class T>
inline double magnitude(const T& c) {
    return std::abs(c);
}

template <class T>
class TruncatedPoly {
public:
    using scalar_type = T;
    struct Term {
        std::uint64_t exp;
        T coef;
    };

    TruncatedPoly() = default;

    TruncatedPoly(int n_vars, int max_degree) : n_(n_vars), k_(max_degree) {
        if (n_vars < 1 || n_vars > max_vars) throw std::invalid_argument("n_vars must be in [1,16]");
        if (max_degree < 0 || max_degree > max_trunc_degree)
            throw std::invalid_argument("max_degree must be in [0,15]");
    }

    static TruncatedPoly constant(int n, int k, T c) {
        TruncatedPoly p(n, k);
        p.add_term(0, c);
        return p;
    }

    static TruncatedPoly variable(int n, int k, int i, T c = T(1)) {
        TruncatedPoly p(n, k);
        if (i < 0 || i >= n) throw std::out_of_range("variable index");
        if (k >= 1) p.add_term(expo::unit(i), c);
        return p;
    }

    static TruncatedPoly monomial(int n, int k, const std::vector<int>& e, T c = T(1)) {
        if (static_cast<int>(e.size()) != n) throw std::invalid_argument("exponent length mismatch");
        TruncatedPoly p(n, k);
        p.add_term(expo::pack(e), c);
        return p;
    }

    int n_vars() const { return n_; }
    int max_degree() const { return k_; }
    const std::vector<Term>& terms() const { return terms_; }
    std::size_t size() const { return terms_.size(); }
    bool is_zero() const { return terms_.empty(); }

    // Accumulates one term; call normalize() after a batch.
    void add_term(std::uint64_t e, T c) {
        if (expo::degree(e) > k_) return;
        terms_.push_back({e, c});
        dirty_ = true;
    }

    TruncatedPoly& normalize() {
        if (!dirty_) return *this;
        std::sort(terms_.begin(), terms_.end(),
                  [](const Term& a, const Term& b) { return expo::grlex_less(a.exp, b.exp); });
        std::vector<Term> out;
        out.reserve(terms_.size());
        for (const auto& t : terms_) {
            if (!out.empty() && out.back().exp == t.exp)
                out.back().coef += t.coef;
            else
                out.push_back(t);
        }
        terms_.clear();
        for (const auto& t : out)
            if (magnitude(t.coef) > tau_coeff) terms_.push_back(t);
        dirty_ = false;
        return *this;
    }

    T coefficient(const std::vector<int>& e) const { return coefficient(expo::pack(e)); }

    T coefficient(std::uint64_t e) const {
        auto it = std::lower_bound(terms_.begin(), terms_.end(), e,
                                   [](const Term& t, std::uint64_t x) { return expo::grlex_less(t.exp, x); });
        return (it != terms_.end() && it->exp == e) ? it->coef : T(0);
    }

    int degree() const { return terms_.empty() ? -1 : expo::degree(terms_.back().exp); }

    int min_degree() const { return terms_.empty() ? -1 : expo::degree(terms_.front().exp); }

    TruncatedPoly homogeneous(int d) const {
        TruncatedPoly p(n_, k_);
        for (const auto& t : terms_)
            if (expo::degree(t.exp) == d) p.terms_.push_back(t);
        return p;
    }

    TruncatedPoly truncated(int k) const {
        TruncatedPoly p(n_, std::min(k, k_));
        for (const auto& t : terms_)
            if (expo::degree(t.exp) <= p.k_) p.terms_.push_back(t);
        return p;
    }

    TruncatedPoly with_max_degree(int k) const {
        TruncatedPoly p(n_, k);
        for (const auto& t : terms_)
            if (expo::degree(t.exp) <= k) p.terms_.push_back(t);
        return p;
    }

    // Sum of |coef| over terms of degree d (all degrees when d < 0).
    double norm1(int d = -1) const {
        double s = 0;
        for (const auto& t : terms_)
            if (d < 0 || expo::degree(t.exp) == d) s += magnitude(t.coef);
        return s;
    }

    double max_abs_coef() const {
        double s = 0;
        for (const auto& t : terms_) s = std::max(s, magnitude(t.coef));
        return s;
    }

    TruncatedPoly derivative(int i) const {
        check_var(i);
        TruncatedPoly p(n_, k_);
        const std::uint64_t u = expo::unit(i);
        for (const auto& t : terms_) {
            int a = expo::get(t.exp, i);
            if (a > 0) p.terms_.push_back({t.exp - u, t.coef * T(a)});
        }
        p.dirty_ = true;
        return p.normalize();
    }

    template <class V>
    T eval(const V& x) const {
        if (static_cast<int>(x.size()) != n_) throw std::invalid_argument("point dimension mismatch");
        std::vector<std::vector<T>> pw(n_, std::vector<T>(16, T(1)));
        for (int i = 0; i < n_; ++i)
            for (int a = 1; a < 16; ++a) pw[i][a] = pw[i][a - 1] * T(x[i]);
        T s(0);
        for (const auto& t : terms_) {
            T m = t.coef;
            for (int i = 0; i < n_; ++i) {
                int a = expo::get(t.exp, i);
                if (a) m *= pw[i][a];
            }
            s += m;
        }
        return s;
    }

    TruncatedPoly& operator+=(const TruncatedPoly& o) {
        check_same(o);
        k_ = std::min(k_, o.k_);
        drop_above_k();
        for (const auto& t : o.terms_)
            if (expo::degree(t.exp) <= k_) terms_.push_back(t);
        dirty_ = true;
        return normalize();
    }

    TruncatedPoly& operator-=(const TruncatedPoly& o) {
        check_same(o);
        k_ = std::min(k_, o.k_);
        drop_above_k();
        for (const auto& t : o.terms_)
            if (expo::degree(t.exp) <= k_) terms_.push_back({t.exp, -t.coef});
        dirty_ = true;
        return normalize();
    }

    TruncatedPoly& operator*=(T c) {
        for (auto& t : terms_) t.coef *= c;
        dirty_ = true;
        // force a prune pass after scaling
        return normalize();
    }

    friend TruncatedPoly operator+(TruncatedPoly a, const TruncatedPoly& b) { return a += b; }
    friend TruncatedPoly operator-(TruncatedPoly a, const TruncatedPoly& b) { return a -= b; }
    friend TruncatedPoly operator*(TruncatedPoly a, T c) { return a *= c; }
    friend TruncatedPoly operator*(T c, TruncatedPoly a) { return a *= c; }
    TruncatedPoly operator-() const {
        TruncatedPoly p = *this;
        for (auto& t : p.terms_) t.coef = -t.coef;
        return p;
    }

    friend TruncatedPoly operator*(const TruncatedPoly& a, const TruncatedPoly& b) {
        a.check_same(b);
        const int k = std::min(a.k_, b.k_);
        TruncatedPoly p(a.n_, k);
        if (a.terms_.empty() || b.terms_.empty()) return p;
        std::unordered_map<std::uint64_t, T> acc;
        acc.reserve(std::min<std::size_t>(a.size() * b.size(), 1u << 16));
        std::vector<int> db(b.size());
        for (std::size_t j = 0; j < b.size(); ++j) db[j] = expo::degree(b.terms_[j].exp);
        for (const auto& ta : a.terms_) {
            const int da = expo::degree(ta.exp);
            if (da + db.front() > k) break;
            for (std::size_t j = 0; j < b.size(); ++j) {
                if (da + db[j] > k) break;  // b sorted by degree
                acc[ta.exp + b.terms_[j].exp] += ta.coef * b.terms_[j].coef;
            }
        }
        p.terms_.reserve(acc.size());
        for (const auto& [e, c] : acc) p.terms_.push_back({e, c});
        p.dirty_ = true;
        return p.normalize();
    }

    // Coefficient-wise distance, used by the property tests.
    friend double max_coef_diff(const TruncatedPoly& a, const TruncatedPoly& b) {
        TruncatedPoly d = a;
        d.k_ = std::max(a.k_, b.k_);
        for (const auto& t : b.terms_) d.terms_.push_back({t.exp, -t.coef});
        d.dirty_ = true;
        // normalize without pruning so sub-threshold differences still count
        std::sort(d.terms_.begin(), d.terms_.end(),
                  [](const Term& x, const Term& y) { return expo::grlex_less(x.exp, y.exp); });
        double m = 0;
        for (std::size_t i = 0; i < d.terms_.size();) {
            T s(0);
            std::size_t j = i;
            for (; j < d.terms_.size() && d.terms_[j].exp == d.terms_[i].exp; ++j) s += d.terms_[j].coef;
            m = std::max(m, magnitude(s));
            i = j;
        }
        return m;
    }

    template <class U, class F>
    TruncatedPoly<U> map_coefficients(F f) const {
        TruncatedPoly<U> p(n_, k_);
        for (const auto& t : terms_) p.add_term(t.exp, f(t.coef));
        return p.normalize();
    }

private:
    void check_var(int i) const {
        if (i < 0 || i >= n_) throw std::out_of_range("variable index");
    }
    void check_same(const TruncatedPoly& o) const {
        if (n_ != o.n_) throw std::invalid_argument("variable-count mismatch");
    }
    void drop_above_k() {
        terms_.erase(std::remove_if(terms_.begin(), terms_.end(),
                                    [this](const Term& t) { return expo::degree(t.exp) > k_; }),
                     terms_.end());
    }

    int n_ = 1;
    int k_ = 6;
    std::vector<Term> terms_;
    bool dirty_ = false;

    template <class U>
    friend class TruncatedPoly;
};

using Poly = TruncatedPoly<double>;
using CPoly = TruncatedPoly<std::complex<double>>;

template <class T>
using PolyVec = std::vector<TruncatedPoly<T>>;
template <class T>
using PolyMat = std::vector<std::vector<TruncatedPoly<T>>>;

template <class T>
TruncatedPoly<T> poly_mul(const TruncatedPoly<T>& a, const TruncatedPoly<T>& b) {
    return a * b;
}

// Canonical(n) pairs (q_i, p_i) = (x_i, x_{n+i}); Structured carries Pi_ab.
template <class T>
struct PoissonStructure {
    enum class Kind { Canonical, Structured };
    Kind kind = Kind::Canonical;
    int n_pairs = 0;
    PolyMat<T> pi;

    static PoissonStructure canonical(int n) {
        PoissonStructure ps;
        ps.kind = Kind::Canonical;
        ps.n_pairs = n;
        return ps;
    }

    static PoissonStructure structured(PolyMat<T> m) {
        const std::size_t n = m.size();
        for (const auto& row : m)
            if (row.size() != n) throw std::invalid_argument("structure matrix must be square");
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b <= a; ++b)
                if (max_coef_diff(m[a][b], -m[b][a]) > tau_coeff)
                    throw std::invalid_argument("structure matrix is not antisymmetric");
        PoissonStructure ps;
        ps.kind = Kind::Structured;
        ps.pi = std::move(m);
        return ps;
    }

    int dim() const { return kind == Kind::Canonical ? 2 * n_pairs : static_cast<int>(pi.size()); }
};

template <class T>
TruncatedPoly<T> poisson_bracket(const TruncatedPoly<T>& f, const TruncatedPoly<T>& g,
                                 const PoissonStructure<T>& ps) {
    if (f.n_vars() != g.n_vars()) throw std::invalid_argument("variable-count mismatch");
    const int n = f.n_vars();
    if (ps.dim() != n) throw std::invalid_argument("Poisson structure dimension mismatch");
    const int k = std::min(f.max_degree(), g.max_degree());
    TruncatedPoly<T> out(n, k);
    if (f.is_zero() || g.is_zero()) return out;
    if (ps.kind == PoissonStructure<T>::Kind::Canonical) {
        const int m = ps.n_pairs;
        for (int i = 0; i < m; ++i) {
            auto fq = f.derivative(i), gp = g.derivative(m + i);
            if (!fq.is_zero() && !gp.is_zero()) out += fq * gp;
            auto fp = f.derivative(m + i), gq = g.derivative(i);
            if (!fp.is_zero() && !gq.is_zero()) out -= fp * gq;
        }
        return out;
    }
    PolyVec<T> df(n), dg(n);
    for (int a = 0; a < n; ++a) {
        df[a] = f.derivative(a);
        dg[a] = g.derivative(a);
    }
    for (int a = 0; a < n; ++a) {
        if (df[a].is_zero()) continue;
        TruncatedPoly<T> row(n, k);
        for (int b = 0; b < n; ++b) {
            if (dg[b].is_zero() || ps.pi[a][b].is_zero()) continue;
            row += ps.pi[a][b] * dg[b];
        }
        if (!row.is_zero()) out += df[a] * row;
    }
    return out;
}

// exp(ad_G) H with ad_G(X) = {X, G}.
template <class T>
TruncatedPoly<T> lie_transform(const TruncatedPoly<T>& h, const TruncatedPoly<T>& gen,
                               const PoissonStructure<T>& ps) {
    for (const auto& t : gen.terms())
        if (expo::degree(t.exp) == 1)
            throw std::invalid_argument("generator has a nonzero linear part");
    TruncatedPoly<T> g = gen;
    {
        // constants are inert in a bracket; drop them so the grading argument is clean
        TruncatedPoly<T> c = gen.homogeneous(0);
        if (!c.is_zero()) g -= c;
    }
    TruncatedPoly<T> out = h;
    if (g.is_zero()) return out;
    TruncatedPoly<T> term = h;
    // A quadratic generator does not raise degree; the series then converges
    // like exp and is cut once the term underflows tau_coeff.
    const int max_iter = g.min_degree() >= 3 ? h.max_degree() + 2 : 80;
    for (int j = 1; j <= max_iter; ++j) {
        term = poisson_bracket(term, g, ps);
        term *= T(1.0 / j);
        if (term.is_zero()) break;
        out += term;
    }
    return out;
}

template <class T, class V>
T poly_eval(const TruncatedPoly<T>& f, const V& x) {
    return f.eval(x);
}

template <class T>
Eigen::Matrix<T, Eigen::Dynamic, 1> poly_gradient(const TruncatedPoly<T>& f,
                                                  const Eigen::Matrix<T, Eigen::Dynamic, 1>& x) {
    if (x.size() != f.n_vars()) throw std::invalid_argument("point dimension mismatch");
    Eigen::Matrix<T, Eigen::Dynamic, 1> g(f.n_vars());
    for (int i = 0; i < f.n_vars(); ++i) g[i] = f.derivative(i).eval(x);
    return g;
}

// Substitution x_i -> subs[i](u).  Monomial images are memoised so a batch of
// polynomials composed with the same substitution shares the work.
template <class T>
class Composer {
public:
    explicit Composer(PolyVec<T> subs) : subs_(std::move(subs)) {
        if (subs_.empty()) throw std::invalid_argument("empty substitution");
        m_ = subs_.front().n_vars();
        k_ = subs_.front().max_degree();
        for (const auto& s : subs_) {
            if (s.n_vars() != m_) throw std::invalid_argument("substitution variable mismatch");
            k_ = std::min(k_, s.max_degree());
        }
        cache_.emplace(0, TruncatedPoly<T>::constant(m_, k_, T(1)));
    }

    int out_vars() const { return m_; }
    int out_degree() const { return k_; }

    const TruncatedPoly<T>& image(std::uint64_t e) {
        auto it = cache_.find(e);
        if (it != cache_.end()) return it->second;
        int last = -1;
        for (int i = static_cast<int>(subs_.size()) - 1; i >= 0; --i)
            if (expo::get(e, i)) {
                last = i;
                break;
            }
        TruncatedPoly<T> prev = image(e - expo::unit(last));
        TruncatedPoly<T> img = prev * subs_[last];
        return cache_.emplace(e, std::move(img)).first->second;
    }

    TruncatedPoly<T> operator()(const TruncatedPoly<T>& f) {
        if (f.n_vars() != static_cast<int>(subs_.size()))
            throw std::invalid_argument("substitution length mismatch");
        TruncatedPoly<T> out(m_, k_);
        for (const auto& t : f.terms()) {
            const auto& img = image(t.exp);
            if (img.is_zero()) continue;
            TruncatedPoly<T> s = img;
            s *= t.coef;
            for (const auto& u : s.terms()) out.add_term(u.exp, u.coef);
        }
        return out.normalize();
    }

private:
    PolyVec<T> subs_;
    int m_ = 1;
    int k_ = 0;
    std::unordered_map<std::uint64_t, TruncatedPoly<T>> cache_;
};

template <class T>
TruncatedPoly<T> compose(const TruncatedPoly<T>& f, const PolyVec<T>& subs) {
    Composer<T> c(subs);
    return c(f);
}

// Coordinates x = x0 + y as polynomials in y.
template <class T>
PolyVec<T> shifted_coordinates(const Eigen::Matrix<T, Eigen::Dynamic, 1>& x0, int k) {
    const int n = static_cast<int>(x0.size());
    PolyVec<T> s;
    for (int i = 0; i < n; ++i) {
        auto p = TruncatedPoly<T>::variable(n, k, i);
        p.add_term(0, x0[i]);
        s.push_back(p.normalize());
    }
    return s;
}

// x = M y as polynomials in y (M is n x m).
template <class T>
PolyVec<T> linear_coordinates(const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& m, int k) {
    PolyVec<T> s;
    for (int i = 0; i < m.rows(); ++i) {
        TruncatedPoly<T> p(static_cast<int>(m.cols()), k);
        for (int j = 0; j < m.cols(); ++j)
            if (magnitude(m(i, j)) > 0) p.add_term(expo::unit(j), m(i, j));
        s.push_back(p.normalize());
    }
    return s;
}

template <class T>
PolyMat<T> poly_matmul(const PolyMat<T>& a, const PolyMat<T>& b) {
    const std::size_t r = a.size(), inner = b.size(), c = b.empty() ? 0 : b[0].size();
    if (r == 0 || a[0].size() != inner) throw std::invalid_argument("matrix shape mismatch");
    const int n = a[0][0].n_vars();
    const int k = std::min(a[0][0].max_degree(), b[0][0].max_degree());
    PolyMat<T> out(r, PolyVec<T>(c, TruncatedPoly<T>(n, k)));
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t l = 0; l < inner; ++l) {
            if (a[i][l].is_zero()) continue;
            for (std::size_t j = 0; j < c; ++j)
                if (!b[l][j].is_zero()) out[i][j] += a[i][l] * b[l][j];
        }
    return out;
}

template <class T>
PolyMat<T> constant_matrix(const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& m, int n, int k) {
    PolyMat<T> out(m.rows(), PolyVec<T>(m.cols(), TruncatedPoly<T>(n, k)));
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j) out[i][j] = TruncatedPoly<T>::constant(n, k, m(i, j));
    return out;
}

template <class T>
Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> constant_part(const PolyMat<T>& m) {
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> c(m.size(), m.empty() ? 0 : m[0].size());
    for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = 0; j < m[i].size(); ++j) c(i, j) = m[i][j].coefficient(std::uint64_t{0});
    return c;
}

// Inverse of a polynomial matrix M = M0 + R by the Neumann series
// M0^{-1} sum_m (-R M0^{-1})^m; terms whose minimum degree exceeds K vanish
// under truncation, so the loop ends after at most K steps.
template <class T>
PolyMat<T> neumann_inverse(const PolyMat<T>& m) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
    const int n = m[0][0].n_vars();
    int k = max_trunc_degree;
    for (const auto& row : m)
        for (const auto& e : row) k = std::min(k, e.max_degree());
    Mat m0 = constant_part(m);
    Eigen::FullPivLU<Mat> lu(m0);
    if (!lu.isInvertible()) throw std::domain_error("constant part is singular");
    Mat m0inv = lu.inverse();
    PolyMat<T> r = m;
    for (std::size_t i = 0; i < r.size(); ++i)
        for (std::size_t j = 0; j < r.size(); ++j) {
            auto c = r[i][j].homogeneous(0);
            if (!c.is_zero()) r[i][j] -= c;
            r[i][j] = r[i][j].with_max_degree(k);
        }
    PolyMat<T> inv0 = constant_matrix<T>(m0inv, n, k);
    PolyMat<T> step = poly_matmul(r, inv0);
    for (auto& row : step)
        for (auto& e : row) e *= T(-1);
    PolyMat<T> sum = constant_matrix<T>(Mat::Identity(m0.rows(), m0.cols()), n, k);
    PolyMat<T> power = sum;
    for (int it = 1; it <= k; ++it) {
        power = poly_matmul(power, step);
        bool all_zero = true;
        for (std::size_t i = 0; i < power.size(); ++i)
            for (std::size_t j = 0; j < power.size(); ++j) {
                if (!power[i][j].is_zero()) all_zero = false;
                sum[i][j] += power[i][j];
            }
        if (all_zero) break;
    }
    return poly_matmul(inv0, sum);
}

}  // namespace mdirac
