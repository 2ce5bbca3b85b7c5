#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "mdirac/smooth_map.hpp"

using namespace mdirac;

TEST(Canonical, MatrixAndApplyAgree) {
    Mat j = canonical_matrix(3);
    EXPECT_DOUBLE_EQ(j(0, 3), 1);
    EXPECT_DOUBLE_EQ(j(3, 0), -1);
    EXPECT_LE((j * j + Mat::Identity(6, 6)).cwiseAbs().maxCoeff(), 0);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd;
    Vec g(6);
    for (int i = 0; i < 6; ++i) g[i] = nd(rng);
    EXPECT_LE((apply_j0(g) - j * g).cwiseAbs().maxCoeff(), 0);
    Vec e0 = Vec::Unit(6, 0), e3 = Vec::Unit(6, 3);
    EXPECT_DOUBLE_EQ(canonical_bracket(e0, e3), 1);  // {q1, p1} = 1
}

TEST(SmoothMap, PolyJetsAgreeWithFiniteDifferences) {
    // f = (q1^2 p2 - 3 q2, q1 q2 p1 p2)
    Poly a(4, 6), b(4, 6);
    a.add_term(expo::pack({2, 0, 0, 1}), 1);
    a.add_term(expo::pack({0, 1, 0, 0}), -3);
    b.add_term(expo::pack({1, 1, 1, 1}), 1);
    SmoothMap f = SmoothMap::from_polys({a.normalize(), b.normalize()}, "f");
    EXPECT_EQ(f.source(), MapSource::FromPoly);
    Vec x{{0.4, -1.2, 0.7, 2.0}};
    Jet jet = fd_jet(f, x, 2);
    EXPECT_LT(relative_error(f.jacobian(x), jet.jacobian), 1e-8);
    auto h = f.hessian(x);
    for (int c = 0; c < 2; ++c) EXPECT_LT(relative_error(h[c], (*jet.hessian)[c]), 1e-6);
}

TEST(SmoothMap, AnalyticScalarAndHessianFallback) {
    auto f = SmoothMap::scalar(
        2, [](const Vec& x) { return std::sin(x[0]) * std::exp(x[1]); },
        [](const Vec& x) {
            return Vec{{std::cos(x[0]) * std::exp(x[1]), std::sin(x[0]) * std::exp(x[1])}};
        },
        "f");
    Vec x{{0.3, -0.4}};
    const double s = std::sin(0.3), c = std::cos(0.3), e = std::exp(-0.4);
    Mat h = f.hessian(x)[0];
    Mat ex{{-s * e, c * e}, {c * e, s * e}};
    EXPECT_LT(relative_error(h, ex), 1e-8);
    EXPECT_LT(relative_error(fd_jet(f, x, 1).jacobian, f.jacobian(x)), 1e-8);
    EXPECT_THROW(f.eval(Vec::Zero(3)), std::invalid_argument);
}

TEST(SmoothMap, FdJetRejectsNonFinite) {
    auto f = SmoothMap::scalar(
        1, [](const Vec& x) { return std::log(x[0]); }, [](const Vec& x) { return Vec::Constant(1, 1 / x[0]); });
    EXPECT_THROW(fd_jet(f, Vec::Zero(1), 1), std::domain_error);
    EXPECT_THROW(fd_jet(f, Vec::Ones(1), 3), std::invalid_argument);
}

TEST(HamiltonianField, OscillatorAndOddDimension) {
    Poly h(2, 4);
    h.add_term(expo::pack({2, 0}), 0.5);
    h.add_term(expo::pack({0, 2}), 0.5);
    SmoothMap xh = hamiltonian_vector_field(SmoothMap::from_poly(h.normalize(), "H"));
    Vec x{{0.3, -0.8}};
    Vec v = xh.eval(x);
    EXPECT_DOUBLE_EQ(v[0], -0.8);  // qdot = p
    EXPECT_DOUBLE_EQ(v[1], -0.3);  // pdot = -q
    EXPECT_LT(relative_error(xh.jacobian(x), canonical_matrix(1)), 1e-14);
    Poly odd = Poly::variable(3, 2, 0);
    EXPECT_THROW(hamiltonian_vector_field(SmoothMap::from_poly(odd)), std::invalid_argument);
}

TEST(SmoothMap, CombineKeepsPolynomialForm) {
    Poly a = Poly::variable(2, 3, 0), b = Poly::variable(2, 3, 1) * Poly::variable(2, 3, 1);
    SmoothMap f = combine(2.0, SmoothMap::from_poly(a), -1.0, SmoothMap::from_poly(b));
    EXPECT_TRUE(f.has_polys());
    Vec x{{0.5, 3.0}};
    EXPECT_DOUBLE_EQ(f.value(x), 2 * 0.5 - 9);
    EXPECT_DOUBLE_EQ(f.gradient(x)[1], -6);
}
