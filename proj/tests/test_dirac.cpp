#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "mdirac/dirac.hpp"
#include "mdirac/models.hpp"

using namespace mdirac;

namespace {

SmoothMap coord(int n, int i) { return SmoothMap::from_poly(Poly::variable(n, 4, i)); }

Vec sphere_point(std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    Eigen::Vector3d q(nd(rng), nd(rng), nd(rng)), p(nd(rng), nd(rng), nd(rng));
    q.normalize();
    p -= p.dot(q) * q;
    Vec x(6);
    x << q, p;
    return x;
}

}  // namespace

TEST(Classify, SphereIsSecondClassAndMomentumAloneIsFirstClass) {
    ConstraintSet sph = sphere_constraints(1);
    std::mt19937_64 rng(1);
    std::vector<Vec> probes;
    for (int i = 0; i < 20; ++i) probes.push_back(sphere_point(rng));
    EXPECT_EQ(classify(sph, probes).cls, ConstraintClass::SecondClass);
    // a single constraint always has C = 0
    ConstraintSet one{{sph.phi[0]}};
    EXPECT_EQ(classify(one, probes).cls, ConstraintClass::FirstClass);
    EXPECT_THROW(classify(sph, {Vec::Ones(6)}), std::invalid_argument);
    EXPECT_THROW(classify(sph, {}), std::invalid_argument);
}

// Closed form of the sphere-pair bracket at |q| = 1, q.p = 0, obtained by
// substituting C^{-1} = [[0, -1/2], [1/2, 0]] into the Dirac formula by hand.
TEST(DiracBracket, SpherePairClosedForm) {
    ConstraintSet sph = sphere_constraints(1);
    std::mt19937_64 rng(7);
    double err = 0;
    for (int t = 0; t < 50; ++t) {
        Vec x = sphere_point(rng);
        DiracContext ctx = make_context(sph, x);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) {
                const double qp = dirac_bracket(coord(6, a), coord(6, 3 + b), ctx);
                const double pp = dirac_bracket(coord(6, 3 + a), coord(6, 3 + b), ctx);
                const double qq = dirac_bracket(coord(6, a), coord(6, b), ctx);
                err = std::max(err, std::abs(qp - ((a == b) - x[a] * x[b])));
                err = std::max(err, std::abs(pp - (x[b] * x[3 + a] - x[a] * x[3 + b])));
                err = std::max(err, std::abs(qq));
            }
    }
    EXPECT_LT(err, 1e-12);
}

TEST(DiracBracket, AxiomsAtProbes) {
    ConstraintSet cs = dsp_sphere_constraints();
    Vec x0 = Vec::Zero(12);
    x0[0] = 1;
    x0[3] = 1;
    x0[7] = 0.5;
    x0[10] = -0.2;
    auto probes = sample_probes(cs, x0, 40, 3, 0.1);
    Poly f(12, 4), g(12, 4);
    f.add_term(expo::unit(0) + expo::unit(7), 1);
    f.add_term(expo::unit(4) * 2, 0.5);
    g.add_term(expo::unit(9) + expo::unit(2) + expo::unit(5), 1);
    g.add_term(expo::unit(11), -1);
    SmoothMap fm = SmoothMap::from_poly(f.normalize()), gm = SmoothMap::from_poly(g.normalize());
    for (const auto& x : probes) {
        DiracContext ctx = make_context(cs, x);
        EXPECT_LT(std::abs(dirac_bracket(fm, gm, ctx) + dirac_bracket(gm, fm, ctx)), 1e-12);
        Vec pf = dirac_project(fm, ctx);
        for (const auto& phi : cs.phi) {
            EXPECT_LT(std::abs(dirac_bracket(phi, gm, ctx)), 1e-10);
            EXPECT_LT(std::abs(phi.gradient(x).dot(pf)), 1e-10);
        }
        // P_N(X_f) acts on g as {g, f}_D
        EXPECT_NEAR(gm.gradient(x).dot(pf), dirac_bracket(gm, fm, ctx), 1e-12);
    }
}

TEST(DiracBracket, RefusesDegenerateMatrix) {
    ConstraintSet one{{sphere_constraints(1).phi[0]}};
    DiracContext ctx = make_context(one, Vec::Unit(6, 0));
    EXPECT_EQ(ctx.cls, ConstraintClass::FirstClass);
    EXPECT_THROW(dirac_project(coord(6, 0), ctx), std::domain_error);
}

// Neumann: the constrained field is (p, -Aq + (q.Aq - |p|^2) q) on N.
TEST(Moser, NeumannMultipliersOracle) {
    Mat a = Eigen::Vector3d(1, 2, 3).asDiagonal();
    MoserModel m = neumann_model(a);
    ConstraintSet cs = m.constraints();
    std::mt19937_64 rng(4);
    for (int t = 0; t < 50; ++t) {
        Vec x = sphere_point(rng);
        Eigen::Vector3d q = x.head(3), p = x.tail(3);
        Vec ex(6);
        ex << p, -a * q + (q.dot(a * q) - p.squaredNorm()) * q;
        DiracContext ctx = make_context(cs, x);
        EXPECT_LT((moser_field(m.h, ctx) - ex).norm(), 1e-12);
        EXPECT_LT((dirac_project(m.h, ctx) - ex).norm(), 1e-12);
        // lambda equals the Dirac coefficients exactly
        EXPECT_LT((moser_multipliers(m.h, ctx) - dirac_coefficients(m.h.gradient(x), ctx)).norm(), 1e-13);
    }
}

TEST(StructureSeries, MatchesPointwiseDiracMatrix) {
    ConstraintSet cs = sphere_constraints(1);
    Vec x0(6);
    x0 << 0, 0, 1, 0.3, -0.4, 0;
    auto ps = dirac_structure_series(cs, x0, 6);
    std::mt19937_64 rng(8);
    std::normal_distribution<double> nd;
    std::vector<Vec> dirs;
    for (int t = 0; t < 10; ++t) {
        Vec y(6);
        for (int i = 0; i < 6; ++i) y[i] = nd(rng);
        dirs.push_back(y);
    }
    std::vector<double> errs;
    for (double r : {1e-1, 1e-2}) {
        double err = 0;
        for (const auto& d : dirs) {
            Vec y = r * d;
            DiracContext ctx = make_context(cs, x0 + y);
            for (int a = 0; a < 6; ++a)
                for (int b = 0; b < 6; ++b)
                    err = std::max(err, std::abs(ps.pi[a][b].eval(y) - dirac_bracket(coord(6, a), coord(6, b), ctx)));
        }
        EXPECT_LT(err, 1e3 * std::pow(r, 7)) << "r = " << r;
        errs.push_back(err);
    }
    // truncation error is O(r^7): a decade in r gains at least six
    EXPECT_GT(errs[0] / errs[1], 1e6);
}

TEST(Singularity, SphereRegularKsOriginNot) {
    auto rep = singularity_diagnostics(sphere_constraints(1), Vec{{1, 0, 0, 0, 1, 0}});
    EXPECT_EQ(rep.rank_dphi, 2);
    EXPECT_NEAR(rep.sigma_min_c, 2, 1e-12);
    EXPECT_TRUE(rep.flags.empty());
    auto ks = ks_model();
    auto r0 = singularity_diagnostics(ks.level, Vec::Zero(8));
    EXPECT_EQ(r0.rank_dphi, 0);
    EXPECT_TRUE(r0.has_flag("not_regular_level"));
    EXPECT_TRUE(r0.has_flag("not_second_class"));
}

TEST(Projection, ConvergesAndSamplesAreDeterministic) {
    ConstraintSet cs = sphere_constraints(1);
    Vec x{{1.1, 0.1, -0.05, 0.2, 0.3, 0.1}};
    ProjectionResult pr = project_onto(cs, x);
    EXPECT_TRUE(pr.converged);
    EXPECT_LT(cs.values(pr.x).cwiseAbs().maxCoeff(), 1e-12);
    Vec x0{{1, 0, 0, 0, 1, 0}};
    auto a = sample_probes(cs, x0, 5, 42), b = sample_probes(cs, x0, 5, 42), c = sample_probes(cs, x0, 5, 43);
    for (int i = 0; i < 5; ++i) {
        EXPECT_EQ(a[i], b[i]);
        EXPECT_LT(cs.values(a[i]).cwiseAbs().maxCoeff(), 1e-12);
    }
    EXPECT_NE(a[0], c[0]);
}
