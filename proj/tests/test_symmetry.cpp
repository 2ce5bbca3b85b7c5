#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "mdirac/experiments.hpp"
#include "mdirac/models.hpp"
#include "mdirac/symmetry.hpp"

using namespace mdirac;

namespace {

Vec random_state(std::mt19937_64& rng, int n) {
    std::normal_distribution<double> nd;
    Vec x(n);
    for (int i = 0; i < n; ++i) x[i] = nd(rng);
    return x;
}

Eigen::Matrix3d rot_z(double t) {
    Eigen::Matrix3d r;
    r << std::cos(t), -std::sin(t), 0, std::sin(t), std::cos(t), 0, 0, 0, 1;
    return r;
}

}  // namespace

TEST(Momentum, PolyMatchesPairingAndIsAngularMomentum) {
    GroupAction act = dsp_action();
    EXPECT_EQ(act.max_commutator(), 0);
    Poly j = dsp_momentum_poly();
    std::mt19937_64 rng(1);
    for (int t = 0; t < 20; ++t) {
        Vec x = random_state(rng, 12);
        double lz = 0;
        for (int l = 0; l < 2; ++l) {
            Eigen::Vector3d q = x.segment<3>(3 * l), p = x.segment<3>(6 + 3 * l);
            lz += q.cross(p)[2];
        }
        EXPECT_NEAR(j.eval(x), lz, 1e-13);
        EXPECT_NEAR(momentum_map(act, x)[0], lz, 1e-13);
    }
    EXPECT_THROW(momentum_map(act, Vec::Zero(6)), std::invalid_argument);
}

TEST(Momentum, CommutesWithHamiltonianAtAnyGravity) {
    auto ps = PoissonStructure<double>::canonical(6);
    for (double g : {0.0, 9.81}) {
        DspParams p;
        p.m1 = 1.3;
        p.l2 = 0.7;
        p.g = g;
        EXPECT_LE(poisson_bracket(dsp_momentum_poly(), dsp_hamiltonian_poly(p), ps).max_abs_coef(), 1e-13);
    }
}

TEST(GroupAction, FlowIsRotationAboutVertical) {
    GroupAction act = dsp_action();
    std::mt19937_64 rng(2);
    Vec x = random_state(rng, 12);
    const double t = 0.7;
    Vec y = act.flow(0, t) * x;
    for (int l = 0; l < 2; ++l) {
        EXPECT_LT((y.segment<3>(3 * l) - rot_z(t) * x.segment<3>(3 * l)).norm(), 1e-14);
        EXPECT_LT((y.segment<3>(6 + 3 * l) - rot_z(t) * x.segment<3>(6 + 3 * l)).norm(), 1e-14);
    }
    EXPECT_NEAR(momentum_map(act, y)[0], momentum_map(act, x)[0], 1e-13);
    Poly h = dsp_hamiltonian_poly(DspParams{});
    EXPECT_NEAR(h.eval(y), h.eval(x), 1e-13);
}

TEST(Slice, RefusesFixedPoint) {
    RelativeEquilibrium re = dsp_equilibria(DspParams{}, DspCase::Static);
    MomentumData mom = make_momentum(dsp_action(), Vec::Zero(1));
    try {
        (void)build_slice(dsp_sphere_constraints(), mom, re.x0);
        FAIL() << "expected a refusal";
    } catch (const std::domain_error& e) {
        EXPECT_NE(std::string(e.what()).find("fixed point"), std::string::npos);
    }
}

TEST(Slice, CrossBlockAndClass) {
    RelativeEquilibrium re = dsp_equilibria(DspParams{}, DspCase::HorizontalAligned, SpinSpec{3.0, {}});
    MomentumData mom = make_momentum(dsp_action(), Vec::Constant(1, re.mu));
    SliceModel s = build_slice(dsp_sphere_constraints(), mom, re.x0);
    Vec xi = apply_j0(mom.phi[0].gradient(re.x0));
    // default w is the normalised orbit direction, so B = |xi|
    EXPECT_NEAR(s.b(0, 0), xi.norm(), 1e-13);
    EXPECT_EQ(s.full_class, ConstraintClass::SecondClass);
    EXPECT_EQ(s.full.size(), 6);
    EXPECT_LT(s.full.values(re.x0).cwiseAbs().maxCoeff(), 1e-12);
    Mat w_bad = Mat::Zero(12, 1);
    w_bad(2, 0) = 1;  // q1_z: orthogonal to the orbit direction
    EXPECT_THROW(build_slice(dsp_sphere_constraints(), mom, re.x0, w_bad), std::domain_error);
    EXPECT_THROW(build_slice(dsp_sphere_constraints(), mom, re.x0, Mat::Zero(11, 1)), std::invalid_argument);
}

TEST(DriftFree, TranslationModelPositiveAndNegative) {
    Vec x0{{0.8, -0.3, 0.0, 0.2, 0.5, 0.0}};
    SliceModel s = translation_slice(x0);
    auto probes = sample_probes(s.full, x0, 30, 5, 0.3);
    SmoothMap h = separable_family(Eigen::Vector3d(1, std::sqrt(2.0), 0))(0.5);
    DriftReport ok = check_drift_free(h, s, probes);
    EXPECT_TRUE(ok.is_drift_free);
    EXPECT_LE(ok.max_residual, 1e-15);
    // q1 p3 breaks translation invariance: {q3, q1 p3} = q1 on the slice
    Poly bad_p = h.polys().front() + Poly::variable(6, max_trunc_degree, 0) * Poly::variable(6, max_trunc_degree, 5);
    DriftReport bad = check_drift_free(SmoothMap::from_poly(bad_p), s, probes);
    EXPECT_FALSE(bad.is_drift_free);
    double maxq1 = 0;
    for (const auto& x : probes) maxq1 = std::max(maxq1, std::abs(x[0]));
    EXPECT_NEAR(bad.max_residual, maxq1, 1e-12);
    // the momentum generator drifts along the orbit by exactly |B|
    DriftReport gen = check_drift_free(s.full.phi[0], s, probes);
    EXPECT_NEAR(gen.max_residual, std::abs(s.b(0, 0)), 1e-14);
    EXPECT_THROW(check_drift_free(h, s, {Vec::Ones(6)}), std::invalid_argument);
}

TEST(LockedInertia, AlignedValueIsSumOfMetricConstants) {
    DspParams p;
    p.m1 = 1.5;
    p.l1 = 0.8;
    Vec q(6);
    q << 1, 0, 0, 1, 0, 0;
    EXPECT_NEAR(dsp_locked_inertia(p).value(q)(0, 0), p.A() + p.B() + p.C(), 1e-13);
    // vertical links do not see the rotation
    Vec qv(6);
    qv << 0, 0, -1, 0, 0, -1;
    EXPECT_NEAR(dsp_locked_inertia(p).value(qv)(0, 0), 0, 1e-15);
}

TEST(Stationarity, HoldsAtRelativeEquilibriaAndFailsOffThem) {
    struct Row {
        DspParams p;
        DspCase c;
    };
    std::vector<Row> rows = {{DspParams{}, DspCase::HorizontalAligned},
                             {DspParams{1, 1, 0.5, 1, 0}, DspCase::Link1Horizontal},
                             {DspParams{1, 1, 1, 1.5, 0}, DspCase::Link2Horizontal}};
    for (const auto& r : rows) {
        RelativeEquilibrium re = dsp_equilibria(r.p, r.c, SpinSpec{3.0, {}});
        Vec q0 = re.x0.head(6);
        auto st = stationarity_test(dsp_locked_inertia(r.p), q0, dsp_slice_directions(q0));
        EXPECT_TRUE(st.stationary) << to_string(r.c) << " " << st.max_directional_derivative;
        // tilt the first link by 0.1 rad about the y axis
        Eigen::Matrix3d ry;
        const double a = 0.1;
        ry << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
        Vec qp = q0;
        qp.head(3) = ry * q0.head(3);
        auto sp = stationarity_test(dsp_locked_inertia(r.p), qp, dsp_slice_directions(qp));
        EXPECT_FALSE(sp.stationary);
        EXPECT_GT(sp.max_directional_derivative, 1e-3) << to_string(r.c);
    }
}
