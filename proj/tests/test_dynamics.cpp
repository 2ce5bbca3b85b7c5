#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "mdirac/dynamics.hpp"
#include "mdirac/experiments.hpp"
#include "mdirac/models.hpp"

using namespace mdirac;

namespace {

SmoothMap oscillator(double w = 1.0) {
    Poly h(2, 4);
    h.add_term(2 * expo::unit(0), 0.5 * w * w);
    h.add_term(2 * expo::unit(1), 0.5);
    return SmoothMap::from_poly(h.normalize(), "H");
}

SmoothMap negated(const SmoothMap& f) {
    return SmoothMap::analytic(
        f.domain_dim(), f.codomain_dim(), [f](const Vec& x) { return Vec(-f.eval(x)); },
        [f](const Vec& x) { return Mat(-f.jacobian(x)); }, nullptr, "-f");
}

}  // namespace

TEST(Integrate, Rk4OscillatorAgainstClosedForm) {
    SmoothMap h = oscillator();
    IntegrateOptions opt;
    opt.monitors = {{"H", h}};
    opt.sample_every = 100;
    Trajectory tr = integrate(hamiltonian_vector_field(h), Vec{{1.0, 0.0}}, 10, 1e-3, opt);
    ASSERT_EQ(tr.times.size(), 101u);
    EXPECT_DOUBLE_EQ(tr.times.back(), 10);
    double err = 0;
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
        const double t = tr.times[i];
        err = std::max(err, std::abs(tr.states[i][0] - std::cos(t)));
        err = std::max(err, std::abs(tr.states[i][1] + std::sin(t)));
    }
    EXPECT_LT(err, 1e-9);
    EXPECT_LT(conserved_monitor(tr, opt.monitors).at("H"), 1e-9);
    EXPECT_EQ(tr.diagnostics.at("H").size(), tr.times.size());
}

TEST(Integrate, ZeroFieldAndArgumentChecks) {
    SmoothMap zero = SmoothMap::analytic(
        4, 4, [](const Vec&) { return Vec(Vec::Zero(4)); }, [](const Vec&) { return Mat(Mat::Zero(4, 4)); });
    Vec x0{{1, 2, 3, 4}};
    Trajectory tr = integrate(zero, x0, 1, 0.1);
    for (const auto& x : tr.states) EXPECT_EQ(x, x0);
    EXPECT_THROW(integrate(zero, x0, 1, 0), std::invalid_argument);
    EXPECT_THROW(integrate(zero, Vec::Zero(3), 1, 0.1), std::invalid_argument);
    IntegrateOptions opt;
    opt.method = Method::ProjectedRk4;
    EXPECT_THROW(integrate(zero, x0, 1, 0.1, opt), std::invalid_argument);
    EXPECT_EQ(method_from_string("implicit_midpoint"), Method::ImplicitMidpoint);
    EXPECT_STREQ(to_string(Method::ProjectedRk4), "projected_rk4");
    EXPECT_THROW(method_from_string("euler"), std::invalid_argument);
}

TEST(Integrate, NeumannProjectedFlowHoldsConstraints) {
    MoserModel m = neumann_model(Mat(Eigen::Vector3d(1, 2, 3).asDiagonal()));
    ConstraintSet cs = m.constraints();
    Vec x0(6);
    x0 << 1 / std::sqrt(3.0), 1 / std::sqrt(3.0), 1 / std::sqrt(3.0), 0.5 / std::sqrt(2.0), -0.5 / std::sqrt(2.0), 0;
    IntegrateOptions opt;
    opt.method = Method::ProjectedRk4;
    opt.constraints = &cs;
    opt.sample_every = 1000;
    opt.monitors = {{"H", m.h}};
    Trajectory tr = integrate(dirac_field(m.h, cs), x0, 100, 1e-3, opt);
    EXPECT_LT(tr.max_projection_residual, tau_proj_step);
    for (const auto& x : tr.states) EXPECT_LT(cs.values(x).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT(conserved_monitor(tr, opt.monitors).at("H"), 1e-8);
}

TEST(Integrate, TimeReversalReturnsToStart) {
    MoserModel m = neumann_model(Mat(Eigen::Vector3d(1, 2, 3).asDiagonal()));
    ConstraintSet cs = m.constraints();
    Vec x0{{0.0, 0.6, 0.8, 0.3, 0.0, 0.0}};
    SmoothMap f = dirac_field(m.h, cs);
    Trajectory fwd = integrate(f, x0, 5, 1e-3);
    Trajectory back = integrate(negated(f), fwd.states.back(), 5, 1e-3);
    EXPECT_LT((back.states.back() - x0).norm(), 1e-10);
}

TEST(Integrate, ImplicitMidpointPreservesQuadraticEnergy) {
    SmoothMap h = oscillator(2.0);
    IntegrateOptions opt;
    opt.method = Method::ImplicitMidpoint;
    opt.monitors = {{"H", h}};
    Trajectory tr = integrate(hamiltonian_vector_field(h), Vec{{0.3, 0.4}}, 20, 1e-2, opt);
    EXPECT_LT(conserved_monitor(tr, opt.monitors).at("H"), 1e-13);
    // second order: q(t) = 0.3 cos 2t + 0.2 sin 2t
    const double t = tr.times.back();
    EXPECT_NEAR(tr.states.back()[0], 0.3 * std::cos(2 * t) + 0.2 * std::sin(2 * t), 1e-2);
}

TEST(FlowCompare, IdenticalAndPerturbedFields) {
    SmoothMap a = hamiltonian_vector_field(oscillator(1.0));
    SmoothMap b = hamiltonian_vector_field(oscillator(1.01));
    Vec x0{{1.0, 0.0}};
    EXPECT_EQ(flow_compare(a, a, x0, 10, 1e-2).max_divergence, 0);
    FlowCompareReport r = flow_compare(a, b, x0, 10, 1e-2);
    EXPECT_GT(r.max_divergence, 5e-2);
    EXPECT_LE(r.final_divergence, r.max_divergence);
    EXPECT_THROW(flow_compare(a, b, x0, 1, 1e-2, Method::ProjectedRk4), std::invalid_argument);
}

TEST(Relatedness, ConstantAndMomentumTestFunctions) {
    Vec x0{{0.8, -0.3, 0.0, 0.2, 0.5, 0.0}};
    SliceModel s = translation_slice(x0);
    auto probes = sample_probes(s.full, x0, 20, 3, 0.3);
    auto fam = separable_family(Eigen::Vector3d(1, std::sqrt(2.0), 0));
    std::vector<NamedFn> tests = {{"one", SmoothMap::from_poly(Poly::constant(6, 4, 1.0))}, {"J", s.full.phi[0]}};
    RelatednessReport r = relatedness_check(fam, s, probes, {0.0, 1e-2}, tests);
    EXPECT_TRUE(r.pass);
    ASSERT_EQ(r.max_residual.size(), 2u);
    for (double v : r.max_residual) EXPECT_LT(v, 1e-14);
    // q1 is not drift-free data for the slice but still relates: {H, q1}_D = {H, q1} on N
    std::vector<NamedFn> q1 = {{"q1", SmoothMap::from_poly(Poly::variable(6, 4, 0))}};
    EXPECT_TRUE(relatedness_check(fam, s, probes, {1e-2}, q1).pass);
    // q3 is the slice function itself: its Dirac bracket vanishes, the canonical one is p3 = 0 on N
    std::vector<NamedFn> q3 = {{"q3", SmoothMap::from_poly(Poly::variable(6, 4, 2))}};
    EXPECT_TRUE(relatedness_check(fam, s, probes, {1e-2}, q3).pass);
    EXPECT_FALSE(relatedness_check(fam, s, {}, {0.0}, tests).pass);
}

TEST(Csv, HeaderAndRoundTripPrecision) {
    Trajectory tr;
    tr.times = {0.0, 0.1};
    tr.states = {Vec{{1.0 / 3, -2.0}}, Vec{{0.5, 1e-300}}};
    tr.diagnostics["H"] = {0.25, 0.125};
    std::ostringstream os;
    write_csv(tr, os);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "t,x1,x2,diag:H");
    std::getline(is, line);
    EXPECT_EQ(line, "0,0.33333333333333331,-2,0.25");
    EXPECT_EQ(std::stod(format_g17(1.0 / 3)), 1.0 / 3);
    std::getline(is, line);
    EXPECT_EQ(line, "0.10000000000000001,0.5,1e-300,0.125");
}
