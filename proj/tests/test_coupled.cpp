#include "test_support.hpp"

#include "pertfbsde/coupled.hpp"
#include "pertfbsde/errors.hpp"

using namespace pertfbsde;
using namespace testing_support;

namespace {

CascadeConfig config(std::size_t n, std::uint64_t seed = 1) {
    CascadeConfig c;
    c.n_particles = n;
    c.seed = seed;
    return c;
}

CoupledFn constant_feedback(double c) {
    return [c](double, std::span<const double>, double, std::span<const double>, int, Jet& out) {
        for (double& v : out.value) v = c;
    };
}

/// A catalog model with identically zero feedback wired in.
CatalogEntry with_zero_feedback(CatalogEntry e) {
    e.model.drift_feedback = constant_feedback(0.0);
    e.model.vol_feedback = constant_feedback(0.0);
    return e;
}

const std::vector<double> x0{0.0};
const std::vector<double> x100{100.0};

}  // namespace

TEST(Sources, NoFeedbackIsComposedDriver) {
    const auto e = with_zero_feedback(builtin_model("linear_discount"));
    CoupledSources s(e.model, e.zeroth);
    const std::vector<double> x{90.0};
    EXPECT_DOUBLE_EQ(s.g1(0.3, x), -0.05 * 90.0);
    for (double c : s.eta_correction(0.3, x)) EXPECT_EQ(c, 0.0);
}

TEST(Sources, ConstantDriftFeedback) {
    const auto e = builtin_model("coupled_drift", {{"m", 0.1}});
    CoupledSources s(e.model, e.zeroth);
    const std::vector<double> x{0.7};
    EXPECT_DOUBLE_EQ(s.g1(0.2, x), 0.1);
    std::vector<double> grad, hess;
    s.g1_derivatives(0.2, x, grad, hess);
    EXPECT_NEAR(grad[0], 0.0, 1e-12);
    EXPECT_NEAR(hess[0], 0.0, 1e-9);
}

TEST(Sources, ConstantVolFeedbackWithLinearValue) {
    const auto e = builtin_model("coupled_vol", {{"e", 0.1}});
    CoupledSources s(e.model, e.zeroth);
    const std::vector<double> x{0.7};
    EXPECT_EQ(s.g1(0.2, x), 0.0);
    EXPECT_DOUBLE_EQ(s.eta_correction(0.2, x)[0], 0.1);
}

TEST(Sources, SecondOrderCoefficientsOfCoupledModel) {
    const CoupledOU p;
    const auto e = p.entry();
    CoupledSources s(e.model, e.zeroth);
    const double t = 0.3, xv = 0.2;
    const std::vector<double> x{xv};
    const double E = std::exp(-p.k * (p.T - t));
    const double vx = E + 2 * p.q * xv * E * E, vxx = 2 * p.q * E * E;
    const double v0 = xv * E + p.q * (xv * xv * E * E + p.s * p.s * (1 - E * E) / (2 * p.k));
    const double z0 = p.s * vx;
    // G1 = f + v_x mu + v_xx sigma eta
    EXPECT_NEAR(s.g1(t, x), -p.rc * v0 + p.c * z0 * z0 + vx * p.m * z0 + vxx * p.s * p.e * v0, 1e-12);
    const auto c = s.g2_coefficients(t, x);
    // D f = v1 f_v + z1 f_z, D mu = m z1, D eta = e v1
    EXPECT_NEAR(c.cv, -p.rc + vxx * p.s * p.e, 1e-12);
    EXPECT_NEAR(c.cz[0], 2 * p.c * z0 + vx * p.m, 1e-12);
    EXPECT_NEAR(c.mu[0], p.m * z0, 1e-12);
    EXPECT_NEAR(c.se[0], p.s * p.e * v0, 1e-12);
    EXPECT_NEAR(c.eta_corr[0], vx * p.e * v0, 1e-12);
    EXPECT_NEAR(c.explicit_part, 0.5 * vxx * p.e * v0 * p.e * v0, 1e-12);
}

TEST(Sources, RequiresSecondPartialsOfValue) {
    auto e = builtin_model("coupled_drift");
    e.zeroth.value_order = 1;
    EXPECT_THROW(build_sources(e.model, e.zeroth), ConfigError);
}

TEST(CoupledV1, ConstantSource) {
    const auto e = builtin_model("coupled_drift", {{"m", 0.1}});
    const auto s = build_sources(e.model, e.zeroth);
    const auto v = estimate_v1_coupled(s, x0, config(20000));
    EXPECT_TRUE(agrees(v, 0.1));
    const auto v2 = estimate_v2_coupled(s, x0, config(20000));
    EXPECT_TRUE(agrees(v2, 0.0));
}

TEST(CoupledV1, ZeroEverythingIsExactlyZero) {
    auto e = with_zero_feedback(builtin_model("constant_driver", {{"c", 0.0}}));
    const auto s = build_sources(e.model, e.zeroth);
    for (const auto& v : {estimate_v1_coupled(s, x0, config(500)), estimate_z1_coupled(s, x0, config(500)),
                          estimate_v2_coupled(s, x0, config(500))}) {
        EXPECT_EQ(v.value[0], 0.0);
        EXPECT_EQ(v.std_error[0], 0.0);
    }
}

TEST(CoupledZ1, ConstantVolFeedbackIsExact) {
    const auto e = builtin_model("coupled_vol", {{"e", 0.1}});
    const auto s = build_sources(e.model, e.zeroth);
    const auto z = estimate_z1_coupled(s, x0, config(2000));
    EXPECT_DOUBLE_EQ(z.value[0], 0.1);
    EXPECT_EQ(z.std_error[0], 0.0);
}

TEST(CoupledZ1, ConstantSourceHasNoVariance) {
    const auto e = builtin_model("coupled_drift");
    const auto s = build_sources(e.model, e.zeroth);
    const auto z = estimate_z1_coupled(s, x0, config(2000));
    EXPECT_EQ(z.value[0], 0.0);
    EXPECT_EQ(z.std_error[0], 0.0);
}

TEST(DecoupledReduction, MatchesCascadeEstimators) {
    for (const std::string name : {"linear_discount", "cva_positive_part", "constant_driver", "quadratic_v"}) {
        const auto base = builtin_model(name);
        const auto e = with_zero_feedback(base);
        const auto s = build_sources(e.model, e.zeroth);
        const std::vector<double>& x = (name == "linear_discount" || name == "cva_positive_part") ? x100 : x0;
        const auto c = config(20000, 5);
        EXPECT_TRUE(agree_pair(estimate_v1_coupled(s, x, c), estimate_v1(base.model, base.zeroth, x, c))) << name;
        EXPECT_TRUE(agree_pair(estimate_z1_coupled(s, x, c), estimate_z1(base.model, base.zeroth, x, c))) << name;
        EXPECT_TRUE(agree_pair(estimate_v2_coupled(s, x, c), estimate_v2(base.model, base.zeroth, x, c))) << name;
    }
}

TEST(CoupledV2, TermsAddUp) {
    const auto e = CoupledOU{}.entry();
    const auto full = build_sources(e.model, e.zeroth);
    const std::vector<double> x{0.2};
    const auto c = config(3000, 8);
    const double total = estimate_v2_coupled(full, x, c).value[0];
    double sum = 0.0;
    for (int k = 0; k < 6; ++k) {
        CoupledSources only = full;
        only.enable_only(static_cast<G2Term>(k));
        sum += estimate_v2_coupled(only, x, c).value[0];
    }
    EXPECT_NEAR(sum, total, 1e-12 * std::max(1.0, std::abs(total)));
}

class CoupledAgainstPde : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        entry_ = new CatalogEntry(CoupledOU{}.entry());
        Grid1D g;
        g.x_min = x_start - 3.0;
        g.x_max = x_start + 3.0;
        g.n_space = 601;
        g.n_time = 800;
        coef_ = new EpsilonCoefficients(pde_eps_coefficients(entry_->model, g, x_start, 0.05));
    }
    static void TearDownTestSuite() {
        delete entry_;
        delete coef_;
    }
    static constexpr double x_start = 0.2;
    static CatalogEntry* entry_;
    static EpsilonCoefficients* coef_;
    const std::vector<double> x{x_start};
};
CatalogEntry* CoupledAgainstPde::entry_ = nullptr;
EpsilonCoefficients* CoupledAgainstPde::coef_ = nullptr;

TEST_F(CoupledAgainstPde, V1) {
    const auto s = build_sources(entry_->model, entry_->zeroth);
    EXPECT_TRUE(agrees(estimate_v1_coupled(s, x, config(40000)), coef_->v[1], 1e-5));
}
TEST_F(CoupledAgainstPde, Z1) {
    const auto s = build_sources(entry_->model, entry_->zeroth);
    EXPECT_TRUE(agrees(estimate_z1_coupled(s, x, config(40000)), coef_->z[1], 1e-5));
}
TEST_F(CoupledAgainstPde, V2) {
    const auto s = build_sources(entry_->model, entry_->zeroth);
    EXPECT_TRUE(agrees(estimate_v2_coupled(s, x, config(40000)), coef_->v[2], 1e-5));
}
