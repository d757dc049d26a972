#include "test_support.hpp"

#include "pertfbsde/errors.hpp"
#include "pertfbsde/rng.hpp"

using namespace pertfbsde;
using namespace testing_support;

namespace {

CascadeConfig config(std::size_t n, std::uint64_t seed = 1) {
    CascadeConfig c;
    c.n_particles = n;
    c.seed = seed;
    return c;
}

// f(x) = x with constant order-0 functions.
CoupledFn x_driver() {
    return [](double, std::span<const double> x, double, std::span<const double>, int order, Jet& out) {
        out.value[0] = x[0];
        if (order >= 1) out.d1(0, 0) = 1.0;
    };
}

const std::vector<double> x100{100.0};
const std::vector<double> x0{0.0};

}  // namespace

TEST(Interactions, PoissonMeanCount) {
    RngStream rng(1, 0);
    const int n = 20000;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto s = sample_interactions(2.0, 0.0, 1.0, rng, 40);
        total += static_cast<double>(s.count_inside());
        for (std::size_t k = 1; k < s.taus.size(); ++k) ASSERT_LT(s.taus[k - 1], s.taus[k]);
    }
    EXPECT_TRUE(agrees(total / n, 2.0, std::sqrt(2.0 / n)));
}

TEST(Interactions, RejectsNonPositiveRate) {
    RngStream rng(1, 0);
    EXPECT_THROW(sample_interactions(0.0, 0.0, 1.0, rng, 1), ConfigError);
    EXPECT_THROW(sample_interactions(-1.0, 0.0, 1.0, rng, 1), ConfigError);
}

TEST(Interactions, HorizonTieCountsOutside) {
    InteractionSchedule s;
    s.taus = {0.5, 1.0};
    s.horizon = 1.0;
    EXPECT_TRUE(s.inside(0));
    EXPECT_FALSE(s.inside(1));
    EXPECT_EQ(s.count_inside(), 1u);
}

TEST(Weight, Examples) {
    EXPECT_DOUBLE_EQ(weight_fhat(1.0, 0.3, 0.3, 1.7), 1.7);
    EXPECT_NEAR(weight_fhat(2.0, 0.0, 1.0, 3.0), 3.0 * std::exp(2.0) / 2.0, 1e-12);
    EXPECT_NEAR(weight_fhat(2.0, 0.0, 1.0, 3.0), 11.0836, 1e-4);
    EXPECT_EQ(weight_fhat(5.0, 0.0, 0.7, 0.0), 0.0);
}

TEST(Order0, ConstantPayoffHasNoError) {
    const auto e = builtin_model("quadratic_v", {{"K", 2.5}});
    const auto v = estimate_v0(e.model, e.zeroth, x0, config(1000));
    EXPECT_EQ(v.value[0], 2.5);
    EXPECT_EQ(v.std_error[0], 0.0);
}

TEST(Order0, MartingalePayoff) {
    const auto e = builtin_model("linear_discount");
    const auto v = estimate_v0(e.model, e.zeroth, x100, config(20000));
    EXPECT_TRUE(agrees(v, 100.0));
    const auto ec = builtin_model("constant_driver", {{"sigma", 0.3}});
    const auto z = estimate_z0(ec.model, ec.zeroth, x0, config(1000));
    EXPECT_TRUE(agrees(z, 0.3));
}

TEST(Order1, ConstantDriver) {
    const auto e = builtin_model("constant_driver", {{"c", 3.0}, {"T", 2.0}});
    const auto v = estimate_v1(e.model, e.zeroth, x0, config(20000));
    EXPECT_TRUE(agrees(v, 6.0));
    const auto z = estimate_z1(e.model, e.zeroth, x0, config(2000));
    EXPECT_EQ(z.value[0], 0.0);
    EXPECT_EQ(z.std_error[0], 0.0);
}

TEST(Order1, ZeroDriverIsExactlyZero) {
    const ModelSpec m = abm(0.0, 0.2, 1.0, identity_terminal(), zero_driver());
    const auto z0 = identity_zeroth([](double) { return 0.2; }, [](double) { return 0.0; }, [](double) { return 0.0; });
    for (int n = 1; n <= 3; ++n) {
        const auto v = estimate(Component::V, n, m, z0, x0, config(500));
        EXPECT_EQ(v.value[0], 0.0);
        EXPECT_EQ(v.std_error[0], 0.0);
        EXPECT_EQ(v.n_nonzero, 0u);
    }
}

TEST(Order1, LinearDiscount) {
    const auto e = builtin_model("linear_discount");
    EXPECT_TRUE(agrees(estimate_v1(e.model, e.zeroth, x100, config(20000)), -5.0));
    EXPECT_TRUE(agrees(estimate_z1(e.model, e.zeroth, x100, config(20000)), -0.05 * 20.0));
}

TEST(Order1, StateDriverGradient) {
    const ModelSpec m = abm(0.0, 0.2, 1.0, identity_terminal(), x_driver());
    const auto z0 = constant_zeroth(1.0, 0.0);
    const auto z = estimate_z1(m, z0, x0, config(20000));
    EXPECT_TRUE(agrees(z, 0.2));
}

TEST(Order2, NoValueOrMartingaleDependence) {
    const ModelSpec m = abm(0.0, 0.2, 1.0, identity_terminal(), x_driver());
    const auto z0 = identity_zeroth([](double) { return 0.2; }, [](double) { return 0.0; }, [](double) { return 0.0; });
    for (auto c : {Component::V, Component::Z}) {
        const auto e = estimate(c, 2, m, z0, x0, config(500));
        EXPECT_EQ(e.value[0], 0.0);
        EXPECT_EQ(e.std_error[0], 0.0);
    }
    const auto v3 = estimate_v3(m, z0, x0, config(500));
    EXPECT_EQ(v3.value[0], 0.0);
}

TEST(Order2, LinearDiscountTaylor) {
    const auto e = builtin_model("linear_discount");
    EXPECT_TRUE(agrees(estimate_v2(e.model, e.zeroth, x100, config(20000)), 0.125));
    EXPECT_TRUE(agrees(estimate_z2(e.model, e.zeroth, x100, config(20000)), 0.05 * 0.05 / 2 * 20.0));
    EXPECT_TRUE(agrees(estimate_v3(e.model, e.zeroth, x100, config(20000)), -0.05 * 0.05 * 0.05 / 6 * 100.0));
}

TEST(Order2, QuadraticValueReduction) {
    const auto e = builtin_model("quadratic_v", {{"T", 0.5}});
    const auto cfg = config(40000);
    EXPECT_TRUE(agrees(estimate_v1(e.model, e.zeroth, x0, cfg), 0.5));
    EXPECT_TRUE(agrees(estimate_v2(e.model, e.zeroth, x0, cfg), 0.25));
    EXPECT_TRUE(agrees(estimate_v3(e.model, e.zeroth, x0, cfg), 0.125));
    for (int n = 0; n <= 2; ++n) {
        const auto z = estimate(Component::Z, n, e.model, e.zeroth, x0, config(2000));
        EXPECT_EQ(z.value[0], 0.0);
        EXPECT_EQ(z.n_nonzero, 0u);
    }
}

TEST(Order3, ConstantDriverVanishes) {
    const auto e = builtin_model("constant_driver");
    const auto v = estimate_v3(e.model, e.zeroth, x0, config(1000));
    EXPECT_EQ(v.value[0], 0.0);
    EXPECT_EQ(v.std_error[0], 0.0);
}

TEST(Gating, ContributingCountsMatchPoissonProbabilities) {
    const auto e = builtin_model("linear_discount");
    const std::size_t n = 20000;
    const double lt = 2.0;  // lambda (T - t) at the default intensity
    const double p1 = 1.0 - std::exp(-lt);
    const double p2 = 1.0 - std::exp(-lt) * (1.0 + lt);
    const auto check = [n](std::size_t count, double p) {
        return agrees(static_cast<double>(count) / n, p, std::sqrt(p * (1 - p) / n));
    };
    EXPECT_TRUE(check(estimate_v1(e.model, e.zeroth, x100, config(n)).n_contributing, p1));
    EXPECT_TRUE(check(estimate_z1(e.model, e.zeroth, x100, config(n)).n_contributing, p1));
    EXPECT_TRUE(check(estimate_v2(e.model, e.zeroth, x100, config(n)).n_contributing, p2));
}

TEST(LambdaInvariance, LinearDiscountOrders) {
    const auto e = builtin_model("linear_discount");
    for (int order = 1; order <= 3; ++order) {
        std::vector<OrderEstimate> runs;
        for (double scale : {0.5, 2.0, 8.0}) {
            CascadeConfig c = config(20000, 10 + static_cast<std::uint64_t>(scale * 2));
            c.lambda = scale;
            runs.push_back(estimate(Component::V, order, e.model, e.zeroth, x100, c));
        }
        EXPECT_TRUE(agree_pair(runs[0], runs[1])) << order;
        EXPECT_TRUE(agree_pair(runs[0], runs[2])) << order;
        EXPECT_TRUE(agree_pair(runs[1], runs[2])) << order;
    }
}

TEST(Determinism, SameSeedAndWorkers) {
    const auto e = builtin_model("cva_positive_part");
    CascadeConfig c = config(3000, 42);
    c.workers = 3;
    const auto a = estimate_z2(e.model, e.zeroth, x100, c);
    const auto b = estimate_z2(e.model, e.zeroth, x100, c);
    EXPECT_EQ(a.value, b.value);
    EXPECT_EQ(a.std_error, b.std_error);
    c.workers = 1;
    const auto s = estimate_z2(e.model, e.zeroth, x100, c);
    EXPECT_TRUE(agree_pair(a, s));
    c.seed = 43;
    const auto d = estimate_z2(e.model, e.zeroth, x100, c);
    EXPECT_NE(a.value, d.value);
}

TEST(Combine, Totals) {
    OrderEstimate v0{0, Component::V, {1.0}, {0.0}, 10, 10, 10};
    OrderEstimate v1{1, Component::V, {0.5}, {0.03}, 10, 10, 10};
    OrderEstimate v2{2, Component::V, {0.25}, {0.04}, 10, 10, 10};
    auto r = combine_orders({v0}, 1.0);
    EXPECT_EQ(r.total_v[0], 1.0);
    r = combine_orders({v0, v1, v2}, 0.0);
    EXPECT_EQ(r.total_v[0], 1.0);
    EXPECT_EQ(r.total_v_se[0], 0.0);
    r = combine_orders({v0, v1, v2}, 2.0);
    EXPECT_DOUBLE_EQ(r.total_v[0], 1.0 + 1.0 + 1.0);
    EXPECT_DOUBLE_EQ(r.total_v_se[0], std::hypot(2 * 0.03, 4 * 0.04));
    EXPECT_THROW(combine_orders({v1}, 1.0), ConfigError);
    EXPECT_THROW(combine_orders({v0, v1, v1}, 1.0), ConfigError);
    ASSERT_NE(r.find(Component::V, 2), nullptr);
    EXPECT_EQ(r.find(Component::Z, 0), nullptr);
}

TEST(Combine, QuadraticPartialSum) {
    const auto e = builtin_model("quadratic_v", {{"T", 0.5}});
    std::vector<OrderEstimate> est;
    for (int n = 0; n <= 3; ++n) est.push_back(estimate(Component::V, n, e.model, e.zeroth, x0, config(20000)));
    const auto r = combine_orders(est, 1.0);
    EXPECT_TRUE(agrees(r.total_v[0], 1.875, r.total_v_se[0]));
}

TEST(Validation, RejectsBadInputs) {
    const auto e = builtin_model("linear_discount");
    EXPECT_THROW(estimate_v1(e.model, e.zeroth, std::vector<double>{1.0, 2.0}, config(100)), ConfigError);
    CascadeConfig c = config(100);
    c.t = 1.0;
    EXPECT_THROW(estimate_v1(e.model, e.zeroth, x100, c), ConfigError);
    EXPECT_THROW(estimate(Component::Z, 3, e.model, e.zeroth, x100, config(100)), ConfigError);
    const auto cd = builtin_model("coupled_drift");
    EXPECT_THROW(estimate_v1(cd.model, cd.zeroth, x0, config(100)), ConfigError);
}

// Every order against eps-derivatives of the semilinear PDE for a model with
// state-dependent volatility and a driver depending on v and z.
class NonlinearAgainstPde : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        const NonlinearDecoupled p;
        entry_ = new CatalogEntry(p.entry());
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
    static constexpr double x_start = 0.4;
    static CatalogEntry* entry_;
    static EpsilonCoefficients* coef_;
    const std::vector<double> x{x_start};
};
CatalogEntry* NonlinearAgainstPde::entry_ = nullptr;
EpsilonCoefficients* NonlinearAgainstPde::coef_ = nullptr;

TEST_F(NonlinearAgainstPde, OrderZeroFunctions) {
    EXPECT_NEAR(coef_->v[0], x_start, 1e-6);
    EXPECT_NEAR(coef_->z[0], NonlinearDecoupled{}.vol(x_start), 1e-4);
}

TEST_F(NonlinearAgainstPde, V1) {
    EXPECT_TRUE(agrees(estimate_v1(entry_->model, entry_->zeroth, x, config(40000)), coef_->v[1], 1e-5));
}
TEST_F(NonlinearAgainstPde, V2) {
    EXPECT_TRUE(agrees(estimate_v2(entry_->model, entry_->zeroth, x, config(40000)), coef_->v[2], 1e-5));
}
TEST_F(NonlinearAgainstPde, V3) {
    EXPECT_TRUE(agrees(estimate_v3(entry_->model, entry_->zeroth, x, config(40000)), coef_->v[3], 1e-5));
}
TEST_F(NonlinearAgainstPde, Z1) {
    EXPECT_TRUE(agrees(estimate_z1(entry_->model, entry_->zeroth, x, config(40000)), coef_->z[1], 1e-5));
}
TEST_F(NonlinearAgainstPde, Z2) {
    EXPECT_TRUE(agrees(estimate_z2(entry_->model, entry_->zeroth, x, config(40000)), coef_->z[2], 1e-5));
}

TEST(Bump, Z1AndZ2MatchValueGradient) {
    const auto e = builtin_model("linear_discount");
    const CascadeConfig c = config(20000, 3);
    const std::vector<double> sigma{0.2 * 100.0};
    for (int n = 1; n <= 2; ++n) {
        const auto z = estimate(Component::Z, n, e.model, e.zeroth, x100, c);
        const VSamplerBuilder b = [&](std::span<const double> xs) { return v_sampler(n, e.model, e.zeroth, xs, c); };
        const auto rep = check_gradient_vs_bump(b, z, x100, 1.0, sigma, McConfig{20000, 3, 999, 1});
        EXPECT_TRUE(rep.pass) << n << " bump " << rep.bump_value[0] << " z " << rep.z_value[0];
    }
}
