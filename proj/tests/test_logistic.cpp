#include "testutil.hpp"

#include <cmath>
#include <vector>

#include "mfpca/errors.hpp"
#include "mfpca/grid.hpp"
#include "mfpca/logistic.hpp"
#include "mfpca/rng.hpp"

using namespace mfpca;
using Catch::Matchers::WithinAbs;

namespace {

// Grouped 2x2 design: counts per (x, y) cell.
RegressionSpec two_by_two(int n00, int n01, int n10, int n11) {
    const int n = n00 + n01 + n10 + n11;
    RegressionSpec spec;
    spec.outcome.resize(n);
    spec.design.resize(n, 1);
    spec.names = {"x"};
    int r = 0;
    for (int k = 0; k < n00; ++k, ++r) { spec.design(r, 0) = 0; spec.outcome(r) = 0; }
    for (int k = 0; k < n01; ++k, ++r) { spec.design(r, 0) = 0; spec.outcome(r) = 1; }
    for (int k = 0; k < n10; ++k, ++r) { spec.design(r, 0) = 1; spec.outcome(r) = 0; }
    for (int k = 0; k < n11; ++k, ++r) { spec.design(r, 0) = 1; spec.outcome(r) = 1; }
    return spec;
}
}  // namespace

TEST_CASE("two-by-two table has closed-form estimates") {
    const RegressionSpec spec = two_by_two(40, 20, 15, 30);
    const RegressionFit fit = fit_logistic(spec);

    // Intercept log(20/40); slope is the log odds ratio log(30*40 / (15*20)).
    REQUIRE_THAT(fit.coef(0), WithinAbs(std::log(0.5), 1e-8));
    REQUIRE_THAT(fit.coef(1), WithinAbs(std::log(4.0), 1e-8));
    REQUIRE_THAT(fit.se(0), WithinAbs(std::sqrt(1.0 / 40 + 1.0 / 20), 1e-8));
    REQUIRE_THAT(fit.se(1),
                 WithinAbs(std::sqrt(1.0 / 40 + 1.0 / 20 + 1.0 / 15 + 1.0 / 30),
                           1e-8));
    REQUIRE_THAT(fit.odds_ratio(1), WithinAbs(4.0, 1e-7));
    const double se1 = fit.se(1);
    REQUIRE_THAT(fit.odds_lower(1),
                 WithinAbs(std::exp(std::log(4.0) - 1.959963984540054 * se1), 1e-7));
    REQUIRE_THAT(fit.odds_upper(1),
                 WithinAbs(std::exp(std::log(4.0) + 1.959963984540054 * se1), 1e-7));
    REQUIRE(fit.significant[1]);

    // Log likelihood at the MLE: fitted cell probabilities 1/3 and 2/3.
    const double ll = 35.0 * std::log(1.0 / 3.0) + 70.0 * std::log(2.0 / 3.0);
    REQUIRE_THAT(fit.loglik, WithinAbs(ll, 1e-8));
    REQUIRE_THAT(fit.zstat(1), WithinAbs(std::log(4.0) / se1, 1e-7));
    REQUIRE_THAT(fit.pvalue(1),
                 WithinAbs(2.0 * normal_cdf(-std::log(4.0) / se1), 1e-9));
    REQUIRE(fit.names[0] == "(intercept)");
    REQUIRE(fit.names[1] == "x");
}

TEST_CASE("intercept-only model reproduces the sample frequency") {
    RegressionSpec spec;
    spec.outcome = Eigen::VectorXd::Zero(100);
    spec.outcome.head(30).setOnes();
    spec.design.resize(100, 0);
    const RegressionFit fit = fit_logistic(spec);
    REQUIRE_THAT(fit.coef(0), WithinAbs(std::log(30.0 / 70.0), 1e-6));
    REQUIRE_THAT(fit.se(0), WithinAbs(std::sqrt(1.0 / (100 * 0.3 * 0.7)), 1e-6));
}

TEST_CASE("coefficients recover the generating model within three SEs") {
    const int n = 2000;
    Rng rng(23, {1000});
    RegressionSpec spec;
    spec.outcome.resize(n);
    spec.design.resize(n, 2);
    spec.names = {"a", "b"};
    const double b0 = 0.5, b1 = -1.0, b2 = 0.25;
    for (int r = 0; r < n; ++r) {
        spec.design(r, 0) = rng.normal();
        spec.design(r, 1) = 2.0 * rng.uniform() - 1.0;
        const double eta =
            b0 + b1 * spec.design(r, 0) + b2 * spec.design(r, 1);
        const double p = 1.0 / (1.0 + std::exp(-eta));
        spec.outcome(r) = rng.uniform() <= p ? 1.0 : 0.0;
    }
    const RegressionFit fit = fit_logistic(spec);
    REQUIRE_THAT(fit.coef(0), WithinAbs(b0, 3.0 * fit.se(0)));
    REQUIRE_THAT(fit.coef(1), WithinAbs(b1, 3.0 * fit.se(1)));
    REQUIRE_THAT(fit.coef(2), WithinAbs(b2, 3.0 * fit.se(2)));
    REQUIRE(fit.iterations < 25);

    RegressionSpec null_spec;
    null_spec.outcome = spec.outcome;
    null_spec.design.resize(n, 0);
    REQUIRE(fit.loglik > fit_logistic(null_spec).loglik);
}

TEST_CASE("perfectly separated data are reported, not fitted") {
    const int n = 60;
    RegressionSpec spec;
    spec.outcome.resize(n);
    spec.design.resize(n, 1);
    spec.names = {"x"};
    for (int r = 0; r < n; ++r) {
        spec.design(r, 0) = (r - n / 2) + (r >= n / 2 ? 1.0 : 0.0);
        spec.outcome(r) = spec.design(r, 0) > 0 ? 1.0 : 0.0;
    }
    REQUIRE_THROWS_AS(fit_logistic(spec), SeparationDetected);
}

TEST_CASE("rank-deficient designs are rejected up front") {
    RegressionSpec spec = two_by_two(10, 10, 10, 10);
    spec.design.conservativeResize(Eigen::NoChange, 2);
    spec.design.col(1) = 2.0 * spec.design.col(0);  // exact copy up to scale
    spec.names = {"x", "x2"};
    REQUIRE_THROWS_AS(fit_logistic(spec), RankDeficient);

    RegressionSpec constant = two_by_two(10, 10, 10, 10);
    constant.design.setOnes();  // collinear with the intercept
    REQUIRE_THROWS_AS(fit_logistic(constant), RankDeficient);
}

TEST_CASE("input validation") {
    RegressionSpec spec = two_by_two(5, 5, 5, 5);
    spec.outcome(3) = 0.5;
    REQUIRE_THROWS_AS(fit_logistic(spec), InvalidArgument);

    RegressionSpec names = two_by_two(5, 5, 5, 5);
    names.names = {};
    REQUIRE_THROWS_AS(fit_logistic(names), ShapeError);

    RegressionSpec tiny;
    tiny.outcome = Eigen::VectorXd::Zero(2);
    tiny.outcome(1) = 1.0;
    tiny.design.resize(2, 1);
    tiny.design << 0.0, 1.0;
    tiny.names = {"x"};
    REQUIRE_THROWS_AS(fit_logistic(tiny), InsufficientData);
}

TEST_CASE("categorical covariates expand with a reference cell") {
    const std::vector<std::string> values{"day", "night", "day", "shift",
                                         "night"};
    auto [X, names] = encode_categorical(values, "period");
    REQUIRE(names == std::vector<std::string>{"period=night", "period=shift"});
    Eigen::MatrixXd expect(5, 2);
    expect << 0, 0,
              1, 0,
              0, 0,
              0, 1,
              1, 0;
    REQUIRE(X == expect);
    REQUIRE_THROWS_AS(encode_categorical({"a", "a"}, "c"), NoVariance);
}

TEST_CASE("per-standard-deviation effects and the odds anchor") {
    REQUIRE_THAT(standardize_coef(-3.18, 0.5), WithinAbs(-1.59, 1e-12));
    REQUIRE_THAT(std::exp(standardize_coef(-3.18, 0.5)), WithinAbs(0.204, 5e-4));
    REQUIRE_THROWS_AS(standardize_coef(1.0, 0.0), InvalidArgument);
}

TEST_CASE("coefficient function from component loadings") {
    auto grid = SampledGrid::uniform(9);
    EigenSystem sys;
    sys.level = 1;
    sys.grid = grid;
    sys.eigenvalues = Eigen::VectorXd::Ones(2);
    sys.eigenfunctions = Eigen::MatrixXd::Zero(9, 2);
    sys.eigenfunctions.col(0).setConstant(1.0);
    sys.eigenfunctions.col(1) =
        (2.0 * grid->points().array() - 1.0).matrix();
    sys.n_selected = 2;
    Eigen::VectorXd betas(2);
    betas << 2.0, -1.0;
    const Curve beta_t = reconstruct_beta_curve(betas, sys);
    for (int s = 0; s < 9; ++s)
        REQUIRE_THAT(beta_t.values(s),
                     WithinAbs(2.0 - (2.0 * grid->points()(s) - 1.0), 1e-13));
    Eigen::VectorXd toomany(3);
    toomany.setOnes();
    REQUIRE_THROWS_AS(reconstruct_beta_curve(toomany, sys), ShapeError);
}
