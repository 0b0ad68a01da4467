#include "testutil.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "mfpca/decomposition.hpp"
#include "mfpca/errors.hpp"
#include "mfpca/grid.hpp"
#include "mfpca/rng.hpp"

using namespace mfpca;
using Catch::Matchers::WithinAbs;

namespace {
constexpr double pi = std::numbers::pi;

Eigen::VectorXd unitized(const SampledGrid& grid, Eigen::VectorXd v) {
    return v / l2_norm(grid, v);
}
}  // namespace

TEST_CASE("rank-one kernel yields exactly one component") {
    auto grid = SampledGrid::uniform(53);
    Eigen::VectorXd phi(53);
    for (int s = 0; s < 53; ++s)
        phi(s) = 1.0 + std::cos(pi * grid->points()(s));
    phi = unitized(*grid, phi);
    const double lambda = 1.7;
    const EigenSystem sys =
        eigendecompose(lambda * phi * phi.transpose(), grid, 1);
    REQUIRE(sys.eigenvalues.size() == 1);
    REQUIRE_THAT(sys.eigenvalues(0), WithinAbs(lambda, 1e-10));
    REQUIRE((sys.eigenfunctions.col(0) - phi).cwiseAbs().maxCoeff() < 1e-8);
    REQUIRE_THAT(l2_norm(*grid, sys.eigenfunctions.col(0)),
                 WithinAbs(1.0, 1e-12));
    REQUIRE(sys.level == 1);
}

TEST_CASE("two trigonometric components are separated") {
    auto grid = SampledGrid::uniform(101);
    Eigen::VectorXd f1(101), f2(101);
    for (int s = 0; s < 101; ++s) {
        const double t = grid->points()(s);
        f1(s) = std::sqrt(2.0) * std::sin(2.0 * pi * t);
        f2(s) = std::sqrt(2.0) * std::cos(2.0 * pi * t);
    }
    const Eigen::MatrixXd K =
        2.0 * f1 * f1.transpose() + 0.5 * f2 * f2.transpose();
    const EigenSystem sys = eigendecompose(K, grid, 2);
    REQUIRE(sys.eigenvalues.size() == 2);
    REQUIRE_THAT(sys.eigenvalues(0), WithinAbs(2.0, 1e-3));
    REQUIRE_THAT(sys.eigenvalues(1), WithinAbs(0.5, 1e-3));
    // Leading eigenfunction is the sine up to quadrature error; its grid
    // integral vanishes, so the sign rule falls back to the first coordinate
    // of meaningful size, which keeps the positive half-wave first.
    REQUIRE(sys.eigenfunctions(1, 0) > 0.0);
    REQUIRE((sys.eigenfunctions.col(0) - unitized(*grid, f1))
                .cwiseAbs()
                .maxCoeff() < 5e-3);
}

TEST_CASE("components are orthonormal and reconstruct the kernel") {
    auto grid = SampledGrid::uniform(47);
    Rng rng(17, {800});
    for (int trial = 0; trial < 5; ++trial) {
        const Eigen::MatrixXd K = testutil::random_psd(47, 6, rng);
        const EigenSystem sys = eigendecompose(K, grid, 1);
        const double scale = K.cwiseAbs().maxCoeff();

        for (Eigen::Index a = 0; a < sys.eigenvalues.size(); ++a) {
            REQUIRE(sys.eigenvalues(a) > 0.0);
            if (a > 0) REQUIRE(sys.eigenvalues(a) <= sys.eigenvalues(a - 1));
            for (Eigen::Index b = 0; b <= a; ++b) {
                const double ip = inner_product(*grid, sys.eigenfunctions.col(a),
                                                sys.eigenfunctions.col(b));
                REQUIRE_THAT(ip, WithinAbs(a == b ? 1.0 : 0.0, 1e-8));
            }
        }

        Eigen::MatrixXd recon = Eigen::MatrixXd::Zero(47, 47);
        for (Eigen::Index k = 0; k < sys.eigenvalues.size(); ++k)
            recon += sys.eigenvalues(k) * sys.eigenfunctions.col(k) *
                     sys.eigenfunctions.col(k).transpose();
        REQUIRE((recon - K).cwiseAbs().maxCoeff() < 1e-8 * scale);
    }
}

TEST_CASE("sign convention prefers a positive integral") {
    auto grid = SampledGrid::uniform(31);
    Eigen::VectorXd phi(31);
    for (int s = 0; s < 31; ++s)
        phi(s) = -(1.0 + grid->points()(s));  // strictly negative
    phi = unitized(*grid, phi);
    const EigenSystem sys = eigendecompose(phi * phi.transpose(), grid, 1);
    // The stored eigenfunction must be the flipped, positive version.
    REQUIRE((sys.eigenfunctions.col(0) + phi).cwiseAbs().maxCoeff() < 1e-8);
    REQUIRE((sys.eigenfunctions.col(0).array() > 0.0).all());
}

TEST_CASE("eigendecompose validates its input") {
    auto grid = SampledGrid::uniform(8);
    REQUIRE_THROWS_AS(eigendecompose(Eigen::MatrixXd::Zero(7, 7), grid, 1),
                      ShapeError);
    Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(8, 8);
    bad(0, 7) = 1.0;
    REQUIRE_THROWS_AS(eigendecompose(bad, grid, 1), AsymmetricInput);
    // All-zero kernel: nothing survives, but that is legal here.
    const EigenSystem sys =
        eigendecompose(Eigen::MatrixXd::Zero(8, 8), grid, 1);
    REQUIRE(sys.eigenvalues.size() == 0);
}

TEST_CASE("component count selection on the halving ladder") {
    Eigen::VectorXd lam(4);
    lam << 1.0, 0.5, 0.25, 0.125;
    // Cumulative shares: .533, .800, .933, 1.  With P1 = 0.9 the 'either'
    // rule stops at three components; every share clears 1/T so the 'both'
    // rule keeps all four.
    REQUIRE(select_ncomp(lam, 101) == 3);
    REQUIRE(select_ncomp(lam, 101, 0.9, 0.0, SelectionRule::both) == 4);
    REQUIRE(select_ncomp(lam, 101, 0.9, 0.07, SelectionRule::both) == 4);
    REQUIRE(select_ncomp(lam, 101, 0.79, 0.0) == 2);
    REQUIRE(select_ncomp(lam, 101, 1.0, 0.0) == 4);
    // A tiny share triggers the negligible branch before the cumulative
    // target is reached.
    Eigen::VectorXd tail(4);
    tail << 1.0, 0.5, 1e-4, 9e-5;
    REQUIRE(select_ncomp(tail, 101, 1.0) == 3);
    REQUIRE(select_ncomp(tail, 10, 1.0) == 3);

    Eigen::VectorXd asc(2);
    asc << 0.5, 1.0;
    REQUIRE_THROWS_AS(select_ncomp(asc, 101), InvalidArgument);
    REQUIRE_THROWS_AS(select_ncomp(Eigen::VectorXd::Zero(3), 101), NoVariance);
    REQUIRE_THROWS_AS(select_ncomp(lam, 0), InvalidArgument);
}

TEST_CASE("variance share between the two levels") {
    Eigen::VectorXd l1(2), l2(2);
    l1 << 3.0, 1.0;
    l2 << 0.5, 0.5;
    REQUIRE_THAT(rho_w(l1, l2), WithinAbs(0.8, 1e-14));
    REQUIRE_THAT(rho_w(l1, Eigen::VectorXd()), WithinAbs(1.0, 1e-14));
    REQUIRE_THROWS_AS(rho_w(Eigen::VectorXd(), Eigen::VectorXd()), NoVariance);
    Eigen::VectorXd neg(1);
    neg << -1.0;
    REQUIRE_THROWS_AS(rho_w(neg, l2), InvalidVariance);
}

TEST_CASE("end-to-end fit separates subject and visit variation") {
    const int I = 200, J = 3, T = 81;
    auto grid = SampledGrid::uniform(T);
    Eigen::VectorXd f1(T), f2(T), g1(T);
    for (int s = 0; s < T; ++s) {
        const double t = grid->points()(s);
        f1(s) = 1.0;
        f2(s) = std::sqrt(2.0) * std::cos(2.0 * pi * t);
        g1(s) = std::sqrt(2.0) * std::sin(2.0 * pi * t);
    }
    Rng rng(17, {801});
    Eigen::MatrixXd values(I * J, T);
    for (int i = 0; i < I; ++i) {
        const Eigen::VectorXd zi =
            rng.normal() * f1 + std::sqrt(0.25) * rng.normal() * f2;
        for (int j = 0; j < J; ++j)
            values.row(i * J + j) =
                (zi + std::sqrt(0.5) * rng.normal() * g1).transpose();
    }
    const MultilevelSample sample(
        grid, I, J, values,
        std::vector<std::uint8_t>(static_cast<std::size_t>(I * J), 1));

    MfpcaOptions opt;
    opt.smooth = false;
    const MfpcaFit fit = fit_mfpca(sample, opt);

    REQUIRE_THAT(fit.level1.eigenvalues(0), WithinAbs(1.0, 0.2));
    REQUIRE_THAT(fit.level1.eigenvalues(1), WithinAbs(0.25, 0.1));
    REQUIRE_THAT(fit.level2.eigenvalues(0), WithinAbs(0.5, 0.15));
    // True share is 1.25 / 1.75.
    REQUIRE_THAT(fit.rho_w, WithinAbs(1.25 / 1.75, 0.08));
    REQUIRE(fit.level1.n_selected >= 2);
    REQUIRE(fit.level2.n_selected >= 1);
    REQUIRE(fit.sigma2 == 0.0);

    // Forced counts override the rule and clamp to what exists.
    MfpcaOptions forced = opt;
    forced.force_n1 = 1;
    forced.force_n2 = 500;
    const MfpcaFit ffit = fit_mfpca(sample, forced);
    REQUIRE(ffit.level1.n_selected == 1);
    REQUIRE(ffit.level2.n_selected ==
            static_cast<int>(ffit.level2.eigenvalues.size()));

    MfpcaOptions bad = opt;
    bad.p1 = 1.5;
    REQUIRE_THROWS_AS(fit_mfpca(sample, bad), InvalidArgument);
    bad = opt;
    bad.force_n1 = -1;
    REQUIRE_THROWS_AS(fit_mfpca(sample, bad), InvalidArgument);
}

TEST_CASE("a constant sample has no variation to decompose") {
    auto grid = SampledGrid::uniform(12);
    const MultilevelSample sample(grid, 3, 2,
                                  Eigen::MatrixXd::Ones(6, 12),
                                  std::vector<std::uint8_t>(6, 1));
    MfpcaOptions opt;
    opt.smooth = false;
    REQUIRE_THROWS_AS(fit_mfpca(sample, opt), NoVariance);
}
