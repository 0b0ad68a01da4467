#include "testutil.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "mfpca/decomposition.hpp"
#include "mfpca/errors.hpp"
#include "mfpca/grid.hpp"
#include "mfpca/moments.hpp"
#include "mfpca/rng.hpp"
#include "mfpca/scores.hpp"

using namespace mfpca;
using Catch::Matchers::WithinAbs;

namespace {
constexpr double pi = std::numbers::pi;

// Weighted Gram-Schmidt so the columns are exactly orthonormal under the
// grid's quadrature, not just in the continuum limit.
Eigen::MatrixXd orthonormalize(const SampledGrid& grid, Eigen::MatrixXd F) {
    for (Eigen::Index k = 0; k < F.cols(); ++k) {
        for (Eigen::Index l = 0; l < k; ++l)
            F.col(k) -= inner_product(grid, F.col(k), F.col(l)) * F.col(l);
        F.col(k) /= l2_norm(grid, F.col(k));
    }
    return F;
}

EigenSystem make_system(GridPtr grid, int level, const Eigen::MatrixXd& phi,
                        const Eigen::VectorXd& lambda) {
    EigenSystem sys;
    sys.level = level;
    sys.grid = std::move(grid);
    sys.eigenvalues = lambda;
    sys.eigenfunctions = phi;
    sys.n_selected = static_cast<int>(lambda.size());
    return sys;
}

MeanEstimate zero_means(GridPtr grid, int J) {
    MeanEstimate means;
    means.mu = Curve(grid, Eigen::VectorXd::Zero(grid->size()));
    for (int j = 0; j < J; ++j)
        means.eta.emplace_back(grid, Eigen::VectorXd::Zero(grid->size()));
    return means;
}

// Joint-Gaussian oracle for one subject of the projection model: stack the
// A and B rows for the present visits, then shrink through the covariance
// form  b = Lam M' (M Lam M' + R)^-1 d.
struct JointOracle {
    Eigen::VectorXd mean;
    Eigen::VectorXd sd;
};

JointOracle pcp_oracle(const std::vector<Eigen::VectorXd>& a_rows,
                       const std::vector<Eigen::VectorXd>& b_rows,
                       const Eigen::MatrixXd& C, const Eigen::VectorXd& lam1,
                       const Eigen::VectorXd& lam2, double s1, double s2) {
    const int n1 = static_cast<int>(lam1.size());
    const int n2 = static_cast<int>(lam2.size());
    const int ni = static_cast<int>(a_rows.size());
    const int p = n1 + ni * n2;
    const int rows = ni * (n1 + n2);
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(rows, p);
    Eigen::VectorXd d(rows);
    Eigen::VectorXd rvar(rows);
    Eigen::VectorXd prior(p);
    prior.head(n1) = lam1;
    for (int v = 0; v < ni; ++v) {
        const int r0 = v * (n1 + n2);
        const int c0 = n1 + v * n2;
        prior.segment(c0, n2) = lam2;
        M.block(r0, 0, n1, n1).setIdentity();
        M.block(r0, c0, n1, n2) = C;
        M.block(r0 + n1, 0, n2, n1) = C.transpose();
        M.block(r0 + n1, c0, n2, n2).setIdentity();
        d.segment(r0, n1) = a_rows[static_cast<std::size_t>(v)];
        d.segment(r0 + n1, n2) = b_rows[static_cast<std::size_t>(v)];
        rvar.segment(r0, n1).setConstant(s1);
        rvar.segment(r0 + n1, n2).setConstant(s2);
    }
    const Eigen::MatrixXd Lam = prior.asDiagonal();
    const Eigen::MatrixXd V = M * Lam * M.transpose() +
                              Eigen::MatrixXd(rvar.asDiagonal());
    const Eigen::MatrixXd VinvM = V.ldlt().solve(M * Lam);
    JointOracle out;
    out.mean = Lam * M.transpose() * V.ldlt().solve(d);
    out.sd = (Lam - Lam * M.transpose() * VinvM).diagonal().cwiseSqrt();
    return out;
}
}  // namespace

TEST_CASE("eigenfunction cross products") {
    auto grid = SampledGrid::uniform(101);
    Eigen::MatrixXd F(101, 3);
    for (int s = 0; s < 101; ++s) {
        const double t = grid->points()(s);
        F(s, 0) = 1.0;
        F(s, 1) = std::sqrt(2.0) * std::sin(2.0 * pi * t);
        F(s, 2) = std::sqrt(2.0) * std::cos(2.0 * pi * t);
    }
    F = orthonormalize(*grid, F);
    Eigen::VectorXd lam1(2), lam2(1);
    lam1 << 1.0, 0.5;
    lam2 << 0.25;
    const EigenSystem l1 = make_system(grid, 1, F.leftCols(2), lam1);
    const EigenSystem l2a = make_system(grid, 2, F.rightCols(1), lam2);
    const Eigen::MatrixXd C0 = compute_C(l1, l2a);
    REQUIRE(C0.rows() == 2);
    REQUIRE(C0.cols() == 1);
    REQUIRE(C0.cwiseAbs().maxCoeff() < 1e-12);

    const EigenSystem l2b = make_system(grid, 2, F.leftCols(1), lam2);
    REQUIRE_THAT(compute_C(l1, l2b)(0, 0), WithinAbs(1.0, 1e-12));
    REQUIRE_THAT(compute_C(l1, l2b)(1, 0), WithinAbs(0.0, 1e-12));
}

TEST_CASE("projections match the direct quadrature sums") {
    const int I = 3, J = 2, T = 17;
    auto grid = SampledGrid::uniform(T);
    Rng rng(19, {900});
    Eigen::MatrixXd values = Eigen::MatrixXd::Zero(I * J, T);
    std::vector<std::uint8_t> mask{1, 1, 1, 0, 1, 1};
    for (int r = 0; r < I * J; ++r)
        if (mask[static_cast<std::size_t>(r)])
            for (int s = 0; s < T; ++s) values(r, s) = rng.normal();
    const MultilevelSample sample(grid, I, J, values, mask);
    const MeanEstimate means = estimate_means(sample);

    Eigen::MatrixXd F(T, 3);
    for (int s = 0; s < T; ++s) {
        const double t = grid->points()(s);
        F(s, 0) = 1.0;
        F(s, 1) = 2.0 * t - 1.0;
        F(s, 2) = t * t;
    }
    F = orthonormalize(*grid, F);
    Eigen::VectorXd lam1(2), lam2(1);
    lam1 << 1.0, 0.5;
    lam2 << 0.25;
    const EigenSystem l1 = make_system(grid, 1, F.leftCols(2), lam1);
    const EigenSystem l2 = make_system(grid, 2, F.rightCols(1), lam2);

    const Projections proj = project(sample, means, l1, l2);
    const Eigen::MatrixXd R = residual_matrix(sample, means);
    for (int i = 0; i < I; ++i)
        for (int j = 0; j < J; ++j) {
            const int r = i * J + j;
            if (!sample.present(i, j)) {
                REQUIRE(proj.A.row(r).cwiseAbs().maxCoeff() == 0.0);
                continue;
            }
            for (int k = 0; k < 2; ++k) {
                double acc = 0.0;
                for (int s = 0; s < T; ++s)
                    acc += R(r, s) * F(s, k) * grid->weights()(s);
                REQUIRE_THAT(proj.A(r, k), WithinAbs(acc, 1e-13));
            }
        }
}

TEST_CASE("projection-model scores equal the joint-Gaussian posterior") {
    const int I = 3, J = 3, n1 = 2, n2 = 2;
    Eigen::MatrixXd C(n1, n2);
    C << 0.2, -0.1,
         0.05, 0.3;
    Eigen::VectorXd lam1(n1), lam2(n2);
    lam1 << 1.0, 0.5;
    lam2 << 0.6, 0.3;
    const double s1 = 0.09, s2 = 0.04;

    Projections proj;
    proj.I = I;
    proj.J = J;
    proj.mask = {1, 1, 1, 1, 0, 1, 1, 1, 1};
    proj.A = Eigen::MatrixXd::Zero(I * J, n1);
    proj.B = Eigen::MatrixXd::Zero(I * J, n2);
    Rng rng(19, {901});
    for (int r = 0; r < I * J; ++r)
        if (proj.mask[static_cast<std::size_t>(r)]) {
            for (int k = 0; k < n1; ++k) proj.A(r, k) = rng.normal();
            for (int l = 0; l < n2; ++l) proj.B(r, l) = rng.normal();
        }

    PcpOptions opt;
    opt.sigma1_sq = s1;
    opt.sigma2_sq = s2;
    const ScoreSet scores = estimate_scores_pcp(proj, C, lam1, lam2, opt);
    REQUIRE(scores.sigma1_sq == s1);
    REQUIRE(scores.sigma2_sq == s2);

    for (int i = 0; i < I; ++i) {
        std::vector<Eigen::VectorXd> a_rows, b_rows;
        std::vector<int> visits;
        for (int j = 0; j < J; ++j)
            if (proj.present(i, j)) {
                a_rows.push_back(proj.A.row(i * J + j).transpose());
                b_rows.push_back(proj.B.row(i * J + j).transpose());
                visits.push_back(j);
            }
        const JointOracle oracle =
            pcp_oracle(a_rows, b_rows, C, lam1, lam2, s1, s2);
        for (int k = 0; k < n1; ++k) {
            REQUIRE_THAT(scores.xi(i, k), WithinAbs(oracle.mean(k), 1e-9));
            REQUIRE_THAT(scores.xi_sd(i, k), WithinAbs(oracle.sd(k), 1e-9));
        }
        for (std::size_t v = 0; v < visits.size(); ++v)
            for (int l = 0; l < n2; ++l) {
                const Eigen::Index pos =
                    n1 + static_cast<Eigen::Index>(v) * n2 + l;
                REQUIRE_THAT(scores.zeta(i * J + visits[v], l),
                             WithinAbs(oracle.mean(pos), 1e-9));
                REQUIRE_THAT(scores.zeta_sd(i * J + visits[v], l),
                             WithinAbs(oracle.sd(pos), 1e-9));
            }
    }
    // Absent visit rows stay zero.
    REQUIRE(scores.zeta.row(1 * J + 1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("scalar shrinkage closed forms") {
    // One component per level, orthogonal levels (C = 0), one subject seen
    // at two visits plus one subject at one visit.
    Eigen::VectorXd lam1(1), lam2(1);
    lam1 << 1.0;
    lam2 << 0.5;
    const Eigen::MatrixXd C = Eigen::MatrixXd::Zero(1, 1);
    Projections proj;
    proj.I = 2;
    proj.J = 2;
    proj.mask = {1, 1, 1, 0};
    proj.A = Eigen::MatrixXd(4, 1);
    proj.A << 2.0, 4.0, 2.0, 0.0;
    proj.B = Eigen::MatrixXd(4, 1);
    proj.B << 1.0, -1.0, 3.0, 0.0;
    PcpOptions opt;
    opt.sigma1_sq = 1.0;
    opt.sigma2_sq = 0.5;
    const ScoreSet scores = estimate_scores_pcp(proj, C, lam1, lam2, opt);
    // xi | A ~ shrunk mean: lam * sum(A) / (n * lam + sigma1^2).
    REQUIRE_THAT(scores.xi(0, 0), WithinAbs(6.0 / 3.0, 1e-12));
    REQUIRE_THAT(scores.xi(1, 0), WithinAbs(2.0 / 2.0, 1e-12));
    // zeta per visit: lam2 * B / (lam2 + sigma2^2) = B / 2.
    REQUIRE_THAT(scores.zeta(0, 0), WithinAbs(0.5, 1e-12));
    REQUIRE_THAT(scores.zeta(1, 0), WithinAbs(-0.5, 1e-12));
    REQUIRE_THAT(scores.zeta(2, 0), WithinAbs(1.5, 1e-12));
    // Posterior sd of xi for subject 0: sqrt(1 / (n/sigma^2 + 1/lam)).
    REQUIRE_THAT(scores.xi_sd(0, 0), WithinAbs(std::sqrt(1.0 / 3.0), 1e-12));
}

TEST_CASE("identical bases split a single visit by eigenvalue ratio") {
    // When both levels share one eigenfunction and a subject has one visit,
    // the data cannot separate the levels; the posterior divides the signal
    // in proportion to the prior variances.
    Eigen::VectorXd lam1(1), lam2(1);
    lam1 << 1.0;
    lam2 << 0.25;
    Eigen::MatrixXd C(1, 1);
    C << 1.0;
    Projections proj;
    proj.I = 2;
    proj.J = 1;
    proj.mask = {1, 1};
    proj.A = Eigen::MatrixXd(2, 1);
    proj.A << 2.0, -1.4;
    proj.B = proj.A;  // same function, same projection
    PcpOptions opt;
    opt.sigma1_sq = 0.1;
    opt.sigma2_sq = 0.1;
    const ScoreSet scores = estimate_scores_pcp(proj, C, lam1, lam2, opt);
    for (int i = 0; i < 2; ++i) {
        REQUIRE_THAT(scores.xi(i, 0) / scores.zeta(i, 0),
                     WithinAbs(lam1(0) / lam2(0), 1e-10));
        REQUIRE(std::abs(scores.xi(i, 0)) < std::abs(proj.A(i, 0)));
    }
}

TEST_CASE("curve-regression scores recover noiseless constructions") {
    const int I = 40, J = 2, T = 51;
    auto grid = SampledGrid::uniform(T);
    Eigen::MatrixXd F(T, 4);
    for (int s = 0; s < T; ++s) {
        const double t = grid->points()(s);
        F(s, 0) = 1.0;
        F(s, 1) = std::sqrt(2.0) * std::cos(2.0 * pi * t);
        F(s, 2) = std::sqrt(2.0) * std::sin(2.0 * pi * t);
        F(s, 3) = std::sqrt(2.0) * std::sin(4.0 * pi * t);
    }
    F = orthonormalize(*grid, F);
    Eigen::VectorXd lam1(2), lam2(2);
    lam1 << 1.0, 0.5;
    lam2 << 0.5, 0.25;
    const EigenSystem l1 = make_system(grid, 1, F.leftCols(2), lam1);
    const EigenSystem l2 = make_system(grid, 2, F.rightCols(2), lam2);

    Rng rng(19, {902});
    Eigen::MatrixXd xi(I, 2), zeta(I * J, 2);
    Eigen::MatrixXd values(I * J, T);
    for (int i = 0; i < I; ++i) {
        xi(i, 0) = std::sqrt(lam1(0)) * rng.normal();
        xi(i, 1) = std::sqrt(lam1(1)) * rng.normal();
        for (int j = 0; j < J; ++j) {
            const int r = i * J + j;
            zeta(r, 0) = std::sqrt(lam2(0)) * rng.normal();
            zeta(r, 1) = std::sqrt(lam2(1)) * rng.normal();
            values.row(r) = (F.leftCols(2) * xi.row(i).transpose() +
                             F.rightCols(2) * zeta.row(r).transpose())
                                .transpose();
        }
    }
    const MultilevelSample sample(
        grid, I, J, values,
        std::vector<std::uint8_t>(static_cast<std::size_t>(I * J), 1));
    const MeanEstimate means = zero_means(grid, J);

    const ScoreSet pcf = estimate_scores_pcf(sample, means, l1, l2, 0.0);
    REQUIRE((pcf.xi - xi).cwiseAbs().maxCoeff() < 1e-5);
    REQUIRE((pcf.zeta - zeta).cwiseAbs().maxCoeff() < 1e-5);
    REQUIRE(pcf.sigma_sq == 1e-8);  // floored noiseless variance

    // The projection route agrees on the same data.
    const Projections proj = project(sample, means, l1, l2);
    PcpOptions popt;
    popt.sigma1_sq = 1e-8;
    popt.sigma2_sq = 1e-8;
    const ScoreSet pcp =
        estimate_scores_pcp(proj, compute_C(l1, l2), lam1, lam2, popt);
    REQUIRE((pcp.xi - xi).cwiseAbs().maxCoeff() < 1e-5);
    for (int k = 0; k < 2; ++k)
        REQUIRE_THAT(testutil::correlation(pcf.xi.col(k), pcp.xi.col(k)),
                     WithinAbs(1.0, 1e-8));
}

TEST_CASE("curve-regression scores match a direct ridge solve") {
    const int J = 2, T = 13;
    auto grid = SampledGrid::uniform(T);
    Rng rng(19, {903});
    Eigen::MatrixXd F(T, 2);
    for (int s = 0; s < T; ++s) {
        F(s, 0) = 1.0;
        F(s, 1) = 2.0 * grid->points()(s) - 1.0;
    }
    F = orthonormalize(*grid, F);
    Eigen::VectorXd lam1(1), lam2(1);
    lam1 << 0.8;
    lam2 << 0.4;
    const EigenSystem l1 = make_system(grid, 1, F.leftCols(1), lam1);
    const EigenSystem l2 = make_system(grid, 2, F.rightCols(1), lam2);

    Eigen::MatrixXd values = Eigen::MatrixXd::Zero(2 * J, T);
    std::vector<std::uint8_t> mask{1, 1, 1, 0};
    for (int r = 0; r < 2 * J; ++r)
        if (mask[static_cast<std::size_t>(r)])
            for (int s = 0; s < T; ++s) values(r, s) = rng.normal();
    const MultilevelSample sample(grid, 2, J, values, mask);
    const MeanEstimate means = zero_means(grid, J);
    const double sigma2 = 0.2;
    const ScoreSet pcf = estimate_scores_pcf(sample, means, l1, l2, sigma2);

    // Subject 0, both visits present: design stacks [phi1 | phi2-block].
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(2 * T, 3);
    X.block(0, 0, T, 1) = F.leftCols(1);
    X.block(T, 0, T, 1) = F.leftCols(1);
    X.block(0, 1, T, 1) = F.rightCols(1);
    X.block(T, 2, T, 1) = F.rightCols(1);
    Eigen::VectorXd d(2 * T);
    d << values.row(0).transpose(), values.row(1).transpose();
    Eigen::VectorXd prior(3);
    prior << lam1(0), lam2(0), lam2(0);
    const Eigen::MatrixXd Q =
        X.transpose() * X / sigma2 +
        Eigen::MatrixXd(prior.cwiseInverse().asDiagonal());
    const Eigen::VectorXd b = Q.ldlt().solve(X.transpose() * d / sigma2);
    REQUIRE_THAT(pcf.xi(0, 0), WithinAbs(b(0), 1e-10));
    REQUIRE_THAT(pcf.zeta(0, 0), WithinAbs(b(1), 1e-10));
    REQUIRE_THAT(pcf.zeta(1, 0), WithinAbs(b(2), 1e-10));
    const Eigen::MatrixXd cov = Q.inverse();
    REQUIRE_THAT(pcf.xi_sd(0, 0), WithinAbs(std::sqrt(cov(0, 0)), 1e-10));
    // Subject 1 has one visit; its absent slot stays zero.
    REQUIRE(pcf.zeta.row(3).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("moment-and-EM estimation recovers the residual variances") {
    const int I = 3000, J = 2;
    Eigen::VectorXd lam1(1), lam2(1);
    lam1 << 1.0;
    lam2 << 0.5;
    const Eigen::MatrixXd C = Eigen::MatrixXd::Zero(1, 1);
    const double true_s1 = 0.3, true_s2 = 0.1;
    Rng rng(19, {904});
    Projections proj;
    proj.I = I;
    proj.J = J;
    proj.mask.assign(static_cast<std::size_t>(I * J), 1);
    proj.A = Eigen::MatrixXd(I * J, 1);
    proj.B = Eigen::MatrixXd(I * J, 1);
    for (int i = 0; i < I; ++i) {
        const double xi = rng.normal();
        for (int j = 0; j < J; ++j) {
            proj.A(i * J + j, 0) = xi + std::sqrt(true_s1) * rng.normal();
            proj.B(i * J + j, 0) = std::sqrt(lam2(0)) * rng.normal() +
                                   std::sqrt(true_s2) * rng.normal();
        }
    }
    const ScoreSet scores = estimate_scores_pcp(proj, C, lam1, lam2);
    REQUIRE_THAT(scores.sigma1_sq, WithinAbs(true_s1, 0.06));
    REQUIRE_THAT(scores.sigma2_sq, WithinAbs(true_s2, 0.03));
}

TEST_CASE("fixed-variance Gibbs agrees with the analytic posterior") {
    const int I = 10, J = 2;
    Eigen::VectorXd lam1(1), lam2(1);
    lam1 << 1.0;
    lam2 << 0.5;
    Eigen::MatrixXd C(1, 1);
    C << 0.3;
    Rng rng(19, {905});
    Projections proj;
    proj.I = I;
    proj.J = J;
    proj.mask.assign(static_cast<std::size_t>(I * J), 1);
    proj.A = Eigen::MatrixXd(I * J, 1);
    proj.B = Eigen::MatrixXd(I * J, 1);
    for (int r = 0; r < I * J; ++r) {
        proj.A(r, 0) = rng.normal();
        proj.B(r, 0) = rng.normal();
    }

    PcpOptions blup_opt;
    blup_opt.sigma1_sq = 0.2;
    blup_opt.sigma2_sq = 0.1;
    const ScoreSet blup = estimate_scores_pcp(proj, C, lam1, lam2, blup_opt);

    PcpOptions gibbs_opt = blup_opt;
    gibbs_opt.method = ScoreMethod::gibbs;
    gibbs_opt.gibbs.fix_variances = true;
    const ScoreSet gibbs = estimate_scores_pcp(proj, C, lam1, lam2, gibbs_opt);

    // With the variances fixed every sweep draws from the exact posterior, so
    // the chain is independent; 3 chains x 1500 kept draws pin the mean to a
    // few Monte Carlo standard errors.
    const double n_draws = 3.0 * 1500.0;
    for (int i = 0; i < I; ++i) {
        const double mcse = blup.xi_sd(i, 0) / std::sqrt(n_draws);
        REQUIRE_THAT(gibbs.xi(i, 0), WithinAbs(blup.xi(i, 0), 5.0 * mcse));
        REQUIRE_THAT(gibbs.xi_sd(i, 0),
                     WithinAbs(blup.xi_sd(i, 0), 0.05 * blup.xi_sd(i, 0)));
    }
    REQUIRE(gibbs.max_rhat < 1.02);
    REQUIRE_FALSE(gibbs.rhat_warning);
    REQUIRE(gibbs.sigma1_sq == 0.2);

    // Same options, same seed: the draws are reproducible bit for bit, and
    // running the subject sweep on several threads changes nothing.
    const ScoreSet again = estimate_scores_pcp(proj, C, lam1, lam2, gibbs_opt);
    REQUIRE(again.xi == gibbs.xi);
    PcpOptions threaded = gibbs_opt;
    threaded.threads = 3;
    const ScoreSet par = estimate_scores_pcp(proj, C, lam1, lam2, threaded);
    REQUIRE(par.xi == gibbs.xi);
    REQUIRE(par.zeta == gibbs.zeta);
}

TEST_CASE("sampled residual variances land near the truth") {
    const int I = 80, J = 2;
    Eigen::VectorXd lam1(1), lam2(1);
    lam1 << 1.0;
    lam2 << 0.5;
    const Eigen::MatrixXd C = Eigen::MatrixXd::Zero(1, 1);
    const double true_s1 = 0.25, true_s2 = 0.1;
    Rng rng(19, {906});
    Projections proj;
    proj.I = I;
    proj.J = J;
    proj.mask.assign(static_cast<std::size_t>(I * J), 1);
    proj.A = Eigen::MatrixXd(I * J, 1);
    proj.B = Eigen::MatrixXd(I * J, 1);
    for (int i = 0; i < I; ++i) {
        const double xi = rng.normal();
        for (int j = 0; j < J; ++j) {
            proj.A(i * J + j, 0) = xi + std::sqrt(true_s1) * rng.normal();
            proj.B(i * J + j, 0) = std::sqrt(lam2(0)) * rng.normal() +
                                   std::sqrt(true_s2) * rng.normal();
        }
    }
    PcpOptions opt;
    opt.method = ScoreMethod::gibbs;
    const ScoreSet scores = estimate_scores_pcp(proj, C, lam1, lam2, opt);
    REQUIRE(scores.sigma1_sq > 0.1);
    REQUIRE(scores.sigma1_sq < 0.5);
    REQUIRE(scores.sigma2_sq > 0.03);
    REQUIRE(scores.sigma2_sq < 0.3);
    REQUIRE(scores.max_rhat < 1.2);
}

TEST_CASE("score estimation rejects malformed inputs") {
    Eigen::VectorXd lam1(1), lam2(1);
    lam1 << 1.0;
    lam2 << 0.5;
    Projections proj;
    proj.I = 2;
    proj.J = 1;
    proj.mask = {1, 1};
    proj.A = Eigen::MatrixXd::Zero(2, 1);
    proj.B = Eigen::MatrixXd::Zero(2, 1);
    REQUIRE_THROWS_AS(
        estimate_scores_pcp(proj, Eigen::MatrixXd::Zero(2, 1), lam1, lam2),
        ShapeError);
    Eigen::VectorXd bad(1);
    bad << -1.0;
    REQUIRE_THROWS_AS(
        estimate_scores_pcp(proj, Eigen::MatrixXd::Zero(1, 1), bad, lam2),
        InvalidVariance);
    PcpOptions opt;
    opt.sigma1_sq = 0.0;
    opt.sigma2_sq = 1.0;
    REQUIRE_THROWS_AS(
        estimate_scores_pcp(proj, Eigen::MatrixXd::Zero(1, 1), lam1, lam2, opt),
        InvalidVariance);
    PcpOptions gbad;
    gbad.method = ScoreMethod::gibbs;
    gbad.gibbs.burnin = 50;
    gbad.gibbs.iterations = 50;
    REQUIRE_THROWS_AS(
        estimate_scores_pcp(proj, Eigen::MatrixXd::Zero(1, 1), lam1, lam2, gbad),
        InvalidArgument);

    auto grid = SampledGrid::uniform(8);
    Eigen::MatrixXd F = orthonormalize(
        *grid, Eigen::MatrixXd::Ones(8, 1));
    const EigenSystem l1 = make_system(grid, 1, F, lam1);
    const EigenSystem l2 = make_system(grid, 2, F, lam2);
    const MultilevelSample sample(
        grid, 2, 2, Eigen::MatrixXd::Zero(4, 8),
        std::vector<std::uint8_t>{1, 1, 1, 1});
    REQUIRE_THROWS_AS(estimate_scores_pcf(sample, zero_means(grid, 2), l1, l2,
                                          -0.5),
                      InvalidVariance);
}
