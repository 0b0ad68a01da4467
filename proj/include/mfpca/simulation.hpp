#pragma once

// Data generation for the two-level model, score-recovery experiments, and
// the parametric bootstrap for the within-subject variance share.  All draws
// use per-unit streams keyed by (seed, tag, indices), so generated data are
// byte-identical across runs, thread counts and presence patterns.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "mfpca/decomposition.hpp"
#include "mfpca/errors.hpp"
#include "mfpca/grid.hpp"
#include "mfpca/moments.hpp"
#include "mfpca/parallel.hpp"
#include "mfpca/rng.hpp"
#include "mfpca/scores.hpp"

namespace mfpca {
namespace sim {

constexpr std::uint64_t kXiTag = 0x5849u;
constexpr std::uint64_t kZetaTag = 0x5A45u;
constexpr std::uint64_t kNoiseTag = 0x4550u;
constexpr std::uint64_t kBootTag = 0x424Fu;

// Component k (1-based, 1..4) of the true basis for the given case and
// level.  Case 1 uses trigonometric bases at both levels; case 2 swaps the
// level-2 basis for orthonormal polynomials, which makes the two levels
// non-orthogonal to each other.
inline double basis_value(int case_id, int level, int k, double t) {
    if (case_id != 1 && case_id != 2)
        throw InvalidArgument("case must be 1 or 2");
    if (level != 1 && level != 2)
        throw InvalidArgument("level must be 1 or 2");
    if (k < 1 || k > 4)
        throw IndexError("basis component " + std::to_string(k) +
                         " out of range 1..4");
    const double pi = std::numbers::pi;
    if (level == 1 || case_id == 1) {
        const int pair = (level == 1) ? (k + 1) / 2 : (k + 1) / 2 + 2;
        const double arg = 2.0 * pi * pair * t;
        return std::sqrt(2.0) * (k % 2 == 1 ? std::sin(arg) : std::cos(arg));
    }
    switch (k) {
        case 1: return 1.0;
        case 2: return std::sqrt(3.0) * (2.0 * t - 1.0);
        case 3: return std::sqrt(5.0) * (6.0 * t * t - 6.0 * t + 1.0);
        default:
            return std::sqrt(7.0) *
                   (20.0 * t * t * t - 30.0 * t * t + 12.0 * t - 1.0);
    }
}

inline Curve basis(int case_id, int level, int k, GridPtr grid) {
    Eigen::VectorXd v(grid->size());
    for (int s = 0; s < grid->size(); ++s)
        v(s) = basis_value(case_id, level, k, grid->points()(s));
    return Curve(std::move(grid), std::move(v));
}

// T x 4 matrix of all four components.
inline Eigen::MatrixXd basis_matrix(int case_id, int level,
                                    const SampledGrid& grid) {
    Eigen::MatrixXd Phi(grid.size(), 4);
    for (int k = 1; k <= 4; ++k)
        for (int s = 0; s < grid.size(); ++s)
            Phi(s, k - 1) = basis_value(case_id, level, k, grid.points()(s));
    return Phi;
}

// A fitted (or true) model to draw samples from.
struct GeneratorModel {
    GridPtr grid;
    const MeanEstimate* means = nullptr;     // null: zero mean structure
    Eigen::MatrixXd phi1;                    // T x K1; K1 may be zero
    Eigen::VectorXd lambda1;
    Eigen::MatrixXd phi2;                    // T x K2
    Eigen::VectorXd lambda2;
    double noise_var = 0.0;
    int I = 0;
    int J = 0;
    const std::vector<std::uint8_t>* mask = nullptr;  // null: all present
};

inline MultilevelSample generate_from_model(const GeneratorModel& model,
                                            std::uint64_t seed,
                                            Eigen::MatrixXd* xi_out = nullptr,
                                            Eigen::MatrixXd* zeta_out = nullptr) {
    const int T = model.grid->size();
    const int K1 = static_cast<int>(model.lambda1.size());
    const int K2 = static_cast<int>(model.lambda2.size());
    if (model.phi1.cols() != K1 || (K1 > 0 && model.phi1.rows() != T))
        throw ShapeError("generator: level-1 basis does not match its eigenvalues");
    if (model.phi2.cols() != K2 || (K2 > 0 && model.phi2.rows() != T))
        throw ShapeError("generator: level-2 basis does not match its eigenvalues");
    if ((model.lambda1.array() < 0.0).any() || (model.lambda2.array() < 0.0).any())
        throw InvalidVariance("generator: eigenvalues must be nonnegative");
    if (model.noise_var < 0.0)
        throw InvalidVariance("generator: noise variance must be nonnegative");
    if (model.I < 2 || model.J < 1)
        throw InvalidArgument("generator: need I >= 2 subjects and J >= 1 visits");

    const Eigen::VectorXd sd1 = model.lambda1.cwiseSqrt();
    const Eigen::VectorXd sd2 = model.lambda2.cwiseSqrt();
    const double noise_sd = std::sqrt(model.noise_var);

    Eigen::MatrixXd values =
        Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(model.I) * model.J, T);
    std::vector<std::uint8_t> mask =
        model.mask ? *model.mask
                   : std::vector<std::uint8_t>(
                         static_cast<std::size_t>(model.I) * model.J, 1);
    if (mask.size() != static_cast<std::size_t>(model.I) * model.J)
        throw ShapeError("generator: mask has the wrong length");

    if (xi_out) *xi_out = Eigen::MatrixXd::Zero(model.I, K1);
    if (zeta_out)
        *zeta_out = Eigen::MatrixXd::Zero(
            static_cast<Eigen::Index>(model.I) * model.J, K2);

    for (int i = 0; i < model.I; ++i) {
        Rng xi_rng(seed, {kXiTag, static_cast<std::uint64_t>(i)});
        Eigen::VectorXd xi(K1);
        for (int k = 0; k < K1; ++k) xi(k) = sd1(k) * xi_rng.normal();
        if (xi_out) xi_out->row(i) = xi.transpose();
        for (int j = 0; j < model.J; ++j) {
            const Eigen::Index row = static_cast<Eigen::Index>(i) * model.J + j;
            Rng zeta_rng(seed, {kZetaTag, static_cast<std::uint64_t>(i),
                                static_cast<std::uint64_t>(j)});
            Eigen::VectorXd zeta(K2);
            for (int l = 0; l < K2; ++l) zeta(l) = sd2(l) * zeta_rng.normal();
            if (!mask[static_cast<std::size_t>(row)]) continue;
            if (zeta_out) zeta_out->row(row) = zeta.transpose();
            Eigen::VectorXd y = Eigen::VectorXd::Zero(T);
            if (model.means) {
                y += model.means->mu.values;
                y += model.means->eta[static_cast<std::size_t>(j)].values;
            }
            if (K1 > 0) y.noalias() += model.phi1 * xi;
            if (K2 > 0) y.noalias() += model.phi2 * zeta;
            if (noise_sd > 0.0) {
                Rng eps_rng(seed, {kNoiseTag, static_cast<std::uint64_t>(i),
                                   static_cast<std::uint64_t>(j)});
                for (int s = 0; s < T; ++s) y(s) += noise_sd * eps_rng.normal();
            }
            values.row(row) = y.transpose();
        }
    }
    return MultilevelSample(model.grid, model.I, model.J, std::move(values),
                            std::move(mask));
}

struct SimConfig {
    int case_id = 1;
    int I = 200;
    int J = 2;
    int T = 101;
    double sigma = 0.0;       // noise standard deviation
    std::uint64_t seed = 1;
    int n1 = 4;               // components to estimate at each level
    int n2 = 4;

    void validate() const {
        if (case_id != 1 && case_id != 2)
            throw InvalidArgument("case must be 1 or 2");
        if (I < 2) throw InvalidArgument("need at least 2 subjects");
        if (J < 1) throw InvalidArgument("need at least 1 visit");
        if (T < 2) throw InvalidArgument("need at least 2 grid points");
        if (sigma < 0.0) throw InvalidArgument("sigma must be nonnegative");
        if (n1 < 1 || n1 > 4 || n2 < 1 || n2 > 4)
            throw InvalidArgument("component counts must lie in 1..4");
    }
};

struct SimTruth {
    Eigen::MatrixXd xi;      // I x 4
    Eigen::MatrixXd zeta;    // (I*J) x 4
    Eigen::VectorXd lambda1; // 1, 1/2, 1/4, 1/8
    Eigen::VectorXd lambda2;
    Eigen::MatrixXd phi1;    // T x 4 true bases
    Eigen::MatrixXd phi2;
};

// Draws one data set from the benchmark model: four components per level
// with eigenvalues 2^-(k-1) and the case's bases, plus white noise.
inline std::pair<MultilevelSample, SimTruth> generate(const SimConfig& cfg) {
    cfg.validate();
    GridPtr grid = SampledGrid::uniform(cfg.T);
    SimTruth truth;
    truth.lambda1.resize(4);
    truth.lambda2.resize(4);
    for (int k = 0; k < 4; ++k)
        truth.lambda1(k) = truth.lambda2(k) = std::pow(0.5, k);
    truth.phi1 = basis_matrix(cfg.case_id, 1, *grid);
    truth.phi2 = basis_matrix(cfg.case_id, 2, *grid);

    GeneratorModel model;
    model.grid = grid;
    model.phi1 = truth.phi1;
    model.lambda1 = truth.lambda1;
    model.phi2 = truth.phi2;
    model.lambda2 = truth.lambda2;
    model.noise_var = cfg.sigma * cfg.sigma;
    model.I = cfg.I;
    model.J = cfg.J;
    MultilevelSample sample =
        generate_from_model(model, cfg.seed, &truth.xi, &truth.zeta);
    return {std::move(sample), std::move(truth)};
}

}  // namespace sim

// Flips estimated eigenfunctions so each correlates positively with its
// true counterpart; component k is compared with true component k only.
// Call before score estimation so scores inherit the aligned signs.
inline void align_to_truth(EigenSystem* sys, const Eigen::MatrixXd& true_phi) {
    const int K = std::min<int>(static_cast<int>(sys->eigenfunctions.cols()),
                                static_cast<int>(true_phi.cols()));
    for (int k = 0; k < K; ++k) {
        const double ip = inner_product(*sys->grid, sys->eigenfunctions.col(k),
                                        true_phi.col(k));
        if (ip < 0.0) sys->eigenfunctions.col(k) = -sys->eigenfunctions.col(k);
    }
}

struct RmseResult {
    Eigen::VectorXd level1;   // per component
    Eigen::VectorXd level2;
};

// Root mean squared error of estimated scores against the truth, component
// by component.  Level-1 averages over subjects, level-2 over observed
// visits.  The estimate must already be sign-aligned.
inline RmseResult rmse(const ScoreSet& est, const sim::SimTruth& truth) {
    if (est.xi.rows() != truth.xi.rows())
        throw ShapeError("rmse: subject counts differ");
    if (est.zeta.rows() != truth.zeta.rows())
        throw ShapeError("rmse: visit counts differ");
    const int n1 = static_cast<int>(
        std::min(est.xi.cols(), truth.xi.cols()));
    const int n2 = static_cast<int>(
        std::min(est.zeta.cols(), truth.zeta.cols()));
    RmseResult out;
    out.level1.resize(n1);
    out.level2.resize(n2);
    for (int k = 0; k < n1; ++k)
        out.level1(k) = std::sqrt(
            (est.xi.col(k) - truth.xi.col(k)).squaredNorm() /
            static_cast<double>(est.xi.rows()));
    long long n_rows = 0;
    for (std::uint8_t p : est.mask) n_rows += p ? 1 : 0;
    for (int l = 0; l < n2; ++l) {
        double acc = 0.0;
        for (Eigen::Index r = 0; r < est.zeta.rows(); ++r)
            if (est.mask[static_cast<std::size_t>(r)]) {
                const double e = est.zeta(r, l) - truth.zeta(r, l);
                acc += e * e;
            }
        out.level2(l) = std::sqrt(acc / static_cast<double>(n_rows));
    }
    return out;
}

enum class PcModel { pcf, pcp };

struct SimExperiment {
    sim::SimConfig config;
    int replicates = 10;
    PcModel model = PcModel::pcf;
    bool smooth = false;          // smoothing of means and covariances
    SmootherConfig smoother;
    int threads = 1;
};

struct SimExperimentResult {
    std::vector<RmseResult> replicates;
    RmseResult pooled;    // square root of the pooled mean squared error
    RmseResult median;    // per-component median of replicate values
};

// Repeated generate/fit/score runs; replicate r uses seed base+r.  The
// component counts in the configuration are forced on the fit so every
// replicate estimates the same number of scores.
inline SimExperimentResult run_sim_experiment(const SimExperiment& exp) {
    exp.config.validate();
    if (exp.replicates < 1)
        throw InvalidArgument("experiment needs at least 1 replicate");
    SimExperimentResult out;
    out.replicates.resize(static_cast<std::size_t>(exp.replicates));

    for (int r = 0; r < exp.replicates; ++r) {
        sim::SimConfig cfg = exp.config;
        cfg.seed = exp.config.seed + static_cast<std::uint64_t>(r);
        auto [sample, truth] = sim::generate(cfg);

        MfpcaOptions opt;
        opt.smooth = exp.smooth;
        opt.smoother = exp.smoother;
        opt.force_n1 = cfg.n1;
        opt.force_n2 = cfg.n2;
        MfpcaFit fit = fit_mfpca(sample, opt);
        align_to_truth(&fit.level1, truth.phi1);
        align_to_truth(&fit.level2, truth.phi2);

        ScoreSet scores;
        if (exp.model == PcModel::pcf) {
            PcfOptions sopt;
            sopt.threads = exp.threads;
            scores = estimate_scores_pcf(sample, fit.means, fit.level1,
                                         fit.level2, fit.sigma2, sopt);
        } else {
            const Eigen::MatrixXd C = compute_C(fit.level1, fit.level2);
            const Projections proj =
                project(sample, fit.means, fit.level1, fit.level2);
            PcpOptions sopt;
            sopt.threads = exp.threads;
            scores = estimate_scores_pcp(
                proj, C, fit.level1.eigenvalues.head(fit.level1.n_selected),
                fit.level2.eigenvalues.head(fit.level2.n_selected), sopt);
        }
        out.replicates[static_cast<std::size_t>(r)] = rmse(scores, truth);
    }

    const int n1 = static_cast<int>(out.replicates[0].level1.size());
    const int n2 = static_cast<int>(out.replicates[0].level2.size());
    auto aggregate = [&](auto select, int K, Eigen::VectorXd* pooled,
                         Eigen::VectorXd* median) {
        pooled->resize(K);
        median->resize(K);
        for (int k = 0; k < K; ++k) {
            std::vector<double> vals;
            double msq = 0.0;
            for (const RmseResult& rep : out.replicates) {
                const double v = select(rep)(k);
                vals.push_back(v);
                msq += v * v;
            }
            (*pooled)(k) = std::sqrt(msq / static_cast<double>(vals.size()));
            std::sort(vals.begin(), vals.end());
            const std::size_t n = vals.size();
            (*median)(k) = n % 2 ? vals[n / 2]
                                 : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
        }
    };
    aggregate([](const RmseResult& r) -> const Eigen::VectorXd& { return r.level1; },
              n1, &out.pooled.level1, &out.median.level1);
    aggregate([](const RmseResult& r) -> const Eigen::VectorXd& { return r.level2; },
              n2, &out.pooled.level2, &out.median.level2);
    return out;
}

enum class BootstrapHypothesis { h0, h1 };

struct BootstrapResult {
    double point = 0.0;       // variance share of the original fit
    double lower = 0.0;       // percentile 2.5%
    double upper = 0.0;       // percentile 97.5%
    Eigen::VectorXd samples;
    int n_boot = 0;
};

// Parametric bootstrap for the within-subject variance share.  Samples are
// drawn from the fitted model - under h0 with the subject level removed,
// under h1 with both levels - then refitted with the original options.
inline BootstrapResult bootstrap_rho(const MfpcaFit& fit,
                                     BootstrapHypothesis hyp, int n_boot,
                                     std::uint64_t seed, int threads = 1) {
    if (n_boot < 1)
        throw InvalidArgument("bootstrap needs at least 1 replicate");
    const int n1 = fit.level1.n_selected;
    const int n2 = fit.level2.n_selected;

    sim::GeneratorModel model;
    model.grid = fit.grid;
    model.means = &fit.means;
    if (hyp == BootstrapHypothesis::h1) {
        model.phi1 = fit.level1.eigenfunctions.leftCols(n1);
        model.lambda1 = fit.level1.eigenvalues.head(n1);
    }
    model.phi2 = fit.level2.eigenfunctions.leftCols(n2);
    model.lambda2 = fit.level2.eigenvalues.head(n2);
    model.noise_var = fit.sigma2;
    model.I = fit.I;
    model.J = fit.J;
    model.mask = &fit.mask;

    BootstrapResult out;
    out.point = fit.rho_w;
    out.n_boot = n_boot;
    out.samples.resize(n_boot);
    parallel_for(n_boot, threads, [&](int b) {
        const std::uint64_t boot_seed =
            derive_stream(seed, {sim::kBootTag, static_cast<std::uint64_t>(b)});
        const MultilevelSample boot = sim::generate_from_model(model, boot_seed);
        const MfpcaFit refit = fit_mfpca(boot, fit.options);
        out.samples(b) = refit.rho_w;
    });

    Eigen::VectorXd sorted = out.samples;
    std::sort(sorted.data(), sorted.data() + sorted.size());
    auto quantile = [&](double p) {
        const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
        const Eigen::Index lo = static_cast<Eigen::Index>(std::floor(h));
        const Eigen::Index hi = std::min<Eigen::Index>(lo + 1, sorted.size() - 1);
        return sorted(lo) + (h - static_cast<double>(lo)) * (sorted(hi) - sorted(lo));
    };
    out.lower = quantile(0.025);
    out.upper = quantile(0.975);
    return out;
}

}  // namespace mfpca
