#pragma once

// Eigenanalysis of covariance surfaces as integral operators, component-count
// selection, the within-visit variance share, and the end-to-end model fit
// that ties means, covariances, smoothing and eigenanalysis together.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mfpca/errors.hpp"
#include "mfpca/grid.hpp"
#include "mfpca/moments.hpp"
#include "mfpca/smoothing.hpp"

namespace mfpca {

struct EigenSystem {
    int level = 0;                    // 1 = between subjects, 2 = within
    GridPtr grid;
    Eigen::VectorXd eigenvalues;      // positive, descending
    Eigen::MatrixXd eigenfunctions;   // T x K, unit L2 norm, fixed signs
    int n_selected = 0;               // components kept by the selection rule

    Eigen::VectorXd proportions() const {
        const double s = eigenvalues.sum();
        return s > 0.0 ? (eigenvalues / s).eval() : eigenvalues;
    }

    Eigen::VectorXd cumulative() const {
        Eigen::VectorXd c = proportions();
        for (Eigen::Index k = 1; k < c.size(); ++k) c(k) += c(k - 1);
        return c;
    }

    Curve eigenfunction(int k) const {
        if (k < 0 || k >= eigenfunctions.cols())
            throw IndexError("component " + std::to_string(k + 1) +
                             " out of range");
        return Curve(grid, eigenfunctions.col(k));
    }
};

// Deterministic sign: make the quadrature integral of each eigenfunction
// positive; if it is numerically zero, make the first coordinate of
// meaningful size positive.
inline void fix_sign(const SampledGrid& grid, Eigen::Ref<Eigen::VectorXd> phi) {
    const double integral = (phi.array() * grid.weights().array()).sum();
    double s = 0.0;
    if (std::abs(integral) > 1e-9) {
        s = integral;
    } else {
        const double big = 1e-9 * phi.cwiseAbs().maxCoeff();
        for (Eigen::Index t = 0; t < phi.size(); ++t)
            if (std::abs(phi(t)) > big) {
                s = phi(t);
                break;
            }
    }
    if (s < 0.0) phi = -phi;
}

// Eigenpairs of the integral operator with kernel K under the grid's
// quadrature: solve the symmetric problem for W^(1/2) K W^(1/2) and map
// vectors back so eigenfunctions have unit L2 norm.  Only strictly positive
// eigenvalues are kept; indefinite kernels (e.g. a total-minus-between
// difference) lose their negative part here and nowhere else.
inline EigenSystem eigendecompose(const Eigen::MatrixXd& K, GridPtr grid,
                                  int level) {
    const int T = grid->size();
    if (K.rows() != T || K.cols() != T)
        throw ShapeError("eigendecompose: kernel does not match the grid");
    const double scale = std::max(1.0, K.cwiseAbs().maxCoeff());
    if ((K - K.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
        throw AsymmetricInput("eigendecompose: kernel is not symmetric");

    const Eigen::ArrayXd w = grid->weights().array();
    const Eigen::ArrayXd ws = w.sqrt();
    Eigen::MatrixXd M = K;
    M.array().colwise() *= ws;
    M.array().rowwise() *= ws.transpose();
    M = ((M + M.transpose()) * 0.5).eval();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
    if (es.info() != Eigen::Success)
        throw SingularSystem("eigendecompose: solver failed");

    EigenSystem out;
    out.level = level;
    out.grid = std::move(grid);
    // Keep strictly positive eigenvalues, ignoring numerical dust relative to
    // the largest one.
    const double cutoff =
        std::max(0.0, es.eigenvalues()(T - 1)) * 1e-12;
    std::vector<int> keep;
    for (int k = T - 1; k >= 0; --k)  // Eigen sorts ascending
        if (es.eigenvalues()(k) > cutoff) keep.push_back(k);
    out.eigenvalues.resize(static_cast<Eigen::Index>(keep.size()));
    out.eigenfunctions.resize(T, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t c = 0; c < keep.size(); ++c) {
        out.eigenvalues(static_cast<Eigen::Index>(c)) =
            es.eigenvalues()(keep[c]);
        Eigen::VectorXd phi =
            (es.eigenvectors().col(keep[c]).array() / ws).matrix();
        const double norm = l2_norm(*out.grid, phi);
        phi /= norm;
        out.eigenfunctions.col(static_cast<Eigen::Index>(c)) = phi;
        fix_sign(*out.grid, out.eigenfunctions.col(static_cast<Eigen::Index>(c)));
    }
    out.n_selected = static_cast<int>(keep.size());
    return out;
}

// Stop either when cumulative variance reaches P1 or when an individual
// share falls below P2 (`either`), or only when both hold (`both`).
enum class SelectionRule { either, both };

// Smallest k whose cumulative share reaches P1 or whose individual share
// drops below P2, following the chosen combination rule.  P2 <= 0 means use
// the default 1/T.
inline int select_ncomp(const Eigen::VectorXd& eigenvalues, int T,
                        double P1 = 0.9, double P2 = 0.0,
                        SelectionRule rule = SelectionRule::either) {
    if (eigenvalues.size() == 0 || eigenvalues.sum() <= 0.0)
        throw NoVariance("component selection needs a positive eigenvalue");
    for (Eigen::Index k = 1; k < eigenvalues.size(); ++k)
        if (eigenvalues(k) > eigenvalues(k - 1) + 1e-12 * eigenvalues(0))
            throw InvalidArgument("eigenvalues must be in descending order");
    if (T < 1) throw InvalidArgument("grid size must be positive");
    const double p2 = P2 > 0.0 ? P2 : 1.0 / T;
    const double total = eigenvalues.sum();
    double cum = 0.0;
    for (Eigen::Index k = 0; k < eigenvalues.size(); ++k) {
        const double share = eigenvalues(k) / total;
        cum += share;
        const bool reached = cum >= P1;
        const bool negligible = share < p2;
        if (rule == SelectionRule::either ? (reached || negligible)
                                          : (reached && negligible))
            return static_cast<int>(k) + 1;
    }
    return static_cast<int>(eigenvalues.size());
}

// Share of total variation carried by the subject level:
// sum(level-1 eigenvalues) / (sum(level-1) + sum(level-2)).
inline double rho_w(const Eigen::VectorXd& level1,
                    const Eigen::VectorXd& level2) {
    const double s1 = level1.size() ? level1.sum() : 0.0;
    const double s2 = level2.size() ? level2.sum() : 0.0;
    if (s1 < 0.0 || s2 < 0.0)
        throw InvalidVariance("rho_w: eigenvalue sums must be nonnegative");
    if (s1 + s2 <= 0.0)
        throw NoVariance("rho_w: no variation at either level");
    return s1 / (s1 + s2);
}

struct MfpcaOptions {
    bool smooth = true;
    SmootherConfig smoother;
    double p1 = 0.9;
    double p2 = 0.0;           // <= 0 picks 1/T
    SelectionRule selection = SelectionRule::either;
    int force_n1 = 0;          // > 0 overrides the selection rule
    int force_n2 = 0;
};

struct MfpcaFit {
    GridPtr grid;
    int I = 0;
    int J = 0;
    std::vector<std::uint8_t> mask;
    MeanEstimate means;            // the means used for centering
    EigenSystem level1;            // between-subject components
    EigenSystem level2;            // within-subject components
    double sigma2 = 0.0;
    bool sigma2_clamped = false;
    double rho_w = 0.0;
    MfpcaOptions options;
};

// Full pipeline: means, optional mean smoothing, raw covariances, optional
// surface smoothing with noise recovery, eigenanalysis of K_B and
// K_W = K_T - K_B, component selection, and the variance share.
inline MfpcaFit fit_mfpca(const MultilevelSample& sample,
                          const MfpcaOptions& options = {}) {
    const GridPtr& grid = sample.grid();
    const int T = grid->size();
    options.smoother.validate();
    if (options.p1 <= 0.0 || options.p1 > 1.0)
        throw InvalidArgument("p1 must lie in (0, 1]");
    if (options.force_n1 < 0 || options.force_n2 < 0)
        throw InvalidArgument("forced component counts must be nonnegative");

    MfpcaFit fit;
    fit.grid = grid;
    fit.I = sample.n_subjects();
    fit.J = sample.n_visits();
    fit.mask = sample.mask();
    fit.options = options;

    const MeanEstimate raw_means = estimate_means(sample);
    if (options.smooth) {
        // Smooth each visit-level mean curve, then re-derive the shifts so the
        // smoothed mu + eta_j is itself the smoothed visit mean.
        fit.means.mu = smooth_mean(raw_means.mu, options.smoother);
        fit.means.eta.reserve(raw_means.eta.size());
        for (int j = 0; j < sample.n_visits(); ++j) {
            const Curve smoothed_visit =
                smooth_mean(raw_means.visit_mean(j), options.smoother);
            fit.means.eta.emplace_back(
                grid, smoothed_visit.values - fit.means.mu.values);
        }
    } else {
        fit.means = raw_means;
    }

    const RawCov raw = estimate_raw_cov(sample, fit.means);
    Eigen::MatrixXd KT;
    Eigen::MatrixXd KB;
    if (options.smooth) {
        const SmoothedCov sm = smooth_cov(raw, *grid, options.smoother);
        KT = sm.total;
        KB = sm.between;
        fit.sigma2 = sm.sigma2.value;
        fit.sigma2_clamped = sm.sigma2.clamped;
    } else {
        KT = raw.total;
        KB = raw.between;
        fit.sigma2 = 0.0;
        fit.sigma2_clamped = false;
    }

    const Eigen::MatrixXd KW = KT - KB;
    fit.level1 = eigendecompose(KB, grid, 1);
    fit.level2 = eigendecompose(KW, grid, 2);

    if (fit.level1.eigenvalues.size() == 0 &&
        fit.level2.eigenvalues.size() == 0)
        throw NoVariance("fit_mfpca: sample has no variation at either level");

    auto choose = [&](const EigenSystem& sys, int forced) {
        if (forced > 0)
            return std::min<int>(forced,
                                 static_cast<int>(sys.eigenvalues.size()));
        if (sys.eigenvalues.size() == 0) return 0;
        return select_ncomp(sys.eigenvalues, T, options.p1, options.p2,
                            options.selection);
    };
    fit.level1.n_selected = choose(fit.level1, options.force_n1);
    fit.level2.n_selected = choose(fit.level2, options.force_n2);
    fit.rho_w = rho_w(fit.level1.eigenvalues, fit.level2.eigenvalues);
    return fit;
}

}  // namespace mfpca
