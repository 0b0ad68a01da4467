#pragma once

// Model-facing smoothing steps: smooth mean curves, smooth the raw covariance
// surfaces, and recover the measurement-noise variance from the gap between
// the raw and smoothed total covariance diagonals.  The total covariance is
// smoothed without its diagonal because measurement noise inflates exactly
// the diagonal cells; the smoothed surface then predicts noise-free diagonal
// values and the average gap estimates the noise variance.

#include <Eigen/Dense>
#include <algorithm>
#include <string>

#include "mfpca/errors.hpp"
#include "mfpca/grid.hpp"
#include "mfpca/moments.hpp"
#include "mfpca/pspline.hpp"

namespace mfpca {

struct SmootherConfig {
    int n_basis = 0;           // curve basis size; 0 picks min(35, T/4)
    int surface_n_basis = 0;   // per-axis surface basis; 0 picks min(15, T/6)
    int penalty_order = 2;
    LambdaRule lambda_rule = LambdaRule::gcv;
    double fixed_lambda = 1.0;

    int resolved_n_basis(int T) const {
        const int nb = n_basis > 0 ? n_basis : std::min(35, T / 4);
        return std::max(4, nb);
    }

    int resolved_surface_n_basis(int T) const {
        const int nb =
            surface_n_basis > 0 ? surface_n_basis : std::min(15, T / 6);
        return std::max(4, nb);
    }

    void validate() const {
        if (n_basis != 0 && n_basis < 4)
            throw InvalidArgument("n-basis must be at least 4");
        if (surface_n_basis != 0 && surface_n_basis < 4)
            throw InvalidArgument("surface-n-basis must be at least 4");
        if (penalty_order < 1 || penalty_order > 3)
            throw InvalidArgument("penalty-order must be 1, 2 or 3");
        if (lambda_rule == LambdaRule::fixed && !(fixed_lambda > 0.0))
            throw InvalidArgument("fixed lambda must be positive");
    }
};

// Penalized-spline fit of a curve, evaluated back on its own grid.
inline Curve smooth_mean(const Curve& y, const SmootherConfig& cfg = {}) {
    cfg.validate();
    const SampledGrid& grid = *y.grid;
    const int nb = cfg.resolved_n_basis(grid.size());
    if (grid.size() < nb)
        throw InsufficientData("smooth_mean: grid of " +
                               std::to_string(grid.size()) +
                               " cannot support " + std::to_string(nb) +
                               " basis functions");
    const double a = grid.points()(0);
    const double b = grid.points()(grid.size() - 1);
    const Eigen::VectorXd coef = pspline::fit_curve_coef(
        grid.points(), y.values, a, b, nb, cfg.penalty_order, cfg.lambda_rule,
        cfg.fixed_lambda);
    const Eigen::MatrixXd B = pspline::basis_matrix(grid.points(), a, b, nb);
    return Curve(y.grid, B * coef);
}

// Tensor-product spline fit of a symmetric surface on grid x grid.  With
// drop_diagonal the diagonal cells are excluded from the fit and the returned
// diagonal is the smooth extrapolation.
inline Eigen::MatrixXd smooth_surface(const Eigen::MatrixXd& G,
                                      const SampledGrid& grid,
                                      bool drop_diagonal,
                                      const SmootherConfig& cfg = {}) {
    cfg.validate();
    pspline::SurfaceOptions opt;
    opt.nbasis = cfg.resolved_surface_n_basis(grid.size());
    opt.penalty_order = cfg.penalty_order;
    opt.rule = cfg.lambda_rule;
    opt.fixed_lambda = cfg.fixed_lambda;
    opt.drop_diagonal = drop_diagonal;
    const double a = grid.points()(0);
    const double b = grid.points()(grid.size() - 1);
    return pspline::fit_surface(G, grid.points(), a, b, opt);
}

struct Sigma2Estimate {
    double value = 0.0;    // clamped at zero
    double raw = 0.0;      // integral before clamping
    bool clamped = false;
};

// Noise variance: integral of (raw total diagonal - smoothed total diagonal).
// A negative integral means the data carry no detectable noise; the estimate
// clamps to zero and flags it.
inline Sigma2Estimate estimate_sigma2(const Eigen::MatrixXd& raw_total,
                                      const Eigen::MatrixXd& smoothed_total,
                                      const SampledGrid& grid) {
    const int T = grid.size();
    if (raw_total.rows() != T || raw_total.cols() != T ||
        smoothed_total.rows() != T || smoothed_total.cols() != T)
        throw ShapeError("estimate_sigma2: surfaces do not match the grid");
    const Eigen::VectorXd gap =
        raw_total.diagonal() - smoothed_total.diagonal();
    Sigma2Estimate out;
    out.raw = (gap.array() * grid.weights().array()).sum();
    out.clamped = out.raw < 0.0;
    out.value = out.clamped ? 0.0 : out.raw;
    return out;
}

struct SmoothedCov {
    Eigen::MatrixXd total;    // noise-free total covariance K_T
    Eigen::MatrixXd between;  // between-subject covariance K_B
    Sigma2Estimate sigma2;
};

// Full smoothing step for the covariance pair: total surface without its
// diagonal, between surface with all cells, then the noise variance.
inline SmoothedCov smooth_cov(const RawCov& raw, const SampledGrid& grid,
                              const SmootherConfig& cfg = {}) {
    SmoothedCov out;
    out.total = smooth_surface(raw.total, grid, /*drop_diagonal=*/true, cfg);
    out.between = smooth_surface(raw.between, grid, /*drop_diagonal=*/false, cfg);
    out.sigma2 = estimate_sigma2(raw.total, out.total, grid);
    return out;
}

}  // namespace mfpca
