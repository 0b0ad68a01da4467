#pragma once

// Logistic regression of a binary outcome on principal component scores and
// optional covariates, by iteratively reweighted least squares.  Standard
// errors come from the observed information; score coefficients can be
// reported per standard deviation of the score and mapped back to a
// coefficient function over the grid.

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "mfpca/decomposition.hpp"
#include "mfpca/errors.hpp"
#include "mfpca/grid.hpp"

namespace mfpca {

struct RegressionSpec {
    Eigen::VectorXd outcome;             // 0/1 per unit
    Eigen::MatrixXd design;              // units x terms, no intercept column
    std::vector<std::string> names;      // one per design column
    double z_critical = 1.959963984540054;  // two-sided 95% normal quantile
};

struct RegressionFit {
    std::vector<std::string> names;      // "(intercept)" first
    Eigen::VectorXd coef;
    Eigen::VectorXd se;
    Eigen::VectorXd zstat;
    Eigen::VectorXd pvalue;
    Eigen::VectorXd odds_ratio;          // exp(coef)
    Eigen::VectorXd odds_lower;          // 95% Wald interval
    Eigen::VectorXd odds_upper;
    std::vector<bool> significant;       // |z| beyond the critical value
    double loglik = 0.0;
    int iterations = 0;
};

inline double normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

// Expands a categorical column into reference-cell indicator columns; the
// first distinct value (in order of appearance) is the reference.
inline std::pair<Eigen::MatrixXd, std::vector<std::string>> encode_categorical(
    const std::vector<std::string>& values, const std::string& name) {
    std::vector<std::string> levels;
    for (const std::string& v : values)
        if (std::find(levels.begin(), levels.end(), v) == levels.end())
            levels.push_back(v);
    if (levels.size() < 2)
        throw NoVariance("categorical covariate '" + name +
                         "' has a single level");
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(
        static_cast<Eigen::Index>(values.size()),
        static_cast<Eigen::Index>(levels.size()) - 1);
    std::vector<std::string> names;
    for (std::size_t l = 1; l < levels.size(); ++l)
        names.push_back(name + "=" + levels[l]);
    for (std::size_t r = 0; r < values.size(); ++r)
        for (std::size_t l = 1; l < levels.size(); ++l)
            if (values[r] == levels[l])
                X(static_cast<Eigen::Index>(r),
                  static_cast<Eigen::Index>(l) - 1) = 1.0;
    return {X, names};
}

inline RegressionFit fit_logistic(const RegressionSpec& spec) {
    const Eigen::Index n = spec.outcome.size();
    if (spec.design.rows() != n)
        throw ShapeError("fit_logistic: outcome and design row counts differ");
    if (static_cast<Eigen::Index>(spec.names.size()) != spec.design.cols())
        throw ShapeError("fit_logistic: need one name per design column");
    for (Eigen::Index r = 0; r < n; ++r)
        if (spec.outcome(r) != 0.0 && spec.outcome(r) != 1.0)
            throw InvalidArgument("fit_logistic: outcome must be 0/1 (row " +
                                  std::to_string(r + 1) + ")");
    const Eigen::Index p = spec.design.cols() + 1;
    if (n <= p)
        throw InsufficientData("fit_logistic: " + std::to_string(n) +
                               " rows cannot identify " + std::to_string(p) +
                               " coefficients");

    Eigen::MatrixXd X(n, p);
    X.col(0).setOnes();
    X.rightCols(p - 1) = spec.design;

    {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
        qr.setThreshold(1e-10);
        if (qr.rank() < p)
            throw RankDeficient("fit_logistic: design matrix has rank " +
                                std::to_string(qr.rank()) + " < " +
                                std::to_string(p));
    }

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    double ll = -std::numeric_limits<double>::infinity();
    int iter = 0;
    const int max_iter = 100;
    const double tol = 1e-10;

    auto loglik_of = [&](const Eigen::VectorXd& b) {
        const Eigen::ArrayXd eta = (X * b).array();
        // log p(y) = y*eta - log(1 + exp(eta)), computed stably.
        return (spec.outcome.array() * eta -
                eta.max(0.0) - (-eta.abs()).exp().log1p())
            .sum();
    };

    for (iter = 1; iter <= max_iter; ++iter) {
        const Eigen::ArrayXd eta = (X * beta).array();
        const Eigen::ArrayXd mu = 1.0 / (1.0 + (-eta).exp());
        const Eigen::ArrayXd w = (mu * (1.0 - mu)).max(1e-12);
        const Eigen::VectorXd grad =
            X.transpose() * (spec.outcome.array() - mu).matrix();
        const Eigen::MatrixXd info =
            X.transpose() * w.matrix().asDiagonal() * X;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
        if (ldlt.info() != Eigen::Success)
            throw SingularSystem("fit_logistic: information matrix singular");
        Eigen::VectorXd step = ldlt.solve(grad);

        // Diverging coefficients with ever-increasing likelihood indicate
        // (quasi-)separation.
        if (iter >= 25 &&
            ((X * beta).cwiseAbs().maxCoeff() > 30.0 ||
             step.cwiseAbs().maxCoeff() > 10.0))
            throw SeparationDetected(
                "fit_logistic: fitted scale diverging; data appear separable");

        double next_ll = loglik_of(beta + step);
        int halvings = 0;
        while (next_ll < ll && halvings < 30) {
            step *= 0.5;
            next_ll = loglik_of(beta + step);
            ++halvings;
        }
        beta += step;
        const bool converged =
            std::abs(next_ll - ll) <= tol * (std::abs(next_ll) + 1.0);
        ll = next_ll;
        if (converged) break;
    }
    if (iter > max_iter)
        throw SingularSystem("fit_logistic: no convergence in " +
                             std::to_string(max_iter) + " iterations");

    const Eigen::ArrayXd eta = (X * beta).array();
    const Eigen::ArrayXd mu = 1.0 / (1.0 + (-eta).exp());
    const Eigen::ArrayXd w = (mu * (1.0 - mu)).max(1e-12);
    const Eigen::MatrixXd info = X.transpose() * w.matrix().asDiagonal() * X;
    const Eigen::MatrixXd cov =
        info.ldlt().solve(Eigen::MatrixXd::Identity(p, p));

    RegressionFit fit;
    fit.names.push_back("(intercept)");
    for (const std::string& s : spec.names) fit.names.push_back(s);
    fit.coef = beta;
    fit.se = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    fit.zstat = beta.array() / fit.se.array();
    fit.pvalue.resize(p);
    fit.odds_ratio.resize(p);
    fit.odds_lower.resize(p);
    fit.odds_upper.resize(p);
    fit.significant.resize(static_cast<std::size_t>(p));
    for (Eigen::Index k = 0; k < p; ++k) {
        fit.pvalue(k) = 2.0 * normal_cdf(-std::abs(fit.zstat(k)));
        fit.odds_ratio(k) = std::exp(beta(k));
        fit.odds_lower(k) = std::exp(beta(k) - spec.z_critical * fit.se(k));
        fit.odds_upper(k) = std::exp(beta(k) + spec.z_critical * fit.se(k));
        fit.significant[static_cast<std::size_t>(k)] =
            std::abs(fit.zstat(k)) > spec.z_critical;
    }
    fit.loglik = ll;
    fit.iterations = iter;
    return fit;
}

// Effect of a one-standard-deviation increase of a score: beta * sd.
inline double standardize_coef(double beta, double score_sd) {
    if (!(score_sd > 0.0))
        throw InvalidArgument("standardize_coef: standard deviation must be "
                              "positive");
    return beta * score_sd;
}

// Coefficient function beta(t) = sum_k beta_k phi_k(t) over the selected
// level-1 components.
inline Curve reconstruct_beta_curve(const Eigen::VectorXd& betas,
                                    const EigenSystem& level1) {
    if (betas.size() > level1.eigenfunctions.cols())
        throw ShapeError("reconstruct_beta_curve: more coefficients than "
                         "components");
    Eigen::VectorXd v = Eigen::VectorXd::Zero(level1.grid->size());
    for (Eigen::Index k = 0; k < betas.size(); ++k)
        v += betas(k) * level1.eigenfunctions.col(k);
    return Curve(level1.grid, v);
}

}  // namespace mfpca
