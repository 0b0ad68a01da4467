#pragma once

// Method-of-moments estimators for the two-way functional model
//   Y_ij(t) = mu(t) + eta_j(t) + Z_i(t) + W_ij(t) + noise.
// Means are cross-sectional averages; the raw total and between-subject
// covariance matrices come from residual cross products, written as matrix
// products so that large samples stay cheap.  Divisors are population style
// (counts of contributing terms, no degree-of-freedom corrections).

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mfpca/errors.hpp"
#include "mfpca/grid.hpp"

namespace mfpca {

struct MeanEstimate {
    Curve mu;                 // grand mean over all observed curves
    std::vector<Curve> eta;   // per-visit shifts; presence-weighted sum is 0

    // Mean curve of visit level j, mu + eta_j.
    Curve visit_mean(int j) const {
        if (j < 0 || j >= static_cast<int>(eta.size()))
            throw IndexError("visit index " + std::to_string(j) +
                             " out of range");
        return Curve(mu.grid, mu.values + eta[static_cast<std::size_t>(j)].values);
    }
};

inline MeanEstimate estimate_means(const MultilevelSample& sample) {
    const int J = sample.n_visits();
    const int T = sample.grid()->size();
    const Eigen::MatrixXd& V = sample.values();

    Eigen::VectorXd grand = Eigen::VectorXd::Zero(T);
    std::vector<Eigen::VectorXd> visit(static_cast<std::size_t>(J),
                                       Eigen::VectorXd::Zero(T));
    std::vector<int> count(static_cast<std::size_t>(J), 0);
    for (int i = 0; i < sample.n_subjects(); ++i)
        for (int j = 0; j < J; ++j)
            if (sample.present(i, j)) {
                visit[static_cast<std::size_t>(j)] +=
                    V.row(sample.row_index(i, j)).transpose();
                ++count[static_cast<std::size_t>(j)];
            }
    int total = 0;
    for (int j = 0; j < J; ++j) {
        if (count[static_cast<std::size_t>(j)] == 0)
            throw EmptyVisit("visit level " + sample.visit_label(j) +
                             " has no observed subjects");
        grand += visit[static_cast<std::size_t>(j)];
        total += count[static_cast<std::size_t>(j)];
    }
    grand /= total;

    MeanEstimate out;
    out.mu = Curve(sample.grid(), grand);
    out.eta.reserve(static_cast<std::size_t>(J));
    for (int j = 0; j < J; ++j)
        out.eta.emplace_back(sample.grid(),
                             visit[static_cast<std::size_t>(j)] /
                                     count[static_cast<std::size_t>(j)] -
                                 grand);
    return out;
}

// Residual matrix with the same (I*J) x T layout as the sample; absent rows
// stay zero so cross products can ignore the mask.
inline Eigen::MatrixXd residual_matrix(const MultilevelSample& sample,
                                       const MeanEstimate& means) {
    require_same_grid(*sample.grid(), *means.mu.grid, "residual_matrix");
    if (static_cast<int>(means.eta.size()) != sample.n_visits())
        throw ShapeError("mean estimate has " +
                         std::to_string(means.eta.size()) +
                         " visit effects for " +
                         std::to_string(sample.n_visits()) + " visits");
    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(sample.values().rows(),
                                              sample.values().cols());
    for (int i = 0; i < sample.n_subjects(); ++i)
        for (int j = 0; j < sample.n_visits(); ++j)
            if (sample.present(i, j)) {
                const int r = sample.row_index(i, j);
                R.row(r) = sample.values().row(r) -
                           means.mu.values.transpose() -
                           means.eta[static_cast<std::size_t>(j)]
                               .values.transpose();
            }
    return R;
}

// Same sample with the mean structure removed.
inline MultilevelSample center(const MultilevelSample& sample,
                               const Curve& mu,
                               const std::vector<Curve>& eta) {
    MeanEstimate means{mu, eta};
    return MultilevelSample(sample.grid(), sample.n_subjects(),
                            sample.n_visits(), residual_matrix(sample, means),
                            sample.mask(), sample.subject_labels(),
                            sample.visit_labels());
}

inline MultilevelSample center(const MultilevelSample& sample,
                               const MeanEstimate& means) {
    return center(sample, means.mu, means.eta);
}

struct RawCov {
    Eigen::MatrixXd total;     // G_T: E[(Y_ij - m_j)(s) (Y_ij - m_j)(r)]
    Eigen::MatrixXd between;   // G_B: E[(Y_ij - m_j)(s) (Y_ik - m_k)(r)], j != k
};

// Raw covariance estimates from residual cross products.
//   G_T = R' R / #observed visits
//   G_B = (S' S - R' R) / #ordered within-subject pairs,
// where S stacks per-subject residual sums.  The pair identity averages over
// both orderings of each visit pair, so G_B is symmetric by construction.
inline RawCov estimate_raw_cov(const MultilevelSample& sample,
                               const MeanEstimate& means) {
    const int I = sample.n_subjects();
    const int T = sample.grid()->size();

    long long n_pairs = 0;
    for (int i = 0; i < I; ++i) {
        const long long ni = sample.visits_of(i);
        n_pairs += ni * (ni - 1);
    }
    if (n_pairs == 0)
        throw NoWithinPairs(
            "no subject has two observed visits; between-subject "
            "covariance cannot be estimated");

    const Eigen::MatrixXd R = residual_matrix(sample, means);
    Eigen::MatrixXd S(I, T);
    for (int i = 0; i < I; ++i)
        S.row(i) = R.middleRows(sample.row_index(i, 0), sample.n_visits())
                       .colwise()
                       .sum();

    const Eigen::MatrixXd RtR = R.transpose() * R;
    const Eigen::MatrixXd StS = S.transpose() * S;

    RawCov out;
    out.total = RtR / static_cast<double>(sample.n_present());
    out.between = (StS - RtR) / static_cast<double>(n_pairs);
    out.total = ((out.total + out.total.transpose()) * 0.5).eval();
    out.between = ((out.between + out.between.transpose()) * 0.5).eval();
    return out;
}

}  // namespace mfpca
