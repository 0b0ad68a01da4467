#pragma once

// Penalized B-spline smoothing.  The basis is the classic uniform cubic
// B-spline system with equally spaced knots extended past the domain, paired
// with a difference penalty on the coefficients.  With this pairing an
// order-d penalty exactly annihilates polynomials of degree < d, so those
// polynomials are reproduced unchanged at any penalty strength.
//
// Penalty strength is chosen by GCV or REML over a fixed logarithmic grid.
// A Demmler-Reinsch style reparameterization turns the per-lambda cost into
// O(basis) once the problem is factorized, which keeps repeated smoothing in
// simulations cheap.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>

#include "mfpca/errors.hpp"

namespace mfpca {

enum class LambdaRule { fixed, gcv, reml };

namespace pspline {

// Values of the `nbasis` uniform cubic B-splines at the points x, for the
// domain [a, b].  There are nbasis - 3 equal cells; each point lies in the
// support of exactly four basis functions.
inline Eigen::MatrixXd basis_matrix(const Eigen::VectorXd& x, double a,
                                    double b, int nbasis) {
    if (nbasis < 4)
        throw InvalidArgument("cubic B-spline basis needs at least 4 functions");
    if (!(b > a))
        throw InvalidArgument("basis domain must have positive length");
    const int ncell = nbasis - 3;
    const double h = (b - a) / ncell;
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(x.size(), nbasis);
    for (Eigen::Index r = 0; r < x.size(); ++r) {
        const double pos = (x(r) - a) / h;
        int cell = static_cast<int>(std::floor(pos));
        if (cell < 0) cell = 0;
        if (cell > ncell - 1) cell = ncell - 1;
        const double u = pos - cell;
        const double v = 1.0 - u;
        B(r, cell) = v * v * v / 6.0;
        B(r, cell + 1) = (3.0 * u * u * u - 6.0 * u * u + 4.0) / 6.0;
        B(r, cell + 2) = (-3.0 * u * u * u + 3.0 * u * u + 3.0 * u + 1.0) / 6.0;
        B(r, cell + 3) = u * u * u / 6.0;
    }
    return B;
}

// P = D' D for the order-d forward difference matrix D.
inline Eigen::MatrixXd difference_penalty(int nbasis, int order) {
    if (order < 1)
        throw InvalidArgument("penalty order must be at least 1");
    if (nbasis <= order)
        throw InvalidArgument("penalty order " + std::to_string(order) +
                              " needs more than " + std::to_string(order) +
                              " basis functions");
    Eigen::MatrixXd D = Eigen::MatrixXd::Identity(nbasis, nbasis);
    for (int d = 0; d < order; ++d) {
        const Eigen::Index rows = D.rows() - 1;
        Eigen::MatrixXd Dn(rows, nbasis);
        Dn = D.bottomRows(rows) - D.topRows(rows);
        D = std::move(Dn);
    }
    return D.transpose() * D;
}

// Shared machinery for ridge-type solves (G + lambda*P) theta = r across many
// lambda values.  G must be positive definite; P is the penalty with the
// given null-space dimension.
class DemmlerReinsch {
public:
    DemmlerReinsch(const Eigen::MatrixXd& G, const Eigen::MatrixXd& P,
                   int null_dim)
        : null_dim_(null_dim) {
        llt_.compute(G);
        if (llt_.info() != Eigen::Success)
            throw InsufficientData(
                "normal equations are not positive definite; too few "
                "observations for the requested basis");
        const Eigen::MatrixXd half = llt_.matrixL().solve(P);
        Eigen::MatrixXd C =
            llt_.matrixL().solve(half.transpose()).transpose();
        C = ((C + C.transpose()) * 0.5).eval();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
        if (es.info() != Eigen::Success)
            throw SingularSystem("penalty eigendecomposition failed");
        gamma_ = es.eigenvalues();
        U_ = es.eigenvectors();
        // Ascending order: the first null_dim values are the (numerically
        // tiny) null-space ones; pin them to zero.
        for (Eigen::Index k = 0; k < gamma_.size(); ++k)
            gamma_(k) = (k < null_dim_ || gamma_(k) < 0.0) ? 0.0 : gamma_(k);
    }

    int size() const { return static_cast<int>(gamma_.size()); }
    int null_dim() const { return null_dim_; }

    // Spectral image of the right-hand side r = B'Wy.
    Eigen::VectorXd transform_rhs(const Eigen::VectorXd& r) const {
        return U_.transpose() * llt_.matrixL().solve(r);
    }

    double edf(double lambda) const {
        return (1.0 / (1.0 + lambda * gamma_.array())).sum();
    }

    // Weighted residual sum of squares at this lambda, given z =
    // transform_rhs(r) and yWy = y'Wy.
    double rss(double lambda, const Eigen::VectorXd& z, double yWy) const {
        const Eigen::ArrayXd m = z.array() / (1.0 + lambda * gamma_.array());
        return yWy - 2.0 * (m * z.array()).sum() + m.square().sum();
    }

    double gcv(double lambda, const Eigen::VectorXd& z, double yWy,
               double n_obs) const {
        const double r = std::max(rss(lambda, z, yWy), 0.0);
        const double denom = n_obs - edf(lambda);
        return n_obs * r / (denom * denom);
    }

    // Restricted likelihood score (larger is better), up to constants.
    double reml(double lambda, const Eigen::VectorXd& z, double yWy,
                double n_obs) const {
        const Eigen::ArrayXd shrink = 1.0 + lambda * gamma_.array();
        const Eigen::ArrayXd m = z.array() / shrink;
        const double fit_rss =
            std::max(yWy - 2.0 * (m * z.array()).sum() + m.square().sum(), 0.0);
        const double pen = (m.square() * gamma_.array()).sum();
        const double profiled =
            std::max(fit_rss + lambda * pen, 1e-300);
        const int q = size() - null_dim_;
        return -(n_obs - null_dim_) * std::log(profiled) -
               shrink.log().sum() + q * std::log(lambda);
    }

    Eigen::VectorXd coefficients(double lambda, const Eigen::VectorXd& z) const {
        const Eigen::VectorXd m =
            (z.array() / (1.0 + lambda * gamma_.array())).matrix();
        return llt_.matrixL().transpose().solve(U_ * m);
    }

    // Picks lambda on a log grid by the requested rule; ties resolve to the
    // smallest lambda so results are deterministic.
    double select_lambda(LambdaRule rule, double fixed_lambda,
                         const Eigen::VectorXd& z, double yWy,
                         double n_obs) const {
        if (rule == LambdaRule::fixed) {
            if (!(fixed_lambda > 0.0))
                throw InvalidArgument("fixed lambda must be positive");
            return fixed_lambda;
        }
        double best_lambda = std::pow(10.0, -8.0);
        double best_score = (rule == LambdaRule::gcv)
                                ? gcv(best_lambda, z, yWy, n_obs)
                                : -reml(best_lambda, z, yWy, n_obs);
        for (int k = 1; k <= 64; ++k) {
            const double lambda = std::pow(10.0, -8.0 + 0.25 * k);
            const double score = (rule == LambdaRule::gcv)
                                     ? gcv(lambda, z, yWy, n_obs)
                                     : -reml(lambda, z, yWy, n_obs);
            if (score < best_score - 1e-12 * std::abs(best_score)) {
                best_score = score;
                best_lambda = lambda;
            }
        }
        return best_lambda;
    }

private:
    Eigen::LLT<Eigen::MatrixXd> llt_;
    Eigen::VectorXd gamma_;
    Eigen::MatrixXd U_;
    int null_dim_;
};

struct FitInfo {
    double lambda = 0.0;
    double edf = 0.0;
};

// Penalized fit of y observed at points x; returns the basis coefficients.
inline Eigen::VectorXd fit_curve_coef(const Eigen::VectorXd& x,
                                      const Eigen::VectorXd& y, double a,
                                      double b, int nbasis, int order,
                                      LambdaRule rule, double fixed_lambda,
                                      FitInfo* info = nullptr) {
    if (x.size() != y.size())
        throw ShapeError("fit_curve: x and y lengths differ");
    if (x.size() < nbasis)
        throw InsufficientData("fit_curve: " + std::to_string(x.size()) +
                               " observations cannot support " +
                               std::to_string(nbasis) + " basis functions");
    const Eigen::MatrixXd B = basis_matrix(x, a, b, nbasis);
    const Eigen::MatrixXd G = B.transpose() * B;
    const Eigen::MatrixXd P = difference_penalty(nbasis, order);
    DemmlerReinsch dr(G, P, order);
    const Eigen::VectorXd z = dr.transform_rhs(B.transpose() * y);
    const double yWy = y.squaredNorm();
    const double n = static_cast<double>(x.size());
    const double lambda = dr.select_lambda(rule, fixed_lambda, z, yWy, n);
    if (info) {
        info->lambda = lambda;
        info->edf = dr.edf(lambda);
    }
    return dr.coefficients(lambda, z);
}

struct SurfaceOptions {
    int nbasis = 10;          // per axis
    int penalty_order = 2;
    LambdaRule rule = LambdaRule::gcv;
    double fixed_lambda = 1.0;
    bool drop_diagonal = false;
};

// Smooths a symmetric T x T surface sampled at grid points t with a
// tensor-product basis and the separable penalty lambda * (P(x)I + I(x)P).
// With drop_diagonal the cells (s, s) get weight zero, so the fitted value on
// the diagonal is pure extrapolation from the off-diagonal surface.
inline Eigen::MatrixXd fit_surface(const Eigen::MatrixXd& Gmat,
                                   const Eigen::VectorXd& t, double a,
                                   double b, const SurfaceOptions& opt,
                                   FitInfo* info = nullptr) {
    const Eigen::Index T = t.size();
    if (Gmat.rows() != T || Gmat.cols() != T)
        throw ShapeError("fit_surface: matrix does not match the grid");
    const double scale = std::max(1.0, Gmat.cwiseAbs().maxCoeff());
    if ((Gmat - Gmat.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
        throw AsymmetricInput("fit_surface: input surface is not symmetric");
    const int nb = opt.nbasis;
    if (nb < 4)
        throw InvalidArgument("surface basis needs at least 4 functions per axis");
    if (T < nb)
        throw InsufficientData("fit_surface: grid of " + std::to_string(T) +
                               " cannot support " + std::to_string(nb) +
                               " basis functions per axis");

    const Eigen::MatrixXd B = basis_matrix(t, a, b, nb);
    const Eigen::MatrixXd K = B.transpose() * B;
    Eigen::MatrixXd Gw = Gmat;
    if (opt.drop_diagonal) Gw.diagonal().setZero();

    // Normal matrix of the kept cells: kron(K, K) minus the diagonal cells'
    // rank-one contributions when those are dropped.
    const int m = nb * nb;
    Eigen::MatrixXd M(m, m);
    for (int cb = 0; cb < nb; ++cb)
        for (int ca = 0; ca < nb; ++ca)
            M.block(cb * nb, ca * nb, nb, nb) = K(cb, ca) * K;
    if (opt.drop_diagonal) {
        Eigen::VectorXd u(m);
        for (Eigen::Index s = 0; s < T; ++s) {
            const Eigen::VectorXd bs = B.row(s).transpose();
            for (int cb = 0; cb < nb; ++cb)
                u.segment(cb * nb, nb) = bs(cb) * bs;
            M.noalias() -= u * u.transpose();
        }
    }

    const Eigen::MatrixXd F = B.transpose() * Gw * B;
    const Eigen::Map<const Eigen::VectorXd> rhs(F.data(), m);

    const Eigen::MatrixXd P1 = difference_penalty(nb, opt.penalty_order);
    Eigen::MatrixXd Pen = Eigen::MatrixXd::Zero(m, m);
    const Eigen::MatrixXd Inb = Eigen::MatrixXd::Identity(nb, nb);
    for (int cb = 0; cb < nb; ++cb)
        for (int ca = 0; ca < nb; ++ca)
            Pen.block(cb * nb, ca * nb, nb, nb) =
                P1(cb, ca) * Inb + (cb == ca ? P1 : Eigen::MatrixXd::Zero(nb, nb));

    const int null_dim = opt.penalty_order * opt.penalty_order;
    DemmlerReinsch dr(M, Pen, null_dim);
    const Eigen::VectorXd z = dr.transform_rhs(rhs);
    const double yWy = Gw.squaredNorm();
    const double n_obs =
        static_cast<double>(T) * T - (opt.drop_diagonal ? T : 0);
    const double lambda =
        dr.select_lambda(opt.rule, opt.fixed_lambda, z, yWy, n_obs);
    if (info) {
        info->lambda = lambda;
        info->edf = dr.edf(lambda);
    }
    const Eigen::VectorXd coef = dr.coefficients(lambda, z);
    const Eigen::Map<const Eigen::MatrixXd> Theta(coef.data(), nb, nb);
    Eigen::MatrixXd fitted = B * Theta * B.transpose();
    return ((fitted + fitted.transpose()) * 0.5).eval();
}

}  // namespace pspline
}  // namespace mfpca
