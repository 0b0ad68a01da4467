#pragma once

// Principal component score estimation.  Two routes to the same target:
//
//  * PC-P ("projection"): project each centered curve onto the selected
//    eigenfunctions first, then treat the projections as a small linear mixed
//    model coupling levels through the eigenfunction cross products.
//  * PC-F ("function"): regress the centered curves directly on sampled
//    eigenfunction values in one mixed model per subject.
//
// Either route can produce plug-in best linear unbiased predictors (with
// posterior standard deviations) or draws from a Gibbs sampler whose
// residual precisions carry diffuse gamma priors.  Subjects are independent
// given the variance parameters, so everything works per-subject block and
// scales linearly in the number of subjects.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mfpca/decomposition.hpp"
#include "mfpca/errors.hpp"
#include "mfpca/grid.hpp"
#include "mfpca/moments.hpp"
#include "mfpca/parallel.hpp"
#include "mfpca/rng.hpp"

namespace mfpca {

// Cross products c_kl = <phi1_k, phi2_l> between the selected components of
// the two levels.  Zero when the level-1 and level-2 bases are orthogonal.
inline Eigen::MatrixXd compute_C(const EigenSystem& level1,
                                 const EigenSystem& level2) {
    require_same_grid(*level1.grid, *level2.grid, "compute_C");
    const int n1 = level1.n_selected;
    const int n2 = level2.n_selected;
    Eigen::MatrixXd C(n1, n2);
    for (int k = 0; k < n1; ++k)
        for (int l = 0; l < n2; ++l)
            C(k, l) = inner_product(*level1.grid,
                                    level1.eigenfunctions.col(k),
                                    level2.eigenfunctions.col(l));
    return C;
}

// Quadrature projections of every observed centered curve onto the selected
// eigenfunctions of both levels.  Rows follow the sample layout; absent rows
// are zero.
struct Projections {
    int I = 0;
    int J = 0;
    std::vector<std::uint8_t> mask;
    Eigen::MatrixXd A;   // (I*J) x N1
    Eigen::MatrixXd B;   // (I*J) x N2

    bool present(int i, int j) const {
        return mask[static_cast<std::size_t>(i) * J + j] != 0;
    }
};

inline Projections project(const MultilevelSample& sample,
                           const MeanEstimate& means,
                           const EigenSystem& level1,
                           const EigenSystem& level2) {
    require_same_grid(*sample.grid(), *level1.grid, "project");
    require_same_grid(*sample.grid(), *level2.grid, "project");
    const Eigen::MatrixXd R = residual_matrix(sample, means);
    const int n1 = level1.n_selected;
    const int n2 = level2.n_selected;
    Projections out;
    out.I = sample.n_subjects();
    out.J = sample.n_visits();
    out.mask = sample.mask();
    const Eigen::MatrixXd Rw =
        R.array().rowwise() * sample.grid()->weights().transpose().array();
    out.A = Rw * level1.eigenfunctions.leftCols(n1);
    out.B = Rw * level2.eigenfunctions.leftCols(n2);
    return out;
}

enum class ScoreMethod { blup, gibbs };

struct GibbsOptions {
    int iterations = 2000;
    int burnin = 500;
    int thin = 1;
    int chains = 3;
    double prior_shape = 0.01;   // gamma prior on each residual precision
    double prior_rate = 0.01;    // mean 1, variance 100
    std::uint64_t seed = 20090415;
    bool fix_variances = false;  // keep residual variances at their inputs

    void validate() const {
        if (iterations <= 0 || burnin < 0 || burnin >= iterations)
            throw InvalidArgument("gibbs: need 0 <= burnin < iterations");
        if (thin <= 0 || chains <= 0)
            throw InvalidArgument("gibbs: thin and chains must be positive");
        if (!(prior_shape > 0.0) || !(prior_rate > 0.0))
            throw InvalidArgument("gibbs: prior parameters must be positive");
    }
};

struct ScoreSet {
    int I = 0;
    int J = 0;
    std::vector<std::uint8_t> mask;
    Eigen::MatrixXd xi;        // I x N1 subject scores
    Eigen::MatrixXd xi_sd;     // posterior standard deviations
    Eigen::MatrixXd zeta;      // (I*J) x N2 visit scores, absent rows zero
    Eigen::MatrixXd zeta_sd;
    double sigma1_sq = 0.0;    // PC-P level-1 residual variance used/estimated
    double sigma2_sq = 0.0;    // PC-P level-2 residual variance
    double sigma_sq = 0.0;     // PC-F noise variance
    double max_rhat = 1.0;     // largest split-chain statistic (Gibbs only)
    bool rhat_warning = false;
};

struct PcpOptions {
    ScoreMethod method = ScoreMethod::blup;
    // Residual variances of the projection model; negative means estimate
    // them (moment matching refined by EM on the BLUP path, sampled on the
    // Gibbs path).
    double sigma1_sq = -1.0;
    double sigma2_sq = -1.0;
    int em_iterations = 25;
    double variance_floor = 1e-8;
    GibbsOptions gibbs;
    int threads = 1;
};

struct PcfOptions {
    ScoreMethod method = ScoreMethod::blup;
    double variance_floor = 1e-8;
    GibbsOptions gibbs;
    int threads = 1;
};

namespace detail {

// One subject's linear model d = M b + e, prior b ~ N(0, diag(prior_var)),
// Var(e_r) = sig2[rvar[r]].  Both scoring models reduce to this shape.
struct SubjectSystem {
    Eigen::MatrixXd M;
    Eigen::VectorXd d;
    std::vector<int> rvar;        // residual-variance slot per row
    Eigen::VectorXd prior_var;    // length p = N1 + n_visits * N2
    std::vector<int> visit_of_block;  // visit j of each zeta block
};

struct SubjectPosterior {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

inline SubjectPosterior solve_subject(const SubjectSystem& sys,
                                      const std::vector<double>& sig2,
                                      int subject_index) {
    const Eigen::Index p = sys.prior_var.size();
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
    for (Eigen::Index r = 0; r < sys.M.rows(); ++r) {
        const double inv = 1.0 / sig2[static_cast<std::size_t>(sys.rvar[r])];
        Q.noalias() += inv * sys.M.row(r).transpose() * sys.M.row(r);
        rhs.noalias() += inv * sys.d(r) * sys.M.row(r).transpose();
    }
    Q.diagonal() += sys.prior_var.cwiseInverse();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(Q);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
        throw SingularSystem("score equations singular for subject " +
                             std::to_string(subject_index + 1));
    SubjectPosterior post;
    post.mean = ldlt.solve(rhs);
    post.cov = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
    if (!post.mean.allFinite())
        throw SingularSystem("score solution not finite for subject " +
                             std::to_string(subject_index + 1));
    return post;
}

// Split-chain convergence statistic over a set of scalars tracked per
// sequence with Welford accumulators.
class SequenceStats {
public:
    SequenceStats(int n_sequences, Eigen::Index n_scalars)
        : count_(n_sequences, 0),
          mean_(Eigen::MatrixXd::Zero(n_sequences, n_scalars)),
          m2_(Eigen::MatrixXd::Zero(n_sequences, n_scalars)) {}

    void add(int seq, const Eigen::VectorXd& x) {
        ++count_[static_cast<std::size_t>(seq)];
        const double n = static_cast<double>(count_[static_cast<std::size_t>(seq)]);
        for (Eigen::Index s = 0; s < x.size(); ++s) {
            const double delta = x(s) - mean_(seq, s);
            mean_(seq, s) += delta / n;
            m2_(seq, s) += delta * (x(s) - mean_(seq, s));
        }
    }

    Eigen::Index n_scalars() const { return mean_.cols(); }

    // Pooled posterior mean and standard deviation of one scalar.
    void pooled(Eigen::Index s, double* mean_out, double* sd_out) const {
        double n_total = 0.0;
        double mean = 0.0;
        for (std::size_t q = 0; q < count_.size(); ++q) {
            n_total += count_[q];
            mean += count_[q] * mean_(static_cast<Eigen::Index>(q), s);
        }
        mean /= n_total;
        double m2 = 0.0;
        for (std::size_t q = 0; q < count_.size(); ++q) {
            const double d = mean_(static_cast<Eigen::Index>(q), s) - mean;
            m2 += m2_(static_cast<Eigen::Index>(q), s) + count_[q] * d * d;
        }
        *mean_out = mean;
        *sd_out = n_total > 1 ? std::sqrt(m2 / (n_total - 1.0)) : 0.0;
    }

    double rhat(Eigen::Index s) const {
        const int m = static_cast<int>(count_.size());
        const double n = static_cast<double>(count_[0]);
        if (n < 2.0) return 1.0;
        double grand = 0.0;
        for (int q = 0; q < m; ++q) grand += mean_(q, s);
        grand /= m;
        double B = 0.0;
        double W = 0.0;
        for (int q = 0; q < m; ++q) {
            const double d = mean_(q, s) - grand;
            B += d * d;
            W += m2_(q, s) / (n - 1.0);
        }
        B *= n / (m - 1.0);
        W /= m;
        if (W <= 0.0)
            return B <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
        const double var_plus = (n - 1.0) / n * W + B / n;
        return std::sqrt(var_plus / W);
    }

private:
    std::vector<long long> count_;
    Eigen::MatrixXd mean_;   // sequences x scalars
    Eigen::MatrixXd m2_;
};

// Gibbs sampler shared by both scoring models.  `sys` holds one block per
// subject; sig2_init the starting residual variances; n_rows_per_slot the
// residual counts feeding each precision draw.  Scores enter the tracked
// scalar vector first (in subject-major block order), then the variances.
struct GibbsResult {
    std::vector<Eigen::VectorXd> score_mean;  // per subject
    std::vector<Eigen::VectorXd> score_sd;
    std::vector<double> sig2_mean;
    double max_rhat = 1.0;
};

inline GibbsResult run_gibbs(const std::vector<SubjectSystem>& sys,
                             const std::vector<double>& sig2_init,
                             const std::vector<long long>& n_rows_per_slot,
                             const GibbsOptions& opt, int threads) {
    opt.validate();
    const int I = static_cast<int>(sys.size());
    const int n_slots = static_cast<int>(sig2_init.size());
    std::vector<Eigen::Index> offset(sys.size() + 1, 0);
    for (std::size_t i = 0; i < sys.size(); ++i)
        offset[i + 1] = offset[i] + sys[i].prior_var.size();
    const Eigen::Index n_scores = offset[sys.size()];
    const Eigen::Index n_scalars =
        n_scores + (opt.fix_variances ? 0 : n_slots);

    const int kept_per_chain = (opt.iterations - opt.burnin + opt.thin - 1) / opt.thin;
    if (kept_per_chain < 2)
        throw InvalidArgument("gibbs: fewer than 2 kept draws per chain");
    const int n_seq = 2 * opt.chains;
    SequenceStats stats(n_seq, n_scalars);

    constexpr std::uint64_t kScoreTag = 0x5343u;   // per (chain, subject)
    constexpr std::uint64_t kVarTag = 0x5641u;     // per chain

    for (int chain = 0; chain < opt.chains; ++chain) {
        std::vector<double> sig2 = sig2_init;
        const double factor[3] = {1.0, 0.25, 4.0};
        if (!opt.fix_variances)
            for (double& v : sig2) v = std::max(v * factor[chain % 3], 1e-12);

        std::vector<Rng> subject_rng;
        subject_rng.reserve(sys.size());
        for (int i = 0; i < I; ++i)
            subject_rng.emplace_back(opt.seed,
                                     std::initializer_list<std::uint64_t>{
                                         kScoreTag,
                                         static_cast<std::uint64_t>(chain),
                                         static_cast<std::uint64_t>(i)});
        Rng var_rng(opt.seed, {kVarTag, static_cast<std::uint64_t>(chain)});

        Eigen::VectorXd draw = Eigen::VectorXd::Zero(n_scalars);
        std::vector<double> ssr(static_cast<std::size_t>(n_slots), 0.0);
        std::vector<double> ssr_local(sys.size() * static_cast<std::size_t>(n_slots), 0.0);

        for (int it = 0; it < opt.iterations; ++it) {
            parallel_for(I, threads, [&](int i) {
                const SubjectSystem& s = sys[static_cast<std::size_t>(i)];
                const SubjectPosterior post = solve_subject(s, sig2, i);
                Eigen::LLT<Eigen::MatrixXd> llt(post.cov);
                Eigen::VectorXd z(post.mean.size());
                for (Eigen::Index k = 0; k < z.size(); ++k)
                    z(k) = subject_rng[static_cast<std::size_t>(i)].normal();
                const Eigen::VectorXd b = post.mean + llt.matrixL() * z;
                draw.segment(offset[static_cast<std::size_t>(i)],
                             s.prior_var.size()) = b;
                const Eigen::VectorXd resid = s.d - s.M * b;
                for (int q = 0; q < n_slots; ++q)
                    ssr_local[static_cast<std::size_t>(i) * n_slots + q] = 0.0;
                for (Eigen::Index r = 0; r < resid.size(); ++r)
                    ssr_local[static_cast<std::size_t>(i) * n_slots +
                              s.rvar[r]] += resid(r) * resid(r);
            });
            if (!opt.fix_variances) {
                for (int q = 0; q < n_slots; ++q) {
                    ssr[static_cast<std::size_t>(q)] = 0.0;
                    for (int i = 0; i < I; ++i)
                        ssr[static_cast<std::size_t>(q)] +=
                            ssr_local[static_cast<std::size_t>(i) * n_slots + q];
                    const double shape =
                        opt.prior_shape + 0.5 * n_rows_per_slot[static_cast<std::size_t>(q)];
                    const double rate =
                        opt.prior_rate + 0.5 * ssr[static_cast<std::size_t>(q)];
                    const double precision = var_rng.gamma(shape, rate);
                    sig2[static_cast<std::size_t>(q)] =
                        1.0 / std::max(precision, 1e-300);
                    draw(n_scores + q) = sig2[static_cast<std::size_t>(q)];
                }
            }
            if (it >= opt.burnin && (it - opt.burnin) % opt.thin == 0) {
                const int kept = (it - opt.burnin) / opt.thin;
                const int half = kept < (kept_per_chain + 1) / 2 ? 0 : 1;
                stats.add(2 * chain + half, draw);
            }
        }
    }

    GibbsResult out;
    out.score_mean.resize(sys.size());
    out.score_sd.resize(sys.size());
    double max_rhat = 1.0;
    for (std::size_t i = 0; i < sys.size(); ++i) {
        const Eigen::Index p = sys[i].prior_var.size();
        out.score_mean[i].resize(p);
        out.score_sd[i].resize(p);
        for (Eigen::Index k = 0; k < p; ++k) {
            double m = 0.0;
            double sd = 0.0;
            stats.pooled(offset[i] + k, &m, &sd);
            out.score_mean[i](k) = m;
            out.score_sd[i](k) = sd;
            max_rhat = std::max(max_rhat, stats.rhat(offset[i] + k));
        }
    }
    out.sig2_mean = sig2_init;
    if (!opt.fix_variances)
        for (int q = 0; q < n_slots; ++q) {
            double m = 0.0;
            double sd = 0.0;
            stats.pooled(n_scores + q, &m, &sd);
            out.sig2_mean[static_cast<std::size_t>(q)] = m;
            max_rhat = std::max(max_rhat, stats.rhat(n_scores + q));
        }
    out.max_rhat = max_rhat;
    return out;
}

// Scatter per-subject posterior blocks into the ScoreSet layout.
inline void scatter_scores(const std::vector<SubjectSystem>& sys,
                           const std::vector<Eigen::VectorXd>& mean,
                           const std::vector<Eigen::VectorXd>& sd, int n1,
                           int n2, ScoreSet* out) {
    for (std::size_t i = 0; i < sys.size(); ++i) {
        out->xi.row(static_cast<Eigen::Index>(i)) = mean[i].head(n1).transpose();
        out->xi_sd.row(static_cast<Eigen::Index>(i)) = sd[i].head(n1).transpose();
        for (std::size_t blk = 0; blk < sys[i].visit_of_block.size(); ++blk) {
            const int j = sys[i].visit_of_block[blk];
            const Eigen::Index row =
                static_cast<Eigen::Index>(i) * out->J + j;
            out->zeta.row(row) =
                mean[i].segment(n1 + static_cast<Eigen::Index>(blk) * n2, n2)
                    .transpose();
            out->zeta_sd.row(row) =
                sd[i].segment(n1 + static_cast<Eigen::Index>(blk) * n2, n2)
                    .transpose();
        }
    }
}

}  // namespace detail

// Scores from the projection model.  A_ij = xi_i + C zeta_ij + noise1,
// B_ij = C' xi_i + zeta_ij + noise2, with prior variances lambda1/lambda2.
inline ScoreSet estimate_scores_pcp(const Projections& proj,
                                    const Eigen::MatrixXd& C,
                                    const Eigen::VectorXd& lambda1,
                                    const Eigen::VectorXd& lambda2,
                                    const PcpOptions& opt = {}) {
    const int n1 = static_cast<int>(lambda1.size());
    const int n2 = static_cast<int>(lambda2.size());
    if (C.rows() != n1 || C.cols() != n2)
        throw ShapeError("estimate_scores_pcp: C must be N1 x N2");
    if (proj.A.cols() != n1 || proj.B.cols() != n2)
        throw ShapeError("estimate_scores_pcp: projections do not match "
                         "component counts");
    if ((lambda1.array() <= 0.0).any() || (lambda2.array() <= 0.0).any())
        throw InvalidVariance("estimate_scores_pcp: eigenvalues must be positive");
    const int I = proj.I;
    const int J = proj.J;

    // Assemble per-subject systems over present visits.
    std::vector<detail::SubjectSystem> sys(static_cast<std::size_t>(I));
    long long n_present = 0;
    for (int i = 0; i < I; ++i) {
        detail::SubjectSystem& s = sys[static_cast<std::size_t>(i)];
        for (int j = 0; j < J; ++j)
            if (proj.present(i, j)) s.visit_of_block.push_back(j);
        const int ni = static_cast<int>(s.visit_of_block.size());
        n_present += ni;
        const Eigen::Index p = n1 + static_cast<Eigen::Index>(ni) * n2;
        s.M = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ni) * (n1 + n2), p);
        s.d.resize(static_cast<Eigen::Index>(ni) * (n1 + n2));
        s.rvar.assign(static_cast<std::size_t>(ni) * (n1 + n2), 0);
        s.prior_var.resize(p);
        s.prior_var.head(n1) = lambda1;
        for (int v = 0; v < ni; ++v) {
            const int j = s.visit_of_block[static_cast<std::size_t>(v)];
            const Eigen::Index row0 = static_cast<Eigen::Index>(v) * (n1 + n2);
            const Eigen::Index col0 = n1 + static_cast<Eigen::Index>(v) * n2;
            s.prior_var.segment(col0, n2) = lambda2;
            // A rows: xi + C zeta
            s.M.block(row0, 0, n1, n1).setIdentity();
            s.M.block(row0, col0, n1, n2) = C;
            s.d.segment(row0, n1) =
                proj.A.row(static_cast<Eigen::Index>(i) * J + j).transpose();
            // B rows: C' xi + zeta
            s.M.block(row0 + n1, 0, n2, n1) = C.transpose();
            s.M.block(row0 + n1, col0, n2, n2).setIdentity();
            s.d.segment(row0 + n1, n2) =
                proj.B.row(static_cast<Eigen::Index>(i) * J + j).transpose();
            for (int r = 0; r < n2; ++r)
                s.rvar[static_cast<std::size_t>(row0) + n1 +
                       static_cast<std::size_t>(r)] = 1;
        }
    }

    // Residual variances: supplied, or moment-matched from the marginal
    // projection variances and refined by EM.
    double s1 = opt.sigma1_sq;
    double s2 = opt.sigma2_sq;
    const bool estimate = s1 < 0.0 || s2 < 0.0;
    if (!estimate && (s1 <= 0.0 || s2 <= 0.0))
        throw InvalidVariance("estimate_scores_pcp: residual variances must "
                              "be positive");
    if (estimate) {
        auto moment_excess = [&](const Eigen::MatrixXd& X,
                                 const Eigen::VectorXd& lam,
                                 const Eigen::VectorXd& coupled) {
            // mean over components of Var(X_col) - lam - coupled.
            double acc = 0.0;
            for (Eigen::Index k = 0; k < X.cols(); ++k) {
                double sum = 0.0;
                double sumsq = 0.0;
                long long n = 0;
                for (int i = 0; i < I; ++i)
                    for (int j = 0; j < J; ++j)
                        if (proj.present(i, j)) {
                            const double x =
                                X(static_cast<Eigen::Index>(i) * J + j, k);
                            sum += x;
                            sumsq += x * x;
                            ++n;
                        }
                const double mean = sum / static_cast<double>(n);
                const double var = sumsq / static_cast<double>(n) - mean * mean;
                acc += var - lam(k) - coupled(k);
            }
            return X.cols() > 0 ? acc / static_cast<double>(X.cols()) : 0.0;
        };
        const Eigen::VectorXd coupled1 =
            (C * lambda2.asDiagonal() * C.transpose()).diagonal();
        const Eigen::VectorXd coupled2 =
            (C.transpose() * lambda1.asDiagonal() * C).diagonal();
        s1 = std::max(opt.variance_floor, moment_excess(proj.A, lambda1, coupled1));
        s2 = std::max(opt.variance_floor, moment_excess(proj.B, lambda2, coupled2));
    }

    ScoreSet out;
    out.I = I;
    out.J = J;
    out.mask = proj.mask;
    out.xi = Eigen::MatrixXd::Zero(I, n1);
    out.xi_sd = Eigen::MatrixXd::Zero(I, n1);
    out.zeta = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(I) * J, n2);
    out.zeta_sd = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(I) * J, n2);

    const long long n_rows1 = n_present * n1;
    const long long n_rows2 = n_present * n2;

    if (opt.method == ScoreMethod::gibbs) {
        const detail::GibbsResult g = detail::run_gibbs(
            sys, {s1, s2}, {n_rows1, n_rows2}, opt.gibbs, opt.threads);
        detail::scatter_scores(sys, g.score_mean, g.score_sd, n1, n2, &out);
        out.sigma1_sq = g.sig2_mean[0];
        out.sigma2_sq = g.sig2_mean[1];
        out.max_rhat = g.max_rhat;
        out.rhat_warning = g.max_rhat > 1.1;
        return out;
    }

    // BLUP path; optionally iterate EM updates of the residual variances.
    std::vector<Eigen::VectorXd> mean(sys.size());
    std::vector<Eigen::VectorXd> sd(sys.size());
    const int rounds = estimate ? std::max(1, opt.em_iterations) : 1;
    for (int round = 0; round < rounds; ++round) {
        double acc1 = 0.0;
        double acc2 = 0.0;
        std::vector<double> acc1_local(sys.size(), 0.0);
        std::vector<double> acc2_local(sys.size(), 0.0);
        const std::vector<double> sig2{s1, s2};
        parallel_for(I, opt.threads, [&](int i) {
            const detail::SubjectSystem& s = sys[static_cast<std::size_t>(i)];
            const detail::SubjectPosterior post =
                detail::solve_subject(s, sig2, i);
            mean[static_cast<std::size_t>(i)] = post.mean;
            sd[static_cast<std::size_t>(i)] =
                post.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
            if (estimate && round + 1 < rounds) {
                const Eigen::VectorXd resid = s.d - s.M * post.mean;
                const Eigen::MatrixXd X = post.cov * s.M.transpose();
                for (Eigen::Index r = 0; r < resid.size(); ++r) {
                    const double quad = s.M.row(r).dot(X.col(r));
                    const double term = resid(r) * resid(r) + quad;
                    if (s.rvar[static_cast<std::size_t>(r)] == 0)
                        acc1_local[static_cast<std::size_t>(i)] += term;
                    else
                        acc2_local[static_cast<std::size_t>(i)] += term;
                }
            }
        });
        if (estimate && round + 1 < rounds) {
            for (std::size_t i = 0; i < sys.size(); ++i) {
                acc1 += acc1_local[i];
                acc2 += acc2_local[i];
            }
            const double next1 =
                n_rows1 > 0 ? std::max(opt.variance_floor,
                                       acc1 / static_cast<double>(n_rows1))
                            : s1;
            const double next2 =
                n_rows2 > 0 ? std::max(opt.variance_floor,
                                       acc2 / static_cast<double>(n_rows2))
                            : s2;
            const bool done = std::abs(next1 - s1) <= 1e-10 * std::max(1.0, s1) &&
                              std::abs(next2 - s2) <= 1e-10 * std::max(1.0, s2);
            s1 = next1;
            s2 = next2;
            if (done) {
                // One final solve at the converged values.
                const std::vector<double> fin{s1, s2};
                parallel_for(I, opt.threads, [&](int i) {
                    const detail::SubjectPosterior post = detail::solve_subject(
                        sys[static_cast<std::size_t>(i)], fin, i);
                    mean[static_cast<std::size_t>(i)] = post.mean;
                    sd[static_cast<std::size_t>(i)] =
                        post.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
                });
                break;
            }
        }
    }
    detail::scatter_scores(sys, mean, sd, n1, n2, &out);
    out.sigma1_sq = s1;
    out.sigma2_sq = s2;
    return out;
}

// Scores from the function model: centered curves regressed on sampled
// eigenfunction values, noise variance sigma2 (floored when zero so the
// noiseless limit remains solvable).
inline ScoreSet estimate_scores_pcf(const MultilevelSample& sample,
                                    const MeanEstimate& means,
                                    const EigenSystem& level1,
                                    const EigenSystem& level2, double sigma2,
                                    const PcfOptions& opt = {}) {
    require_same_grid(*sample.grid(), *level1.grid, "estimate_scores_pcf");
    require_same_grid(*sample.grid(), *level2.grid, "estimate_scores_pcf");
    if (sigma2 < 0.0)
        throw InvalidVariance("estimate_scores_pcf: negative noise variance");
    const int n1 = level1.n_selected;
    const int n2 = level2.n_selected;
    const Eigen::VectorXd lambda1 = level1.eigenvalues.head(n1);
    const Eigen::VectorXd lambda2 = level2.eigenvalues.head(n2);
    if ((lambda1.array() <= 0.0).any() || (lambda2.array() <= 0.0).any())
        throw InvalidVariance("estimate_scores_pcf: eigenvalues must be positive");

    const int I = sample.n_subjects();
    const int J = sample.n_visits();
    const int T = sample.grid()->size();
    const Eigen::MatrixXd R = residual_matrix(sample, means);
    const Eigen::MatrixXd Phi1 = level1.eigenfunctions.leftCols(n1);
    const Eigen::MatrixXd Phi2 = level2.eigenfunctions.leftCols(n2);
    const double sig = std::max(sigma2, opt.variance_floor);

    std::vector<detail::SubjectSystem> sys(static_cast<std::size_t>(I));
    long long n_points = 0;
    for (int i = 0; i < I; ++i) {
        detail::SubjectSystem& s = sys[static_cast<std::size_t>(i)];
        for (int j = 0; j < J; ++j)
            if (sample.present(i, j)) s.visit_of_block.push_back(j);
        const int ni = static_cast<int>(s.visit_of_block.size());
        n_points += static_cast<long long>(ni) * T;
        const Eigen::Index p = n1 + static_cast<Eigen::Index>(ni) * n2;
        s.M = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ni) * T, p);
        s.d.resize(static_cast<Eigen::Index>(ni) * T);
        s.rvar.assign(static_cast<std::size_t>(ni) * T, 0);
        s.prior_var.resize(p);
        s.prior_var.head(n1) = lambda1;
        for (int v = 0; v < ni; ++v) {
            const int j = s.visit_of_block[static_cast<std::size_t>(v)];
            const Eigen::Index row0 = static_cast<Eigen::Index>(v) * T;
            const Eigen::Index col0 = n1 + static_cast<Eigen::Index>(v) * n2;
            s.prior_var.segment(col0, n2) = lambda2;
            s.M.block(row0, 0, T, n1) = Phi1;
            s.M.block(row0, col0, T, n2) = Phi2;
            s.d.segment(row0, T) =
                R.row(sample.row_index(i, j)).transpose();
        }
    }

    ScoreSet out;
    out.I = I;
    out.J = J;
    out.mask = sample.mask();
    out.xi = Eigen::MatrixXd::Zero(I, n1);
    out.xi_sd = Eigen::MatrixXd::Zero(I, n1);
    out.zeta = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(I) * J, n2);
    out.zeta_sd = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(I) * J, n2);
    out.sigma_sq = sig;

    if (opt.method == ScoreMethod::gibbs) {
        const detail::GibbsResult g = detail::run_gibbs(
            sys, {sig}, {n_points}, opt.gibbs, opt.threads);
        detail::scatter_scores(sys, g.score_mean, g.score_sd, n1, n2, &out);
        out.sigma_sq = g.sig2_mean[0];
        out.max_rhat = g.max_rhat;
        out.rhat_warning = g.max_rhat > 1.1;
        return out;
    }

    std::vector<Eigen::VectorXd> mean(sys.size());
    std::vector<Eigen::VectorXd> sd(sys.size());
    const std::vector<double> sig2{sig};
    parallel_for(I, opt.threads, [&](int i) {
        const detail::SubjectPosterior post =
            detail::solve_subject(sys[static_cast<std::size_t>(i)], sig2, i);
        mean[static_cast<std::size_t>(i)] = post.mean;
        sd[static_cast<std::size_t>(i)] =
            post.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    });
    detail::scatter_scores(sys, mean, sd, n1, n2, &out);
    return out;
}

}  // namespace mfpca
