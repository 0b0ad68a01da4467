#pragma once

// Core functional-data containers: a shared sampling grid with quadrature
// weights, single curves, and the two-level sample (subjects x visits) that
// every estimator consumes.  All integrals in the library are trapezoid sums
// over the grid, so L2 inner products, norms and eigenvalue scalings agree
// with each other by construction.

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mfpca/errors.hpp"

namespace mfpca {

class SampledGrid {
public:
    // Strictly increasing points in [0, 1].
    explicit SampledGrid(Eigen::VectorXd points) : points_(std::move(points)) {
        const Eigen::Index T = points_.size();
        if (T < 2)
            throw InsufficientData("grid needs at least 2 points, got " +
                                   std::to_string(T));
        constexpr double slack = 1e-9;
        if (points_(0) < -slack || points_(T - 1) > 1.0 + slack)
            throw RangeError("grid points must lie in [0, 1]");
        for (Eigen::Index s = 1; s < T; ++s)
            if (!(points_(s) > points_(s - 1)))
                throw InvalidArgument(
                    "grid points must be strictly increasing (position " +
                    std::to_string(s) + ")");
        weights_.resize(T);
        weights_(0) = 0.5 * (points_(1) - points_(0));
        for (Eigen::Index s = 1; s < T - 1; ++s)
            weights_(s) = 0.5 * (points_(s + 1) - points_(s - 1));
        weights_(T - 1) = 0.5 * (points_(T - 1) - points_(T - 2));
    }

    // T equally spaced points covering [0, 1].
    static std::shared_ptr<const SampledGrid> uniform(int T) {
        if (T < 2)
            throw InsufficientData("grid needs at least 2 points");
        Eigen::VectorXd p(T);
        for (int s = 0; s < T; ++s)
            p(s) = static_cast<double>(s) / (T - 1);
        return std::make_shared<const SampledGrid>(std::move(p));
    }

    static std::shared_ptr<const SampledGrid> from_points(Eigen::VectorXd p) {
        return std::make_shared<const SampledGrid>(std::move(p));
    }

    int size() const { return static_cast<int>(points_.size()); }
    const Eigen::VectorXd& points() const { return points_; }
    // Trapezoid quadrature weights; they sum to the grid span.
    const Eigen::VectorXd& weights() const { return weights_; }

    bool same_as(const SampledGrid& other) const {
        return this == &other || points_ == other.points_;
    }

private:
    Eigen::VectorXd points_;
    Eigen::VectorXd weights_;
};

using GridPtr = std::shared_ptr<const SampledGrid>;

struct Curve {
    GridPtr grid;
    Eigen::VectorXd values;

    Curve() = default;
    Curve(GridPtr g, Eigen::VectorXd v) : grid(std::move(g)), values(std::move(v)) {
        if (!grid)
            throw InvalidArgument("curve requires a grid");
        if (values.size() != grid->size())
            throw ShapeError("curve has " + std::to_string(values.size()) +
                             " values on a grid of size " +
                             std::to_string(grid->size()));
    }
};

inline void require_same_grid(const SampledGrid& a, const SampledGrid& b,
                              const char* what) {
    if (!a.same_as(b))
        throw GridMismatch(std::string(what) + ": grids differ");
}

// Trapezoid approximation of the L2 inner product of two vectors sampled on
// `grid`.
inline double inner_product(const SampledGrid& grid, const Eigen::VectorXd& f,
                            const Eigen::VectorXd& g) {
    if (f.size() != grid.size() || g.size() != grid.size())
        throw ShapeError("inner_product: value vectors do not match the grid");
    return (f.array() * g.array() * grid.weights().array()).sum();
}

inline double inner_product(const Curve& f, const Curve& g) {
    require_same_grid(*f.grid, *g.grid, "inner_product");
    return inner_product(*f.grid, f.values, g.values);
}

inline double l2_norm(const SampledGrid& grid, const Eigen::VectorXd& f) {
    return std::sqrt(inner_product(grid, f, f));
}

// Sample from the two-way design: subjects i = 0..I-1, visits j = 0..J-1, all
// observed curves on one grid.  Rows of `values` are laid out subject-major
// (row i*J + j); absent visits carry a zero row and present(i, j) == false.
class MultilevelSample {
public:
    MultilevelSample(GridPtr grid, int I, int J, Eigen::MatrixXd values,
                     std::vector<std::uint8_t> present_mask,
                     std::vector<std::string> subject_labels = {},
                     std::vector<std::string> visit_labels = {})
        : grid_(std::move(grid)),
          I_(I),
          J_(J),
          values_(std::move(values)),
          present_(std::move(present_mask)),
          subject_labels_(std::move(subject_labels)),
          visit_labels_(std::move(visit_labels)) {
        if (!grid_)
            throw InvalidArgument("sample requires a grid");
        if (I_ < 2)
            throw InsufficientData("need at least 2 subjects, got " +
                                   std::to_string(I_));
        if (J_ < 1)
            throw InvalidArgument("need at least 1 visit level");
        if (values_.rows() != static_cast<Eigen::Index>(I_) * J_ ||
            values_.cols() != grid_->size())
            throw ShapeError("sample value matrix must be (I*J) x T");
        if (present_.size() != static_cast<std::size_t>(I_) * J_)
            throw ShapeError("presence mask must have I*J entries");
        bool any_pair = false;
        for (int i = 0; i < I_; ++i) {
            const int ni = visits_of(i);
            if (ni == 0)
                throw InsufficientData("subject " + subject_label(i) +
                                       " has no observed visits");
            if (ni >= 2) any_pair = true;
        }
        if (!any_pair)
            throw NoWithinPairs(
                "no subject has two observed visits; between-subject "
                "covariance cannot be estimated");
        for (int i = 0; i < I_; ++i)
            for (int j = 0; j < J_; ++j)
                if (!present(i, j) && values_.row(row_index(i, j)).any())
                    throw InvalidArgument("absent visit (" + subject_label(i) +
                                          ", " + visit_label(j) +
                                          ") has nonzero values");
    }

    // Fully observed sample.
    MultilevelSample(GridPtr grid, int I, int J, Eigen::MatrixXd values)
        : MultilevelSample(std::move(grid), I, J, std::move(values),
                           std::vector<std::uint8_t>(
                               static_cast<std::size_t>(I) * J, 1)) {}

    const GridPtr& grid() const { return grid_; }
    int n_subjects() const { return I_; }
    int n_visits() const { return J_; }
    int row_index(int i, int j) const { return i * J_ + j; }

    bool present(int i, int j) const {
        check_index(i, j);
        return present_[static_cast<std::size_t>(row_index(i, j))] != 0;
    }

    const std::vector<std::uint8_t>& mask() const { return present_; }
    const Eigen::MatrixXd& values() const { return values_; }

    Eigen::MatrixXd::ConstRowXpr row(int i, int j) const {
        check_index(i, j);
        return values_.row(row_index(i, j));
    }

    Curve curve(int i, int j) const {
        if (!present(i, j))
            throw IndexError("visit (" + subject_label(i) + ", " +
                             visit_label(j) + ") is not observed");
        return Curve(grid_, values_.row(row_index(i, j)).transpose());
    }

    // Number of observed visits of subject i.
    int visits_of(int i) const {
        int n = 0;
        for (int j = 0; j < J_; ++j)
            n += present_[static_cast<std::size_t>(i) * J_ + j] ? 1 : 0;
        return n;
    }

    // Number of subjects observed at visit level j.
    int subjects_at(int j) const {
        int n = 0;
        for (int i = 0; i < I_; ++i)
            n += present_[static_cast<std::size_t>(i) * J_ + j] ? 1 : 0;
        return n;
    }

    int n_present() const {
        int n = 0;
        for (std::uint8_t p : present_) n += p ? 1 : 0;
        return n;
    }

    std::string subject_label(int i) const {
        return subject_labels_.empty() ? std::to_string(i + 1)
                                       : subject_labels_[static_cast<std::size_t>(i)];
    }

    std::string visit_label(int j) const {
        return visit_labels_.empty() ? std::to_string(j + 1)
                                     : visit_labels_[static_cast<std::size_t>(j)];
    }

    const std::vector<std::string>& subject_labels() const { return subject_labels_; }
    const std::vector<std::string>& visit_labels() const { return visit_labels_; }

private:
    void check_index(int i, int j) const {
        if (i < 0 || i >= I_ || j < 0 || j >= J_)
            throw IndexError("visit index (" + std::to_string(i) + ", " +
                             std::to_string(j) + ") out of range");
    }

    GridPtr grid_;
    int I_;
    int J_;
    Eigen::MatrixXd values_;
    std::vector<std::uint8_t> present_;
    std::vector<std::string> subject_labels_;
    std::vector<std::string> visit_labels_;
};

}  // namespace mfpca
