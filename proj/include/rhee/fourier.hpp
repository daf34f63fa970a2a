#pragma once

// Cosine Fourier basis on a box-shaped search domain and the coefficient
// arithmetic built on it (distribution/trajectory coefficients, the ergodic
// metric, the constant-memory history recursion).

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <vector>

namespace rhee {

/// Box [0, L_1] x ... x [0, L_nu].
class SearchDomain {
public:
    SearchDomain() = default;
    explicit SearchDomain(std::vector<double> bounds);

    int dims() const { return static_cast<int>(bounds_.size()); }
    double length(int i) const { return bounds_[static_cast<std::size_t>(i)]; }
    const std::vector<double>& bounds() const { return bounds_; }
    double volume() const;
    bool contains(const Eigen::Ref<const Eigen::VectorXd>& s) const;

    friend bool operator==(const SearchDomain&, const SearchDomain&) = default;

private:
    std::vector<double> bounds_;
};

/// All nu-tuples k with 0 <= k_i <= K, row-major over (k_1..k_nu):
/// the last component varies fastest. This ordering is part of the
/// coefficient file and wire formats.
class IndexSet {
public:
    IndexSet(int order, int dims);

    int order() const { return order_; }
    int dims() const { return dims_; }
    std::size_t size() const { return count_; }
    std::span<const int> at(std::size_t flat) const;
    std::size_t flatten(std::span<const int> k) const;

private:
    int order_;
    int dims_;
    std::size_t count_;
    std::vector<int> indices_;
};

/// Fourier coefficients aligned with an IndexSet.
struct CoefficientVector {
    Eigen::VectorXd values;

    CoefficientVector() = default;
    explicit CoefficientVector(Eigen::VectorXd v) : values(std::move(v)) {}
    static CoefficientVector zeros(std::size_t n) { return CoefficientVector(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n))); }

    std::size_t size() const { return static_cast<std::size_t>(values.size()); }
    double operator[](std::size_t j) const { return values[static_cast<Eigen::Index>(j)]; }
    double& operator[](std::size_t j) { return values[static_cast<Eigen::Index>(j)]; }
    bool all_finite() const { return values.allFinite(); }
};

/// Scalar field sampled at cell centers of a regular grid. Cell order is
/// row-major (last dimension fastest), matching IndexSet.
class SpatialGrid {
public:
    SpatialGrid() = default;
    SpatialGrid(SearchDomain domain, std::vector<int> cells);
    SpatialGrid(SearchDomain domain, std::vector<int> cells, Eigen::VectorXd values);

    const SearchDomain& domain() const { return domain_; }
    const std::vector<int>& cells() const { return cells_; }
    std::size_t size() const { return static_cast<std::size_t>(values_.size()); }
    double cell_volume() const;
    double cell_width(int dim) const;
    Eigen::VectorXd cell_center(std::size_t flat) const;
    /// Flat index of the cell containing s (clamped to the grid).
    std::size_t locate(const Eigen::Ref<const Eigen::VectorXd>& s) const;

    Eigen::VectorXd& values() { return values_; }
    const Eigen::VectorXd& values() const { return values_; }

    /// Scales to unit mass. An all-zero grid becomes the uniform density.
    /// Throws UsageError on negative or non-finite cells.
    void normalize();
    bool is_normalized(double tol = 1e-9) const;
    double mass() const { return values_.sum() * cell_volume(); }

private:
    SearchDomain domain_;
    std::vector<int> cells_;
    Eigen::VectorXd values_;
};

/// Time-stamped points in the explored coordinates. Column j of `points`
/// is the position at times[j].
struct TrajectorySegment {
    std::vector<double> times;
    Eigen::MatrixXd points;

    void validate() const;
};

/// Precomputed basis for one domain and order. Cheap to copy, immutable.
class FourierBasis {
public:
    FourierBasis(SearchDomain domain, int order);

    const SearchDomain& domain() const { return domain_; }
    const IndexSet& indices() const { return indices_; }
    int dims() const { return domain_.dims(); }
    int order() const { return indices_.order(); }
    std::size_t size() const { return indices_.size(); }

    double normalizer(std::size_t j) const { return h_[static_cast<Eigen::Index>(j)]; }
    const Eigen::VectorXd& weights() const { return lambda_; }

    /// F_k(s) for every k.
    void evaluate(const Eigen::Ref<const Eigen::VectorXd>& s, Eigen::Ref<Eigen::VectorXd> out) const;
    Eigen::VectorXd evaluate(const Eigen::Ref<const Eigen::VectorXd>& s) const;

    /// Gradient of every F_k, one column per k (dims x size).
    Eigen::MatrixXd gradient(const Eigen::Ref<const Eigen::VectorXd>& s) const;

    /// sum_k w_k dF_k/ds without materializing the full gradient.
    Eigen::VectorXd weighted_gradient(const Eigen::Ref<const Eigen::VectorXd>& s,
                                      const Eigen::Ref<const Eigen::VectorXd>& w) const;

private:
    void tables(const Eigen::Ref<const Eigen::VectorXd>& s, Eigen::MatrixXd& cosines, Eigen::MatrixXd* sines) const;

    SearchDomain domain_;
    IndexSet indices_;
    Eigen::VectorXd h_;
    Eigen::VectorXd inv_h_;
    Eigen::VectorXd lambda_;
};

// Single-index evaluation.
double basis_normalizer(const SearchDomain& domain, std::span<const int> k);
double basis_eval(const SearchDomain& domain, std::span<const int> k, const Eigen::Ref<const Eigen::VectorXd>& s);
Eigen::VectorXd basis_grad(const SearchDomain& domain, std::span<const int> k, const Eigen::Ref<const Eigen::VectorXd>& s);

/// Lambda_k = (1 + |k|^2)^(-(nu+1)/2).
double lambda_weight(std::span<const int> k, int nu);

CoefficientVector distribution_coeffs(const SpatialGrid& grid, const FourierBasis& basis);

/// Unnormalized integral of every F_k along the segment over [t_begin, t_end]
/// (trapezoid on the segment samples, linear interpolation at the window edges).
Eigen::VectorXd segment_integral(const TrajectorySegment& seg, const FourierBasis& basis, double t_begin, double t_end);

/// c_k = 1/(horizon_end - t0erg) * integral of F_k over [t0erg, horizon_end].
CoefficientVector trajectory_coeffs(const TrajectorySegment& seg, const FourierBasis& basis, double t0erg, double horizon_end);

/// Time bookkeeping for one step of the history recursion.
struct RecursionWindow {
    double t_prev;   // t_{i-1}
    double t_curr;   // t_i
    double horizon;  // T
    double t0erg;
};

/// cbar_i = (t_{i-1}+T-t0)/(t_i+T-t0) * cbar_{i-1} + 1/(t_i+T-t0) * int_{t_{i-1}}^{t_i} F_k.
CoefficientVector recursive_coeff_update(const CoefficientVector& prev_partial, const RecursionWindow& window,
                                         const TrajectorySegment& new_segment, const FourierBasis& basis);
/// Same recursion with the segment integral already computed.
CoefficientVector recursive_coeff_update(const CoefficientVector& prev_partial, const RecursionWindow& window,
                                         const Eigen::Ref<const Eigen::VectorXd>& segment_integral);

double ergodic_metric(const CoefficientVector& c, const CoefficientVector& phi, const IndexSet& idx);
double ergodic_metric(const CoefficientVector& c, const CoefficientVector& phi, const FourierBasis& basis);

/// sum_k Lambda_k c_k F_k evaluated at the cell centers of a grid with the given shape.
SpatialGrid reconstruct_statistics(const CoefficientVector& c, const FourierBasis& basis, const std::vector<int>& cells);

}  // namespace rhee
