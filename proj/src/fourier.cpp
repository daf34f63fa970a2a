#include "rhee/fourier.hpp"

#include "rhee/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace rhee {

namespace {

constexpr double kPi = std::numbers::pi;

// Expands a (K+1) x nu table into the row-major product over index tuples:
// out[flat(k)] = prod_d table(k_d, d).
void expand_product(const Eigen::MatrixXd& table, Eigen::Ref<Eigen::VectorXd> out) {
    const Eigen::Index base = table.rows();
    Eigen::Index size = 1;
    out[0] = 1.0;
    for (Eigen::Index d = 0; d < table.cols(); ++d) {
        for (Eigen::Index p = size - 1; p >= 0; --p) {
            const double head = out[p];
            for (Eigen::Index q = base - 1; q >= 0; --q) {
                out[p * base + q] = head * table(q, d);
            }
        }
        size *= base;
    }
}

void require_dims(const SearchDomain& domain, std::size_t k_size, Eigen::Index s_size) {
    if (static_cast<int>(k_size) != domain.dims() || static_cast<int>(s_size) != domain.dims()) {
        throw UsageError("basis: index/point dimension does not match the domain");
    }
}

}  // namespace

SearchDomain::SearchDomain(std::vector<double> bounds) : bounds_(std::move(bounds)) {
    if (bounds_.empty()) {
        throw UsageError("SearchDomain: at least one dimension is required");
    }
    for (double l : bounds_) {
        if (!(l > 0.0) || !std::isfinite(l)) {
            throw UsageError("SearchDomain: bounds must be positive and finite");
        }
    }
}

double SearchDomain::volume() const {
    double v = 1.0;
    for (double l : bounds_) v *= l;
    return v;
}

bool SearchDomain::contains(const Eigen::Ref<const Eigen::VectorXd>& s) const {
    if (s.size() != dims()) return false;
    for (int i = 0; i < dims(); ++i) {
        if (s[i] < 0.0 || s[i] > length(i)) return false;
    }
    return true;
}

IndexSet::IndexSet(int order, int dims) : order_(order), dims_(dims), count_(1) {
    if (order < 0 || dims < 1) {
        throw UsageError("IndexSet: order must be >= 0 and dims >= 1");
    }
    for (int d = 0; d < dims; ++d) count_ *= static_cast<std::size_t>(order + 1);
    indices_.resize(count_ * static_cast<std::size_t>(dims));
    std::vector<int> k(static_cast<std::size_t>(dims), 0);
    for (std::size_t j = 0; j < count_; ++j) {
        std::copy(k.begin(), k.end(), indices_.begin() + static_cast<std::ptrdiff_t>(j * static_cast<std::size_t>(dims)));
        for (int d = dims - 1; d >= 0; --d) {
            if (++k[static_cast<std::size_t>(d)] <= order) break;
            k[static_cast<std::size_t>(d)] = 0;
        }
    }
}

std::span<const int> IndexSet::at(std::size_t flat) const {
    return {indices_.data() + flat * static_cast<std::size_t>(dims_), static_cast<std::size_t>(dims_)};
}

std::size_t IndexSet::flatten(std::span<const int> k) const {
    if (static_cast<int>(k.size()) != dims_) throw UsageError("IndexSet: tuple has wrong dimension");
    std::size_t flat = 0;
    for (int v : k) {
        if (v < 0 || v > order_) throw UsageError("IndexSet: component out of range");
        flat = flat * static_cast<std::size_t>(order_ + 1) + static_cast<std::size_t>(v);
    }
    return flat;
}

SpatialGrid::SpatialGrid(SearchDomain domain, std::vector<int> cells)
    : domain_(std::move(domain)), cells_(std::move(cells)) {
    if (static_cast<int>(cells_.size()) != domain_.dims()) {
        throw UsageError("SpatialGrid: one cell count per domain dimension is required");
    }
    Eigen::Index n = 1;
    for (int c : cells_) {
        if (c < 1) throw UsageError("SpatialGrid: cell counts must be positive");
        n *= c;
    }
    values_ = Eigen::VectorXd::Zero(n);
}

SpatialGrid::SpatialGrid(SearchDomain domain, std::vector<int> cells, Eigen::VectorXd values)
    : SpatialGrid(std::move(domain), std::move(cells)) {
    if (values.size() != values_.size()) throw UsageError("SpatialGrid: value count does not match the grid shape");
    values_ = std::move(values);
}

double SpatialGrid::cell_width(int dim) const {
    return domain_.length(dim) / cells_[static_cast<std::size_t>(dim)];
}

double SpatialGrid::cell_volume() const {
    double v = 1.0;
    for (int d = 0; d < domain_.dims(); ++d) v *= cell_width(d);
    return v;
}

Eigen::VectorXd SpatialGrid::cell_center(std::size_t flat) const {
    const int nu = domain_.dims();
    Eigen::VectorXd s(nu);
    for (int d = nu - 1; d >= 0; --d) {
        const auto n = static_cast<std::size_t>(cells_[static_cast<std::size_t>(d)]);
        s[d] = (static_cast<double>(flat % n) + 0.5) * cell_width(d);
        flat /= n;
    }
    return s;
}

std::size_t SpatialGrid::locate(const Eigen::Ref<const Eigen::VectorXd>& s) const {
    std::size_t flat = 0;
    for (int d = 0; d < domain_.dims(); ++d) {
        const int n = cells_[static_cast<std::size_t>(d)];
        int j = static_cast<int>(std::floor(s[d] / cell_width(d)));
        j = std::clamp(j, 0, n - 1);
        flat = flat * static_cast<std::size_t>(n) + static_cast<std::size_t>(j);
    }
    return flat;
}

void SpatialGrid::normalize() {
    if (!values_.allFinite() || (values_.array() < 0.0).any()) {
        throw UsageError("SpatialGrid: density values must be finite and nonnegative");
    }
    const double m = mass();
    if (m <= 0.0) {
        values_.setConstant(1.0 / domain_.volume());
        return;
    }
    values_ /= m;
}

bool SpatialGrid::is_normalized(double tol) const {
    return values_.allFinite() && (values_.array() >= 0.0).all() && std::abs(mass() - 1.0) <= tol;
}

void TrajectorySegment::validate() const {
    if (times.size() != static_cast<std::size_t>(points.cols())) {
        throw UsageError("TrajectorySegment: times and points differ in length");
    }
    for (std::size_t j = 1; j < times.size(); ++j) {
        if (!(times[j] > times[j - 1])) throw UsageError("TrajectorySegment: times must be strictly increasing");
    }
}

FourierBasis::FourierBasis(SearchDomain domain, int order)
    : domain_(std::move(domain)), indices_(order, domain_.dims()) {
    const auto n = static_cast<Eigen::Index>(indices_.size());
    h_.resize(n);
    inv_h_.resize(n);
    lambda_.resize(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const auto k = indices_.at(static_cast<std::size_t>(j));
        h_[j] = basis_normalizer(domain_, k);
        inv_h_[j] = 1.0 / h_[j];
        lambda_[j] = lambda_weight(k, domain_.dims());
    }
}

void FourierBasis::tables(const Eigen::Ref<const Eigen::VectorXd>& s, Eigen::MatrixXd& cosines,
                          Eigen::MatrixXd* sines) const {
    const int nu = dims();
    const int K = order();
    if (s.size() != nu) throw UsageError("FourierBasis: point dimension does not match the domain");
    cosines.resize(K + 1, nu);
    if (sines) sines->resize(K + 1, nu);
    for (int d = 0; d < nu; ++d) {
        const double w = kPi / domain_.length(d);
        for (int k = 0; k <= K; ++k) {
            const double arg = k * w * s[d];
            cosines(k, d) = std::cos(arg);
            // derivative of cos(k w s) with respect to s
            if (sines) (*sines)(k, d) = -k * w * std::sin(arg);
        }
    }
}

void FourierBasis::evaluate(const Eigen::Ref<const Eigen::VectorXd>& s, Eigen::Ref<Eigen::VectorXd> out) const {
    if (out.size() != static_cast<Eigen::Index>(size())) throw UsageError("FourierBasis: output has wrong length");
    Eigen::MatrixXd cosines;
    tables(s, cosines, nullptr);
    expand_product(cosines, out);
    out.array() *= inv_h_.array();
}

Eigen::VectorXd FourierBasis::evaluate(const Eigen::Ref<const Eigen::VectorXd>& s) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(size()));
    evaluate(s, out);
    return out;
}

Eigen::MatrixXd FourierBasis::gradient(const Eigen::Ref<const Eigen::VectorXd>& s) const {
    Eigen::MatrixXd cosines, sines;
    tables(s, cosines, &sines);
    const int nu = dims();
    Eigen::MatrixXd grad(nu, static_cast<Eigen::Index>(size()));
    Eigen::VectorXd row(static_cast<Eigen::Index>(size()));
    for (int d = 0; d < nu; ++d) {
        Eigen::MatrixXd table = cosines;
        table.col(d) = sines.col(d);
        expand_product(table, row);
        grad.row(d) = (row.array() * inv_h_.array()).matrix().transpose();
    }
    return grad;
}

Eigen::VectorXd FourierBasis::weighted_gradient(const Eigen::Ref<const Eigen::VectorXd>& s,
                                                const Eigen::Ref<const Eigen::VectorXd>& w) const {
    if (w.size() != static_cast<Eigen::Index>(size())) throw UsageError("FourierBasis: weight vector has wrong length");
    Eigen::MatrixXd cosines, sines;
    tables(s, cosines, &sines);
    const int nu = dims();
    Eigen::VectorXd out(nu);
    Eigen::VectorXd row(static_cast<Eigen::Index>(size()));
    for (int d = 0; d < nu; ++d) {
        const Eigen::VectorXd saved = cosines.col(d);
        cosines.col(d) = sines.col(d);
        expand_product(cosines, row);
        cosines.col(d) = saved;
        out[d] = (row.array() * inv_h_.array() * w.array()).sum();
    }
    return out;
}

double basis_normalizer(const SearchDomain& domain, std::span<const int> k) {
    if (static_cast<int>(k.size()) != domain.dims()) throw UsageError("basis: index dimension does not match the domain");
    double h = 1.0;
    for (int i = 0; i < domain.dims(); ++i) {
        const double l = domain.length(i);
        h *= (k[static_cast<std::size_t>(i)] == 0) ? std::sqrt(l) : std::sqrt(l / 2.0);
    }
    return h;
}

double basis_eval(const SearchDomain& domain, std::span<const int> k, const Eigen::Ref<const Eigen::VectorXd>& s) {
    require_dims(domain, k.size(), s.size());
    double v = 1.0 / basis_normalizer(domain, k);
    for (int i = 0; i < domain.dims(); ++i) {
        v *= std::cos(k[static_cast<std::size_t>(i)] * kPi * s[i] / domain.length(i));
    }
    return v;
}

Eigen::VectorXd basis_grad(const SearchDomain& domain, std::span<const int> k, const Eigen::Ref<const Eigen::VectorXd>& s) {
    require_dims(domain, k.size(), s.size());
    const int nu = domain.dims();
    const double inv_h = 1.0 / basis_normalizer(domain, k);
    Eigen::VectorXd g(nu);
    for (int d = 0; d < nu; ++d) {
        double v = inv_h;
        for (int i = 0; i < nu; ++i) {
            const double w = k[static_cast<std::size_t>(i)] * kPi / domain.length(i);
            v *= (i == d) ? -w * std::sin(w * s[i]) : std::cos(w * s[i]);
        }
        g[d] = v;
    }
    return g;
}

double lambda_weight(std::span<const int> k, int nu) {
    double norm2 = 0.0;
    for (int v : k) norm2 += static_cast<double>(v) * v;
    return std::pow(1.0 + norm2, -(nu + 1) / 2.0);
}

CoefficientVector distribution_coeffs(const SpatialGrid& grid, const FourierBasis& basis) {
    if (!(grid.domain() == basis.domain())) throw UsageError("distribution_coeffs: grid and basis domains differ");
    if (!grid.is_normalized(1e-9)) throw UsageError("distribution_coeffs: grid must be normalized first");
    auto phi = CoefficientVector::zeros(basis.size());
    Eigen::VectorXd f(static_cast<Eigen::Index>(basis.size()));
    const double vol = grid.cell_volume();
    for (std::size_t c = 0; c < grid.size(); ++c) {
        const double mass = grid.values()[static_cast<Eigen::Index>(c)] * vol;
        if (mass == 0.0) continue;
        basis.evaluate(grid.cell_center(c), f);
        phi.values += mass * f;
    }
    return phi;
}

Eigen::VectorXd segment_integral(const TrajectorySegment& seg, const FourierBasis& basis, double t_begin, double t_end) {
    seg.validate();
    const auto n = static_cast<Eigen::Index>(basis.size());
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);
    if (t_end < t_begin) throw UsageError("segment_integral: window end precedes its start");
    if (t_end == t_begin) return acc;
    const double slack = 1e-9 * std::max(1.0, std::abs(t_end));
    if (seg.times.empty() || seg.times.front() > t_begin + slack || seg.times.back() < t_end - slack) {
        throw UsageError("segment_integral: segment does not cover the requested window");
    }
    auto point_at = [&](std::size_t j, double t) -> Eigen::VectorXd {
        // position at time t in [times[j], times[j+1]]
        const double t0 = seg.times[j];
        const double t1 = seg.times[j + 1];
        const double a = std::clamp((t - t0) / (t1 - t0), 0.0, 1.0);
        return (1.0 - a) * seg.points.col(static_cast<Eigen::Index>(j)) + a * seg.points.col(static_cast<Eigen::Index>(j + 1));
    };
    Eigen::VectorXd f_left(n), f_right(n);
    bool have_left = false;
    double left_time = 0.0;
    for (std::size_t j = 0; j + 1 < seg.times.size(); ++j) {
        const double a = std::max(seg.times[j], t_begin);
        const double b = std::min(seg.times[j + 1], t_end);
        if (b <= a) continue;
        if (!have_left || left_time != a) {
            if (a == seg.times[j]) {
                basis.evaluate(seg.points.col(static_cast<Eigen::Index>(j)), f_left);
            } else {
                basis.evaluate(point_at(j, a), f_left);
            }
        }
        if (b == seg.times[j + 1]) {
            basis.evaluate(seg.points.col(static_cast<Eigen::Index>(j + 1)), f_right);
        } else {
            basis.evaluate(point_at(j, b), f_right);
        }
        acc += 0.5 * (b - a) * (f_left + f_right);
        f_left.swap(f_right);
        have_left = true;
        left_time = b;
    }
    return acc;
}

CoefficientVector trajectory_coeffs(const TrajectorySegment& seg, const FourierBasis& basis, double t0erg, double horizon_end) {
    if (!(horizon_end > t0erg)) throw UsageError("trajectory_coeffs: window must have positive length");
    return CoefficientVector(segment_integral(seg, basis, t0erg, horizon_end) / (horizon_end - t0erg));
}

CoefficientVector recursive_coeff_update(const CoefficientVector& prev_partial, const RecursionWindow& w,
                                         const Eigen::Ref<const Eigen::VectorXd>& seg_integral) {
    if (!(w.t_curr > w.t_prev) || w.t_prev < w.t0erg || !(w.horizon > 0.0)) {
        throw UsageError("recursive_coeff_update: inconsistent window");
    }
    if (prev_partial.values.size() != seg_integral.size()) {
        throw UsageError("recursive_coeff_update: coefficient lengths differ");
    }
    const double prev_span = w.t_prev + w.horizon - w.t0erg;
    const double span = w.t_curr + w.horizon - w.t0erg;
    return CoefficientVector((prev_span / span) * prev_partial.values + seg_integral / span);
}

CoefficientVector recursive_coeff_update(const CoefficientVector& prev_partial, const RecursionWindow& window,
                                         const TrajectorySegment& new_segment, const FourierBasis& basis) {
    const double slack = 1e-9 * std::max(1.0, std::abs(window.t_curr));
    if (new_segment.times.empty() || new_segment.times.front() > window.t_prev + slack ||
        new_segment.times.back() < window.t_curr - slack) {
        throw UsageError("recursive_coeff_update: segment must span [t_{i-1}, t_i]");
    }
    return recursive_coeff_update(prev_partial, window,
                                  segment_integral(new_segment, basis, window.t_prev, window.t_curr));
}

double ergodic_metric(const CoefficientVector& c, const CoefficientVector& phi, const IndexSet& idx) {
    if (c.size() != idx.size() || phi.size() != idx.size()) {
        throw UsageError("ergodic_metric: coefficient lengths do not match the index set (" +
                         std::to_string(c.size()) + ", " + std::to_string(phi.size()) + ", " +
                         std::to_string(idx.size()) + ")");
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < idx.size(); ++j) {
        const double d = c[j] - phi[j];
        sum += lambda_weight(idx.at(j), idx.dims()) * d * d;
    }
    return sum;
}

double ergodic_metric(const CoefficientVector& c, const CoefficientVector& phi, const FourierBasis& basis) {
    if (c.size() != basis.size() || phi.size() != basis.size()) {
        throw UsageError("ergodic_metric: coefficient lengths do not match the basis");
    }
    return (basis.weights().array() * (c.values - phi.values).array().square()).sum();
}

SpatialGrid reconstruct_statistics(const CoefficientVector& c, const FourierBasis& basis, const std::vector<int>& cells) {
    if (c.size() != basis.size()) throw UsageError("reconstruct_statistics: coefficient length does not match the basis");
    SpatialGrid grid(basis.domain(), cells);
    const Eigen::VectorXd weighted = basis.weights().cwiseProduct(c.values);
    Eigen::VectorXd f(static_cast<Eigen::Index>(basis.size()));
    for (std::size_t j = 0; j < grid.size(); ++j) {
        basis.evaluate(grid.cell_center(j), f);
        grid.values()[static_cast<Eigen::Index>(j)] = weighted.dot(f);
    }
    return grid;
}

}  // namespace rhee
