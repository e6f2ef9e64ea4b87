#pragma once

#include <cstddef>
#include <vector>

namespace fedlab {

// Flat parameter point W in R^D. Values are immutable after construction and
// checked for NaN/Inf, so a ParamVector in hand is always finite. All
// arithmetic on parameter points lives in this header's free functions;
// summations run in fixed ascending index order for bit-reproducibility.
class ParamVector {
public:
    ParamVector() = default;
    explicit ParamVector(std::vector<double> values);

    static ParamVector zeros(std::size_t dim);

    std::size_t dim() const { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }
    const std::vector<double>& values() const { return values_; }

    bool operator==(const ParamVector& other) const = default;

private:
    std::vector<double> values_;
};

// y + s*x. Throws DimensionError on length mismatch, NumericError if s or any
// result entry is non-finite.
ParamVector axpy(const ParamVector& y, double s, const ParamVector& x);

// Sum of x_i * y_i in ascending index order.
double dot(const ParamVector& x, const ParamVector& y);

// dot(x, x); shares the summation order with dot by construction.
double norm_sq(const ParamVector& x);

// norm_sq(x - y) without materialising the difference; same index order.
double distance_sq(const ParamVector& x, const ParamVector& y);

} // namespace fedlab
