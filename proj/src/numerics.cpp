#include "fedlab/numerics.hpp"

#include <cmath>
#include <string>

#include "fedlab/errors.hpp"

namespace fedlab {

namespace {

void require_finite(const std::vector<double>& v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string(what) + ": non-finite entry");
        }
    }
}

} // namespace

ParamVector::ParamVector(std::vector<double> values) : values_(std::move(values)) {
    require_finite(values_, "ParamVector");
}

ParamVector ParamVector::zeros(std::size_t dim) {
    ParamVector v;
    v.values_.assign(dim, 0.0);
    return v;
}

ParamVector axpy(const ParamVector& y, double s, const ParamVector& x) {
    if (y.dim() != x.dim()) {
        throw DimensionError("axpy: length mismatch (" + std::to_string(y.dim()) + " vs " +
                             std::to_string(x.dim()) + ")");
    }
    if (!std::isfinite(s)) {
        throw NumericError("axpy: non-finite scalar");
    }
    std::vector<double> out(y.dim());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = y[i] + s * x[i];
        if (!std::isfinite(out[i])) {
            throw NumericError("axpy: non-finite result at index " + std::to_string(i));
        }
    }
    ParamVector result;
    result = ParamVector(std::move(out));
    return result;
}

double dot(const ParamVector& x, const ParamVector& y) {
    if (x.dim() != y.dim()) {
        throw DimensionError("dot: length mismatch (" + std::to_string(x.dim()) + " vs " +
                             std::to_string(y.dim()) + ")");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < x.dim(); ++i) {
        acc += x[i] * y[i];
    }
    return acc;
}

double norm_sq(const ParamVector& x) {
    return dot(x, x);
}

double distance_sq(const ParamVector& x, const ParamVector& y) {
    if (x.dim() != y.dim()) {
        throw DimensionError("distance_sq: length mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < x.dim(); ++i) {
        double d = x[i] - y[i];
        acc += d * d;
    }
    return acc;
}

} // namespace fedlab
