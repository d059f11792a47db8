#pragma once

// Small dense matrix/vector types and error plumbing shared by every module.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace mosfuse {

// All recoverable failures surface as mosfuse::Error with a human-readable
// message naming the offending file/row/value.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

using Vec = std::vector<double>;

struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // row-major

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

inline double dot(const Vec& a, const Vec& b) {
    if (a.size() != b.size())
        throw Error("dot: length mismatch (" + std::to_string(a.size()) + " vs " +
                    std::to_string(b.size()) + ")");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// y = A^T x  where A is rows x cols and x has length rows.
inline Vec mat_tvec(const Mat& a, const Vec& x) {
    if (x.size() != a.rows)
        throw Error("mat_tvec: expected vector of length " + std::to_string(a.rows) +
                    ", got " + std::to_string(x.size()));
    Vec y(a.cols, 0.0);
    for (std::size_t r = 0; r < a.rows; ++r) {
        const double xr = x[r];
        for (std::size_t c = 0; c < a.cols; ++c) y[c] += a(r, c) * xr;
    }
    return y;
}

inline double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace mosfuse
