#pragma once

#include <cassert>
#include <vector>

namespace tfn {

// Dense row-major matrix of doubles. Row vectors are 1xN.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), a(static_cast<size_t>(r) * c, fill) {}

    static Mat row_vector(std::vector<double> v) {
        Mat m;
        m.rows = 1;
        m.cols = static_cast<int>(v.size());
        m.a = std::move(v);
        return m;
    }

    int size() const { return rows * cols; }

    double& operator()(int r, int c) {
        assert(r >= 0 && r < rows && c >= 0 && c < cols);
        return a[static_cast<size_t>(r) * cols + c];
    }
    double operator()(int r, int c) const {
        assert(r >= 0 && r < rows && c >= 0 && c < cols);
        return a[static_cast<size_t>(r) * cols + c];
    }

    double* row_ptr(int r) { return a.data() + static_cast<size_t>(r) * cols; }
    const double* row_ptr(int r) const { return a.data() + static_cast<size_t>(r) * cols; }

    void fill(double v) { std::fill(a.begin(), a.end(), v); }

    bool operator==(const Mat&) const = default;
};

}  // namespace tfn
