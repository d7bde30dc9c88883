// Dense row-major double matrix. The one value type everything else builds on.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fea {

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), v_(rows * cols, fill) {}

    Matrix(const Matrix&) = default;
    Matrix& operator=(const Matrix&) = default;
    // Moved-from matrices become empty (0x0), never shape-inconsistent.
    Matrix(Matrix&& o) noexcept
        : rows_(std::exchange(o.rows_, 0)), cols_(std::exchange(o.cols_, 0)),
          v_(std::move(o.v_)) {
        o.v_.clear();
    }
    Matrix& operator=(Matrix&& o) noexcept {
        rows_ = std::exchange(o.rows_, 0);
        cols_ = std::exchange(o.cols_, 0);
        v_ = std::move(o.v_);
        o.v_.clear();
        return *this;
    }

    Matrix(std::initializer_list<std::initializer_list<double>> init) {
        rows_ = init.size();
        cols_ = rows_ ? init.begin()->size() : 0;
        v_.reserve(rows_ * cols_);
        for (const auto& row : init) {
            if (row.size() != cols_)
                throw std::invalid_argument("Matrix: ragged initializer list");
            v_.insert(v_.end(), row.begin(), row.end());
        }
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return v_.size(); }
    bool empty() const { return v_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return v_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return v_[i * cols_ + j]; }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }
    std::vector<double>& vec() { return v_; }
    const std::vector<double>& vec() const { return v_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    std::string shape_str() const {
        std::ostringstream os;
        os << rows_ << "x" << cols_;
        return os.str();
    }

    void fill(double x) { std::fill(v_.begin(), v_.end(), x); }

    bool all_finite() const {
        for (double x : v_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    bool operator==(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && v_ == o.v_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> v_;
};

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch (" + a.shape_str() +
                                    " vs " + b.shape_str() + ")");
}

} // namespace fea
