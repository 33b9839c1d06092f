#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace tdmr {

// Row-major dense matrix of 64-bit floats; the artifact's only tensor type.
// Vectors are 1xN or Nx1 matrices.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

// A learnable tensor together with its gradient accumulator.
struct Parameter {
    Mat value;
    Mat grad;

    Parameter() = default;
    Parameter(Index rows, Index cols)
        : value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)) {}
    explicit Parameter(Mat v) : value(std::move(v)) { grad = Mat::Zero(value.rows(), value.cols()); }

    void zero_grad() { grad.setZero(); }
    Index rows() const { return value.rows(); }
    Index cols() const { return value.cols(); }
    Index size() const { return value.size(); }
};

}  // namespace tdmr
