#pragma once

#include "tdmr/rng.hpp"
#include "tdmr/types.hpp"

#include <vector>

namespace tdmr::testing {

inline Mat random_mat(Index rows, Index cols, RngStream& rng, double scale = 1.0) {
    Mat m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    return m;
}

inline bool bit_equal(const Mat& a, const Mat& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    for (Index i = 0; i < a.size(); ++i) {
        if (a.data()[i] != b.data()[i]) return false;
    }
    return true;
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
    return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace tdmr::testing
