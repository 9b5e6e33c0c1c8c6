#pragma once

#include "corrlab/matrix.hpp"

#include <vector>

namespace corrlab {

/// One putative match: a keypoint (x, y) in view 1 and its matched point
/// (xp, yp) in view 2, both in normalized camera coordinates.
struct Correspondence {
    double x = 0.0;
    double y = 0.0;
    double xp = 0.0;
    double yp = 0.0;
};

struct CorrespondenceSet {
    std::vector<Correspondence> points;

    int size() const { return static_cast<int>(points.size()); }

    /// N x 4 matrix (x, y, xp, yp) per row.
    Matrix to_matrix() const {
        Matrix m(size(), 4);
        for (int i = 0; i < size(); ++i) {
            m.at(i, 0) = points[i].x;
            m.at(i, 1) = points[i].y;
            m.at(i, 2) = points[i].xp;
            m.at(i, 3) = points[i].yp;
        }
        return m;
    }

    Matrix view1_coords() const {
        Matrix m(size(), 2);
        for (int i = 0; i < size(); ++i) {
            m.at(i, 0) = points[i].x;
            m.at(i, 1) = points[i].y;
        }
        return m;
    }

    Matrix view2_coords() const {
        Matrix m(size(), 2);
        for (int i = 0; i < size(); ++i) {
            m.at(i, 0) = points[i].xp;
            m.at(i, 1) = points[i].yp;
        }
        return m;
    }

    CorrespondenceSet permuted(const std::vector<int>& perm) const {
        CorrespondenceSet out;
        out.points.resize(points.size());
        for (std::size_t i = 0; i < perm.size(); ++i) out.points[i] = points[perm[i]];
        return out;
    }
};

}  // namespace corrlab
