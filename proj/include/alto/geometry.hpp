#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "alto/errors.hpp"

namespace alto {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

inline double distance(Vec2 a, Vec2 b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

// Corner displacements in pixels, one per corner of a rectangular grid.
// Corner order is fixed: top-left, top-right, bottom-left, bottom-right.
struct FourPointOffsets {
    std::array<Vec2, 4> d{};

    static FourPointOffsets zero() { return {}; }
    static FourPointOffsets uniform(double dx, double dy) {
        FourPointOffsets o;
        o.d.fill(Vec2{dx, dy});
        return o;
    }
    bool all_finite() const {
        for (const Vec2& v : d)
            if (!std::isfinite(v.x) || !std::isfinite(v.y)) return false;
        return true;
    }
};

// The four rectangle corners of a width x height image, pixel centers at
// integer coordinates, origin top-left, x rightward, y downward.
struct CornerSet {
    std::array<Vec2, 4> c{};

    static CornerSet of_image(int width, int height) {
        const double xm = static_cast<double>(width - 1);
        const double ym = static_cast<double>(height - 1);
        return CornerSet{{Vec2{0, 0}, Vec2{xm, 0}, Vec2{0, ym}, Vec2{xm, ym}}};
    }
};

// 3x3 projective transform in pixel coordinates, normalized so h33 = 1.
// Degenerate matrices are rejected at construction.
class Homography {
public:
    static constexpr double kDetThreshold = 1e-12;

    static Homography identity() {
        Homography h;
        h.m_.setIdentity();
        return h;
    }

    static Homography translation(double dx, double dy) {
        Homography h;
        h.m_.setIdentity();
        h.m_(0, 2) = dx;
        h.m_(1, 2) = dy;
        return h;
    }

    // Normalizes by h33 and validates invertibility.
    static Homography from_matrix(const Eigen::Matrix3d& m) {
        Eigen::Matrix3d n = m;
        if (std::abs(n(2, 2)) > kDetThreshold) n /= n(2, 2);
        if (std::abs(n.determinant()) <= kDetThreshold)
            throw SingularMatrixError("homography matrix is singular (|det| <= 1e-12)");
        Homography h;
        h.m_ = n;
        return h;
    }

    const Eigen::Matrix3d& matrix() const { return m_; }

    std::array<double, 9> row_major() const {
        std::array<double, 9> out;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) out[static_cast<size_t>(r * 3 + c)] = m_(r, c);
        return out;
    }

    static Homography from_row_major(const std::array<double, 9>& v) {
        Eigen::Matrix3d m;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) m(r, c) = v[static_cast<size_t>(r * 3 + c)];
        return from_matrix(m);
    }

private:
    Homography() = default;
    Eigen::Matrix3d m_;
};

// p' = Hp with the homogeneous divisor w = h31*x + h32*y + h33.
inline Vec2 apply_homography(const Homography& h, Vec2 p) {
    const Eigen::Matrix3d& m = h.matrix();
    const double w = m(2, 0) * p.x + m(2, 1) * p.y + m(2, 2);
    if (std::abs(w) <= 1e-12)
        throw PointAtInfinityError("homogeneous divisor vanishes at (" +
                                   std::to_string(p.x) + ", " + std::to_string(p.y) + ")");
    return Vec2{(m(0, 0) * p.x + m(0, 1) * p.y + m(0, 2)) / w,
                (m(1, 0) * p.x + m(1, 1) * p.y + m(1, 2)) / w};
}

namespace detail {

// Assembles the 8x8 system A*h = b for the four correspondences
// src_k -> dst_k with h33 pinned to 1. Unknown order:
// h11 h12 h13 h21 h22 h23 h31 h32.
template <typename T>
void dlt_system(const std::array<Vec2, 4>& src, const std::array<Vec2, 4>& dst,
                Eigen::Matrix<T, 8, 8>& a, Eigen::Matrix<T, 8, 1>& b) {
    a.setZero();
    for (int k = 0; k < 4; ++k) {
        const T x = static_cast<T>(src[static_cast<size_t>(k)].x);
        const T y = static_cast<T>(src[static_cast<size_t>(k)].y);
        const T u = static_cast<T>(dst[static_cast<size_t>(k)].x);
        const T v = static_cast<T>(dst[static_cast<size_t>(k)].y);
        a(2 * k, 0) = x;
        a(2 * k, 1) = y;
        a(2 * k, 2) = 1;
        a(2 * k, 6) = -u * x;
        a(2 * k, 7) = -u * y;
        b(2 * k) = u;
        a(2 * k + 1, 3) = x;
        a(2 * k + 1, 4) = y;
        a(2 * k + 1, 5) = 1;
        a(2 * k + 1, 6) = -v * x;
        a(2 * k + 1, 7) = -v * y;
        b(2 * k + 1) = v;
    }
}

inline constexpr double kDltConditionLimit = 1e12;

} // namespace detail

// Direct linear transform from the four corner correspondences
// corner_k -> corner_k + offset_k. Exact for four points; the system is
// rejected when its condition number exceeds 1e12.
inline Homography dlt_solve(const CornerSet& src, const FourPointOffsets& offsets) {
    if (!offsets.all_finite())
        throw DegenerateConfigError("four-point offsets must be finite");
    std::array<Vec2, 4> dst;
    for (size_t k = 0; k < 4; ++k)
        dst[k] = Vec2{src.c[k].x + offsets.d[k].x, src.c[k].y + offsets.d[k].y};

    Eigen::Matrix<double, 8, 8> a;
    Eigen::Matrix<double, 8, 1> b;
    detail::dlt_system(src.c, dst, a, b);

    Eigen::JacobiSVD<Eigen::Matrix<double, 8, 8>> svd(a);
    const double smin = svd.singularValues()(7);
    const double smax = svd.singularValues()(0);
    if (!(smin > 0.0) || smax / smin > detail::kDltConditionLimit)
        throw DegenerateConfigError("degenerate four-point configuration (condition > 1e12)");

    const Eigen::Matrix<double, 8, 1> h = a.partialPivLu().solve(b);
    Eigen::Matrix3d m;
    m << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
    return Homography::from_matrix(m);
}

inline Homography invert(const Homography& h) {
    const Eigen::Matrix3d& m = h.matrix();
    const double det = m.determinant();
    if (std::abs(det) <= Homography::kDetThreshold)
        throw SingularMatrixError("cannot invert a singular homography");
    return Homography::from_matrix(m.inverse().eval());
}

// apply(compose(h1, h2), p) == apply(h1, apply(h2, p)).
inline Homography compose(const Homography& h1, const Homography& h2) {
    return Homography::from_matrix((h1.matrix() * h2.matrix()).eval());
}

// Mean (over samples) of the average (over the four corners) Euclidean
// distance between corners warped by the true and predicted homographies.
inline double mace(std::span<const Homography> truth, std::span<const Homography> pred,
                   const CornerSet& corners) {
    if (truth.size() != pred.size())
        throw Error("mace: truth/pred length mismatch");
    if (truth.empty())
        throw Error("mace: empty sample list");
    double total = 0.0;
    for (size_t i = 0; i < truth.size(); ++i) {
        double ace = 0.0;
        for (const Vec2& c : corners.c)
            ace += distance(apply_homography(truth[i], c), apply_homography(pred[i], c));
        total += ace / 4.0;
    }
    return total / static_cast<double>(truth.size());
}

// Per-sample average corner error, the term inside MACE.
inline double ace(const Homography& truth, const Homography& pred, const CornerSet& corners) {
    double acc = 0.0;
    for (const Vec2& c : corners.c)
        acc += distance(apply_homography(truth, c), apply_homography(pred, c));
    return acc / 4.0;
}

} // namespace alto
