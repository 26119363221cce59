#pragma once

#include <Eigen/Dense>
#include <memory>

#include "alto/autodiff.hpp"
#include "alto/geometry.hpp"

namespace alto {

// Batched DLT: offsets (N, 8) in corner order TL,TR,BL,BR with (dx, dy)
// interleaved -> homographies (N, 3, 3) with h33 = 1. Differentiable w.r.t.
// the offsets through the linear solve.
template <typename S>
Var<S> dlt_homography(Var<S> offsets, const CornerSet& corners) {
    Graph<S>* g = offsets.g;
    const Tensor<S>& ov = offsets.val();
    assert(ov.shape.rank == 2 && ov.shape[1] == 8);
    const int64_t n_n = ov.shape[0];

    using Mat8 = Eigen::Matrix<S, 8, 8>;
    using Vec8 = Eigen::Matrix<S, 8, 1>;
    auto lus = std::make_shared<std::vector<Eigen::PartialPivLU<Mat8>>>();
    lus->reserve(static_cast<size_t>(n_n));

    Tensor<S> out(Shape{n_n, 3, 3});
    for (int64_t n = 0; n < n_n; ++n) {
        std::array<Vec2, 4> dst;
        for (int k = 0; k < 4; ++k)
            dst[static_cast<size_t>(k)] =
                Vec2{corners.c[static_cast<size_t>(k)].x + static_cast<double>(ov.at(n, 2 * k)),
                     corners.c[static_cast<size_t>(k)].y + static_cast<double>(ov.at(n, 2 * k + 1))};
        Mat8 a;
        Vec8 b;
        detail::dlt_system<S>(corners.c, dst, a, b);

        Eigen::JacobiSVD<Mat8> svd(a);
        const S smin = svd.singularValues()(7);
        const S smax = svd.singularValues()(0);
        if (!(smin > S(0)) || static_cast<double>(smax / smin) > detail::kDltConditionLimit)
            throw DegenerateConfigError("degenerate four-point configuration at batch index " +
                                        std::to_string(n));

        lus->emplace_back(a);
        const Vec8 h = lus->back().solve(b);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                out.at(n, r, c, 0) = (r == 2 && c == 2) ? S(1) : h(r * 3 + c);
    }

    int iofs = offsets.id, io = static_cast<int>(g->size());
    std::array<Vec2, 4> crn = corners.c;
    return g->make(std::move(out), g->requires_grad(iofs), [g, iofs, io, lus, crn] {
        if (!g->requires_grad(iofs)) return;
        const Tensor<S>& go = g->grad(io);
        const Tensor<S>& hv = g->val(io);
        Tensor<S>& gofs = g->grad_buf(iofs);
        const int64_t n_n = hv.shape[0];
        for (int64_t n = 0; n < n_n; ++n) {
            Vec8 gh;
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c)
                    if (!(r == 2 && c == 2)) gh(r * 3 + c) = go.at(n, r, c, 0);
            // A h = b  =>  lambda = A^-T gh;  dL/db = lambda;  dL/dA = -lambda h^T.
            const Vec8 lambda = (*lus)[static_cast<size_t>(n)].transpose().solve(gh);
            const S h31 = hv.at(n, 2, 0, 0), h32 = hv.at(n, 2, 1, 0);
            for (int k = 0; k < 4; ++k) {
                const S x = static_cast<S>(crn[static_cast<size_t>(k)].x);
                const S y = static_cast<S>(crn[static_cast<size_t>(k)].y);
                // b rows carry u, v; A rows carry -u*x, -u*y in the h31, h32
                // columns, so du = lambda_u * (1 + x*h31 + y*h32).
                gofs.at(n, 2 * k) += lambda(2 * k) * (S(1) + x * h31 + y * h32);
                gofs.at(n, 2 * k + 1) += lambda(2 * k + 1) * (S(1) + x * h31 + y * h32);
            }
        }
    });
}

// Batched 3x3 matrix inverse. For Y = X^-1, dL/dX = -Y^T dL/dY Y^T.
template <typename S>
Var<S> mat3_inverse(Var<S> x) {
    Graph<S>* g = x.g;
    const Tensor<S>& xv = x.val();
    assert(xv.shape.rank == 3 && xv.shape[1] == 3 && xv.shape[2] == 3);
    const int64_t n_n = xv.shape[0];
    using Mat3 = Eigen::Matrix<S, 3, 3, Eigen::RowMajor>;

    Tensor<S> out(xv.shape);
    for (int64_t n = 0; n < n_n; ++n) {
        Eigen::Map<const Mat3> m(&xv.at(n, 0, 0, 0));
        const S det = m.determinant();
        if (std::abs(static_cast<double>(det)) <= 1e-12)
            throw SingularMatrixError("singular homography at batch index " + std::to_string(n));
        Eigen::Map<Mat3> inv(&out.at(n, 0, 0, 0));
        inv = m.inverse();
    }
    int ix = x.id, io = static_cast<int>(g->size());
    return g->make(std::move(out), g->requires_grad(ix), [g, ix, io] {
        if (!g->requires_grad(ix)) return;
        const Tensor<S>& go = g->grad(io);
        const Tensor<S>& yv = g->val(io);
        Tensor<S>& gx = g->grad_buf(ix);
        const int64_t n_n = yv.shape[0];
        for (int64_t n = 0; n < n_n; ++n) {
            Eigen::Map<const Mat3> y(&yv.at(n, 0, 0, 0));
            Eigen::Map<const Mat3> gy(&go.at(n, 0, 0, 0));
            Eigen::Map<Mat3> gxm(&gx.at(n, 0, 0, 0));
            gxm.noalias() += -(y.transpose() * gy * y.transpose());
        }
    });
}

// Applies batched homographies to the output pixel lattice, producing the
// source-coordinate grid (N, 2, Ho, Wo). The matrices here map output
// coordinates to source coordinates (i.e. pass the inverse of the predicted
// homography for backward warping).
template <typename S>
Var<S> sampling_grid(Var<S> h, int64_t out_h, int64_t out_w) {
    Graph<S>* g = h.g;
    const Tensor<S>& hv = h.val();
    assert(hv.shape.rank == 3 && hv.shape[1] == 3 && hv.shape[2] == 3);
    const int64_t n_n = hv.shape[0];

    Tensor<S> out(Shape{n_n, 2, out_h, out_w});
    // Saved homogeneous scale per pixel for the backward pass.
    auto sw_store = std::make_shared<Tensor<S>>(Shape{n_n, 1, out_h, out_w});
    for (int64_t n = 0; n < n_n; ++n) {
        const S* m = &hv.at(n, 0, 0, 0);
        for (int64_t y = 0; y < out_h; ++y)
            for (int64_t x = 0; x < out_w; ++x) {
                const S xs = static_cast<S>(x), ys = static_cast<S>(y);
                const S sw = m[6] * xs + m[7] * ys + m[8];
                if (std::abs(static_cast<double>(sw)) <= 1e-12)
                    throw PointAtInfinityError("sampling grid divisor vanished at batch index " +
                                               std::to_string(n));
                out.at(n, 0, y, x) = (m[0] * xs + m[1] * ys + m[2]) / sw;
                out.at(n, 1, y, x) = (m[3] * xs + m[4] * ys + m[5]) / sw;
                sw_store->at(n, 0, y, x) = sw;
            }
    }
    int ih = h.id, io = static_cast<int>(g->size());
    return g->make(std::move(out), g->requires_grad(ih), [g, ih, io, sw_store, out_h, out_w] {
        if (!g->requires_grad(ih)) return;
        const Tensor<S>& go = g->grad(io);
        const Tensor<S>& gv = g->val(io);
        Tensor<S>& gh = g->grad_buf(ih);
        const int64_t n_n = go.shape[0];
        for (int64_t n = 0; n < n_n; ++n) {
            S* gm = &gh.at(n, 0, 0, 0);
            for (int64_t y = 0; y < out_h; ++y)
                for (int64_t x = 0; x < out_w; ++x) {
                    const S xs = static_cast<S>(x), ys = static_cast<S>(y);
                    const S sw = sw_store->at(n, 0, y, x);
                    const S gx = go.at(n, 0, y, x);
                    const S gy = go.at(n, 1, y, x);
                    const S u = gv.at(n, 0, y, x); // == sx / sw
                    const S v = gv.at(n, 1, y, x);
                    const S a = gx / sw, b = gy / sw;
                    const S c = -(gx * u + gy * v) / sw;
                    gm[0] += a * xs;
                    gm[1] += a * ys;
                    gm[2] += a;
                    gm[3] += b * xs;
                    gm[4] += b * ys;
                    gm[5] += b;
                    gm[6] += c * xs;
                    gm[7] += c * ys;
                    gm[8] += c;
                }
        }
    });
}

// Batched bilinear sampling: img (N, C, H, W), grid (N, 2, Ho, Wo) ->
// (N, C, Ho, Wo). Zero padding outside the image; differentiable w.r.t.
// both the image values and the grid coordinates.
template <typename S>
Var<S> grid_sample(Var<S> img, Var<S> grid) {
    Graph<S>* g = img.g;
    const Tensor<S>& iv = img.val();
    const Tensor<S>& gv = grid.val();
    assert(iv.shape.rank == 4 && gv.shape.rank == 4 && gv.shape[1] == 2);
    const int64_t n_n = iv.shape[0], c_n = iv.shape[1], h = iv.shape[2], w = iv.shape[3];
    const int64_t ho = gv.shape[2], wo = gv.shape[3];
    assert(gv.shape[0] == n_n);

    Tensor<S> out(Shape{n_n, c_n, ho, wo});
    for (int64_t n = 0; n < n_n; ++n)
        for (int64_t c = 0; c < c_n; ++c) {
            const S* plane = &iv.at(n, c, 0, 0);
            for (int64_t y = 0; y < ho; ++y)
                for (int64_t x = 0; x < wo; ++x) {
                    const double gx = static_cast<double>(gv.at(n, 0, y, x));
                    const double gy = static_cast<double>(gv.at(n, 1, y, x));
                    const double fx = std::floor(gx), fy = std::floor(gy);
                    const int64_t x0 = static_cast<int64_t>(fx), y0 = static_cast<int64_t>(fy);
                    const S wx = static_cast<S>(gx - fx), wy = static_cast<S>(gy - fy);
                    auto tap = [&](int64_t yy, int64_t xx) -> S {
                        return (xx >= 0 && xx < w && yy >= 0 && yy < h) ? plane[yy * w + xx] : S(0);
                    };
                    out.at(n, c, y, x) =
                        (S(1) - wy) * ((S(1) - wx) * tap(y0, x0) + wx * tap(y0, x0 + 1)) +
                        wy * ((S(1) - wx) * tap(y0 + 1, x0) + wx * tap(y0 + 1, x0 + 1));
                }
        }

    bool rg = g->requires_grad(img.id) || g->requires_grad(grid.id);
    int ii = img.id, ig = grid.id, io = static_cast<int>(g->size());
    return g->make(std::move(out), rg, [g, ii, ig, io] {
        const Tensor<S>& go = g->grad(io);
        const Tensor<S>& iv = g->val(ii);
        const Tensor<S>& gv = g->val(ig);
        const int64_t n_n = iv.shape[0], c_n = iv.shape[1], h = iv.shape[2], w = iv.shape[3];
        const int64_t ho = gv.shape[2], wo = gv.shape[3];
        const bool need_img = g->requires_grad(ii);
        const bool need_grid = g->requires_grad(ig);
        Tensor<S>* gi = need_img ? &g->grad_buf(ii) : nullptr;
        Tensor<S>* gg = need_grid ? &g->grad_buf(ig) : nullptr;
        for (int64_t n = 0; n < n_n; ++n)
            for (int64_t y = 0; y < ho; ++y)
                for (int64_t x = 0; x < wo; ++x) {
                    const double gxd = static_cast<double>(gv.at(n, 0, y, x));
                    const double gyd = static_cast<double>(gv.at(n, 1, y, x));
                    const double fx = std::floor(gxd), fy = std::floor(gyd);
                    const int64_t x0 = static_cast<int64_t>(fx), y0 = static_cast<int64_t>(fy);
                    const S wx = static_cast<S>(gxd - fx), wy = static_cast<S>(gyd - fy);
                    const bool in00x = x0 >= 0 && x0 < w, in01x = x0 + 1 >= 0 && x0 + 1 < w;
                    const bool in0y = y0 >= 0 && y0 < h, in1y = y0 + 1 >= 0 && y0 + 1 < h;
                    S acc_gx = 0, acc_gy = 0;
                    for (int64_t c = 0; c < c_n; ++c) {
                        const S* plane = &iv.at(n, c, 0, 0);
                        const S d = go.at(n, c, y, x);
                        const S v00 = (in0y && in00x) ? plane[y0 * w + x0] : S(0);
                        const S v01 = (in0y && in01x) ? plane[y0 * w + x0 + 1] : S(0);
                        const S v10 = (in1y && in00x) ? plane[(y0 + 1) * w + x0] : S(0);
                        const S v11 = (in1y && in01x) ? plane[(y0 + 1) * w + x0 + 1] : S(0);
                        if (need_img) {
                            S* gplane = &gi->at(n, c, 0, 0);
                            if (in0y && in00x) gplane[y0 * w + x0] += d * (S(1) - wy) * (S(1) - wx);
                            if (in0y && in01x) gplane[y0 * w + x0 + 1] += d * (S(1) - wy) * wx;
                            if (in1y && in00x) gplane[(y0 + 1) * w + x0] += d * wy * (S(1) - wx);
                            if (in1y && in01x) gplane[(y0 + 1) * w + x0 + 1] += d * wy * wx;
                        }
                        if (need_grid) {
                            acc_gx += d * ((S(1) - wy) * (v01 - v00) + wy * (v11 - v10));
                            acc_gy += d * ((S(1) - wx) * (v10 - v00) + wx * (v11 - v01));
                        }
                    }
                    if (need_grid) {
                        gg->at(n, 0, y, x) += acc_gx;
                        gg->at(n, 1, y, x) += acc_gy;
                    }
                }
    });
}

} // namespace alto
