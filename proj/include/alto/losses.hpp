#pragma once

#include <Eigen/Dense>

#include "alto/autodiff.hpp"

namespace alto {

// Variance guard inside the correlation square roots: constant features
// produce zero rows/columns instead of NaN.
inline constexpr double kCorrelationEps = 1e-12;

namespace detail {

// One normalized cross-correlation problem over matrices viewed as
// (M samples x D features): columns are mean-centered over the row axis,
// then C_ij = <u_i, v_j> / (|u_i| |v_j|), norms guarded by eps.
// The map types differ per caller (row-major, column-major, strided) so the
// same math serves the batch-axis, spatial-axis, and per-location variants.
template <typename S, typename MapA, typename MapB>
void corr_forward_one(const MapA& a, const MapB& b, S* c_out) {
    using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
    const Eigen::Index d = a.cols();
    MatX u = a.rowwise() - a.colwise().mean();
    MatX v = b.rowwise() - b.colwise().mean();
    Eigen::Array<S, 1, Eigen::Dynamic> p =
        (u.colwise().squaredNorm().array() + S(kCorrelationEps)).sqrt();
    Eigen::Array<S, 1, Eigen::Dynamic> q =
        (v.colwise().squaredNorm().array() + S(kCorrelationEps)).sqrt();
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> c(c_out, d, d);
    c = (u.transpose() * v).array() / (p.transpose().matrix() * q.matrix()).array();
}

// Backward of corr_forward_one. The centered views and norms are cheap to
// recompute from the saved inputs, so nothing is stored at forward time.
template <typename S, typename MapA, typename MapB, typename GradA, typename GradB>
void corr_backward_one(const MapA& a, const MapB& b, const S* c_in, const S* gc_in,
                       GradA* ga, GradB* gb) {
    using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
    using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Eigen::Index d = a.cols();
    MatX u = a.rowwise() - a.colwise().mean();
    MatX v = b.rowwise() - b.colwise().mean();
    Eigen::Array<S, Eigen::Dynamic, 1> p2 =
        u.colwise().squaredNorm().array().transpose() + S(kCorrelationEps);
    Eigen::Array<S, Eigen::Dynamic, 1> q2 =
        v.colwise().squaredNorm().array().transpose() + S(kCorrelationEps);
    Eigen::Array<S, Eigen::Dynamic, 1> p = p2.sqrt(), q = q2.sqrt();

    Eigen::Map<const RowMat> c(c_in, d, d);
    Eigen::Map<const RowMat> gc(gc_in, d, d);
    // ghat_ij = g_ij / (p_i q_j); s_i and t_j fold the norms' own dependence
    // on the inputs back into column scalings.
    MatX ghat = gc.array() / (p.matrix() * q.matrix().transpose()).array();
    Eigen::Array<S, Eigen::Dynamic, 1> s = (gc.array() * c.array()).rowwise().sum();
    Eigen::Array<S, Eigen::Dynamic, 1> t = (gc.array() * c.array()).colwise().sum().transpose();

    if (ga) {
        MatX du = v * ghat.transpose() - u * (s / p2).matrix().asDiagonal();
        *ga += (du.rowwise() - du.colwise().mean()).eval();
    }
    if (gb) {
        MatX dv = u * ghat - v * (t / q2).matrix().asDiagonal();
        *gb += (dv.rowwise() - dv.colwise().mean()).eval();
    }
}

} // namespace detail

// Normalized cross-correlation of two embedding batches (N, D) over the
// batch axis -> (D, D). Rows index features of a, columns features of b.
template <typename S>
Var<S> cross_correlation_batchwise(Var<S> a, Var<S> b) {
    Graph<S>* g = a.g;
    const Tensor<S>& av = a.val();
    const Tensor<S>& bv = b.val();
    assert(av.shape.rank == 2 && av.shape == bv.shape && av.shape[0] >= 2);
    const int64_t n = av.shape[0], d = av.shape[1];
    using RowMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using RowMutMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

    Tensor<S> out(Shape{d, d});
    detail::corr_forward_one<S>(RowMap(av.data(), n, d), RowMap(bv.data(), n, d), out.data());

    bool rg = g->requires_grad(a.id) || g->requires_grad(b.id);
    int ia = a.id, ib = b.id, io = static_cast<int>(g->size());
    return g->make(std::move(out), rg, [g, ia, ib, io, n, d] {
        const Tensor<S>& av = g->val(ia);
        const Tensor<S>& bv = g->val(ib);
        const bool na = g->requires_grad(ia), nb = g->requires_grad(ib);
        RowMutMap ga(na ? g->grad_buf(ia).data() : nullptr, na ? n : 0, d);
        RowMutMap gb(nb ? g->grad_buf(ib).data() : nullptr, nb ? n : 0, d);
        detail::corr_backward_one<S>(RowMap(av.data(), n, d), RowMap(bv.data(), n, d),
                                     g->val(io).data(), g->grad(io).data(), na ? &ga : nullptr,
                                     nb ? &gb : nullptr);
    });
}

// Per-sample normalized cross-correlation of feature maps (N, D, H, W) with
// the spatial axis playing the batch role -> (N, D, D).
template <typename S>
Var<S> cross_correlation_spatial(Var<S> a, Var<S> b) {
    Graph<S>* g = a.g;
    const Tensor<S>& av = a.val();
    const Tensor<S>& bv = b.val();
    assert(av.shape.rank == 4 && av.shape == bv.shape && av.shape[2] * av.shape[3] >= 2);
    const int64_t n = av.shape[0], d = av.shape[1], hw = av.shape[2] * av.shape[3];
    // A (D x HW) row-major plane is exactly an (HW x D) column-major matrix,
    // so each sample maps without copying.
    using ColMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>>;
    using ColMutMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>>;

    Tensor<S> out(Shape{n, d, d});
    for (int64_t i = 0; i < n; ++i)
        detail::corr_forward_one<S>(ColMap(av.data() + i * d * hw, hw, d),
                                    ColMap(bv.data() + i * d * hw, hw, d),
                                    out.data() + i * d * d);

    bool rg = g->requires_grad(a.id) || g->requires_grad(b.id);
    int ia = a.id, ib = b.id, io = static_cast<int>(g->size());
    return g->make(std::move(out), rg, [g, ia, ib, io, n, d, hw] {
        const Tensor<S>& av = g->val(ia);
        const Tensor<S>& bv = g->val(ib);
        const bool na = g->requires_grad(ia), nb = g->requires_grad(ib);
        for (int64_t i = 0; i < n; ++i) {
            ColMutMap ga(na ? g->grad_buf(ia).data() + i * d * hw : nullptr, na ? hw : 0, d);
            ColMutMap gb(nb ? g->grad_buf(ib).data() + i * d * hw : nullptr, nb ? hw : 0, d);
            detail::corr_backward_one<S>(ColMap(av.data() + i * d * hw, hw, d),
                                         ColMap(bv.data() + i * d * hw, hw, d),
                                         g->val(io).data() + i * d * d,
                                         g->grad(io).data() + i * d * d, na ? &ga : nullptr,
                                         nb ? &gb : nullptr);
        }
    });
}

// Per-location normalized cross-correlation of feature maps (N, D, H, W)
// with the sample axis as the batch role, one problem per pixel ->
// (H*W, D, D). Supports the no-pooling variant of the modality loss.
template <typename S>
Var<S> cross_correlation_per_location(Var<S> a, Var<S> b) {
    Graph<S>* g = a.g;
    const Tensor<S>& av = a.val();
    const Tensor<S>& bv = b.val();
    assert(av.shape.rank == 4 && av.shape == bv.shape && av.shape[0] >= 2);
    const int64_t n = av.shape[0], d = av.shape[1], hw = av.shape[2] * av.shape[3];
    // Element (sample, feature) of location L sits at L + feature*HW +
    // sample*D*HW: a strided (N x D) view per location.
    using Strided = Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>;
    using StrMap =
        Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>, 0, Strided>;
    using StrMutMap =
        Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>, 0, Strided>;
    const Strided st(d * hw, hw);

    Tensor<S> out(Shape{hw, d, d});
    for (int64_t l = 0; l < hw; ++l)
        detail::corr_forward_one<S>(StrMap(av.data() + l, n, d, st), StrMap(bv.data() + l, n, d, st),
                                    out.data() + l * d * d);

    bool rg = g->requires_grad(a.id) || g->requires_grad(b.id);
    int ia = a.id, ib = b.id, io = static_cast<int>(g->size());
    return g->make(std::move(out), rg, [g, ia, ib, io, n, d, hw, st] {
        const Tensor<S>& av = g->val(ia);
        const Tensor<S>& bv = g->val(ib);
        const bool na = g->requires_grad(ia), nb = g->requires_grad(ib);
        for (int64_t l = 0; l < hw; ++l) {
            StrMutMap ga(na ? g->grad_buf(ia).data() + l : nullptr, na ? n : 0, d, st);
            StrMutMap gb(nb ? g->grad_buf(ib).data() + l : nullptr, nb ? n : 0, d, st);
            detail::corr_backward_one<S>(StrMap(av.data() + l, n, d, st),
                                         StrMap(bv.data() + l, n, d, st),
                                         g->val(io).data() + l * d * d,
                                         g->grad(io).data() + l * d * d, na ? &ga : nullptr,
                                         nb ? &gb : nullptr);
        }
    });
}

// Barlow-Twins penalty of correlation matrices: sum_i (1 - C_ii)^2 +
// lambda * sum_{i != j} C_ij^2, averaged over the leading axis when the
// input is a batch of matrices. Scalar output.
template <typename S>
Var<S> bt_penalty(Var<S> c, double lambda) {
    Graph<S>* g = c.g;
    const Tensor<S>& cv = c.val();
    assert((cv.shape.rank == 2 && cv.shape[0] == cv.shape[1]) ||
           (cv.shape.rank == 3 && cv.shape[1] == cv.shape[2]));
    const int64_t p = cv.shape.rank == 3 ? cv.shape[0] : 1;
    const int64_t d = cv.shape.rank == 3 ? cv.shape[1] : cv.shape[0];
    const S lam = static_cast<S>(lambda);

    S acc = 0;
    for (int64_t k = 0; k < p; ++k) {
        const S* m = cv.data() + k * d * d;
        for (int64_t i = 0; i < d; ++i)
            for (int64_t j = 0; j < d; ++j) {
                const S cij = m[i * d + j];
                acc += (i == j) ? (S(1) - cij) * (S(1) - cij) : lam * cij * cij;
            }
    }
    Tensor<S> out(Shape{1});
    out[0] = acc / static_cast<S>(p);

    int ic = c.id, io = static_cast<int>(g->size());
    return g->make(std::move(out), g->requires_grad(ic), [g, ic, io, p, d, lam] {
        if (!g->requires_grad(ic)) return;
        const S seed = g->grad(io)[0] / static_cast<S>(p);
        const Tensor<S>& cv = g->val(ic);
        Tensor<S>& gc = g->grad_buf(ic);
        for (int64_t k = 0; k < p; ++k) {
            const S* m = cv.data() + k * d * d;
            S* gm = gc.data() + k * d * d;
            for (int64_t i = 0; i < d; ++i)
                for (int64_t j = 0; j < d; ++j) {
                    const S cij = m[i * d + j];
                    gm[i * d + j] += seed * ((i == j) ? S(-2) * (S(1) - cij) : S(2) * lam * cij);
                }
        }
    });
}

// Standard Barlow Twins loss over embedding batches (N, D).
template <typename S>
Var<S> bt_loss(Var<S> a, Var<S> b, double lambda) {
    return bt_penalty(cross_correlation_batchwise(a, b), lambda);
}

// Geometry Barlow Twins loss over feature maps (N, D, H, W): the spatial
// axis is the batch dimension, penalties averaged over samples.
template <typename S>
Var<S> gbt_loss(Var<S> a, Var<S> b, double lambda) {
    return bt_penalty(cross_correlation_spatial(a, b), lambda);
}

// Mean squared elementwise difference; the distance-metric alternative to
// the geometry loss.
template <typename S>
Var<S> mse_geometry_loss(Var<S> a, Var<S> b) {
    Var<S> diff = sub(a, b);
    return mean_all(mul(diff, diff));
}

} // namespace alto
