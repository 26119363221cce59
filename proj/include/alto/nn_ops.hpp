#pragma once

#include <Eigen/Dense>

#include "alto/autodiff.hpp"

namespace alto {

namespace detail {

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapRM = Eigen::Map<MatRM<S>>;
template <typename S>
using CMapRM = Eigen::Map<const MatRM<S>>;

// im2col for one sample: col is (Cin*kh*kw) x (Ho*Wo), row-major.
// Out-of-image taps are zero (spatial zero padding).
template <typename S>
void im2col(const Tensor<S>& x, int64_t n, int kh, int kw, int stride, int pad,
            int64_t ho, int64_t wo, S* col) {
    const int64_t ci_n = x.shape[1], h = x.shape[2], w = x.shape[3];
    const int64_t ocols = ho * wo;
    int64_t row = 0;
    for (int64_t ci = 0; ci < ci_n; ++ci) {
        for (int dy = 0; dy < kh; ++dy) {
            for (int dx = 0; dx < kw; ++dx, ++row) {
                S* dst = col + row * ocols;
                for (int64_t oy = 0; oy < ho; ++oy) {
                    const int64_t iy = oy * stride - pad + dy;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst + oy * wo, dst + (oy + 1) * wo, S(0));
                        continue;
                    }
                    const S* src = &x.at(n, ci, iy, 0);
                    for (int64_t ox = 0; ox < wo; ++ox) {
                        const int64_t ix = ox * stride - pad + dx;
                        dst[oy * wo + ox] = (ix >= 0 && ix < w) ? src[ix] : S(0);
                    }
                }
            }
        }
    }
}

// Scatter-add the columns back into the input gradient.
template <typename S>
void col2im_accum(const S* col, int64_t n, int kh, int kw, int stride, int pad,
                  int64_t ho, int64_t wo, Tensor<S>& gx) {
    const int64_t ci_n = gx.shape[1], h = gx.shape[2], w = gx.shape[3];
    const int64_t ocols = ho * wo;
    int64_t row = 0;
    for (int64_t ci = 0; ci < ci_n; ++ci) {
        for (int dy = 0; dy < kh; ++dy) {
            for (int dx = 0; dx < kw; ++dx, ++row) {
                const S* src = col + row * ocols;
                for (int64_t oy = 0; oy < ho; ++oy) {
                    const int64_t iy = oy * stride - pad + dy;
                    if (iy < 0 || iy >= h) continue;
                    S* dst = &gx.at(n, ci, iy, 0);
                    for (int64_t ox = 0; ox < wo; ++ox) {
                        const int64_t ix = ox * stride - pad + dx;
                        if (ix >= 0 && ix < w) dst[ix] += src[oy * wo + ox];
                    }
                }
            }
        }
    }
}

} // namespace detail

// 2D convolution, NCHW, square-kernel weights (Cout, Cin, kh, kw), optional
// bias (Cout). Differentiable w.r.t. input, weights, and bias.
template <typename S>
Var<S> conv2d(Var<S> x, Var<S> w, Var<S> bias, int stride, int pad) {
    Graph<S>* g = x.g;
    const Tensor<S>& xv = x.val();
    const Tensor<S>& wv = w.val();
    const int64_t n_n = xv.shape[0], cin = xv.shape[1], h = xv.shape[2], wdt = xv.shape[3];
    const int64_t cout = wv.shape[0];
    const int kh = static_cast<int>(wv.shape[2]), kw = static_cast<int>(wv.shape[3]);
    assert(wv.shape[1] == cin);
    const int64_t ho = (h + 2 * pad - kh) / stride + 1;
    const int64_t wo = (wdt + 2 * pad - kw) / stride + 1;
    const int64_t k = cin * kh * kw;
    const int64_t ocols = ho * wo;

    Tensor<S> out(Shape{n_n, cout, ho, wo});
    {
        std::vector<S> col(static_cast<size_t>(k * ocols));
        detail::CMapRM<S> wm(wv.data(), cout, k);
        for (int64_t n = 0; n < n_n; ++n) {
            detail::im2col(xv, n, kh, kw, stride, pad, ho, wo, col.data());
            detail::CMapRM<S> cm(col.data(), k, ocols);
            detail::MapRM<S> om(&out.at(n, 0, 0, 0), cout, ocols);
            om.noalias() = wm * cm;
        }
    }
    const bool has_bias = bias.valid();
    if (has_bias) {
        const Tensor<S>& bv = bias.val();
        for (int64_t n = 0; n < n_n; ++n)
            for (int64_t co = 0; co < cout; ++co) {
                S* p = &out.at(n, co, 0, 0);
                const S b = bv[co];
                for (int64_t i = 0; i < ocols; ++i) p[i] += b;
            }
    }

    bool rg = g->requires_grad(x.id) || g->requires_grad(w.id) ||
              (has_bias && g->requires_grad(bias.id));
    int ix = x.id, iw = w.id, ib = has_bias ? bias.id : -1;
    int io = static_cast<int>(g->size());
    return g->make(std::move(out), rg, [g, ix, iw, ib, io, stride, pad, kh, kw, ho, wo, k, ocols] {
        const Tensor<S>& go = g->grad(io);
        const Tensor<S>& xv = g->val(ix);
        const Tensor<S>& wv = g->val(iw);
        const int64_t n_n = xv.shape[0];
        const int64_t cout = wv.shape[0];
        const bool need_x = g->requires_grad(ix);
        const bool need_w = g->requires_grad(iw);
        const bool need_b = ib >= 0 && g->requires_grad(ib);

        if (need_b) {
            Tensor<S>& gb = g->grad_buf(ib);
            for (int64_t n = 0; n < n_n; ++n)
                for (int64_t co = 0; co < cout; ++co) {
                    const S* p = &go.at(n, co, 0, 0);
                    S acc = 0;
                    for (int64_t i = 0; i < ocols; ++i) acc += p[i];
                    gb[co] += acc;
                }
        }
        if (!need_x && !need_w) return;

        std::vector<S> col(static_cast<size_t>(k * ocols));
        std::vector<S> dcol(need_x ? static_cast<size_t>(k * ocols) : 0);
        detail::CMapRM<S> wm(wv.data(), cout, k);
        Tensor<S>* gx = need_x ? &g->grad_buf(ix) : nullptr;
        Tensor<S>* gw = need_w ? &g->grad_buf(iw) : nullptr;
        for (int64_t n = 0; n < n_n; ++n) {
            detail::CMapRM<S> gom(&go.at(n, 0, 0, 0), cout, ocols);
            if (need_w) {
                detail::im2col(xv, n, kh, kw, stride, pad, ho, wo, col.data());
                detail::CMapRM<S> cm(col.data(), k, ocols);
                detail::MapRM<S> gwm(gw->data(), cout, k);
                gwm.noalias() += gom * cm.transpose();
            }
            if (need_x) {
                detail::MapRM<S> dcm(dcol.data(), k, ocols);
                dcm.noalias() = wm.transpose() * gom;
                detail::col2im_accum(dcol.data(), n, kh, kw, stride, pad, ho, wo, *gx);
            }
        }
    });
}

template <typename S>
Var<S> conv2d(Var<S> x, Var<S> w, int stride, int pad) {
    return conv2d(x, w, Var<S>{}, stride, pad);
}

// Per-sample, per-channel spatial standardization with affine parameters
// gamma, beta (both length C).
template <typename S>
Var<S> instance_norm(Var<S> x, Var<S> gamma, Var<S> beta, S eps = S(1e-5)) {
    Graph<S>* g = x.g;
    const Tensor<S>& xv = x.val();
    const int64_t n_n = xv.shape[0], c_n = xv.shape[1];
    const int64_t m = xv.shape[2] * xv.shape[3];
    const Tensor<S>& gv = gamma.val();
    const Tensor<S>& bv = beta.val();

    Tensor<S> out(xv.shape);
    // saved statistics for backward
    auto mean = std::make_shared<std::vector<S>>(static_cast<size_t>(n_n * c_n));
    auto istd = std::make_shared<std::vector<S>>(static_cast<size_t>(n_n * c_n));
    for (int64_t n = 0; n < n_n; ++n)
        for (int64_t c = 0; c < c_n; ++c) {
            const S* p = &xv.at(n, c, 0, 0);
            S mu = 0;
            for (int64_t i = 0; i < m; ++i) mu += p[i];
            mu /= static_cast<S>(m);
            S var = 0;
            for (int64_t i = 0; i < m; ++i) {
                const S d = p[i] - mu;
                var += d * d;
            }
            var /= static_cast<S>(m);
            const S is = S(1) / std::sqrt(var + eps);
            (*mean)[static_cast<size_t>(n * c_n + c)] = mu;
            (*istd)[static_cast<size_t>(n * c_n + c)] = is;
            S* q = &out.at(n, c, 0, 0);
            const S ga = gv[c], be = bv[c];
            for (int64_t i = 0; i < m; ++i) q[i] = ga * (p[i] - mu) * is + be;
        }

    bool rg = g->requires_grad(x.id) || g->requires_grad(gamma.id) || g->requires_grad(beta.id);
    int ix = x.id, ig = gamma.id, ibt = beta.id, io = static_cast<int>(g->size());
    return g->make(std::move(out), rg, [g, ix, ig, ibt, io, mean, istd, m, c_n] {
        const Tensor<S>& go = g->grad(io);
        const Tensor<S>& xv = g->val(ix);
        const Tensor<S>& gv = g->val(ig);
        const int64_t n_n = xv.shape[0];
        const bool need_x = g->requires_grad(ix);
        const bool need_g = g->requires_grad(ig);
        const bool need_b = g->requires_grad(ibt);
        Tensor<S>* gx = need_x ? &g->grad_buf(ix) : nullptr;
        Tensor<S>* gg = need_g ? &g->grad_buf(ig) : nullptr;
        Tensor<S>* gb = need_b ? &g->grad_buf(ibt) : nullptr;
        const S inv_m = S(1) / static_cast<S>(m);
        for (int64_t n = 0; n < n_n; ++n)
            for (int64_t c = 0; c < c_n; ++c) {
                const S mu = (*mean)[static_cast<size_t>(n * c_n + c)];
                const S is = (*istd)[static_cast<size_t>(n * c_n + c)];
                const S* xp = &xv.at(n, c, 0, 0);
                const S* gop = &go.at(n, c, 0, 0);
                if (need_b) {
                    S acc = 0;
                    for (int64_t i = 0; i < m; ++i) acc += gop[i];
                    (*gb)[c] += acc;
                }
                if (need_g) {
                    S acc = 0;
                    for (int64_t i = 0; i < m; ++i) acc += gop[i] * (xp[i] - mu) * is;
                    (*gg)[c] += acc;
                }
                if (need_x) {
                    // dx = gamma*istd * (dy - mean(dy) - xhat*mean(dy*xhat))
                    S s1 = 0, s2 = 0;
                    for (int64_t i = 0; i < m; ++i) {
                        const S xh = (xp[i] - mu) * is;
                        s1 += gop[i];
                        s2 += gop[i] * xh;
                    }
                    s1 *= inv_m;
                    s2 *= inv_m;
                    const S k = gv[c] * is;
                    S* gxp = &gx->at(n, c, 0, 0);
                    for (int64_t i = 0; i < m; ++i) {
                        const S xh = (xp[i] - mu) * is;
                        gxp[i] += k * (gop[i] - s1 - xh * s2);
                    }
                }
            }
    });
}

// Fully connected layer: y = x * w^T + b, x is (N, Din), w is (Dout, Din).
template <typename S>
Var<S> linear(Var<S> x, Var<S> w, Var<S> b) {
    Graph<S>* g = x.g;
    const Tensor<S>& xv = x.val();
    const Tensor<S>& wv = w.val();
    const Tensor<S>& bv = b.val();
    const int64_t n = xv.shape[0], din = xv.shape[1], dout = wv.shape[0];
    assert(wv.shape[1] == din && bv.numel() == dout);

    Tensor<S> out(Shape{n, dout});
    {
        detail::CMapRM<S> xm(xv.data(), n, din);
        detail::CMapRM<S> wm(wv.data(), dout, din);
        detail::MapRM<S> om(out.data(), n, dout);
        om.noalias() = xm * wm.transpose();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < dout; ++j) out.at(i, j) += bv[j];
    }
    bool rg = g->requires_grad(x.id) || g->requires_grad(w.id) || g->requires_grad(b.id);
    int ix = x.id, iw = w.id, ib = b.id, io = static_cast<int>(g->size());
    return g->make(std::move(out), rg, [g, ix, iw, ib, io, n, din, dout] {
        const Tensor<S>& go = g->grad(io);
        detail::CMapRM<S> gom(go.data(), n, dout);
        if (g->requires_grad(ix)) {
            detail::CMapRM<S> wm(g->val(iw).data(), dout, din);
            detail::MapRM<S> gxm(g->grad_buf(ix).data(), n, din);
            gxm.noalias() += gom * wm;
        }
        if (g->requires_grad(iw)) {
            detail::CMapRM<S> xm(g->val(ix).data(), n, din);
            detail::MapRM<S> gwm(g->grad_buf(iw).data(), dout, din);
            gwm.noalias() += gom.transpose() * xm;
        }
        if (g->requires_grad(ib)) {
            Tensor<S>& gb = g->grad_buf(ib);
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < dout; ++j) gb[j] += go.at(i, j);
        }
    });
}

// Global average pooling: (N, C, H, W) -> (N, C).
template <typename S>
Var<S> gap(Var<S> x) {
    Graph<S>* g = x.g;
    const Tensor<S>& xv = x.val();
    const int64_t n_n = xv.shape[0], c_n = xv.shape[1];
    const int64_t m = xv.shape[2] * xv.shape[3];
    Tensor<S> out(Shape{n_n, c_n});
    for (int64_t n = 0; n < n_n; ++n)
        for (int64_t c = 0; c < c_n; ++c) {
            const S* p = &xv.at(n, c, 0, 0);
            S acc = 0;
            for (int64_t i = 0; i < m; ++i) acc += p[i];
            out.at(n, c) = acc / static_cast<S>(m);
        }
    int ix = x.id, io = static_cast<int>(g->size());
    return g->make(std::move(out), g->requires_grad(ix), [g, ix, io, m] {
        if (!g->requires_grad(ix)) return;
        const Tensor<S>& go = g->grad(io);
        Tensor<S>& gx = g->grad_buf(ix);
        const int64_t n_n = gx.shape[0], c_n = gx.shape[1];
        const S inv_m = S(1) / static_cast<S>(m);
        for (int64_t n = 0; n < n_n; ++n)
            for (int64_t c = 0; c < c_n; ++c) {
                const S v = go.at(n, c) * inv_m;
                S* p = &gx.at(n, c, 0, 0);
                for (int64_t i = 0; i < m; ++i) p[i] += v;
            }
    });
}

// Adaptive average pooling onto a gh x gw cell grid, flattened:
// (N, C, H, W) -> (N, C*gh*gw). Cell i spans rows [i*H/gh, (i+1)*H/gh), so
// any H >= gh works; gh = gw = 1 reduces to global average pooling. Unlike
// gap, the coarse cell layout keeps where-in-the-image information.
template <typename S>
Var<S> pooled_grid(Var<S> x, int64_t gh, int64_t gw) {
    Graph<S>* g = x.g;
    const Tensor<S>& xv = x.val();
    const int64_t n_n = xv.shape[0], c_n = xv.shape[1], h = xv.shape[2], w = xv.shape[3];
    assert(gh >= 1 && gw >= 1 && h >= gh && w >= gw);
    const auto lo = [](int64_t i, int64_t size, int64_t cells) { return i * size / cells; };

    Tensor<S> out(Shape{n_n, c_n * gh * gw});
    for (int64_t n = 0; n < n_n; ++n)
        for (int64_t c = 0; c < c_n; ++c)
            for (int64_t cy = 0; cy < gh; ++cy)
                for (int64_t cx = 0; cx < gw; ++cx) {
                    const int64_t y0 = lo(cy, h, gh), y1 = lo(cy + 1, h, gh);
                    const int64_t x0 = lo(cx, w, gw), x1 = lo(cx + 1, w, gw);
                    S acc = 0;
                    for (int64_t y = y0; y < y1; ++y)
                        for (int64_t xx = x0; xx < x1; ++xx) acc += xv.at(n, c, y, xx);
                    out.at(n, c * gh * gw + cy * gw + cx) =
                        acc / static_cast<S>((y1 - y0) * (x1 - x0));
                }

    int ix = x.id, io = static_cast<int>(g->size());
    return g->make(std::move(out), g->requires_grad(ix), [g, ix, io, gh, gw, lo] {
        if (!g->requires_grad(ix)) return;
        const Tensor<S>& go = g->grad(io);
        Tensor<S>& gx = g->grad_buf(ix);
        const int64_t n_n = gx.shape[0], c_n = gx.shape[1], h = gx.shape[2], w = gx.shape[3];
        for (int64_t n = 0; n < n_n; ++n)
            for (int64_t c = 0; c < c_n; ++c)
                for (int64_t cy = 0; cy < gh; ++cy)
                    for (int64_t cx = 0; cx < gw; ++cx) {
                        const int64_t y0 = lo(cy, h, gh), y1 = lo(cy + 1, h, gh);
                        const int64_t x0 = lo(cx, w, gw), x1 = lo(cx + 1, w, gw);
                        const S v = go.at(n, c * gh * gw + cy * gw + cx) /
                                    static_cast<S>((y1 - y0) * (x1 - x0));
                        for (int64_t y = y0; y < y1; ++y)
                            for (int64_t xx = x0; xx < x1; ++xx) gx.at(n, c, y, xx) += v;
                    }
    });
}

// Channel concatenation of two NCHW tensors with equal N, H, W.
template <typename S>
Var<S> concat_channels(Var<S> a, Var<S> b) {
    Graph<S>* g = a.g;
    const Tensor<S>& av = a.val();
    const Tensor<S>& bv = b.val();
    const int64_t n_n = av.shape[0], ca = av.shape[1], cb = bv.shape[1];
    const int64_t m = av.shape[2] * av.shape[3];
    assert(bv.shape[0] == n_n && bv.shape[2] == av.shape[2] && bv.shape[3] == av.shape[3]);
    Tensor<S> out(Shape{n_n, ca + cb, av.shape[2], av.shape[3]});
    for (int64_t n = 0; n < n_n; ++n) {
        std::copy(&av.at(n, 0, 0, 0), &av.at(n, 0, 0, 0) + ca * m, &out.at(n, 0, 0, 0));
        std::copy(&bv.at(n, 0, 0, 0), &bv.at(n, 0, 0, 0) + cb * m, &out.at(n, ca, 0, 0));
    }
    bool rg = g->requires_grad(a.id) || g->requires_grad(b.id);
    int ia = a.id, ib = b.id, io = static_cast<int>(g->size());
    return g->make(std::move(out), rg, [g, ia, ib, io, ca, cb, m] {
        const Tensor<S>& go = g->grad(io);
        const int64_t n_n = go.shape[0];
        if (g->requires_grad(ia)) {
            Tensor<S>& ga = g->grad_buf(ia);
            for (int64_t n = 0; n < n_n; ++n) {
                const S* src = &go.at(n, 0, 0, 0);
                S* dst = &ga.at(n, 0, 0, 0);
                for (int64_t i = 0; i < ca * m; ++i) dst[i] += src[i];
            }
        }
        if (g->requires_grad(ib)) {
            Tensor<S>& gb = g->grad_buf(ib);
            for (int64_t n = 0; n < n_n; ++n) {
                const S* src = &go.at(n, ca, 0, 0);
                S* dst = &gb.at(n, 0, 0, 0);
                for (int64_t i = 0; i < cb * m; ++i) dst[i] += src[i];
            }
        }
    });
}

} // namespace alto
