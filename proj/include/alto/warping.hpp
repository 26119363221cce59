#pragma once

#include <cmath>

#include "alto/geometry.hpp"
#include "alto/tensor.hpp"

namespace alto {

// Channels x height x width raster with values in [0, 1].
template <typename S>
struct Image {
    Tensor<S> data; // (C, H, W)

    Image() = default;
    explicit Image(Tensor<S> t) : data(std::move(t)) {
        if (data.shape.rank != 3)
            throw Error("image tensor must be rank 3 (C,H,W)");
    }
    Image(int64_t channels, int64_t height, int64_t width)
        : data(Shape{channels, height, width}) {}

    int64_t channels() const { return data.shape[0]; }
    int64_t height() const { return data.shape[1]; }
    int64_t width() const { return data.shape[2]; }

    S& at(int64_t c, int64_t y, int64_t x) { return data.at(c, y, x, 0); }
    const S& at(int64_t c, int64_t y, int64_t x) const { return data.at(c, y, x, 0); }

    // Domain invariants for corpus images; kernels below accept any size.
    void validate() const {
        if (channels() < 1 || height() < 8 || width() < 8)
            throw DataError("image must have >= 1 channel and size >= 8x8");
        if (!data.all_finite()) throw DataError("image contains non-finite values");
    }
};

namespace detail {

// One bilinear fetch with zero padding outside [0,W-1]x[0,H-1].
// Plane is a (H, W) row-major slice.
template <typename S>
inline S bilerp(const S* plane, int64_t h, int64_t w, double gx, double gy) {
    const double fx = std::floor(gx);
    const double fy = std::floor(gy);
    const int64_t x0 = static_cast<int64_t>(fx);
    const int64_t y0 = static_cast<int64_t>(fy);
    const S wx = static_cast<S>(gx - fx);
    const S wy = static_cast<S>(gy - fy);
    auto tap = [&](int64_t yy, int64_t xx) -> S {
        return (xx >= 0 && xx < w && yy >= 0 && yy < h) ? plane[yy * w + xx] : S(0);
    };
    const S v00 = tap(y0, x0), v01 = tap(y0, x0 + 1);
    const S v10 = tap(y0 + 1, x0), v11 = tap(y0 + 1, x0 + 1);
    return (S(1) - wy) * ((S(1) - wx) * v00 + wx * v01) +
           wy * ((S(1) - wx) * v10 + wx * v11);
}

} // namespace detail

// grid[., y, x] holds the source coordinate that output location (x, y)
// samples: apply_homography(invert(h), (x, y)). Backward-warping convention.
inline Tensor<double> make_sampling_grid(const Homography& h, int64_t out_h, int64_t out_w) {
    const Eigen::Matrix3d inv = invert(h).matrix();
    Tensor<double> grid(Shape{2, out_h, out_w});
    for (int64_t y = 0; y < out_h; ++y)
        for (int64_t x = 0; x < out_w; ++x) {
            const double xd = static_cast<double>(x);
            const double yd = static_cast<double>(y);
            const double sw = inv(2, 0) * xd + inv(2, 1) * yd + inv(2, 2);
            if (std::abs(sw) <= 1e-12)
                throw PointAtInfinityError("sampling grid divisor vanished");
            grid.at(0, y, x, 0) = (inv(0, 0) * xd + inv(0, 1) * yd + inv(0, 2)) / sw;
            grid.at(1, y, x, 0) = (inv(1, 0) * xd + inv(1, 1) * yd + inv(1, 2)) / sw;
        }
    return grid;
}

// Bilinear resampling of every channel at the grid coordinates.
// Coordinates outside the image contribute zeros.
template <typename S>
Tensor<S> bilinear_sample(const Tensor<S>& img, const Tensor<double>& grid) {
    if (img.shape.rank != 3 || grid.shape.rank != 3 || grid.shape[0] != 2)
        throw Error("bilinear_sample expects img (C,H,W) and grid (2,Ho,Wo)");
    const int64_t c_n = img.shape[0], h = img.shape[1], w = img.shape[2];
    const int64_t ho = grid.shape[1], wo = grid.shape[2];
    Tensor<S> out(Shape{c_n, ho, wo});
    for (int64_t c = 0; c < c_n; ++c) {
        const S* plane = &img.at(c, 0, 0, 0);
        for (int64_t y = 0; y < ho; ++y)
            for (int64_t x = 0; x < wo; ++x)
                out.at(c, y, x, 0) = detail::bilerp(plane, h, w,
                                                    grid.at(0, y, x, 0), grid.at(1, y, x, 0));
    }
    return out;
}

template <typename S>
Image<S> bilinear_sample(const Image<S>& img, const Tensor<double>& grid) {
    return Image<S>(bilinear_sample(img.data, grid));
}

// Backward warp of an image by a homography; output size equals input size
// unless overridden.
template <typename S>
Image<S> warp_image(const Image<S>& img, const Homography& h,
                    int64_t out_h = -1, int64_t out_w = -1) {
    if (out_h < 0) out_h = img.height();
    if (out_w < 0) out_w = img.width();
    return bilinear_sample(img, make_sampling_grid(h, out_h, out_w));
}

// Peak signal-to-noise ratio over an interior crop, in dB; unit peak.
template <typename S>
double psnr(const Image<S>& a, const Image<S>& b, int64_t margin = 0) {
    double se = 0.0;
    int64_t count = 0;
    for (int64_t c = 0; c < a.channels(); ++c)
        for (int64_t y = margin; y < a.height() - margin; ++y)
            for (int64_t x = margin; x < a.width() - margin; ++x) {
                const double d = static_cast<double>(a.at(c, y, x)) -
                                 static_cast<double>(b.at(c, y, x));
                se += d * d;
                ++count;
            }
    const double mse = se / static_cast<double>(count);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

} // namespace alto
