#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include "json.hpp"

#include "alto/data.hpp"
#include "alto/geometry.hpp"
#include "alto/networks.hpp"

namespace alto {

template <typename S>
FourPointOffsets offsets_from_row(const S* row) {
    FourPointOffsets o;
    for (size_t k = 0; k < 4; ++k)
        o.d[k] = Vec2{static_cast<double>(row[2 * k]), static_cast<double>(row[2 * k + 1])};
    return o;
}

namespace detail {

// Stacks pair images into (N, C, H, W) batch tensors of the given scalar.
template <typename S, typename Pair>
void fill_pair_batch(const std::vector<Pair>& pairs, size_t begin, size_t end, Tensor<S>& moving,
                     Tensor<S>& fixed) {
    const int64_t n = static_cast<int64_t>(end - begin);
    const Image<float>& first = pairs[begin].moving;
    const Shape shape{n, first.channels(), first.height(), first.width()};
    moving = Tensor<S>(shape);
    fixed = Tensor<S>(shape);
    const int64_t chw = shape[1] * shape[2] * shape[3];
    for (int64_t i = 0; i < n; ++i) {
        const Pair& pr = pairs[begin + static_cast<size_t>(i)];
        if (pr.moving.data.shape != first.data.shape || pr.fixed.data.shape != first.data.shape)
            throw DataError("pair '" + pr.id + "' does not match the batch image shape");
        for (int64_t k = 0; k < chw; ++k) {
            moving[i * chw + k] = static_cast<S>(pr.moving.data[k]);
            fixed[i * chw + k] = static_cast<S>(pr.fixed.data[k]);
        }
    }
}

} // namespace detail

// Final corner-offset estimates for every pair, computed in deterministic
// batches without gradient tracking.
template <typename S>
std::vector<FourPointOffsets> predict_offsets(Model<S>& model, const std::vector<ImagePair>& pairs,
                                              int64_t batch_size = 16) {
    std::vector<FourPointOffsets> out;
    out.reserve(pairs.size());
    for (size_t begin = 0; begin < pairs.size(); begin += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(pairs.size(), begin + static_cast<size_t>(batch_size));
        Tensor<S> moving, fixed;
        detail::fill_pair_batch(pairs, begin, end, moving, fixed);
        Graph<S> g;
        Var<S> est = model.registration
                         .forward(g, g.constant(std::move(moving)), g.constant(std::move(fixed)),
                                  /*track=*/false)
                         .back();
        const Tensor<S>& ev = est.val();
        for (int64_t i = 0; i < ev.shape[0]; ++i)
            out.push_back(offsets_from_row(ev.data() + i * 8));
    }
    return out;
}

template <typename S>
std::vector<Homography> predict_homographies(Model<S>& model, const std::vector<ImagePair>& pairs,
                                             int64_t batch_size = 16) {
    if (pairs.empty()) return {};
    const CornerSet corners = CornerSet::of_image(static_cast<int>(pairs[0].moving.width()),
                                                  static_cast<int>(pairs[0].moving.height()));
    const std::vector<FourPointOffsets> offs = predict_offsets(model, pairs, batch_size);
    std::vector<Homography> hs;
    hs.reserve(offs.size());
    for (const FourPointOffsets& o : offs) hs.push_back(dlt_solve(corners, o));
    return hs;
}

inline std::vector<Homography> truths_of(const std::vector<ImagePair>& pairs) {
    std::vector<Homography> ts;
    ts.reserve(pairs.size());
    for (const ImagePair& pr : pairs) {
        if (!pr.truth) throw DataError("pair '" + pr.id + "' has no truth homography");
        ts.push_back(*pr.truth);
    }
    return ts;
}

// MACE of identity predictions: the no-warping baseline.
inline double identity_mace(const std::vector<ImagePair>& pairs) {
    const std::vector<Homography> ts = truths_of(pairs);
    const std::vector<Homography> ids(pairs.size(), Homography::identity());
    const CornerSet corners = CornerSet::of_image(static_cast<int>(pairs[0].moving.width()),
                                                  static_cast<int>(pairs[0].moving.height()));
    return mace(ts, ids, corners);
}

template <typename S>
double eval_mace(Model<S>& model, const std::vector<ImagePair>& pairs, int64_t batch_size = 16) {
    const CornerSet corners = CornerSet::of_image(static_cast<int>(pairs[0].moving.width()),
                                                  static_cast<int>(pairs[0].moving.height()));
    return mace(truths_of(pairs), predict_homographies(model, pairs, batch_size), corners);
}

// ---------------------------------------------------------------------------
// Evaluation report.

struct EvalReport {
    std::vector<std::string> ids;
    std::vector<double> ace;          // per-sample corner error of the prediction
    std::vector<double> baseline_ace; // per-sample corner error of identity
    std::vector<std::array<double, 9>> predicted; // row-major homographies
    double mace = 0.0;
    double baseline_mace = 0.0;
    std::string checkpoint_id;
    nlohmann::ordered_json config_echo;
    double wall_seconds = 0.0;
};

template <typename S>
EvalReport evaluate(Model<S>& model, const std::vector<ImagePair>& pairs,
                    const std::string& checkpoint_id, nlohmann::ordered_json config_echo,
                    int64_t batch_size = 16) {
    if (pairs.empty()) throw DataError("evaluation corpus is empty");
    const auto start = std::chrono::steady_clock::now();

    const CornerSet corners = CornerSet::of_image(static_cast<int>(pairs[0].moving.width()),
                                                  static_cast<int>(pairs[0].moving.height()));
    const std::vector<Homography> ts = truths_of(pairs);
    const std::vector<Homography> hs = predict_homographies(model, pairs, batch_size);
    const Homography id_h = Homography::identity();

    EvalReport r;
    r.checkpoint_id = checkpoint_id;
    r.config_echo = std::move(config_echo);
    for (size_t i = 0; i < pairs.size(); ++i) {
        r.ids.push_back(pairs[i].id);
        r.ace.push_back(ace(ts[i], hs[i], corners));
        r.baseline_ace.push_back(ace(ts[i], id_h, corners));
        r.predicted.push_back(hs[i].row_major());
        r.mace += r.ace.back();
        r.baseline_mace += r.baseline_ace.back();
    }
    r.mace /= static_cast<double>(pairs.size());
    r.baseline_mace /= static_cast<double>(pairs.size());
    r.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

inline void write_report_json(const std::string& path, const EvalReport& r) {
    nlohmann::ordered_json j;
    j["mace"] = r.mace;
    j["baseline_mace"] = r.baseline_mace;
    j["count"] = r.ids.size();
    j["checkpoint"] = r.checkpoint_id;
    j["wall_seconds"] = r.wall_seconds;
    j["config"] = r.config_echo;
    nlohmann::ordered_json samples = nlohmann::ordered_json::array();
    for (size_t i = 0; i < r.ids.size(); ++i) {
        nlohmann::ordered_json s;
        s["id"] = r.ids[i];
        s["ace"] = r.ace[i];
        s["baseline_ace"] = r.baseline_ace[i];
        s["predicted"] = r.predicted[i];
        samples.push_back(s);
    }
    j["samples"] = samples;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write report " + path);
    out << j.dump(2) << "\n";
}

inline void write_report_csv(const std::string& path, const EvalReport& r) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write report " + path);
    out << "id,ace,baseline_ace\n";
    out << std::setprecision(17);
    for (size_t i = 0; i < r.ids.size(); ++i)
        out << r.ids[i] << "," << r.ace[i] << "," << r.baseline_ace[i] << "\n";
}

// ---------------------------------------------------------------------------
// Figure-style visualization: the fixed image with the truth-warped center
// box in green and the prediction-warped box in red, plus a
// moving | fixed | warped strip.

// Axis-aligned square centered in a w x h frame, side = scale * min(w, h),
// corner order TL,TR,BL,BR.
inline std::array<Vec2, 4> center_box(int64_t w, int64_t h, double scale) {
    const double side = scale * static_cast<double>(std::min(w, h));
    const double cx = static_cast<double>(w - 1) / 2.0, cy = static_cast<double>(h - 1) / 2.0;
    const double r = side / 2.0;
    return {Vec2{cx - r, cy - r}, Vec2{cx + r, cy - r}, Vec2{cx - r, cy + r}, Vec2{cx + r, cy + r}};
}

inline std::array<Vec2, 4> warp_box(const Homography& h, const std::array<Vec2, 4>& box) {
    std::array<Vec2, 4> out;
    for (size_t k = 0; k < 4; ++k) out[k] = apply_homography(h, box[k]);
    return out;
}

namespace detail {

inline void draw_line(Image<float>& img, Vec2 a, Vec2 b, float r, float g, float bl) {
    // Integer Bresenham on rounded endpoints; out-of-frame pixels skipped.
    int64_t x0 = std::llround(a.x), y0 = std::llround(a.y);
    const int64_t x1 = std::llround(b.x), y1 = std::llround(b.y);
    const int64_t dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int64_t sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int64_t err = dx + dy;
    while (true) {
        if (x0 >= 0 && x0 < img.width() && y0 >= 0 && y0 < img.height()) {
            img.at(0, y0, x0) = r;
            img.at(1, y0, x0) = g;
            img.at(2, y0, x0) = bl;
        }
        if (x0 == x1 && y0 == y1) break;
        const int64_t e2 = 2 * err;
        if (e2 >= dy) err += dy, x0 += sx;
        if (e2 <= dx) err += dx, y0 += sy;
    }
}

inline void draw_quad(Image<float>& img, const std::array<Vec2, 4>& q, float r, float g,
                      float b) {
    // Corner order is TL,TR,BL,BR; the perimeter is TL-TR-BR-BL-TL.
    draw_line(img, q[0], q[1], r, g, b);
    draw_line(img, q[1], q[3], r, g, b);
    draw_line(img, q[3], q[2], r, g, b);
    draw_line(img, q[2], q[0], r, g, b);
}

} // namespace detail

// The overlay on the fixed image; truth box green, prediction box red.
inline Image<float> render_overlay(const ImagePair& pr, const Homography& pred,
                                   double box_scale = 0.5) {
    if (!pr.truth) throw DataError("pair '" + pr.id + "' has no truth homography");
    const int64_t h = pr.fixed.height(), w = pr.fixed.width();
    Image<float> canvas(3, h, w);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const float v = pr.fixed.at(0, y, x);
            canvas.at(0, y, x) = v;
            canvas.at(1, y, x) = v;
            canvas.at(2, y, x) = v;
        }
    const std::array<Vec2, 4> box = center_box(w, h, box_scale);
    detail::draw_quad(canvas, warp_box(*pr.truth, box), 0.0f, 1.0f, 0.0f);
    detail::draw_quad(canvas, warp_box(pred, box), 1.0f, 0.0f, 0.0f);
    return canvas;
}

// moving | fixed | warped-moving strip (grayscale).
inline Image<float> render_strip(const ImagePair& pr, const Homography& pred) {
    const int64_t h = pr.moving.height(), w = pr.moving.width();
    // warp_image backward-warps: output(u) samples moving at pred^-1(u),
    // which is exactly the moving image re-rendered in the fixed frame.
    const Image<float> warped = warp_image(pr.moving, pred);
    Image<float> strip(1, h, 3 * w);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            strip.at(0, y, x) = pr.moving.at(0, y, x);
            strip.at(0, y, w + x) = pr.fixed.at(0, y, x);
            strip.at(0, y, 2 * w + x) = warped.at(0, y, x);
        }
    return strip;
}

} // namespace alto
