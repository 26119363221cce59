#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "alto/errors.hpp"
#include "alto/geometry.hpp"
#include "alto/image_io.hpp"
#include "alto/rng.hpp"
#include "alto/warping.hpp"

namespace alto {

// A registration sample: align the moving image onto the fixed one. The
// truth homography, when known, maps moving-frame points into fixed-frame
// coordinates (apply_homography convention).
struct ImagePair {
    Image<float> moving;
    Image<float> fixed;
    std::optional<Homography> truth;
    std::string id;
};

// Training view of a sample: deliberately has no truth member, so training
// code cannot read ground truth even by accident.
struct TrainPair {
    Image<float> moving;
    Image<float> fixed;
    std::string id;
};

// ---------------------------------------------------------------------------
// Modality transforms: value-space only, geometry untouched.

enum class Modality { identity, invert, edge_magnitude, gamma_posterize };

inline Modality parse_modality(const std::string& name) {
    if (name == "identity") return Modality::identity;
    if (name == "invert") return Modality::invert;
    if (name == "edge_magnitude") return Modality::edge_magnitude;
    if (name == "gamma_posterize") return Modality::gamma_posterize;
    throw ConfigError("unknown modality transform '" + name + "'");
}

inline const char* modality_name(Modality m) {
    switch (m) {
        case Modality::identity: return "identity";
        case Modality::invert: return "invert";
        case Modality::edge_magnitude: return "edge_magnitude";
        default: return "gamma_posterize";
    }
}

inline Image<float> modality_transform(const Image<float>& img, Modality kind) {
    const int64_t c_n = img.channels(), h = img.height(), w = img.width();
    Image<float> out(c_n, h, w);
    switch (kind) {
        case Modality::identity:
            out = img;
            break;
        case Modality::invert:
            for (int64_t i = 0; i < img.data.numel(); ++i) out.data[i] = 1.0f - img.data[i];
            break;
        case Modality::edge_magnitude: {
            // Sobel magnitude, replicate border, scaled into unit range.
            auto pix = [&](int64_t c, int64_t y, int64_t x) {
                return static_cast<double>(img.at(c, std::clamp<int64_t>(y, 0, h - 1),
                                                  std::clamp<int64_t>(x, 0, w - 1)));
            };
            for (int64_t c = 0; c < c_n; ++c)
                for (int64_t y = 0; y < h; ++y)
                    for (int64_t x = 0; x < w; ++x) {
                        const double gx = (pix(c, y - 1, x + 1) + 2 * pix(c, y, x + 1) +
                                           pix(c, y + 1, x + 1)) -
                                          (pix(c, y - 1, x - 1) + 2 * pix(c, y, x - 1) +
                                           pix(c, y + 1, x - 1));
                        const double gy = (pix(c, y + 1, x - 1) + 2 * pix(c, y + 1, x) +
                                           pix(c, y + 1, x + 1)) -
                                          (pix(c, y - 1, x - 1) + 2 * pix(c, y - 1, x) +
                                           pix(c, y - 1, x + 1));
                        out.at(c, y, x) = static_cast<float>(
                            std::min(std::sqrt(gx * gx + gy * gy) / 4.0, 1.0));
                    }
            break;
        }
        case Modality::gamma_posterize:
            // Square-root gamma then 8 quantization levels.
            for (int64_t i = 0; i < img.data.numel(); ++i) {
                const double y = std::sqrt(std::clamp(static_cast<double>(img.data[i]), 0.0, 1.0));
                out.data[i] = static_cast<float>(std::round(y * 7.0) / 7.0);
            }
            break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic pair generation.

struct GenerationConfig {
    int64_t patch_size = 128;
    double rho = 32.0; // max corner perturbation, px
    std::string modality_a = "identity";
    std::string modality_b = "identity";
    uint64_t seed = 0;
    int64_t count = 0;        // pairs to generate
    int64_t source_size = 0;  // procedural source side; 0 = patch + 2*margin + 32
    int64_t source_count = 8; // distinct procedural textures

    void validate() const {
        if (patch_size < 16) throw ConfigError("patch_size must be >= 16");
        if (rho < 0.0 || !(rho < static_cast<double>(patch_size) / 2.0))
            throw ConfigError("perturbation rho must satisfy 0 <= rho < patch_size/2");
        if (count < 0) throw ConfigError("count must be >= 0");
        if (source_count < 1) throw ConfigError("source_count must be >= 1");
        parse_modality(modality_a);
        parse_modality(modality_b);
    }

    int64_t margin() const { return static_cast<int64_t>(std::ceil(rho)); }
};

// Snaps unit-range values onto the 8-bit lattice so that image files
// round-trip bit-identically.
inline void quantize_8bit(Image<float>& img) {
    for (int64_t i = 0; i < img.data.numel(); ++i) {
        const double v = std::clamp(static_cast<double>(img.data[i]), 0.0, 1.0);
        img.data[i] = static_cast<float>(std::lround(v * 255.0)) / 255.0f;
    }
}

// One synthetic sample from a source texture: crop a patch with >= rho
// margin, perturb its corners uniformly in [-rho, rho]^2, and cut the moving
// image from the correspondingly warped source. The fixed image is the
// untouched patch; the truth homography maps patch-local moving coordinates
// onto fixed coordinates (corner k lands exactly on corner k + offset k).
// Modality transforms are applied after the geometric step, then both sides
// are quantized to 8-bit levels.
inline ImagePair generate_pair(const Image<float>& source, const GenerationConfig& cfg, Rng& rng,
                               const std::string& id = "pair") {
    source.validate();
    const int64_t p = cfg.patch_size;
    const int64_t m = cfg.margin();
    if (source.width() < p + 2 * m || source.height() < p + 2 * m)
        throw DataError("source image smaller than patch_size + 2*rho margins");
    if (source.channels() != 1) throw DataError("pair generation expects grayscale sources");

    const int64_t ox = m + rng.uniform_int(source.width() - p - 2 * m + 1);
    const int64_t oy = m + rng.uniform_int(source.height() - p - 2 * m + 1);
    const CornerSet corners = CornerSet::of_image(static_cast<int>(p), static_cast<int>(p));

    std::optional<Homography> truth;
    for (int attempt = 0; attempt < 100 && !truth; ++attempt) {
        FourPointOffsets offs;
        for (size_t k = 0; k < 4; ++k) {
            offs.d[k].x = rng.uniform(-cfg.rho, cfg.rho);
            offs.d[k].y = rng.uniform(-cfg.rho, cfg.rho);
        }
        try {
            truth = dlt_solve(corners, offs);
        } catch (const DegenerateConfigError&) {
        }
    }
    if (!truth) throw DataError("corner perturbation rejected 100 times (degenerate draws)");

    // Fixed side: exact pixel copy. Moving side: for each patch pixel u,
    // sample the source at truth(u) + patch origin (one interpolation).
    Image<float> fixed(1, p, p), moving(1, p, p);
    const float* splane = &source.at(0, 0, 0);
    for (int64_t y = 0; y < p; ++y)
        for (int64_t x = 0; x < p; ++x) {
            fixed.at(0, y, x) = source.at(0, oy + y, ox + x);
            const Vec2 s = apply_homography(*truth, Vec2{static_cast<double>(x),
                                                         static_cast<double>(y)});
            moving.at(0, y, x) = detail::bilerp(splane, source.height(), source.width(),
                                                s.x + static_cast<double>(ox),
                                                s.y + static_cast<double>(oy));
        }

    moving = modality_transform(moving, parse_modality(cfg.modality_a));
    fixed = modality_transform(fixed, parse_modality(cfg.modality_b));
    quantize_8bit(moving);
    quantize_8bit(fixed);
    return ImagePair{std::move(moving), std::move(fixed), truth, id};
}

namespace detail {

// Smoothstep-interpolated lattice of uniform random values ("value noise").
// `grid` counts lattice cells across the shorter image side.
inline double value_noise(const std::vector<double>& lattice, int64_t cols, double u, double v) {
    const auto fade = [](double t) { return t * t * (3.0 - 2.0 * t); };
    const int64_t iu = static_cast<int64_t>(std::floor(u));
    const int64_t iv = static_cast<int64_t>(std::floor(v));
    const double fu = fade(u - static_cast<double>(iu));
    const double fv = fade(v - static_cast<double>(iv));
    const auto at = [&](int64_t r, int64_t c) { return lattice[static_cast<size_t>(r * cols + c)]; };
    const double top = at(iv, iu) + (at(iv, iu + 1) - at(iv, iu)) * fu;
    const double bot = at(iv + 1, iu) + (at(iv + 1, iu + 1) - at(iv + 1, iu)) * fu;
    return top + (bot - top) * fv;
}

}  // namespace detail

// Procedural texture in [0.02, 0.98]: gentle multi-octave value-noise shading
// crossed by a few dark contour filaments (level sets of the noise field,
// rendered at a fixed pixel width). The filaments are the point: they are
// sparse, aperiodic landmarks that every registered modality transform keeps
// in place and keeps salient — inversion turns dark lines into bright ones,
// gradient magnitude re-draws them directly — so differently transformed
// views of the same patch still share strong structure at the same pixels.
// Smooth fields without such landmarks train poorly across modality pairs:
// per-channel feature correlation then barely changes with alignment, and
// the warp's zero-padding border dominates the geometry loss instead.
inline Image<float> make_source_texture(Rng& rng, int64_t height, int64_t width) {
    const int64_t side = std::min(height, width);
    std::vector<double> u(static_cast<size_t>(height * width), 0.0);

    // Octaves: lattice cells of side/4, side/8, ... never finer than 4 px.
    double amp = 1.0, amp_sum = 0.0;
    for (int64_t grid = 4; side / grid >= 4; grid *= 2) {
        const int64_t cols = grid + 2;
        std::vector<double> lattice(static_cast<size_t>(cols * cols));
        for (double& cell : lattice) cell = rng.uniform(0.0, 1.0);
        const double su = static_cast<double>(grid) / static_cast<double>(width);
        const double sv = static_cast<double>(grid) / static_cast<double>(height);
        for (int64_t y = 0; y < height; ++y)
            for (int64_t x = 0; x < width; ++x)
                u[static_cast<size_t>(y * width + x)] +=
                    amp * detail::value_noise(lattice, cols, static_cast<double>(x) * su,
                                              static_cast<double>(y) * sv);
        amp_sum += amp;
        amp *= 0.6;
    }
    double lo = 1e30, hi = -1e30;
    for (double v : u) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (double& v : u) v = hi > lo ? (v - lo) / (hi - lo) : 0.5;

    // Three contour levels; lines drawn ~1.4 px wide using the local field
    // gradient, so their rendered width is uniform and resampling-friendly.
    constexpr double kLineWidthPx = 1.4, kLineDepth = 0.5, kShadeAmp = 0.25;
    std::array<double, 3> levels;
    for (double& c : levels) c = rng.uniform(0.1, 0.9);

    Image<float> img(1, height, width);
    for (int64_t y = 0; y < height; ++y)
        for (int64_t x = 0; x < width; ++x) {
            const double v = u[static_cast<size_t>(y * width + x)];
            const int64_t xm = std::max<int64_t>(0, x - 1), xp = std::min(width - 1, x + 1);
            const int64_t ym = std::max<int64_t>(0, y - 1), yp = std::min(height - 1, y + 1);
            const double gx = (u[static_cast<size_t>(y * width + xp)] -
                               u[static_cast<size_t>(y * width + xm)]) /
                              static_cast<double>(xp - xm);
            const double gy = (u[static_cast<size_t>(yp * width + x)] -
                               u[static_cast<size_t>(ym * width + x)]) /
                              static_cast<double>(yp - ym);
            const double grad = std::max(1e-6, std::hypot(gx, gy));
            double dark = 0.0;
            for (double c : levels) {
                const double d_px = std::abs(v - c) / grad;
                if (d_px < kLineWidthPx) {
                    const double t = d_px / kLineWidthPx;
                    dark = std::max(dark, 1.0 - t * t);
                }
            }
            const double out = 0.55 + kShadeAmp * (v - 0.5) - kLineDepth * dark;
            img.at(0, y, x) = static_cast<float>(std::clamp(out, 0.02, 0.98));
        }

    // One fine detail octave (≈4 px cells) on top, clamped into range.
    if (side / 4 >= 2) {
        const int64_t grid = side / 4, cols = grid + 2;
        std::vector<double> lattice(static_cast<size_t>(cols * cols));
        for (double& cell : lattice) cell = rng.uniform(0.0, 1.0);
        const double su = static_cast<double>(grid) / static_cast<double>(width);
        const double sv = static_cast<double>(grid) / static_cast<double>(height);
        for (int64_t y = 0; y < height; ++y)
            for (int64_t x = 0; x < width; ++x) {
                const double v =
                    static_cast<double>(img.at(0, y, x)) +
                    0.18 * (detail::value_noise(lattice, cols, static_cast<double>(x) * su,
                                                static_cast<double>(y) * sv) -
                            0.5);
                img.at(0, y, x) = static_cast<float>(std::clamp(v, 0.02, 0.98));
            }
    }
    return img;
}

// Generates cfg.count pairs by cycling the given sources; each sample draws
// from its own seeded stream, so generation order never changes results.
inline std::vector<ImagePair> generate_corpus(const std::vector<Image<float>>& sources,
                                              const GenerationConfig& cfg) {
    cfg.validate();
    if (sources.empty()) throw DataError("no source images supplied");
    std::vector<ImagePair> pairs;
    pairs.reserve(static_cast<size_t>(cfg.count));
    char buf[32];
    for (int64_t i = 0; i < cfg.count; ++i) {
        std::snprintf(buf, sizeof buf, "pair_%06lld", static_cast<long long>(i));
        Rng rng = Rng::derive(cfg.seed, 0x70616972u + static_cast<uint64_t>(i));
        pairs.push_back(generate_pair(sources[static_cast<size_t>(i) % sources.size()], cfg, rng,
                                      buf));
    }
    return pairs;
}

// Same, with procedural source textures derived from the seed.
inline std::vector<ImagePair> generate_corpus(const GenerationConfig& cfg) {
    cfg.validate();
    const int64_t side =
        cfg.source_size > 0 ? cfg.source_size : cfg.patch_size + 2 * cfg.margin() + 32;
    std::vector<Image<float>> sources;
    sources.reserve(static_cast<size_t>(cfg.source_count));
    for (int64_t s = 0; s < cfg.source_count; ++s) {
        Rng rng = Rng::derive(cfg.seed, 0x74657874u + static_cast<uint64_t>(s));
        sources.push_back(make_source_texture(rng, side, side));
    }
    return generate_corpus(sources, cfg);
}

// ---------------------------------------------------------------------------
// Corpus serialization: root/{A,B}/<id>.pgm, root/truth/<id>.txt (9 numbers,
// row-major), root/manifest.json.

inline void write_truth(const std::string& path, const Homography& h) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write truth record " + path);
    const std::array<double, 9> m = h.row_major();
    out << std::setprecision(17);
    for (size_t i = 0; i < 9; ++i) out << m[i] << (i + 1 < 9 ? " " : "\n");
}

inline Homography read_truth(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open truth record " + path);
    std::array<double, 9> m;
    for (double& v : m)
        if (!(in >> v)) throw DataError("malformed truth record " + path + " (want 9 numbers)");
    return Homography::from_row_major(m);
}

inline void write_corpus(const std::string& root, const std::vector<ImagePair>& pairs,
                         const GenerationConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(root) / "A");
    fs::create_directories(fs::path(root) / "B");
    fs::create_directories(fs::path(root) / "truth");

    nlohmann::ordered_json manifest;
    manifest["format_version"] = 1;
    manifest["layout"] = "generated_manifest";
    manifest["generation"] = {{"patch_size", cfg.patch_size},
                              {"rho", cfg.rho},
                              {"modality_a", cfg.modality_a},
                              {"modality_b", cfg.modality_b},
                              {"seed", cfg.seed},
                              {"count", cfg.count},
                              {"source_size", cfg.source_size},
                              {"source_count", cfg.source_count}};
    std::vector<std::string> ids;
    for (const ImagePair& pr : pairs) {
        write_image((fs::path(root) / "A" / (pr.id + ".pgm")).string(), pr.moving);
        write_image((fs::path(root) / "B" / (pr.id + ".pgm")).string(), pr.fixed);
        if (pr.truth) write_truth((fs::path(root) / "truth" / (pr.id + ".txt")).string(), *pr.truth);
        ids.push_back(pr.id);
    }
    manifest["identifiers"] = ids;

    std::ofstream out(fs::path(root) / "manifest.json");
    if (!out) throw DataError("cannot write manifest under " + root);
    out << manifest.dump(2) << "\n";
}

enum class CorpusLayout { paired_dirs, generated_manifest };

inline CorpusLayout parse_layout(const std::string& name) {
    if (name == "paired_dirs") return CorpusLayout::paired_dirs;
    if (name == "generated_manifest") return CorpusLayout::generated_manifest;
    throw ConfigError("unknown corpus layout '" + name + "'");
}

namespace detail {

inline ImagePair load_one(const std::filesystem::path& root, const std::string& id,
                          const std::string& ext_a, const std::string& ext_b,
                          bool truth_required) {
    namespace fs = std::filesystem;
    ImagePair pr;
    pr.id = id;
    pr.moving = read_image((root / "A" / (id + ext_a)).string());
    pr.fixed = read_image((root / "B" / (id + ext_b)).string());
    if (pr.moving.height() != pr.fixed.height() || pr.moving.width() != pr.fixed.width())
        throw DataError("pair '" + id + "' has mismatched image sizes");
    const fs::path tp = root / "truth" / (id + ".txt");
    if (fs::exists(tp)) pr.truth = read_truth(tp.string());
    else if (truth_required) throw DataError("missing truth record for pair '" + id + "'");
    return pr;
}

} // namespace detail

// Loads a corpus in deterministic (lexicographic-by-identifier) order.
//
// paired_dirs: matches files of root/A and root/B by filename stem; a stem
// present on only one side is an orphan — reported into `warnings` when
// given, otherwise a DataError naming it. An empty corpus is a warning,
// never an error.
//
// generated_manifest: follows root/manifest.json as written by write_corpus
// (truth records required).
inline std::vector<ImagePair> load_corpus(const std::string& root_str, CorpusLayout layout,
                                          std::vector<std::string>* warnings = nullptr) {
    namespace fs = std::filesystem;
    const fs::path root(root_str);
    if (!fs::is_directory(root)) throw DataError("corpus root is not a directory: " + root_str);

    auto warn = [&](const std::string& msg) {
        if (warnings) warnings->push_back(msg);
        else std::fprintf(stderr, "warning: %s\n", msg.c_str());
    };

    std::vector<ImagePair> pairs;
    if (layout == CorpusLayout::generated_manifest) {
        std::ifstream in(root / "manifest.json");
        if (!in) throw DataError("missing manifest.json under " + root_str);
        nlohmann::json manifest;
        try {
            in >> manifest;
        } catch (const nlohmann::json::exception& e) {
            throw DataError("malformed manifest.json under " + root_str + ": " + e.what());
        }
        if (!manifest.contains("identifiers") || !manifest["identifiers"].is_array())
            throw DataError("manifest.json lacks an identifiers array in " + root_str);
        std::vector<std::string> ids = manifest["identifiers"].get<std::vector<std::string>>();
        std::sort(ids.begin(), ids.end());
        for (const std::string& id : ids)
            pairs.push_back(detail::load_one(root, id, ".pgm", ".pgm", /*truth_required=*/true));
        if (pairs.empty()) warn("corpus under " + root_str + " is empty");
        return pairs;
    }

    // paired_dirs: stem -> extension per side.
    auto scan = [&](const char* sub) {
        std::vector<std::pair<std::string, std::string>> found;
        const fs::path dir = root / sub;
        if (!fs::is_directory(dir)) throw DataError("missing corpus directory " + dir.string());
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file())
                found.emplace_back(e.path().stem().string(), e.path().extension().string());
        std::sort(found.begin(), found.end());
        return found;
    };
    const auto in_a = scan("A");
    const auto in_b = scan("B");

    size_t i = 0, j = 0;
    std::vector<std::string> orphans;
    while (i < in_a.size() || j < in_b.size()) {
        if (j >= in_b.size() || (i < in_a.size() && in_a[i].first < in_b[j].first)) {
            orphans.push_back("A/" + in_a[i].first + in_a[i].second);
            ++i;
        } else if (i >= in_a.size() || in_b[j].first < in_a[i].first) {
            orphans.push_back("B/" + in_b[j].first + in_b[j].second);
            ++j;
        } else {
            pairs.push_back(detail::load_one(root, in_a[i].first, in_a[i].second, in_b[j].second,
                                             /*truth_required=*/false));
            ++i, ++j;
        }
    }
    if (!orphans.empty()) {
        std::string msg = "unmatched corpus files:";
        for (const std::string& o : orphans) msg += " " + o;
        if (warnings) warnings->push_back(msg);
        else throw DataError(msg);
    }
    if (pairs.empty()) warn("corpus under " + root_str + " is empty");
    return pairs;
}

// ---------------------------------------------------------------------------
// Train/eval split. The train view is truth-free by type.

struct SplitResult {
    std::vector<TrainPair> train;
    std::vector<ImagePair> eval;
};

inline SplitResult split(const std::vector<ImagePair>& pairs, double train_fraction,
                         double eval_fraction, uint64_t seed) {
    if (!(train_fraction >= 0.0) || !(eval_fraction >= 0.0) ||
        std::abs(train_fraction + eval_fraction - 1.0) > 1e-9)
        throw ConfigError("split fractions must be nonnegative and sum to 1");

    std::vector<size_t> order(pairs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng = Rng::derive(seed, 0x73706c69u);
    rng.shuffle(order);

    const int64_t n_train = std::llround(train_fraction * static_cast<double>(pairs.size()));
    SplitResult out;
    for (size_t k = 0; k < order.size(); ++k) {
        const ImagePair& pr = pairs[order[k]];
        if (static_cast<int64_t>(k) < n_train)
            out.train.push_back(TrainPair{pr.moving, pr.fixed, pr.id});
        else
            out.eval.push_back(pr);
    }
    return out;
}

} // namespace alto
