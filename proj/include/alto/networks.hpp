#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "alto/autodiff.hpp"
#include "alto/diff_geometry.hpp"
#include "alto/errors.hpp"
#include "alto/nn_ops.hpp"
#include "alto/rng.hpp"

namespace alto {

// Role tags for the trainable parameter partition: the registration network,
// the encoder, and the projector are optimized by different phases.
enum class Role { registration, encoder, projector };

inline const char* role_name(Role r) {
    switch (r) {
        case Role::registration: return "registration";
        case Role::encoder: return "encoder";
        default: return "projector";
    }
}

// A named trainable tensor. Parameters enter a tape as leaves; the leaf is
// cached per graph so that every use within one tape shares storage (weight
// sharing is object identity on the Param).
template <typename S>
struct Param {
    std::string name;
    Role role;
    Tensor<S> value;

    int graph_stamp = -1;
    int leaf_id = -1;
    bool tracked = false;

    Var<S> use(Graph<S>& g, bool requires_grad) {
        if (graph_stamp == g.stamp()) {
            assert(tracked == requires_grad && "one Param must not mix tracking modes in a tape");
            return {&g, leaf_id};
        }
        Var<S> v = g.leaf(value, requires_grad);
        graph_stamp = g.stamp();
        leaf_id = v.id;
        tracked = requires_grad;
        return v;
    }

    // Gradient accumulated for this parameter in g, or nullptr when the
    // parameter was unused, untracked, or received no gradient.
    const Tensor<S>* grad_in(const Graph<S>& g) const {
        if (graph_stamp != g.stamp() || !tracked || !g.grad_live(leaf_id)) return nullptr;
        return &g.grad(leaf_id);
    }
};

enum class RegistrationKind { one_shot, iterative };

// Static architecture description shared by all three networks.
struct NetworkConfig {
    int64_t input_channels = 1;
    int64_t base_width = 32;
    std::vector<int> encoder_stages{1, 2};
    std::vector<int> projector_stages{3};
    bool include_stage4 = false;
    std::vector<int> blocks_per_stage{1, 1, 1, 1};
    RegistrationKind registration_kind = RegistrationKind::one_shot;
    int iterations = 6;
    int64_t image_h = 128;
    int64_t image_w = 128;

    // Channel width of residual stage s (1-based): doubles per stage.
    int64_t stage_width(int s) const { return base_width << (s - 1); }

    std::vector<int> projector_stages_effective() const {
        std::vector<int> p = projector_stages;
        if (include_stage4 && (p.empty() || p.back() != 4)) p.push_back(4);
        return p;
    }

    int64_t encoder_out_channels() const {
        return encoder_stages.empty() ? base_width : stage_width(encoder_stages.back());
    }
    int64_t projector_out_channels() const {
        const std::vector<int> p = projector_stages_effective();
        return p.empty() ? encoder_out_channels() : stage_width(p.back());
    }
    // Stem halves the resolution; every stage beyond stage 1 halves again.
    int64_t encoder_downsample() const {
        int64_t f = 2;
        for (int s : encoder_stages)
            if (s != 1) f *= 2;
        return f;
    }

    void validate() const {
        if (input_channels < 1) throw ConfigError("input_channels must be >= 1");
        if (base_width < 4) throw ConfigError("base_width must be >= 4");
        if (encoder_stages.empty()) throw ConfigError("encoder needs at least one stage");
        std::vector<int> all = encoder_stages;
        for (int s : projector_stages_effective()) all.push_back(s);
        for (size_t i = 0; i < all.size(); ++i) {
            if (all[i] < 1 || all[i] > 4) throw ConfigError("stage indices must lie in 1..4");
            if (all[i] != static_cast<int>(i) + 1)
                throw ConfigError("encoder and projector stages must be disjoint, contiguous, "
                                  "and ordered starting at stage 1");
        }
        if (blocks_per_stage.size() < all.size())
            throw ConfigError("blocks_per_stage must cover every configured stage");
        for (int b : blocks_per_stage)
            if (b < 1) throw ConfigError("blocks_per_stage entries must be >= 1");
        if (registration_kind == RegistrationKind::iterative && iterations < 1)
            throw ConfigError("iterations must be >= 1");
        if (image_h < 16 || image_w < 16 || image_h % 4 != 0 || image_w % 4 != 0)
            throw ConfigError("image size must be >= 16 and divisible by 4");
    }
};

// ---------------------------------------------------------------------------
// Layer modules. Convolutions followed by instance norm omit their bias.

template <typename S>
struct Conv2dLayer {
    Param<S> w;
    Param<S> b;
    int stride, pad;
    bool has_bias;

    Conv2dLayer(const std::string& name, Role role, int64_t cin, int64_t cout, int64_t k,
                int stride_, int pad_, Rng& rng, bool bias = false)
        : w{name + ".weight", role, Tensor<S>(Shape{cout, cin, k, k})},
          b{name + ".bias", role, Tensor<S>(Shape{cout})},
          stride(stride_), pad(pad_), has_bias(bias) {
        const double std = std::sqrt(2.0 / static_cast<double>(cin * k * k));
        for (int64_t i = 0; i < w.value.numel(); ++i)
            w.value[i] = static_cast<S>(rng.normal() * std);
    }

    Var<S> forward(Graph<S>& g, Var<S> x, bool track) {
        Var<S> wv = w.use(g, track);
        return has_bias ? conv2d(x, wv, b.use(g, track), stride, pad)
                        : conv2d(x, wv, stride, pad);
    }
    void collect(std::vector<Param<S>*>& out) {
        out.push_back(&w);
        if (has_bias) out.push_back(&b);
    }
};

template <typename S>
struct InstanceNormLayer {
    Param<S> gamma;
    Param<S> beta;

    InstanceNormLayer(const std::string& name, Role role, int64_t c)
        : gamma{name + ".gamma", role, Tensor<S>(Shape{c}, S(1))},
          beta{name + ".beta", role, Tensor<S>(Shape{c})} {}

    Var<S> forward(Graph<S>& g, Var<S> x, bool track) {
        return instance_norm(x, gamma.use(g, track), beta.use(g, track));
    }
    void collect(std::vector<Param<S>*>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }
};

template <typename S>
struct LinearLayer {
    Param<S> w;
    Param<S> b;

    LinearLayer(const std::string& name, Role role, int64_t din, int64_t dout, Rng& rng,
                bool zero_init = false)
        : w{name + ".weight", role, Tensor<S>(Shape{dout, din})},
          b{name + ".bias", role, Tensor<S>(Shape{dout})} {
        if (!zero_init) {
            const double std = std::sqrt(2.0 / static_cast<double>(din));
            for (int64_t i = 0; i < w.value.numel(); ++i)
                w.value[i] = static_cast<S>(rng.normal() * std);
        }
    }

    Var<S> forward(Graph<S>& g, Var<S> x, bool track) {
        return linear(x, w.use(g, track), b.use(g, track));
    }
    void collect(std::vector<Param<S>*>& out) {
        out.push_back(&w);
        out.push_back(&b);
    }
};

// conv-norm-relu, conv-norm, plus skip (1x1 projection when shape changes),
// relu after the sum.
template <typename S>
struct ResidualBlock {
    Conv2dLayer<S> conv1;
    InstanceNormLayer<S> norm1;
    Conv2dLayer<S> conv2;
    InstanceNormLayer<S> norm2;
    std::optional<Conv2dLayer<S>> skip_conv;
    std::optional<InstanceNormLayer<S>> skip_norm;

    ResidualBlock(const std::string& name, Role role, int64_t cin, int64_t cout, int stride,
                  Rng& rng)
        : conv1(name + ".conv1", role, cin, cout, 3, stride, 1, rng),
          norm1(name + ".norm1", role, cout),
          conv2(name + ".conv2", role, cout, cout, 3, 1, 1, rng),
          norm2(name + ".norm2", role, cout) {
        if (stride != 1 || cin != cout) {
            skip_conv.emplace(name + ".skip", role, cin, cout, 1, stride, 0, rng);
            skip_norm.emplace(name + ".skip_norm", role, cout);
        }
    }

    Var<S> forward(Graph<S>& g, Var<S> x, bool track) {
        Var<S> y = relu(norm1.forward(g, conv1.forward(g, x, track), track));
        y = norm2.forward(g, conv2.forward(g, y, track), track);
        Var<S> s = skip_conv ? skip_norm->forward(g, skip_conv->forward(g, x, track), track) : x;
        return relu(add(y, s));
    }
    void collect(std::vector<Param<S>*>& out) {
        conv1.collect(out);
        norm1.collect(out);
        conv2.collect(out);
        norm2.collect(out);
        if (skip_conv) {
            skip_conv->collect(out);
            skip_norm->collect(out);
        }
    }
};

namespace detail {

// Residual stage s: first block carries the stride (1 for stage 1, 2 after)
// and the width change; remaining blocks preserve shape.
template <typename S>
void build_stage(std::vector<ResidualBlock<S>>& blocks, const std::string& prefix, Role role,
                 int stage, int64_t cin, const NetworkConfig& cfg, Rng& rng) {
    const int64_t cout = cfg.stage_width(stage);
    const int stride = stage == 1 ? 1 : 2;
    const int n = cfg.blocks_per_stage[static_cast<size_t>(stage - 1)];
    blocks.emplace_back(prefix + ".stage" + std::to_string(stage) + ".block0", role, cin, cout,
                        stride, rng);
    for (int i = 1; i < n; ++i)
        blocks.emplace_back(prefix + ".stage" + std::to_string(stage) + ".block" +
                                std::to_string(i),
                            role, cout, cout, 1, rng);
}

} // namespace detail

// ---------------------------------------------------------------------------

// Residual encoder: stride-2 stem convolution (no max pooling afterwards)
// followed by the configured stages. Defaults give features at 1/4 of the
// input resolution.
template <typename S>
class Encoder {
public:
    Encoder(const NetworkConfig& cfg, Rng& rng)
        : stem_("encoder.stem", Role::encoder, cfg.input_channels, cfg.base_width, 3, 2, 1, rng),
          stem_norm_("encoder.stem_norm", Role::encoder, cfg.base_width) {
        int64_t c = cfg.base_width;
        for (int s : cfg.encoder_stages) {
            detail::build_stage(blocks_, "encoder", Role::encoder, s, c, cfg, rng);
            c = cfg.stage_width(s);
        }
        out_channels_ = c;
    }

    Var<S> forward(Graph<S>& g, Var<S> img, bool track) {
        Var<S> x = relu(stem_norm_.forward(g, stem_.forward(g, img, track), track));
        for (auto& b : blocks_) x = b.forward(g, x, track);
        return x;
    }

    int64_t out_channels() const { return out_channels_; }

    void collect(std::vector<Param<S>*>& out) {
        stem_.collect(out);
        stem_norm_.collect(out);
        for (auto& b : blocks_) b.collect(out);
    }

private:
    Conv2dLayer<S> stem_;
    InstanceNormLayer<S> stem_norm_;
    std::vector<ResidualBlock<S>> blocks_;
    int64_t out_channels_ = 0;
};

// Projector: the remaining residual stages, then global average pooling.
// No fully connected layer; output is one vector per sample.
template <typename S>
class Projector {
public:
    Projector(const NetworkConfig& cfg, Rng& rng) {
        int64_t c = cfg.encoder_out_channels();
        for (int s : cfg.projector_stages_effective()) {
            detail::build_stage(blocks_, "projector", Role::projector, s, c, cfg, rng);
            c = cfg.stage_width(s);
        }
        out_dim_ = c;
    }

    Var<S> forward(Graph<S>& g, Var<S> f, bool track) {
        Var<S> x = f;
        for (auto& b : blocks_) x = b.forward(g, x, track);
        return gap(x);
    }

    // Feature-map variant for the no-pooling modality-loss ablation: same
    // stages, spatial axes kept.
    Var<S> forward_map(Graph<S>& g, Var<S> f, bool track) {
        Var<S> x = f;
        for (auto& b : blocks_) x = b.forward(g, x, track);
        return x;
    }

    int64_t out_dim() const { return out_dim_; }

    void collect(std::vector<Param<S>*>& out) {
        for (auto& b : blocks_) b.collect(out);
    }

private:
    std::vector<ResidualBlock<S>> blocks_;
    int64_t out_dim_ = 0;
};

// Registration network: a residual tower over the channel-concatenated
// (moving, fixed) pair, quadrant average pooling (2x2 cell grid — global
// pooling would average away where a misalignment was seen, and the four
// corner offsets need exactly that), and a zero-initialized linear head
// emitting 8 corner-offset values (order TL,TR,BL,BR as dx,dy pairs).
// Zero initialization makes the initial estimate the identity warp. The
// iterative variant re-applies the same tower to the re-warped moving
// image and accumulates offsets, returning every cumulative estimate.
template <typename S>
class RegistrationNet {
public:
    RegistrationNet(const NetworkConfig& cfg, Rng& rng)
        : kind_(cfg.registration_kind),
          iterations_(cfg.registration_kind == RegistrationKind::iterative ? cfg.iterations : 1),
          image_h_(cfg.image_h),
          image_w_(cfg.image_w),
          stem_("registration.stem", Role::registration, 2 * cfg.input_channels, cfg.base_width,
                3, 2, 1, rng),
          stem_norm_("registration.stem_norm", Role::registration, cfg.base_width),
          head_(make_tower(cfg, rng)) {}

    // One offset batch (N, 8) per estimate: a single entry for one_shot,
    // K cumulative entries for iterative.
    std::vector<Var<S>> forward(Graph<S>& g, Var<S> moving, Var<S> fixed, bool track) {
        std::vector<Var<S>> estimates;
        Var<S> cum = tower(g, moving, fixed, track);
        estimates.push_back(cum);
        const CornerSet corners =
            CornerSet::of_image(static_cast<int>(image_w_), static_cast<int>(image_h_));
        for (int k = 1; k < iterations_; ++k) {
            Var<S> h = dlt_homography(cum, corners);
            Var<S> grid = sampling_grid(mat3_inverse(h), image_h_, image_w_);
            Var<S> rewarped = grid_sample(moving, grid);
            cum = add(cum, tower(g, rewarped, fixed, track));
            estimates.push_back(cum);
        }
        return estimates;
    }

    void collect(std::vector<Param<S>*>& out) {
        stem_.collect(out);
        stem_norm_.collect(out);
        for (auto& b : blocks_) b.collect(out);
        head_.collect(out);
    }

    int iterations() const { return iterations_; }

private:
    // Builds the downsampling blocks (doubling width up to 4x base) until
    // the spatial size reaches 4, then returns the zero-initialized head.
    LinearLayer<S> make_tower(const NetworkConfig& cfg, Rng& rng) {
        int64_t c = cfg.base_width;
        int64_t side = std::min(cfg.image_h, cfg.image_w) / 2;
        int i = 0;
        while (side > 4) {
            const int64_t cout = std::min(c * 2, cfg.base_width * 4);
            blocks_.emplace_back("registration.block" + std::to_string(i++), Role::registration,
                                 c, cout, 2, rng);
            c = cout;
            side /= 2;
        }
        return LinearLayer<S>("registration.head", Role::registration, c * 4, 8, rng,
                              /*zero_init=*/true);
    }

    Var<S> tower(Graph<S>& g, Var<S> moving, Var<S> fixed, bool track) {
        Var<S> x = concat_channels(moving, fixed);
        x = relu(stem_norm_.forward(g, stem_.forward(g, x, track), track));
        for (auto& b : blocks_) x = b.forward(g, x, track);
        return head_.forward(g, pooled_grid(x, 2, 2), track);
    }

    RegistrationKind kind_;
    int iterations_;
    int64_t image_h_, image_w_;
    Conv2dLayer<S> stem_;
    InstanceNormLayer<S> stem_norm_;
    std::vector<ResidualBlock<S>> blocks_;
    LinearLayer<S> head_;
};

// The three networks plus the role-tagged parameter partition.
template <typename S>
class Model {
    // Declared ahead of the networks: member construction consumes both.
    NetworkConfig cfg_;
    Rng rng_;

public:
    Model(NetworkConfig cfg, uint64_t seed)
        : cfg_(validated(std::move(cfg))),
          rng_(Rng::derive(seed, 0x6e657473)),
          encoder(cfg_, rng_),
          projector(cfg_, rng_),
          registration(cfg_, rng_) {}

    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const NetworkConfig& config() const { return cfg_; }

    std::vector<Param<S>*> params(Role role) {
        std::vector<Param<S>*> all = all_params(), out;
        for (Param<S>* p : all)
            if (p->role == role) out.push_back(p);
        return out;
    }

    std::vector<Param<S>*> all_params() {
        std::vector<Param<S>*> out;
        encoder.collect(out);
        projector.collect(out);
        registration.collect(out);
        return out;
    }

    Encoder<S> encoder;
    Projector<S> projector;
    RegistrationNet<S> registration;

private:
    static NetworkConfig validated(NetworkConfig c) {
        c.validate();
        return c;
    }
};

// Collapse diagnostics for a feature map (N, C, H, W):
//   first  — mean over (n, c) of the variance over the spatial axes;
//   second — mean over (c, h, w) of the variance across the batch.
// A collapsed (constant) encoder output drives both to zero.
template <typename S>
std::pair<double, double> collapse_statistics(const Tensor<S>& f) {
    assert(f.shape.rank == 4);
    const int64_t n = f.shape[0], c = f.shape[1], hw = f.shape[2] * f.shape[3];

    double spatial = 0.0;
    for (int64_t i = 0; i < n * c; ++i) {
        const S* p = f.data() + i * hw;
        double mean = 0.0;
        for (int64_t k = 0; k < hw; ++k) mean += static_cast<double>(p[k]);
        mean /= static_cast<double>(hw);
        double var = 0.0;
        for (int64_t k = 0; k < hw; ++k) {
            const double d = static_cast<double>(p[k]) - mean;
            var += d * d;
        }
        spatial += var / static_cast<double>(hw);
    }
    spatial /= static_cast<double>(n * c);

    double batch = 0.0;
    const int64_t chw = c * hw;
    for (int64_t k = 0; k < chw; ++k) {
        double mean = 0.0;
        for (int64_t i = 0; i < n; ++i) mean += static_cast<double>(f.data()[i * chw + k]);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            const double d = static_cast<double>(f.data()[i * chw + k]) - mean;
            var += d * d;
        }
        batch += var / static_cast<double>(n);
    }
    batch /= static_cast<double>(chw);

    return {spatial, batch};
}

} // namespace alto
