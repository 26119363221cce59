#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "alto/checkpoint.hpp"
#include "alto/data.hpp"
#include "alto/diff_geometry.hpp"
#include "alto/eval.hpp"
#include "alto/losses.hpp"
#include "alto/networks.hpp"
#include "alto/optim.hpp"

namespace alto {

// Collapse detector thresholds. The offset test only fires when the probe
// misalignment is genuinely larger than a pixel, and only after a warm-up
// window so a freshly zero-initialized head is not mistaken for a collapsed
// one.
inline constexpr double kCollapseVarianceEps = 1e-6;
inline constexpr double kCollapseOffsetEps = 1e-3;
inline constexpr int64_t kCollapseWarmupSteps = 100;

struct TrainConfig {
    int64_t epochs = 200;
    int64_t batch_size = 16;
    double max_lr = 3e-4;
    double weight_decay = 1e-5;
    double lambda = 0.005;
    double geometry_grad_clip = 1.0;
    std::string optimizer = "adamw";
    std::string schedule = "one_cycle";
    std::string loss_geometry = "gbt";    // "gbt" | "mse"
    std::string modality_pooling = "gap"; // "gap" | "none"
    bool no_alternating = false;
    uint64_t seed = 0;
    double eval_fraction = 0.1;
    int64_t eval_every_epochs = 1;
    int64_t checkpoint_every_epochs = 1;

    void validate() const {
        if (epochs <= 0) throw ConfigError("epochs must be positive");
        if (batch_size <= 1) throw ConfigError("batch_size must be at least 2");
        if (!(max_lr > 0)) throw ConfigError("max_lr must be positive");
        if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be non-negative");
        if (!(lambda > 0)) throw ConfigError("lambda must be positive");
        if (!(geometry_grad_clip > 0)) throw ConfigError("geometry_grad_clip must be positive");
        if (optimizer != "adamw") throw ConfigError("unknown optimizer '" + optimizer + "'");
        if (schedule != "one_cycle") throw ConfigError("unknown schedule '" + schedule + "'");
        if (loss_geometry != "gbt" && loss_geometry != "mse")
            throw ConfigError("loss_geometry must be 'gbt' or 'mse'");
        if (modality_pooling != "gap" && modality_pooling != "none")
            throw ConfigError("modality_pooling must be 'gap' or 'none'");
        if (!(eval_fraction >= 0.0 && eval_fraction < 1.0))
            throw ConfigError("eval_fraction must be in [0, 1)");
        if (eval_every_epochs < 0) throw ConfigError("eval_every_epochs must be non-negative");
        if (checkpoint_every_epochs < 0)
            throw ConfigError("checkpoint_every_epochs must be non-negative");
    }
};

struct StepStats {
    double loss = 0.0;
    double lr = 0.0;
    double grad_norm = 0.0;
    bool collapse_flag = false;
    double spatial_variance = 0.0; // encoder output of the fixed image
    double mean_offset_px = 0.0;   // mean |component| of the final estimate
};

struct CollapseReport {
    bool flag = false;
    double spatial_variance = 0.0;
    double batch_variance = 0.0;
    double mean_offset_px = 0.0;
    double identity_mace = 0.0;
};

struct TrainResult {
    std::vector<std::string> metrics; // one serialized record per line
    double final_eval_mace = std::numeric_limits<double>::quiet_NaN();
    double identity_eval_mace = std::numeric_limits<double>::quiet_NaN();
    bool collapse_any = false;
    int64_t steps = 0;
};

// The alternating optimization loop: per mini-batch, a geometry step updates
// the registration parameters against frozen encoder features, then a
// representation step updates encoder and projector behind a frozen
// registration network. Two optimizers hold disjoint moments; one shared
// one-cycle schedule drives both.
template <typename S>
class Trainer {
public:
    struct Batch {
        Tensor<S> moving, fixed; // (N, C, H, W)
        int64_t size() const { return moving.shape[0]; }
    };

    Trainer(Model<S>& model, TrainConfig cfg)
        : model_(model),
          cfg_(validated(std::move(cfg))),
          corners_(CornerSet::of_image(static_cast<int>(model.config().image_w),
                                       static_cast<int>(model.config().image_h))),
          opt_theta_(model.params(Role::registration), cfg_.max_lr, cfg_.weight_decay),
          opt_repr_(repr_params(model), cfg_.max_lr, cfg_.weight_decay) {
        if (cfg_.no_alternating)
            opt_joint_.emplace(model.all_params(), cfg_.max_lr, cfg_.weight_decay);
    }

    const TrainConfig& config() const { return cfg_; }
    AdamW<S>& optimizer_theta() { return opt_theta_; }
    AdamW<S>& optimizer_repr() { return opt_repr_; }
    int64_t step_index() const { return t_; }

    void set_lr(double lr) {
        opt_theta_.set_lr(lr);
        opt_repr_.set_lr(lr);
        if (opt_joint_) opt_joint_->set_lr(lr);
    }

    Batch make_batch(const std::vector<TrainPair>& pairs, std::span<const size_t> idx) const {
        if (idx.size() < 2) throw DataError("mini-batch needs at least 2 pairs");
        const NetworkConfig& nc = model_.config();
        const Shape shape{static_cast<int64_t>(idx.size()), nc.input_channels, nc.image_h,
                          nc.image_w};
        Batch b{Tensor<S>(shape), Tensor<S>(shape)};
        const int64_t chw = shape[1] * shape[2] * shape[3];
        for (size_t i = 0; i < idx.size(); ++i) {
            const TrainPair& pr = pairs[idx[i]];
            if (pr.moving.data.shape != Shape{shape[1], shape[2], shape[3]} ||
                pr.fixed.data.shape != Shape{shape[1], shape[2], shape[3]})
                throw DataError("pair '" + pr.id + "' does not match the configured image shape");
            for (int64_t k = 0; k < chw; ++k) {
                b.moving[static_cast<int64_t>(i) * chw + k] = static_cast<S>(pr.moving.data[k]);
                b.fixed[static_cast<int64_t>(i) * chw + k] = static_cast<S>(pr.fixed.data[k]);
            }
        }
        return b;
    }

    // Geometry step: update the registration network against frozen encoder
    // features. Gradients reach the offsets through the differentiable warp;
    // encoder parameters stay untracked, so they receive none.
    StepStats gl_step(const Batch& b) {
        Graph<S> g;
        Var<S> moving = g.constant(b.moving);
        Var<S> fixed = g.constant(b.fixed);
        std::vector<Var<S>> ests = model_.registration.forward(g, moving, fixed, /*track=*/true);
        Var<S> fb = model_.encoder.forward(g, fixed, /*track=*/false);
        Var<S> total = geometry_loss(g, moving, fb, ests);

        const std::vector<Param<S>*> theta = model_.params(Role::registration);
        StepStats s = finish_phase(g, total, "geometry", theta, theta, opt_theta_);
        fill_collapse(s, fb.val(), ests.back().val());
        return s;
    }

    // Representation step: recompute the registration forward pass with the
    // just-updated parameters, untracked, and pull the encoder + projector
    // embeddings of the warped moving image toward those of the fixed one.
    StepStats marl_step(const Batch& b) {
        Graph<S> g;
        Var<S> moving = g.constant(b.moving);
        Var<S> fixed = g.constant(b.fixed);
        Var<S> est = model_.registration.forward(g, moving, fixed, /*track=*/false).back();
        Var<S> warped = warp_by_offsets(moving, est);
        Var<S> fa = model_.encoder.forward(g, warped, /*track=*/true);
        Var<S> fb = model_.encoder.forward(g, fixed, /*track=*/true);
        Var<S> loss = modality_loss(g, fa, fb);

        StepStats s = finish_phase(g, loss, "modality", repr_params(model_), {}, opt_repr_);
        fill_collapse(s, fb.val(), est.val());
        return s;
    }

    // Ablation: one step minimizing the sum of both losses over every
    // parameter at once. The geometry term sees tracked encoder features.
    StepStats joint_step(const Batch& b) {
        if (!opt_joint_) throw ConfigError("joint_step requires no_alternating");
        Graph<S> g;
        Var<S> moving = g.constant(b.moving);
        Var<S> fixed = g.constant(b.fixed);
        std::vector<Var<S>> ests = model_.registration.forward(g, moving, fixed, /*track=*/true);
        Var<S> fb = model_.encoder.forward(g, fixed, /*track=*/true);
        Var<S> geo = geometry_loss(g, moving, fb, ests);

        Var<S> warped = warp_by_offsets(moving, ests.back());
        Var<S> fa = model_.encoder.forward(g, warped, /*track=*/true);
        Var<S> total = add(geo, modality_loss(g, fa, fb));

        // The registration gradients keep the same elementwise clip as the
        // alternating geometry phase.
        StepStats s = finish_phase(g, total, "joint", model_.all_params(),
                                   model_.params(Role::registration), *opt_joint_);
        fill_collapse(s, fb.val(), ests.back().val());
        return s;
    }

    TrainResult train(const std::vector<ImagePair>& corpus, const std::string& out_dir = "",
                      nlohmann::ordered_json config_echo = nlohmann::ordered_json::object()) {
        SplitResult sp = split(corpus, 1.0 - cfg_.eval_fraction, cfg_.eval_fraction, cfg_.seed);
        if (sp.train.empty()) throw DataError("training split is empty");
        probe_identity_mace_ = sp.eval.empty() ? std::numeric_limits<double>::infinity()
                                               : identity_mace(sp.eval);

        const int64_t n = static_cast<int64_t>(sp.train.size());
        const int64_t full = n / cfg_.batch_size, rem = n % cfg_.batch_size;
        const int64_t batches = full + (rem >= 2 ? 1 : 0);
        if (batches == 0) throw DataError("no usable mini-batch (need at least 2 train pairs)");
        OneCycleSchedule sched(cfg_.max_lr, cfg_.epochs * batches);

        std::ofstream metrics_file;
        if (!out_dir.empty()) {
            std::filesystem::create_directories(out_dir);
            metrics_file.open(out_dir + "/metrics.jsonl");
            if (!metrics_file) throw DataError("cannot write metrics under " + out_dir);
        }
        TrainResult res;
        res.identity_eval_mace = sp.eval.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                 : probe_identity_mace_;
        auto record = [&](const nlohmann::ordered_json& j) {
            res.metrics.push_back(j.dump());
            if (metrics_file) metrics_file << res.metrics.back() << "\n" << std::flush;
        };
        auto step_record = [&](const char* phase, const StepStats& s) {
            nlohmann::ordered_json j;
            j["t"] = t_;
            j["phase"] = phase;
            j["loss"] = s.loss;
            j["lr"] = s.lr;
            j["grad_norm"] = s.grad_norm;
            j["collapse_flag"] = s.collapse_flag;
            record(j);
            res.collapse_any = res.collapse_any || s.collapse_flag;
        };

        std::vector<size_t> order(sp.train.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (int64_t e = 0; e < cfg_.epochs; ++e) {
            Rng shuf = Rng::derive(cfg_.seed, 0x62617463 + static_cast<uint64_t>(e));
            shuf.shuffle(order);
            for (int64_t bi = 0; bi < batches; ++bi) {
                const size_t begin = static_cast<size_t>(bi * cfg_.batch_size);
                const size_t end =
                    std::min(sp.train.size(), begin + static_cast<size_t>(cfg_.batch_size));
                Batch batch =
                    make_batch(sp.train, std::span<const size_t>(order).subspan(begin, end - begin));
                set_lr(sched.lr_at(t_));
                try {
                    if (cfg_.no_alternating) {
                        step_record("joint", joint_step(batch));
                    } else {
                        step_record("geometry", gl_step(batch));
                        step_record("modality", marl_step(batch));
                    }
                } catch (const NumericsError& err) {
                    throw NumericsError(std::string(err.what()) + " [epoch " + std::to_string(e) +
                                        ", batch " + std::to_string(bi) + "]");
                }
                ++t_;
            }
            const bool last = e + 1 == cfg_.epochs;
            if (!sp.eval.empty() && cfg_.eval_every_epochs > 0 &&
                ((e + 1) % cfg_.eval_every_epochs == 0 || last)) {
                const double m = eval_mace(model_, sp.eval, cfg_.batch_size);
                nlohmann::ordered_json j;
                j["epoch"] = e + 1;
                j["split"] = "eval";
                j["mace"] = m;
                record(j);
                res.final_eval_mace = m;
            }
            if (!out_dir.empty() && cfg_.checkpoint_every_epochs > 0 &&
                ((e + 1) % cfg_.checkpoint_every_epochs == 0 || last)) {
                save_checkpoint(out_dir + "/ckpt_epoch_" + std::to_string(e + 1) + ".ckpt",
                                model_, &opt_theta_, &opt_repr_, t_, config_echo);
            }
        }
        if (!out_dir.empty())
            save_checkpoint(out_dir + "/ckpt_final.ckpt", model_, &opt_theta_, &opt_repr_, t_,
                            config_echo);
        res.steps = t_;
        return res;
    }

private:
    static TrainConfig validated(TrainConfig c) {
        c.validate();
        return c;
    }

    static std::vector<Param<S>*> repr_params(Model<S>& m) {
        std::vector<Param<S>*> out = m.params(Role::encoder);
        std::vector<Param<S>*> proj = m.params(Role::projector);
        out.insert(out.end(), proj.begin(), proj.end());
        return out;
    }

    Var<S> warp_by_offsets(Var<S> moving, Var<S> offsets) {
        Var<S> h = dlt_homography(offsets, corners_);
        Var<S> grid = sampling_grid(mat3_inverse(h), model_.config().image_h,
                                    model_.config().image_w);
        return grid_sample(moving, grid);
    }

    // Mean geometry loss over the per-iteration estimates, each compared
    // against the same fixed-image features.
    Var<S> geometry_loss(Graph<S>& g, Var<S> moving, Var<S> fb,
                         const std::vector<Var<S>>& ests) {
        Var<S> total;
        for (size_t k = 0; k < ests.size(); ++k) {
            Var<S> warped = warp_by_offsets(moving, ests[k]);
            Var<S> fw = model_.encoder.forward(g, warped, /*track=*/false);
            Var<S> lk = cfg_.loss_geometry == "gbt"
                            ? gbt_loss(fw, fb, cfg_.lambda)
                            : mse_geometry_loss(fw, fb);
            total = k == 0 ? lk : add(total, lk);
        }
        return ests.size() > 1 ? scale(total, static_cast<S>(1.0 / static_cast<double>(
                                                  ests.size())))
                               : total;
    }

    Var<S> modality_loss(Graph<S>& g, Var<S> fa, Var<S> fb) {
        if (cfg_.modality_pooling == "gap") {
            Var<S> za = model_.projector.forward(g, fa, /*track=*/true);
            Var<S> zb = model_.projector.forward(g, fb, /*track=*/true);
            return bt_loss(za, zb, cfg_.lambda);
        }
        Var<S> za = model_.projector.forward_map(g, fa, /*track=*/true);
        Var<S> zb = model_.projector.forward_map(g, fb, /*track=*/true);
        return bt_penalty(cross_correlation_per_location(za, zb), cfg_.lambda);
    }

    // Shared tail of every phase: finiteness guard, backward, gradient
    // norm, elementwise clip of the listed subset, optimizer step.
    StepStats finish_phase(Graph<S>& g, Var<S> loss, const char* phase,
                           const std::vector<Param<S>*>& params,
                           const std::vector<Param<S>*>& clip_params, AdamW<S>& opt) {
        StepStats s;
        s.loss = static_cast<double>(loss.val()[0]);
        s.lr = opt.lr();
        if (!std::isfinite(s.loss))
            throw NumericsError(std::string("non-finite ") + phase + " loss at step " +
                                std::to_string(t_));
        g.backward(loss);
        s.grad_norm = grad_norm(g, params);
        if (!std::isfinite(s.grad_norm))
            throw NumericsError(std::string("non-finite ") + phase + " gradient at step " +
                                std::to_string(t_));
        if (!clip_params.empty()) clip_gradients(g, clip_params, cfg_.geometry_grad_clip);
        opt.step(g);
        return s;
    }

    void fill_collapse(StepStats& s, const Tensor<S>& fb, const Tensor<S>& offsets) {
        s.spatial_variance = collapse_statistics(fb).first;
        double acc = 0.0;
        for (int64_t i = 0; i < offsets.shape.numel(); ++i)
            acc += std::abs(static_cast<double>(offsets[i]));
        s.mean_offset_px = acc / static_cast<double>(offsets.shape.numel());
        const bool raw = s.spatial_variance < kCollapseVarianceEps ||
                         (s.mean_offset_px < kCollapseOffsetEps && probe_identity_mace_ > 1.0);
        s.collapse_flag = raw && t_ >= kCollapseWarmupSteps;
    }

    Model<S>& model_;
    TrainConfig cfg_;
    CornerSet corners_;
    AdamW<S> opt_theta_, opt_repr_;
    std::optional<AdamW<S>> opt_joint_;
    int64_t t_ = 0;
    double probe_identity_mace_ = std::numeric_limits<double>::infinity();
};

// Standalone collapse probe: encoder statistics plus prediction magnitudes
// over a labeled batch, with no warm-up masking.
template <typename S>
CollapseReport detect_collapse(Model<S>& model, const std::vector<ImagePair>& probe,
                               int64_t batch_size = 16) {
    if (probe.empty()) throw DataError("collapse probe is empty");
    CollapseReport r;
    r.identity_mace = identity_mace(probe);

    double var_s = 0.0, var_b = 0.0, offs = 0.0;
    int64_t chunks = 0, offn = 0;
    for (size_t begin = 0; begin < probe.size(); begin += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(probe.size(), begin + static_cast<size_t>(batch_size));
        Tensor<S> moving, fixed;
        detail::fill_pair_batch(probe, begin, end, moving, fixed);
        Graph<S> g;
        Var<S> fixed_c = g.constant(std::move(fixed));
        Var<S> est =
            model.registration.forward(g, g.constant(std::move(moving)), fixed_c, false).back();
        const auto [vs, vb] = collapse_statistics(model.encoder.forward(g, fixed_c, false).val());
        var_s += vs;
        var_b += vb;
        ++chunks;
        const Tensor<S>& ev = est.val();
        for (int64_t i = 0; i < ev.shape.numel(); ++i)
            offs += std::abs(static_cast<double>(ev[i]));
        offn += ev.shape.numel();
    }
    r.spatial_variance = var_s / static_cast<double>(chunks);
    r.batch_variance = var_b / static_cast<double>(chunks);
    r.mean_offset_px = offs / static_cast<double>(offn);
    r.flag = r.spatial_variance < kCollapseVarianceEps ||
             (r.mean_offset_px < kCollapseOffsetEps && r.identity_mace > 1.0);
    return r;
}

} // namespace alto
