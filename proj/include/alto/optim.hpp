#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "alto/autodiff.hpp"
#include "alto/networks.hpp"

namespace alto {

// One-cycle learning-rate schedule: cosine ramp from max_lr/div_factor up to
// max_lr over the first pct_start of training, then cosine annealing down to
// max_lr/(div_factor*final_div_factor).
class OneCycleSchedule {
public:
    OneCycleSchedule(double max_lr, int64_t total_steps, double pct_start = 0.3,
                     double div_factor = 25.0, double final_div_factor = 1e4)
        : max_lr_(max_lr),
          initial_lr_(max_lr / div_factor),
          final_lr_(max_lr / (div_factor * final_div_factor)),
          total_(std::max<int64_t>(total_steps, 1)),
          up_(std::clamp<int64_t>(static_cast<int64_t>(std::llround(
                                      pct_start * static_cast<double>(total_steps))),
                                  0, total_steps)) {}

    double lr_at(int64_t step) const {
        step = std::clamp<int64_t>(step, 0, total_ - 1);
        if (step < up_) {
            const double p = static_cast<double>(step) / static_cast<double>(std::max<int64_t>(up_, 1));
            return initial_lr_ + (max_lr_ - initial_lr_) * 0.5 * (1.0 - std::cos(M_PI * p));
        }
        const double denom = static_cast<double>(std::max<int64_t>(total_ - 1 - up_, 1));
        const double p = static_cast<double>(step - up_) / denom;
        return final_lr_ + (max_lr_ - final_lr_) * 0.5 * (1.0 + std::cos(M_PI * p));
    }

    int64_t total_steps() const { return total_; }

private:
    double max_lr_, initial_lr_, final_lr_;
    int64_t total_, up_;
};

// Elementwise gradient clipping to [-limit, limit] on the gradients the tape
// recorded for the given parameters.
template <typename S>
void clip_gradients(Graph<S>& g, const std::vector<Param<S>*>& params, double limit) {
    const S lo = static_cast<S>(-limit), hi = static_cast<S>(limit);
    for (Param<S>* p : params) {
        if (p->graph_stamp != g.stamp() || !p->tracked || !g.grad_live(p->leaf_id)) continue;
        Tensor<S>& gr = g.grad_buf(p->leaf_id);
        for (int64_t i = 0; i < gr.numel(); ++i) gr[i] = std::clamp(gr[i], lo, hi);
    }
}

// Global L2 norm of the recorded gradients (diagnostic; computed pre-clip).
template <typename S>
double grad_norm(const Graph<S>& g, const std::vector<Param<S>*>& params) {
    double acc = 0.0;
    for (const Param<S>* p : params) {
        const Tensor<S>* gr = p->grad_in(g);
        if (!gr) continue;
        for (int64_t i = 0; i < gr->numel(); ++i) {
            const double v = static_cast<double>((*gr)[i]);
            acc += v * v;
        }
    }
    return std::sqrt(acc);
}

// Adam with decoupled weight decay. Moment buffers are kept per parameter in
// registration order; the step count drives bias correction.
template <typename S>
class AdamW {
public:
    AdamW(std::vector<Param<S>*> params, double lr, double weight_decay, double beta1 = 0.9,
          double beta2 = 0.999, double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2),
          eps_(eps) {
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (Param<S>* p : params_) {
            m_.emplace_back(p->value.shape);
            v_.emplace_back(p->value.shape);
        }
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    int64_t step_count() const { return t_; }

    // Applies one update from the gradients recorded in g. Parameters with
    // no live gradient in this tape are left untouched (their moments do
    // not advance either; the bias-correction clock is shared).
    void step(Graph<S>& g) {
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (size_t k = 0; k < params_.size(); ++k) {
            Param<S>* p = params_[k];
            const Tensor<S>* gr = p->grad_in(g);
            if (!gr) continue;
            Tensor<S>& m = m_[k];
            Tensor<S>& v = v_[k];
            for (int64_t i = 0; i < p->value.numel(); ++i) {
                const double gi = static_cast<double>((*gr)[i]);
                const double mi = b1_ * static_cast<double>(m[i]) + (1.0 - b1_) * gi;
                const double vi = b2_ * static_cast<double>(v[i]) + (1.0 - b2_) * gi * gi;
                m[i] = static_cast<S>(mi);
                v[i] = static_cast<S>(vi);
                const double mhat = mi / bc1;
                const double vhat = vi / bc2;
                const double w = static_cast<double>(p->value[i]);
                p->value[i] =
                    static_cast<S>(w - lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * w));
            }
        }
    }

    const std::vector<Param<S>*>& params() const { return params_; }
    Tensor<S>& moment1(size_t k) { return m_[k]; }
    Tensor<S>& moment2(size_t k) { return v_[k]; }
    void set_step_count(int64_t t) { t_ = t; }

private:
    std::vector<Param<S>*> params_;
    std::vector<Tensor<S>> m_, v_;
    double lr_, wd_, b1_, b2_, eps_;
    int64_t t_ = 0;
};

} // namespace alto
