// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "plora/model.hpp"

namespace plora {

// Piecewise schedule: linear warmup from zero to the peak, then cosine decay
// down to the floor, hitting it exactly on the last step.
inline double lr_schedule(std::size_t step, std::size_t total_steps, std::size_t warmup_steps,
                          double peak, double floor) {
    if (total_steps == 0) return floor;
    if (step >= total_steps) return floor;
    if (warmup_steps > 0 && step < warmup_steps)
        return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
    const std::size_t denom =
        total_steps > warmup_steps + 1 ? total_steps - 1 - warmup_steps : 1;
    const double t = static_cast<double>(step - warmup_steps) / static_cast<double>(denom);
    return floor + (peak - floor) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

// Decoupled-weight-decay Adam over an explicit parameter list. Only the
// parameters handed in are ever touched; decay skips biases, norm parameters
// and the class token via the registry's decay flag.
template <typename T>
class AdamW {
  public:
    AdamW(std::vector<ParamRef<T>> params, double weight_decay, double beta1 = 0.9,
          double beta2 = 0.999, double eps = 1e-8)
        : params_(std::move(params)),
          weight_decay_(weight_decay),
          beta1_(beta1),
          beta2_(beta2),
          eps_(eps) {
        slots_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            slots_[i].m.assign(params_[i].tensor.size(), 0.0);
            slots_[i].v.assign(params_[i].tensor.size(), 0.0);
        }
    }

    const std::vector<ParamRef<T>>& params() const { return params_; }

    void zero_grad() {
        for (auto& p : params_) const_cast<Tensor<T>&>(p.tensor).zero_grad();
    }

    // global-norm gradient clipping; no-op when max_norm <= 0
    void clip_gradients(double max_norm) {
        if (max_norm <= 0.0) return;
        double sq = 0.0;
        for (auto& p : params_)
            if (p.tensor.has_grad())
                for (T g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
        const double norm = std::sqrt(sq);
        if (norm <= max_norm) return;
        const T scale = static_cast<T>(max_norm / norm);
        for (auto& p : params_)
            if (p.tensor.has_grad()) {
                auto g = const_cast<Tensor<T>&>(p.tensor).grad_mut();
                for (auto& v : g) v *= scale;
            }
    }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& ref = params_[i];
            auto& slot = slots_[i];
            auto values = const_cast<Tensor<T>&>(ref.tensor).values();
            const bool has_grad = ref.tensor.has_grad();
            auto grads = ref.tensor.grad();
            for (std::size_t j = 0; j < values.size(); ++j) {
                const double g = has_grad ? static_cast<double>(grads[j]) : 0.0;
                slot.m[j] = beta1_ * slot.m[j] + (1.0 - beta1_) * g;
                slot.v[j] = beta2_ * slot.v[j] + (1.0 - beta2_) * g * g;
                const double mhat = slot.m[j] / bc1;
                const double vhat = slot.v[j] / bc2;
                double p = static_cast<double>(values[j]);
                p -= lr * mhat / (std::sqrt(vhat) + eps_);
                if (ref.decay && weight_decay_ > 0.0) p -= lr * weight_decay_ * p;
                if (!std::isfinite(p)) throw NumericError("adamw produced a non-finite parameter");
                values[j] = static_cast<T>(p);
            }
        }
    }

  private:
    struct Slot {
        std::vector<double> m, v;
    };
    std::vector<ParamRef<T>> params_;
    std::vector<Slot> slots_;
    double weight_decay_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
};

}  // namespace plora
