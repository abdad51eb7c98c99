// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "plora/losses.hpp"
#include "plora/optim.hpp"

namespace plora {

struct EpochStats {
    double train_loss = 0.0;
    double train_acc = 0.0;
    double eval_acc = 0.0;
    double lr = 0.0;
};

// random anisotropic scale and translation, the standard cloud augmentation
template <typename T>
PointCloud<T> augment_cloud(const PointCloud<T>& cloud, Rng& rng) {
    PointCloud<T> out = cloud;
    T sx = static_cast<T>(rng.uniform(2.0 / 3.0, 1.5));
    T sy = static_cast<T>(rng.uniform(2.0 / 3.0, 1.5));
    T sz = static_cast<T>(rng.uniform(2.0 / 3.0, 1.5));
    T tx = static_cast<T>(rng.uniform(-0.2, 0.2));
    T ty = static_cast<T>(rng.uniform(-0.2, 0.2));
    T tz = static_cast<T>(rng.uniform(-0.2, 0.2));
    for (auto& p : out.points) {
        p[0] = p[0] * sx + tx;
        p[1] = p[1] * sy + ty;
        p[2] = p[2] * sz + tz;
    }
    return out;
}

template <typename T>
double evaluate(Model<T>& model, const std::vector<PointCloud<T>>& dataset) {
    if (dataset.empty()) throw ContractError("evaluate: empty dataset");
    std::size_t correct = 0;
    for (const auto& cloud : dataset) {
        auto out = model_forward(model, cloud);
        if (static_cast<int>(predicted_class(out)) == cloud.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

// Owns the optimizer and the deterministic per-epoch rng streams. The freeze
// policy must be applied before construction; only trainable parameters are
// handed to the optimizer, so frozen tensors stay bit-identical through
// training.
template <typename T>
class Trainer {
  public:
    Trainer(Model<T>& model, std::size_t train_size)
        : model_(model),
          optimizer_(collect_params(model, /*trainable_only=*/true), model.cfg.weight_decay) {
        const auto& cfg = model.cfg;
        steps_per_epoch_ = (train_size + cfg.batch_size - 1) / cfg.batch_size;
        total_steps_ = steps_per_epoch_ * cfg.epochs;
        warmup_steps_ = steps_per_epoch_ * cfg.warmup_epochs;
    }

    AdamW<T>& optimizer() { return optimizer_; }
    std::size_t global_step() const { return global_step_; }
    double current_lr() const {
        return lr_schedule(global_step_, total_steps_, warmup_steps_, model_.cfg.lr,
                           model_.cfg.lr_floor);
    }

    EpochStats train_epoch(const std::vector<PointCloud<T>>& train, std::size_t epoch) {
        const auto& cfg = model_.cfg;
        if (train.empty()) throw ContractError("train_epoch: empty dataset");

        Rng shuffle_rng(derive_seed(cfg.seed, "shuffle." + std::to_string(epoch)));
        Rng aug_rng(derive_seed(cfg.seed, "augment." + std::to_string(epoch)));
        Rng droppath_rng(derive_seed(cfg.seed, "droppath." + std::to_string(epoch)));

        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.index(i)]);

        double loss_sum = 0.0;
        std::size_t correct = 0;
        double last_lr = 0.0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
            const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
            const T inv_batch = T(1) / static_cast<T>(b1 - b0);
            optimizer_.zero_grad();
            for (std::size_t s = b0; s < b1; ++s) {
                const auto& base = train[order[s]];
                PointCloud<T> cloud = cfg.augment ? augment_cloud(base, aug_rng) : base;
                cloud.label = base.label;
                ForwardOptions<T> opt;
                opt.training = true;
                opt.droppath_rng = &droppath_rng;
                auto out = model_forward(model_, cloud, opt);
                auto task = task_loss(out.logits, {static_cast<std::size_t>(cloud.label)},
                                      static_cast<T>(cfg.label_smoothing));
                Tensor<T> loss;
                if (cfg.selection_enabled && cfg.lambda > 0.0) {
                    auto mask = mask_loss(out.mask_scores, static_cast<T>(cfg.epsilon));
                    loss = total_loss(task, mask, static_cast<T>(cfg.lambda));
                } else {
                    loss = task;
                }
                loss_sum += static_cast<double>(loss.item());
                if (static_cast<int>(predicted_class(out)) == cloud.label) ++correct;
                backward(mul_scalar(loss, inv_batch));
            }
            optimizer_.clip_gradients(cfg.grad_clip);
            last_lr = current_lr();
            optimizer_.step(last_lr);
            ++global_step_;
        }

        EpochStats stats;
        stats.train_loss = loss_sum / static_cast<double>(train.size());
        stats.train_acc = static_cast<double>(correct) / static_cast<double>(train.size());
        stats.lr = last_lr;
        return stats;
    }

  private:
    Model<T>& model_;
    AdamW<T> optimizer_;
    std::size_t steps_per_epoch_ = 0;
    std::size_t total_steps_ = 0;
    std::size_t warmup_steps_ = 0;
    std::size_t global_step_ = 0;
};

inline std::string format_epoch_line(std::size_t epoch, const EpochStats& s) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "epoch=%zu lr=%.8f train_loss=%.6f train_acc=%.4f eval_acc=%.4f", epoch, s.lr,
                  s.train_loss, s.train_acc, s.eval_acc);
    return buf;
}

}  // namespace plora
