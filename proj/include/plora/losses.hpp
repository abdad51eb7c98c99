// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "plora/ops.hpp"

namespace plora {

// Mean cross-entropy over a batch of logits rows, with optional label
// smoothing.
template <typename T>
Tensor<T> task_loss(const Tensor<T>& logits, const std::vector<std::size_t>& labels,
                    T smoothing = T(0)) {
    if (logits.ndim() != 2 || logits.rows() != labels.size())
        throw DimensionError("task_loss: logits " + shape_str(logits.shape()) +
                             " do not match " + std::to_string(labels.size()) + " labels");
    const std::size_t classes = logits.cols();
    for (std::size_t y : labels)
        if (y >= classes) throw ContractError("task_loss: label out of range");

    auto lp = log_softmax_rows(logits);
    Tensor<T> total = Tensor<T>::scalar(T(0));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto nll = mul_scalar(pick(lp, i * classes + labels[i]), T(-1));
        if (smoothing > T(0)) {
            auto row_mean = mul_scalar(mean_all(slice_rows(lp, i, i + 1)), T(-1));
            nll = add(mul_scalar(nll, T(1) - smoothing), mul_scalar(row_mean, smoothing));
        }
        total = add(total, nll);
    }
    return mul_scalar(total, T(1) / static_cast<T>(labels.size()));
}

// Entropy-style regularizer over all pre-selection scores:
//   -(1/N) * sum_i [ s_i*log(s_i+eps) + (1-s_i)*log(1-s_i+eps) ]
// Maximal at 0.5, it pushes the mask predictor toward confident scores.
template <typename T>
Tensor<T> mask_loss(const Tensor<T>& scores, T eps) {
    if (eps <= T(0)) throw ContractError("mask_loss: eps must be positive");
    if (!scores.defined() || scores.size() == 0)
        throw ContractError("mask_loss: empty score tensor");
    auto one_minus = affine(scores, T(-1), T(1));
    auto t1 = mul(scores, log_op(add_scalar(scores, eps)));
    auto t2 = mul(one_minus, log_op(add_scalar(one_minus, eps)));
    return mul_scalar(mean_all(add(t1, t2)), T(-1));
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& task, const Tensor<T>& mask, T lambda) {
    if (!mask.defined() || lambda == T(0)) {
        if (lambda == T(0)) return task;
        throw ContractError("total_loss: lambda > 0 but no mask loss given");
    }
    return add(task, mul_scalar(mask, lambda));
}

}  // namespace plora
