// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "plora/geometry.hpp"
#include "plora/ops.hpp"

namespace plora {

template <typename T>
struct Linear {
    Tensor<T> weight;  // in x out, row major
    Tensor<T> bias;    // optional; undefined handle means no bias

    std::size_t in() const { return weight.rows(); }
    std::size_t out() const { return weight.cols(); }
};

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Linear<T>& l) {
    auto y = matmul(x, l.weight);
    if (l.bias.defined()) y = add_rowvec(y, l.bias);
    return y;
}

template <typename T>
struct LayerNormParams {
    Tensor<T> gamma;
    Tensor<T> beta;
};

// trainable low-rank delta for one frozen weight: scaling * down(in x r) * up(r x out)
template <typename T>
struct LoraPair {
    Tensor<T> down;
    Tensor<T> up;
    T scaling = T(1);

    std::size_t rank() const { return down.cols(); }
};

template <typename T>
LoraPair<T> make_lora_pair(std::size_t in, std::size_t out, std::size_t r, T scaling, Rng& rng) {
    if (r < 1 || r >= std::min(in, out))
        throw ContractError("lora rank " + std::to_string(r) + " must satisfy 1 <= r < min(" +
                            std::to_string(in) + ", " + std::to_string(out) + ")");
    LoraPair<T> p;
    std::vector<T> d(in * r);
    for (auto& v : d) v = static_cast<T>(rng.normal() * 0.02);
    p.down = Tensor<T>::from_data({in, r}, std::move(d), true);
    p.up = Tensor<T>::zeros({r, out}, true);  // zero so the delta starts at exactly zero
    p.scaling = scaling;
    return p;
}

// x*W + scaling*(x*down)*up
template <typename T>
Tensor<T> lora_forward(const Tensor<T>& x, const Tensor<T>& frozen_weight,
                       const LoraPair<T>& pair) {
    auto base = matmul(x, frozen_weight);
    auto delta = matmul(matmul(x, pair.down), pair.up);
    return add(base, mul_scalar(delta, pair.scaling));
}

// consolidates a pair into a plain weight: W + scaling*down*up
template <typename T>
Tensor<T> lora_merge(const Tensor<T>& frozen_weight, const LoraPair<T>& pair) {
    const auto delta = matmul(pair.down, pair.up);
    std::vector<T> merged(frozen_weight.values().begin(), frozen_weight.values().end());
    for (std::size_t i = 0; i < merged.size(); ++i)
        merged[i] += pair.scaling * delta.values()[i];
    return Tensor<T>::from_data(frozen_weight.shape(), std::move(merged),
                                frozen_weight.requires_grad());
}

// ---------------------------------------------------------------------------
// initialization

template <typename T>
Tensor<T> xavier_matrix(std::size_t in, std::size_t out, Rng& rng) {
    const double std = std::sqrt(2.0 / static_cast<double>(in + out));
    std::vector<T> w(in * out);
    for (auto& v : w) v = static_cast<T>(rng.normal() * std);
    return Tensor<T>::from_data({in, out}, std::move(w), false);
}

template <typename T>
Linear<T> make_linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true) {
    Linear<T> l;
    l.weight = xavier_matrix<T>(in, out, rng);
    if (with_bias) l.bias = Tensor<T>::zeros({out});
    return l;
}

template <typename T>
Linear<T> make_zero_linear(std::size_t in, std::size_t out, bool with_bias = true) {
    Linear<T> l;
    l.weight = Tensor<T>::zeros({in, out});
    if (with_bias) l.bias = Tensor<T>::zeros({out});
    return l;
}

template <typename T>
LayerNormParams<T> make_layer_norm(std::size_t n) {
    LayerNormParams<T> ln;
    ln.gamma = Tensor<T>::from_data({n}, std::vector<T>(n, T(1)));
    ln.beta = Tensor<T>::zeros({n});
    return ln;
}

// ---------------------------------------------------------------------------
// small networks

// Shared point-set embedder: a pointwise MLP, a max pool, a concat of the
// pooled feature back onto every point, a second pointwise MLP, and a final
// max pool down to one token per patch. Invariant to point order inside a
// patch.
template <typename T>
struct MiniPointNet {
    Linear<T> s1a;  // 3 -> h1
    Linear<T> s1b;  // h1 -> h2
    Linear<T> s2a;  // 2*h2 -> 2*h2
    Linear<T> s2b;  // 2*h2 -> d

    std::size_t token_dim() const { return s2b.out(); }
};

template <typename T>
MiniPointNet<T> make_mini_pointnet(std::size_t h1, std::size_t h2, std::size_t d, Rng& rng) {
    MiniPointNet<T> net;
    net.s1a = make_linear<T>(3, h1, rng);
    net.s1b = make_linear<T>(h1, h2, rng);
    net.s2a = make_linear<T>(2 * h2, 2 * h2, rng);
    net.s2b = make_linear<T>(2 * h2, d, rng);
    return net;
}

// points: (g*k) x 3 centered coordinates -> g x d tokens
template <typename T>
Tensor<T> mini_pointnet_forward(const Tensor<T>& points, std::size_t k,
                                const MiniPointNet<T>& net) {
    if (points.ndim() != 2 || points.cols() != 3 || points.rows() % k != 0)
        throw DimensionError("mini_pointnet_forward: points must be (g*k) x 3");
    auto h = linear_forward(points, net.s1a);
    h = gelu(h);
    h = linear_forward(h, net.s1b);                       // gk x h2
    auto pooled = block_rows_max(h, k);                   // g x h2
    auto widened = rows_repeat_blocks(pooled, k);         // gk x h2
    auto cat = concat_cols<T>({h, widened});              // gk x 2h2
    auto s = linear_forward(cat, net.s2a);
    s = gelu(s);
    s = linear_forward(s, net.s2b);                       // gk x d
    return block_rows_max(s, k);                          // g x d
}

template <typename T>
Tensor<T> patches_to_tensor(const PatchSet<T>& patches) {
    std::vector<T> data;
    data.reserve(patches.centered_neighbors.size() * 3);
    for (const auto& p : patches.centered_neighbors) {
        data.push_back(p[0]);
        data.push_back(p[1]);
        data.push_back(p[2]);
    }
    return Tensor<T>::from_data({patches.centered_neighbors.size(), 3}, std::move(data));
}

template <typename T>
Tensor<T> centers_to_tensor(const std::vector<std::array<T, 3>>& centers) {
    std::vector<T> data;
    data.reserve(centers.size() * 3);
    for (const auto& c : centers) {
        data.push_back(c[0]);
        data.push_back(c[1]);
        data.push_back(c[2]);
    }
    return Tensor<T>::from_data({centers.size(), 3}, std::move(data));
}

// coordinate MLP used for positional embeddings: 3 -> hidden -> d
template <typename T>
struct PosMlp {
    Linear<T> a;
    Linear<T> b;
};

template <typename T>
PosMlp<T> make_pos_mlp(std::size_t hidden, std::size_t d, Rng& rng) {
    return {make_linear<T>(3, hidden, rng), make_linear<T>(hidden, d, rng)};
}

template <typename T>
Tensor<T> pos_mlp_forward(const Tensor<T>& centers, const PosMlp<T>& net) {
    return linear_forward(gelu(linear_forward(centers, net.a)), net.b);
}

// Shared prompt MLP applied pointwise at an adapted site. Input and output
// widths follow the site (qkv site: d -> p -> 3d, ffn site: ffn_dim -> p -> d)
// so its output adds onto the site's projection. The output layer starts at
// zero, keeping a fresh model exactly on the frozen function.
template <typename T>
struct PromptMlp {
    Linear<T> a;
    Linear<T> b;
};

template <typename T>
PromptMlp<T> make_prompt_mlp(std::size_t in, std::size_t p, std::size_t out, Rng& rng) {
    PromptMlp<T> net;
    net.a = make_linear<T>(in, p, rng);
    net.b = make_zero_linear<T>(p, out);
    return net;
}

template <typename T>
Tensor<T> prompt_mlp_forward(const Tensor<T>& x, const PromptMlp<T>& net) {
    return linear_forward(gelu(linear_forward(x, net.a)), net.b);
}

// two-layer scorer with sigmoid output, shared across all scales
template <typename T>
struct MaskPredictor {
    Linear<T> a;  // d -> hidden
    Linear<T> b;  // hidden -> 1
};

template <typename T>
MaskPredictor<T> make_mask_predictor(std::size_t d, std::size_t hidden, Rng& rng) {
    MaskPredictor<T> net;
    std::vector<T> wa(d * hidden), wb(hidden);
    for (auto& v : wa) v = static_cast<T>(rng.normal() * 0.02);
    for (auto& v : wb) v = static_cast<T>(rng.normal() * 0.02);
    net.a.weight = Tensor<T>::from_data({d, hidden}, std::move(wa));
    net.a.bias = Tensor<T>::zeros({hidden});
    net.b.weight = Tensor<T>::from_data({hidden, std::size_t(1)}, std::move(wb));
    net.b.bias = Tensor<T>::zeros({std::size_t(1)});
    return net;
}

// tokens: g x d -> scores g x 1, each strictly inside (0, 1)
template <typename T>
Tensor<T> predict_token_scores(const Tensor<T>& tokens, const MaskPredictor<T>& net) {
    return sigmoid(linear_forward(gelu(linear_forward(tokens, net.a)), net.b));
}

// classification head over pooled features: 2d -> d -> classes
template <typename T>
struct Head {
    Linear<T> a;
    Linear<T> b;
};

template <typename T>
Head<T> make_head(std::size_t d, std::size_t classes, Rng& rng) {
    return {make_linear<T>(2 * d, d, rng), make_linear<T>(d, classes, rng)};
}

template <typename T>
Tensor<T> head_forward(const Tensor<T>& pooled, const Head<T>& net) {
    return linear_forward(gelu(linear_forward(pooled, net.a)), net.b);
}

}  // namespace plora
