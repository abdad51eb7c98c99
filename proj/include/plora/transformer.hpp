// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "plora/nets.hpp"

namespace plora {

enum class TokenRole { Class, Patch, Prompt };

// Ordered embedded tokens plus the coordinates they came from. Row 0 is
// always the single class token (zero center); prompt tokens, when present,
// sit after the patch tokens.
template <typename T>
struct TokenSequence {
    Tensor<T> tokens;  // len x d
    std::vector<std::array<T, 3>> centers;
    std::vector<TokenRole> roles;

    std::size_t length() const { return roles.size(); }
};

// One encoder block, pre-norm layout. The fused qkv projection carries an
// optional per-projection low-rank delta (one rank-r pair for each of q, k
// and v); the attention output projection stays frozen and unadapted.
template <typename T>
struct Block {
    LayerNormParams<T> ln1;
    LayerNormParams<T> ln2;
    Linear<T> qkv;   // d -> 3d, no bias
    Linear<T> proj;  // d -> d
    Linear<T> fc1;   // d -> ffn_dim
    Linear<T> fc2;   // ffn_dim -> d
    std::array<LoraPair<T>, 3> qkv_lora;
    bool has_lora = false;
};

// Per-block runtime wiring: the two shared prompt MLPs and the stochastic
// depth multipliers (1 keeps a branch, 0 drops it, kept branches in training
// are pre-scaled by 1/(1-p)).
template <typename T>
struct BlockContext {
    const PromptMlp<T>* prompt_qkv = nullptr;
    const PromptMlp<T>* prompt_ffn = nullptr;
    T keep_attn = T(1);
    T keep_ffn = T(1);
};

// Generic adapted projection: frozen path, plus an optional low-rank delta,
// plus an optional pointwise prompt path, all summed at the output.
template <typename T>
Tensor<T> pointlora_linear_forward(const Tensor<T>& x, const Linear<T>& frozen,
                                   const LoraPair<T>* lora, const PromptMlp<T>* prompt) {
    auto out = linear_forward(x, frozen);
    if (lora != nullptr)
        out = add(out, mul_scalar(matmul(matmul(x, lora->down), lora->up), lora->scaling));
    if (prompt != nullptr) out = add(out, prompt_mlp_forward(x, *prompt));
    return out;
}

// qkv site: base projection plus one delta per q/k/v third plus the shared
// qkv prompt path
template <typename T>
Tensor<T> adapted_qkv_forward(const Tensor<T>& x, const Block<T>& blk,
                              const PromptMlp<T>* prompt) {
    auto out = linear_forward(x, blk.qkv);
    if (blk.has_lora) {
        std::vector<Tensor<T>> thirds;
        thirds.reserve(3);
        for (int i = 0; i < 3; ++i) {
            const auto& pair = blk.qkv_lora[i];
            thirds.push_back(mul_scalar(matmul(matmul(x, pair.down), pair.up), pair.scaling));
        }
        out = add(out, concat_cols(thirds));
    }
    if (prompt != nullptr) out = add(out, prompt_mlp_forward(x, *prompt));
    return out;
}

// ffn second stage: frozen fc2 plus the shared ffn prompt path
template <typename T>
Tensor<T> adapted_fc2_forward(const Tensor<T>& h, const Block<T>& blk,
                              const PromptMlp<T>* prompt) {
    return pointlora_linear_forward(h, blk.fc2, static_cast<const LoraPair<T>*>(nullptr), prompt);
}

// Multi-head scaled dot-product attention with skip connection. Optionally
// reports the per-head attention weights for inspection.
template <typename T>
Tensor<T> attention_forward(const Tensor<T>& x, const Block<T>& blk, std::size_t heads,
                            const BlockContext<T>& ctx,
                            std::vector<Tensor<T>>* attention_weights = nullptr) {
    const std::size_t d = x.cols();
    if (d != blk.qkv.in()) throw DimensionError("attention_forward: token width mismatch");
    if (d % heads != 0) throw DimensionError("attention_forward: dim not divisible by heads");
    const std::size_t dh = d / heads;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

    auto xn = layer_norm(x, blk.ln1.gamma, blk.ln1.beta, T(1e-5));
    auto qkv = adapted_qkv_forward(xn, blk, ctx.prompt_qkv);
    auto q = slice_cols(qkv, 0, d);
    auto k = slice_cols(qkv, d, 2 * d);
    auto v = slice_cols(qkv, 2 * d, 3 * d);

    std::vector<Tensor<T>> head_outs;
    head_outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        auto qh = slice_cols(q, h * dh, (h + 1) * dh);
        auto kh = slice_cols(k, h * dh, (h + 1) * dh);
        auto vh = slice_cols(v, h * dh, (h + 1) * dh);
        auto logits = mul_scalar(matmul(qh, transpose(kh)), scale);
        auto weights = softmax(logits, 1);
        if (attention_weights) attention_weights->push_back(weights);
        head_outs.push_back(matmul(weights, vh));
    }
    auto merged = heads == 1 ? head_outs[0] : concat_cols(head_outs);
    auto out = linear_forward(merged, blk.proj);
    return add(x, mul_scalar(out, ctx.keep_attn));
}

// Pre-norm feed-forward stage with skip connection; the second linear is the
// adapted site for the shared ffn prompt MLP.
template <typename T>
Tensor<T> ffn_forward(const Tensor<T>& x, const Block<T>& blk, const BlockContext<T>& ctx) {
    auto xn = layer_norm(x, blk.ln2.gamma, blk.ln2.beta, T(1e-5));
    auto h = gelu(linear_forward(xn, blk.fc1));
    auto out = adapted_fc2_forward(h, blk, ctx.prompt_ffn);
    return add(x, mul_scalar(out, ctx.keep_ffn));
}

template <typename T>
Tensor<T> block_forward(const Tensor<T>& x, const Block<T>& blk, std::size_t heads,
                        const BlockContext<T>& ctx) {
    return ffn_forward(attention_forward(x, blk, heads, ctx), blk, ctx);
}

// Applies all blocks in order, then the learned final norm.
template <typename T>
Tensor<T> encoder_forward(const Tensor<T>& x, const std::vector<Block<T>>& blocks,
                          const LayerNormParams<T>& final_norm, std::size_t heads,
                          const std::vector<BlockContext<T>>& contexts) {
    if (contexts.size() != blocks.size())
        throw ContractError("encoder_forward: one context per block required");
    Tensor<T> cur = x;
    for (std::size_t i = 0; i < blocks.size(); ++i)
        cur = block_forward(cur, blocks[i], heads, contexts[i]);
    return layer_norm(cur, final_norm.gamma, final_norm.beta, T(1e-5));
}

// Concatenates the class token with the max over the pooled token rows
// [1, pool_end); result is 1 x 2d.
template <typename T>
Tensor<T> pool_features(const TokenSequence<T>& seq, bool include_prompts = true) {
    if (seq.roles.empty() || seq.roles[0] != TokenRole::Class)
        throw ContractError("pool_features: sequence has no class token at position 0");
    for (std::size_t i = 1; i < seq.roles.size(); ++i)
        if (seq.roles[i] == TokenRole::Class)
            throw ContractError("pool_features: more than one class token");
    std::size_t pool_end = seq.length();
    if (!include_prompts) {
        pool_end = 1;
        while (pool_end < seq.roles.size() && seq.roles[pool_end] == TokenRole::Patch) ++pool_end;
    }
    if (pool_end <= 1) throw ContractError("pool_features: no tokens to pool");
    auto cls = slice_rows(seq.tokens, 0, 1);
    auto pooled = rows_max_range(seq.tokens, 1, pool_end);
    return concat_cols<T>({cls, pooled});
}

}  // namespace plora
