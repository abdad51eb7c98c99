// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <vector>

#include "plora/config.hpp"
#include "plora/geometry.hpp"
#include "plora/nets.hpp"

namespace plora {

template <typename T>
struct ScaleTokens {
    Tensor<T> tokens;  // g_m x d
    std::vector<std::array<T, 3>> centers;
    Tensor<T> scores;  // g_m x 1, filled by the mask predictor
};

// Result of scoring and hard top-k selection across all scales. Chosen
// indices per scale follow the shared tie rule (lower index wins); selected
// tokens are concatenated in scale order.
template <typename T>
struct SelectionState {
    std::vector<ScaleTokens<T>> scales;
    std::vector<std::vector<std::size_t>> chosen;
    Tensor<T> selected_tokens;  // N_s x d
    std::vector<std::array<T, 3>> selected_centers;
    Tensor<T> all_scores;  // N_total x 1, pre-selection, in scale order
};

// Tokenizes the raw cloud at every configured scale with the one shared
// prompt embedder: fps centers, knn grouping, centering, embedding.
template <typename T>
std::vector<ScaleTokens<T>> multi_scale_tokenize(const PointCloud<T>& cloud,
                                                 const std::vector<ScaleSpec>& scales,
                                                 const MiniPointNet<T>& net,
                                                 std::size_t fps_seed_index = 0) {
    std::vector<ScaleTokens<T>> out;
    out.reserve(scales.size());
    for (const auto& spec : scales) {
        if (spec.centers > cloud.size())
            throw RangeError("multi_scale_tokenize: scale wants " + std::to_string(spec.centers) +
                             " centers but the cloud has " + std::to_string(cloud.size()) +
                             " points");
        auto patches = build_patches(cloud, spec.centers, spec.neighbors, fps_seed_index);
        ScaleTokens<T> st;
        st.tokens = mini_pointnet_forward(patches_to_tensor(patches), spec.neighbors, net);
        st.centers = patches.centers;
        out.push_back(std::move(st));
    }
    return out;
}

// Hard top-k per scale on the already-computed scores, then concatenation in
// scale order. Gradients flow into the kept token rows; scores reach the
// graph only through the mask loss.
template <typename T>
SelectionState<T> select_topk_tokens(std::vector<ScaleTokens<T>> scales,
                                     const std::vector<ScaleSpec>& specs) {
    if (scales.size() != specs.size())
        throw ContractError("select_topk_tokens: scale count mismatch");
    SelectionState<T> state;
    state.scales = std::move(scales);
    std::vector<Tensor<T>> picked;
    std::vector<Tensor<T>> score_parts;
    for (std::size_t m = 0; m < state.scales.size(); ++m) {
        auto& st = state.scales[m];
        if (!st.scores.defined() || st.scores.rows() != st.tokens.rows())
            throw ContractError("select_topk_tokens: scores do not align with tokens");
        if (specs[m].select > st.tokens.rows())
            throw RangeError("select_topk_tokens: select count exceeds token count");
        auto idx = topk_indices<T>(st.scores.values(), specs[m].select);
        state.chosen.push_back(idx);
        if (!idx.empty()) {
            picked.push_back(gather_rows(st.tokens, idx));
            for (std::size_t i : idx) state.selected_centers.push_back(st.centers[i]);
        }
        score_parts.push_back(st.scores);
    }
    if (!picked.empty()) state.selected_tokens = concat_rows(picked);
    state.all_scores = concat_rows(score_parts);
    return state;
}

// scoring + selection in one call
template <typename T>
SelectionState<T> run_token_selection(const PointCloud<T>& cloud,
                                      const std::vector<ScaleSpec>& specs,
                                      const MiniPointNet<T>& net, const MaskPredictor<T>& predictor,
                                      std::size_t fps_seed_index = 0) {
    auto scales = multi_scale_tokenize(cloud, specs, net, fps_seed_index);
    for (auto& st : scales) st.scores = predict_token_scores(st.tokens, predictor);
    return select_topk_tokens(std::move(scales), specs);
}

}  // namespace plora
