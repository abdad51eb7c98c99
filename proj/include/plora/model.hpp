// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "plora/config.hpp"
#include "plora/selection.hpp"
#include "plora/transformer.hpp"

namespace plora {

enum class ParamGroup { Backbone, Lora, PromptMlps, MaskPred, PromptTokenizer, PromptPos, Head };

inline const char* param_group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::Backbone: return "backbone";
        case ParamGroup::Lora: return "lora";
        case ParamGroup::PromptMlps: return "prompt_mlp";
        case ParamGroup::MaskPred: return "mask_predictor";
        case ParamGroup::PromptTokenizer: return "prompt_tokenizer";
        case ParamGroup::PromptPos: return "prompt_pos";
        case ParamGroup::Head: return "head";
    }
    return "?";
}

template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T> tensor;
    ParamGroup group = ParamGroup::Backbone;
    bool is_norm = false;
    bool is_class_token = false;
    bool decay = false;  // weight decay applies (matrices only)
};

// The full classification model: frozen transformer backbone plus the
// trainable adaptation machinery. Copies share parameter storage; treat the
// model as single-owner.
template <typename T>
struct Model {
    RunConfig cfg;

    // backbone (frozen during fine-tuning)
    MiniPointNet<T> embedder;
    PosMlp<T> pos_net;
    Tensor<T> class_token;  // 1 x d
    Tensor<T> class_pos;    // 1 x d
    std::vector<Block<T>> blocks;
    LayerNormParams<T> final_norm;

    // token-selection machinery (present iff cfg.selection_enabled)
    MiniPointNet<T> prompt_embedder;
    PosMlp<T> prompt_pos;
    MaskPredictor<T> mask_predictor;
    PromptMlp<T> prompt_qkv;  // d -> p -> 3d, shared by every block
    PromptMlp<T> prompt_ffn;  // ffn_dim -> p -> d, shared by every block

    Head<T> head;

    bool has_adapters() const { return cfg.lora_enabled && !cfg.merged; }
};

template <typename T>
Model<T> build_model(const RunConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model<T> m;
    m.cfg = cfg;
    const std::size_t d = cfg.dim;

    Rng backbone_rng(derive_seed(seed, "backbone"));
    m.embedder = make_mini_pointnet<T>(cfg.embed_h1, cfg.embed_h2, d, backbone_rng);
    m.pos_net = make_pos_mlp<T>(cfg.pos_hidden, d, backbone_rng);
    {
        std::vector<T> ct(d), cp(d);
        for (auto& v : ct) v = static_cast<T>(backbone_rng.normal() * 0.02);
        for (auto& v : cp) v = static_cast<T>(backbone_rng.normal() * 0.02);
        m.class_token = Tensor<T>::from_data({1, d}, std::move(ct));
        m.class_pos = Tensor<T>::from_data({1, d}, std::move(cp));
    }
    m.blocks.reserve(cfg.layers);
    for (std::size_t i = 0; i < cfg.layers; ++i) {
        Block<T> b;
        b.ln1 = make_layer_norm<T>(d);
        b.ln2 = make_layer_norm<T>(d);
        b.qkv = make_linear<T>(d, 3 * d, backbone_rng, /*with_bias=*/false);
        b.proj = make_linear<T>(d, d, backbone_rng);
        b.fc1 = make_linear<T>(d, cfg.ffn_dim, backbone_rng);
        b.fc2 = make_linear<T>(cfg.ffn_dim, d, backbone_rng);
        m.blocks.push_back(std::move(b));
    }
    m.final_norm = make_layer_norm<T>(d);

    Rng adapter_rng(derive_seed(seed, "adapters"));
    if (m.has_adapters()) {
        for (auto& b : m.blocks) {
            for (int i = 0; i < 3; ++i)
                b.qkv_lora[i] =
                    make_lora_pair<T>(d, d, cfg.rank, static_cast<T>(cfg.lora_scaling),
                                      adapter_rng);
            b.has_lora = true;
        }
    }
    if (cfg.selection_enabled) {
        m.prompt_embedder = make_mini_pointnet<T>(cfg.prompt_h1, cfg.prompt_h2, d, adapter_rng);
        m.prompt_pos = make_pos_mlp<T>(cfg.prompt_pos_hidden, d, adapter_rng);
        m.mask_predictor = make_mask_predictor<T>(d, cfg.mask_hidden, adapter_rng);
        m.prompt_qkv = make_prompt_mlp<T>(d, cfg.prompt_width, 3 * d, adapter_rng);
        m.prompt_ffn = make_prompt_mlp<T>(cfg.ffn_dim, cfg.prompt_width, d, adapter_rng);
    }
    m.head = make_head<T>(d, cfg.num_classes, adapter_rng);
    return m;
}

// ---------------------------------------------------------------------------
// parameter registry

template <typename T, typename F>
void visit_params(Model<T>& m, F&& fn) {
    auto lin = [&](const std::string& prefix, Linear<T>& l, ParamGroup g) {
        fn(ParamRef<T>{prefix + ".weight", l.weight, g, false, false, true});
        if (l.bias.defined()) fn(ParamRef<T>{prefix + ".bias", l.bias, g, false, false, false});
    };
    auto norm = [&](const std::string& prefix, LayerNormParams<T>& n, ParamGroup g) {
        fn(ParamRef<T>{prefix + ".gamma", n.gamma, g, true, false, false});
        fn(ParamRef<T>{prefix + ".beta", n.beta, g, true, false, false});
    };
    auto pointnet = [&](const std::string& prefix, MiniPointNet<T>& net, ParamGroup g) {
        lin(prefix + ".s1a", net.s1a, g);
        lin(prefix + ".s1b", net.s1b, g);
        lin(prefix + ".s2a", net.s2a, g);
        lin(prefix + ".s2b", net.s2b, g);
    };

    pointnet("embedder", m.embedder, ParamGroup::Backbone);
    lin("pos_net.a", m.pos_net.a, ParamGroup::Backbone);
    lin("pos_net.b", m.pos_net.b, ParamGroup::Backbone);
    fn(ParamRef<T>{"class_token", m.class_token, ParamGroup::Backbone, false, true, false});
    fn(ParamRef<T>{"class_pos", m.class_pos, ParamGroup::Backbone, false, true, false});
    for (std::size_t i = 0; i < m.blocks.size(); ++i) {
        const std::string p = "blocks." + std::to_string(i);
        auto& b = m.blocks[i];
        norm(p + ".ln1", b.ln1, ParamGroup::Backbone);
        lin(p + ".qkv", b.qkv, ParamGroup::Backbone);
        lin(p + ".proj", b.proj, ParamGroup::Backbone);
        norm(p + ".ln2", b.ln2, ParamGroup::Backbone);
        lin(p + ".fc1", b.fc1, ParamGroup::Backbone);
        lin(p + ".fc2", b.fc2, ParamGroup::Backbone);
        if (b.has_lora) {
            static const char* site[3] = {"q", "k", "v"};
            for (int s = 0; s < 3; ++s) {
                fn(ParamRef<T>{p + ".lora." + site[s] + ".down", b.qkv_lora[s].down,
                               ParamGroup::Lora, false, false, true});
                fn(ParamRef<T>{p + ".lora." + site[s] + ".up", b.qkv_lora[s].up, ParamGroup::Lora,
                               false, false, true});
            }
        }
    }
    norm("final_norm", m.final_norm, ParamGroup::Backbone);
    if (m.cfg.selection_enabled) {
        pointnet("prompt_embedder", m.prompt_embedder, ParamGroup::PromptTokenizer);
        lin("prompt_pos.a", m.prompt_pos.a, ParamGroup::PromptPos);
        lin("prompt_pos.b", m.prompt_pos.b, ParamGroup::PromptPos);
        lin("mask_predictor.a", m.mask_predictor.a, ParamGroup::MaskPred);
        lin("mask_predictor.b", m.mask_predictor.b, ParamGroup::MaskPred);
        lin("prompt_mlp.qkv.a", m.prompt_qkv.a, ParamGroup::PromptMlps);
        lin("prompt_mlp.qkv.b", m.prompt_qkv.b, ParamGroup::PromptMlps);
        lin("prompt_mlp.ffn.a", m.prompt_ffn.a, ParamGroup::PromptMlps);
        lin("prompt_mlp.ffn.b", m.prompt_ffn.b, ParamGroup::PromptMlps);
    }
    lin("head.a", m.head.a, ParamGroup::Head);
    lin("head.b", m.head.b, ParamGroup::Head);
}

template <typename T>
bool param_is_trainable(const RunConfig& cfg, const ParamRef<T>& p) {
    if (p.group != ParamGroup::Backbone) return true;
    if (p.is_norm) return cfg.unfreeze_norms;
    if (p.is_class_token) return cfg.unfreeze_class_token;
    return false;
}

// Applies the freeze policy and returns the ordered list of trainable
// parameter names.
template <typename T>
std::vector<std::string> apply_freeze_policy(Model<T>& m) {
    std::vector<std::string> trainable;
    visit_params(m, [&](const ParamRef<T>& p) {
        const bool t = param_is_trainable(m.cfg, p);
        const_cast<Tensor<T>&>(p.tensor).set_requires_grad(t);
        if (t) trainable.push_back(p.name);
    });
    return trainable;
}

template <typename T>
std::vector<ParamRef<T>> collect_params(Model<T>& m, bool trainable_only = false) {
    std::vector<ParamRef<T>> out;
    visit_params(m, [&](const ParamRef<T>& p) {
        if (!trainable_only || param_is_trainable(m.cfg, p)) out.push_back(p);
    });
    return out;
}

// ---------------------------------------------------------------------------
// parameter audit

struct AuditRow {
    std::string component;
    std::size_t params = 0;
    bool trainable = false;
};

struct AuditReport {
    std::size_t total = 0;
    std::size_t tunable = 0;
    double ratio = 0.0;  // tunable / total
    std::vector<AuditRow> rows;
    std::string placement_note;
};

template <typename T>
AuditReport audit_parameters(Model<T>& m) {
    AuditReport rep;
    std::vector<AuditRow> rows;
    auto row_for = [&](ParamGroup g, bool trainable) -> AuditRow& {
        const std::string name = param_group_name(g);
        for (auto& r : rows)
            if (r.component == name) return r;
        rows.push_back(AuditRow{name, 0, trainable});
        return rows.back();
    };
    visit_params(m, [&](const ParamRef<T>& p) {
        const bool t = param_is_trainable(m.cfg, p);
        auto& row = row_for(p.group, t);
        row.params += p.tensor.size();
        row.trainable = row.trainable || t;
        rep.total += p.tensor.size();
        if (t) rep.tunable += p.tensor.size();
    });
    rep.rows = std::move(rows);
    rep.ratio = rep.total ? static_cast<double>(rep.tunable) / static_cast<double>(rep.total) : 0.0;
    rep.placement_note =
        "low-rank deltas sit on the q, k and v thirds of each block's fused qkv projection "
        "(rank r each); the ffn second linear carries the shared prompt path instead of a "
        "weight delta, which is what reproduces the published tunable-parameter counts";
    return rep;
}

// ---------------------------------------------------------------------------
// inference-time consolidation

// Folds every low-rank delta into its frozen qkv weight and drops the
// factors. The prompt machinery and head stay untouched.
template <typename T>
void merge_adapters(Model<T>& m) {
    if (!m.has_adapters()) throw ContractError("no adapters found");
    const std::size_t d = m.cfg.dim;
    for (auto& b : m.blocks) {
        auto w = b.qkv.weight.values();
        for (int s = 0; s < 3; ++s) {
            const auto& pair = b.qkv_lora[s];
            const auto delta = matmul(pair.down, pair.up);  // d x d
            const auto dv = delta.values();
            for (std::size_t r = 0; r < d; ++r)
                for (std::size_t c = 0; c < d; ++c)
                    w[r * 3 * d + s * d + c] += pair.scaling * dv[r * d + c];
        }
        for (int s = 0; s < 3; ++s) b.qkv_lora[s] = LoraPair<T>{};
        b.has_lora = false;
    }
    m.cfg.merged = true;
}

// ---------------------------------------------------------------------------
// forward

template <typename T>
struct ModelOutput {
    Tensor<T> logits;  // 1 x num_classes
    Tensor<T> mask_scores;  // N_total x 1; undefined when selection is off
    SelectionState<T> selection;
    TokenSequence<T> sequence;  // final-layer tokens with roles and centers
};

template <typename T>
struct ForwardOptions {
    bool training = false;
    Rng* droppath_rng = nullptr;
    std::vector<std::vector<Tensor<T>>>* attention_probe = nullptr;
};

template <typename T>
ModelOutput<T> model_forward(Model<T>& m, const PointCloud<T>& cloud,
                             const ForwardOptions<T>& opt = {}) {
    const auto& cfg = m.cfg;
    ModelOutput<T> out;

    auto patches = build_patches(cloud, cfg.patch_centers, cfg.patch_neighbors);
    auto patch_tokens = mini_pointnet_forward(patches_to_tensor(patches), cfg.patch_neighbors,
                                              m.embedder);
    patch_tokens = add(patch_tokens, pos_mlp_forward(centers_to_tensor(patches.centers), m.pos_net));

    std::vector<Tensor<T>> seq_parts{add(m.class_token, m.class_pos), patch_tokens};
    std::vector<std::array<T, 3>> centers{{T(0), T(0), T(0)}};
    std::vector<TokenRole> roles{TokenRole::Class};
    for (const auto& c : patches.centers) {
        centers.push_back(c);
        roles.push_back(TokenRole::Patch);
    }

    if (cfg.selection_enabled) {
        out.selection = run_token_selection(cloud, cfg.scales, m.prompt_embedder,
                                            m.mask_predictor);
        out.mask_scores = out.selection.all_scores;
        if (out.selection.selected_tokens.defined()) {
            auto prompt_tokens =
                add(out.selection.selected_tokens,
                    pos_mlp_forward(centers_to_tensor(out.selection.selected_centers),
                                    m.prompt_pos));
            seq_parts.push_back(prompt_tokens);
            for (const auto& c : out.selection.selected_centers) {
                centers.push_back(c);
                roles.push_back(TokenRole::Prompt);
            }
        }
    }

    auto tokens = concat_rows(seq_parts);

    std::vector<BlockContext<T>> contexts(m.blocks.size());
    const bool droppath_active = opt.training && cfg.drop_path > 0.0;
    if (droppath_active && opt.droppath_rng == nullptr)
        throw ContractError("model_forward: drop-path in training mode needs an rng");
    for (std::size_t i = 0; i < contexts.size(); ++i) {
        auto& ctx = contexts[i];
        if (cfg.selection_enabled) {
            ctx.prompt_qkv = &m.prompt_qkv;
            ctx.prompt_ffn = &m.prompt_ffn;
        }
        if (droppath_active) {
            const T keep_scale = static_cast<T>(1.0 / (1.0 - cfg.drop_path));
            ctx.keep_attn = opt.droppath_rng->uniform() < cfg.drop_path ? T(0) : keep_scale;
            ctx.keep_ffn = opt.droppath_rng->uniform() < cfg.drop_path ? T(0) : keep_scale;
        }
    }

    Tensor<T> cur = tokens;
    for (std::size_t i = 0; i < m.blocks.size(); ++i) {
        std::vector<Tensor<T>> weights;
        cur = attention_forward(cur, m.blocks[i], cfg.heads, contexts[i],
                                opt.attention_probe ? &weights : nullptr);
        if (opt.attention_probe) opt.attention_probe->push_back(std::move(weights));
        cur = ffn_forward(cur, m.blocks[i], contexts[i]);
    }
    cur = layer_norm(cur, m.final_norm.gamma, m.final_norm.beta, T(1e-5));

    out.sequence = TokenSequence<T>{cur, std::move(centers), std::move(roles)};
    auto pooled = pool_features(out.sequence, cfg.pool_includes_prompts);
    out.logits = head_forward(pooled, m.head);
    return out;
}

template <typename T>
std::size_t predicted_class(const ModelOutput<T>& out) {
    return argmax<T>(out.logits.values());
}

}  // namespace plora
