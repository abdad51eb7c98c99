// SPDX-License-Identifier: Apache-2.0

#include "plora/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "plora/checkpoint.hpp"
#include "plora/dataset.hpp"
#include "plora/synthetic.hpp"
#include "plora/trainer.hpp"

namespace plora {

namespace {

int config_failure(const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
}

int data_failure(const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
}

SyntheticSpec synthetic_spec_from(const RunConfig& cfg) {
    SyntheticSpec spec;
    spec.classes = cfg.class_names;
    spec.points = cfg.points;
    spec.clouds_per_class = cfg.clouds_per_class;
    spec.noise_sigma = cfg.noise_sigma;
    spec.rotation = cfg.rotation;
    spec.seed = derive_seed(cfg.seed, "dataset");
    return spec;
}

struct Split {
    std::vector<PointCloud<float>> train;
    std::vector<PointCloud<float>> test;
};

// synthetic data comes pre-split; manifests get a seeded stratified 80/20
Split load_split(const RunConfig& cfg, const std::string& data) {
    Split split;
    if (data == "synthetic") {
        auto ds = generate_synthetic_dataset(synthetic_spec_from(cfg));
        split.train = std::move(ds.train);
        split.test = std::move(ds.test);
        return split;
    }
    auto clouds = load_manifest_dataset(data);
    std::map<int, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < clouds.size(); ++i) by_label[clouds[i].label].push_back(i);
    Rng rng(derive_seed(cfg.seed, "split"));
    for (auto& [label, idx] : by_label) {
        for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
        const std::size_t train_n = (idx.size() * 8 + 9) / 10;
        for (std::size_t i = 0; i < idx.size(); ++i)
            (i < train_n ? split.train : split.test).push_back(clouds[idx[i]]);
    }
    return split;
}

// builds a fresh model for cfg, then overwrites its backbone tensors from a
// donor checkpoint whose encoder shape must match
Model<float> model_with_backbone_from(const RunConfig& cfg, const std::string& backbone_path) {
    Model<float> donor = load_checkpoint(backbone_path);
    Model<float> model = build_model<float>(cfg, cfg.seed);
    std::map<std::string, Tensor<float>> donor_params;
    visit_params(donor, [&](const ParamRef<float>& p) {
        if (p.group == ParamGroup::Backbone) donor_params.emplace(p.name, p.tensor);
    });
    visit_params(model, [&](const ParamRef<float>& p) {
        if (p.group != ParamGroup::Backbone) return;
        auto it = donor_params.find(p.name);
        if (it == donor_params.end())
            throw SchemaError(backbone_path + ": backbone tensor '" + p.name + "' not found");
        if (it->second.shape() != p.tensor.shape())
            throw SchemaError(backbone_path + ": backbone tensor '" + p.name +
                              "' has incompatible shape " + shape_str(it->second.shape()));
        auto dst = const_cast<Tensor<float>&>(p.tensor).values();
        auto src = it->second.values();
        std::copy(src.begin(), src.end(), dst.begin());
    });
    return model;
}

double percent(double ratio) { return ratio * 100.0; }

}  // namespace

int cmd_finetune(const FinetuneArgs& args) {
    RunConfig cfg;
    try {
        if (!args.config_path.empty()) cfg = RunConfig::load(args.config_path);
        if (args.seed_set) cfg.seed = args.seed;
        if (args.epochs_override >= 0) cfg.epochs = static_cast<std::size_t>(args.epochs_override);
        if (cfg.warmup_epochs >= cfg.epochs && cfg.epochs > 0) cfg.warmup_epochs = cfg.epochs - 1;
        if (args.out_path.empty()) throw ContractError("finetune: --out is required");
        cfg.validate();
    } catch (const std::exception& e) {
        return config_failure(e);
    }

    Split split;
    try {
        split = load_split(cfg, args.data);
        if (split.train.empty()) throw ContractError("finetune: empty training split");
    } catch (const std::exception& e) {
        return data_failure(e);
    }

    Model<float> model;
    try {
        if (args.backbone == "random") {
            model = build_model<float>(cfg, cfg.seed);
        } else {
            model = model_with_backbone_from(cfg, args.backbone);
        }
    } catch (const SchemaError& e) {
        return config_failure(e);
    } catch (const std::exception& e) {
        return data_failure(e);
    }

    apply_freeze_policy(model);

    const std::string log_path = args.log_path.empty() ? args.out_path + ".log" : args.log_path;
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) {
        std::cerr << "error: cannot write metrics log: " << log_path << "\n";
        return kExitData;
    }

    Trainer<float> trainer(model, split.train.size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto stats = trainer.train_epoch(split.train, epoch);
        stats.eval_acc = split.test.empty() ? 0.0 : evaluate(model, split.test);
        const std::string line = format_epoch_line(epoch, stats);
        std::cout << line << "\n";
        log << line << "\n";
    }

    try {
        save_checkpoint(model, args.out_path);
    } catch (const std::exception& e) {
        return data_failure(e);
    }
    return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data) {
    Model<float> model;
    try {
        model = load_checkpoint(ckpt_path);
    } catch (const SchemaError& e) {
        return config_failure(e);
    } catch (const std::exception& e) {
        return data_failure(e);
    }
    std::vector<PointCloud<float>> eval_set;
    try {
        if (data == "synthetic") {
            eval_set = generate_synthetic_dataset(synthetic_spec_from(model.cfg)).test;
        } else {
            eval_set = load_manifest_dataset(data);
        }
        if (eval_set.empty()) throw ContractError("eval: empty dataset");
        const double oa = evaluate(model, eval_set);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "OA: %.2f", percent(oa));
        std::cout << buf << "\n";
    } catch (const std::exception& e) {
        return data_failure(e);
    }
    return kExitOk;
}

int cmd_merge(const std::string& in_path, const std::string& out_path) {
    Model<float> model;
    try {
        model = load_checkpoint(in_path);
    } catch (const SchemaError& e) {
        return config_failure(e);
    } catch (const std::exception& e) {
        return data_failure(e);
    }
    if (!model.has_adapters()) {
        std::cerr << "error: no adapters found\n";
        return kExitConfig;
    }
    merge_adapters(model);
    try {
        save_checkpoint(model, out_path);
    } catch (const std::exception& e) {
        return data_failure(e);
    }
    return kExitOk;
}

int cmd_audit(const std::string& config_path, bool machine) {
    RunConfig cfg;
    try {
        if (!config_path.empty()) cfg = RunConfig::load(config_path);
        cfg.validate();
    } catch (const std::exception& e) {
        return config_failure(e);
    }
    Model<float> model = build_model<float>(cfg, cfg.seed);
    const AuditReport rep = audit_parameters(model);
    char buf[128];
    if (machine) {
        std::printf("total = %zu\n", rep.total);
        std::printf("tunable = %zu\n", rep.tunable);
        std::snprintf(buf, sizeof(buf), "%.6f", rep.ratio);
        std::printf("ratio = %s\n", buf);
        for (const auto& row : rep.rows) {
            std::printf("component.%s = %zu\n", row.component.c_str(), row.params);
            std::printf("component.%s.trainable = %d\n", row.component.c_str(),
                        row.trainable ? 1 : 0);
        }
        std::printf("placement = %s\n", rep.placement_note.c_str());
    } else {
        std::printf("parameter audit\n");
        std::printf("  %-18s %12s  %s\n", "component", "params", "trainable");
        for (const auto& row : rep.rows)
            std::printf("  %-18s %12zu  %s\n", row.component.c_str(), row.params,
                        row.trainable ? "yes" : "no");
        std::printf("  %-18s %12zu\n", "total", rep.total);
        std::snprintf(buf, sizeof(buf), "%.2f%%", percent(rep.ratio));
        std::printf("  %-18s %12zu  (%s of total)\n", "tunable", rep.tunable, buf);
        std::printf("  note: %s\n", rep.placement_note.c_str());
    }
    return kExitOk;
}

int cmd_inspect_tokens(const std::string& ckpt_path, const std::string& cloud_path,
                       const std::string& out_path) {
    Model<float> model;
    try {
        model = load_checkpoint(ckpt_path);
    } catch (const SchemaError& e) {
        return config_failure(e);
    } catch (const std::exception& e) {
        return data_failure(e);
    }
    if (!model.cfg.selection_enabled) {
        std::cerr << "error: checkpoint has token selection disabled\n";
        return kExitConfig;
    }
    PointCloud<float> cloud;
    try {
        cloud = load_point_cloud_file(cloud_path);
        if (cloud.size() < model.cfg.max_scale_centers() ||
            cloud.size() < model.cfg.patch_centers)
            throw ContractError(cloud_path + ": cloud is smaller than the largest center count");
    } catch (const std::exception& e) {
        return data_failure(e);
    }

    auto state = run_token_selection(cloud, model.cfg.scales, model.prompt_embedder,
                                     model.mask_predictor);
    std::ofstream out;
    if (!out_path.empty()) {
        out.open(out_path, std::ios::trunc);
        if (!out) {
            std::cerr << "error: cannot write " << out_path << "\n";
            return kExitData;
        }
    }
    std::size_t total_selected = 0;
    for (std::size_t m = 0; m < state.scales.size(); ++m) {
        const auto& st = state.scales[m];
        const auto& spec = model.cfg.scales[m];
        std::printf("scale %zu: centers=%zu neighbors=%zu selected=%zu\n", m, spec.centers,
                    spec.neighbors, spec.select);
        std::vector<char> chosen(st.centers.size(), 0);
        for (std::size_t i : state.chosen[m]) chosen[i] = 1;
        total_selected += state.chosen[m].size();
        const auto scores = st.scores.values();
        for (std::size_t i = 0; i < st.centers.size(); ++i) {
            std::printf("scale %zu token %zu: center=(%.6f, %.6f, %.6f) score=%.6f selected=%d\n",
                        m, i, st.centers[i][0], st.centers[i][1], st.centers[i][2],
                        static_cast<double>(scores[i]), chosen[i] ? 1 : 0);
            if (out)
                out << st.centers[i][0] << " " << st.centers[i][1] << " " << st.centers[i][2]
                    << " " << m << " " << (chosen[i] ? 1 : 0) << "\n";
        }
    }
    std::printf("total_selected=%zu\n", total_selected);
    return kExitOk;
}

}  // namespace plora
