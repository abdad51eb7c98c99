// SPDX-License-Identifier: Apache-2.0
//
// plora command line: finetune / eval / merge / audit / inspect-tokens.

#include <CLI11.hpp>

#include "plora/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"point-cloud transformer fine-tuning with low-rank adapters and "
                 "multi-scale token prompts"};
    app.require_subcommand(1);

    plora::FinetuneArgs ft;
    auto* finetune = app.add_subcommand("finetune", "train adapters on a frozen backbone");
    finetune->add_option("--config", ft.config_path, "run configuration file");
    finetune->add_option("--backbone", ft.backbone, "'random' or a checkpoint path")
        ->capture_default_str();
    finetune->add_option("--data", ft.data, "'synthetic' or a manifest path")
        ->capture_default_str();
    finetune->add_option("--out", ft.out_path, "output checkpoint path")->required();
    finetune->add_option("--log", ft.log_path, "metrics log path (default: <out>.log)");
    auto* seed_opt = finetune->add_option("--seed", ft.seed, "override the config seed");
    finetune->add_option("--epochs", ft.epochs_override, "override the config epoch count");

    std::string eval_ckpt, eval_data = "synthetic";
    auto* eval = app.add_subcommand("eval", "report overall accuracy of a checkpoint");
    eval->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
    eval->add_option("--data", eval_data, "'synthetic' or a manifest path")
        ->capture_default_str();

    std::string merge_in, merge_out;
    auto* merge = app.add_subcommand("merge", "fold adapters into the frozen weights");
    merge->add_option("--in", merge_in, "input checkpoint")->required();
    merge->add_option("--out", merge_out, "output checkpoint")->required();

    std::string audit_config;
    bool audit_machine = false;
    auto* audit = app.add_subcommand("audit", "count total and tunable parameters");
    audit->add_option("--config", audit_config, "run configuration file");
    audit->add_flag("--machine", audit_machine, "emit key=value output");

    std::string it_ckpt, it_cloud, it_out;
    auto* inspect = app.add_subcommand("inspect-tokens", "dump per-scale token selection");
    inspect->add_option("--ckpt", it_ckpt, "checkpoint path")->required();
    inspect->add_option("--cloud", it_cloud, "xyz point cloud file")->required();
    inspect->add_option("--out", it_out, "optional selection dump file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : plora::kExitConfig;
    }

    ft.seed_set = seed_opt->count() > 0;

    if (finetune->parsed()) return plora::cmd_finetune(ft);
    if (eval->parsed()) return plora::cmd_eval(eval_ckpt, eval_data);
    if (merge->parsed()) return plora::cmd_merge(merge_in, merge_out);
    if (audit->parsed()) return plora::cmd_audit(audit_config, audit_machine);
    if (inspect->parsed()) return plora::cmd_inspect_tokens(it_ckpt, it_cloud, it_out);
    return plora::kExitConfig;
}
