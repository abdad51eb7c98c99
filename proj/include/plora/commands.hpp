// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

namespace plora {

// Exit-code contract shared by every subcommand:
//   0 success, 2 usage/config/schema, 3 data or IO failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;

struct FinetuneArgs {
    std::string config_path;          // empty means built-in defaults
    std::string backbone = "random";  // "random" or a checkpoint path
    std::string data = "synthetic";   // "synthetic" or a manifest path
    std::string out_path;
    std::string log_path;  // empty derives <out>.log
    bool seed_set = false;
    std::uint64_t seed = 0;
    long epochs_override = -1;
};

int cmd_finetune(const FinetuneArgs& args);
int cmd_eval(const std::string& ckpt_path, const std::string& data);
int cmd_merge(const std::string& in_path, const std::string& out_path);
int cmd_audit(const std::string& config_path, bool machine);
int cmd_inspect_tokens(const std::string& ckpt_path, const std::string& cloud_path,
                       const std::string& out_path);

}  // namespace plora
