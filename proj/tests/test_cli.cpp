// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "plora/checkpoint.hpp"
#include "support/fixtures.hpp"

using namespace plora;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int exit_code = -1;
    std::string output;
};

CliResult run_cli(const std::string& args) {
    const std::string cmd = std::string(PLORA_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CliResult res;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) res.output.append(buf, n);
    const int rc = pclose(pipe);
    res.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    return res;
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("plora_cli_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string write_tiny_config(const TempDir& tmp, const std::string& name = "tiny.cfg") {
    auto cfg = fixtures::tiny_config();
    cfg.augment = false;
    std::ofstream f(tmp.file(name));
    f << cfg.serialize();
    return tmp.file(name);
}

std::vector<char> read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f);
    return std::vector<char>(std::istreambuf_iterator<char>(f), {});
}

std::string last_log_line(const std::string& path) {
    std::ifstream f(path);
    REQUIRE(f);
    std::string line, last;
    while (std::getline(f, line))
        if (!line.empty()) last = line;
    return last;
}

}  // namespace

TEST_SUITE("cli") {
    TEST_CASE("finetune on synthetic data writes a checkpoint and a metrics log") {
        TempDir tmp;
        const auto cfg = write_tiny_config(tmp);
        auto res = run_cli("finetune --config " + cfg + " --data synthetic --epochs 2 --out " +
                           tmp.file("m.plrk"));
        CAPTURE(res.output);
        CHECK(res.exit_code == 0);
        CHECK(fs::exists(tmp.file("m.plrk")));
        CHECK(fs::exists(tmp.file("m.plrk.log")));
        const auto line = last_log_line(tmp.file("m.plrk.log"));
        CHECK(line.find("epoch=1") != std::string::npos);
        CHECK(line.find("eval_acc=") != std::string::npos);
        CHECK(res.output.find(line) != std::string::npos);
    }

    TEST_CASE("same seed twice produces bit-identical checkpoints") {
        TempDir tmp;
        const auto cfg = write_tiny_config(tmp);
        auto r1 = run_cli("finetune --config " + cfg + " --epochs 2 --seed 12 --out " +
                          tmp.file("a.plrk"));
        auto r2 = run_cli("finetune --config " + cfg + " --epochs 2 --seed 12 --out " +
                          tmp.file("b.plrk"));
        REQUIRE(r1.exit_code == 0);
        REQUIRE(r2.exit_code == 0);
        CHECK(read_bytes(tmp.file("a.plrk")) == read_bytes(tmp.file("b.plrk")));
    }

    TEST_CASE("a missing backbone file exits 3 and writes nothing") {
        TempDir tmp;
        const auto cfg = write_tiny_config(tmp);
        auto res = run_cli("finetune --config " + cfg + " --backbone " + tmp.file("absent.plrk") +
                           " --epochs 1 --out " + tmp.file("m.plrk"));
        CHECK(res.exit_code == 3);
        CHECK_FALSE(fs::exists(tmp.file("m.plrk")));
    }

    TEST_CASE("an invalid config exits 2") {
        TempDir tmp;
        std::ofstream(tmp.file("bad.cfg")) << "no_such_key = 1\n";
        auto res = run_cli("finetune --config " + tmp.file("bad.cfg") + " --out " +
                           tmp.file("m.plrk"));
        CHECK(res.exit_code == 2);
    }

    TEST_CASE("eval reproduces the final logged accuracy and prints OA") {
        TempDir tmp;
        const auto cfg = write_tiny_config(tmp);
        auto ft = run_cli("finetune --config " + cfg + " --epochs 2 --out " + tmp.file("m.plrk"));
        REQUIRE(ft.exit_code == 0);
        const auto line = last_log_line(tmp.file("m.plrk.log"));
        const auto at = line.find("eval_acc=");
        REQUIRE(at != std::string::npos);
        const double logged = std::stod(line.substr(at + 9));

        auto ev = run_cli("eval --ckpt " + tmp.file("m.plrk") + " --data synthetic");
        CAPTURE(ev.output);
        CHECK(ev.exit_code == 0);
        char expect[32];
        std::snprintf(expect, sizeof(expect), "OA: %.2f", logged * 100.0);
        CHECK(ev.output.find(expect) != std::string::npos);
    }

    TEST_CASE("eval with a missing checkpoint exits 3") {
        TempDir tmp;
        auto res = run_cli("eval --ckpt " + tmp.file("none.plrk") + " --data synthetic");
        CHECK(res.exit_code == 3);
    }

    TEST_CASE("merge drops exactly the adapter payload and double merge fails") {
        TempDir tmp;
        const auto cfg = write_tiny_config(tmp);
        auto ft = run_cli("finetune --config " + cfg + " --epochs 1 --out " + tmp.file("m.plrk"));
        REQUIRE(ft.exit_code == 0);
        auto mg = run_cli("merge --in " + tmp.file("m.plrk") + " --out " + tmp.file("merged.plrk"));
        REQUIRE(mg.exit_code == 0);

        const auto in_header = read_checkpoint_header(tmp.file("m.plrk"));
        const auto out_header = read_checkpoint_header(tmp.file("merged.plrk"));
        std::uint64_t adapter_bytes = 0, adapter_aligned = 0;
        for (const auto& e : in_header.entries)
            if (e.name.find(".lora.") != std::string::npos) {
                adapter_bytes += e.nbytes;
                adapter_aligned += (e.nbytes + 63) / 64 * 64;
            }
        CHECK(adapter_bytes > 0);
        CHECK(out_header.entries.size() + 6 * fixtures::tiny_config().layers ==
              in_header.entries.size());
        for (const auto& e : out_header.entries)
            CHECK(e.name.find(".lora.") == std::string::npos);

        const auto in_size = fs::file_size(tmp.file("m.plrk"));
        const auto out_size = fs::file_size(tmp.file("merged.plrk"));
        CHECK(in_size > out_size);
        CHECK(in_size - out_size >= adapter_bytes);

        auto dbl = run_cli("merge --in " + tmp.file("merged.plrk") + " --out " +
                           tmp.file("merged2.plrk"));
        CHECK(dbl.exit_code == 2);
        CHECK(dbl.output.find("no adapters found") != std::string::npos);

        // merged model evaluates to the same accuracy
        auto e1 = run_cli("eval --ckpt " + tmp.file("m.plrk") + " --data synthetic");
        auto e2 = run_cli("eval --ckpt " + tmp.file("merged.plrk") + " --data synthetic");
        REQUIRE(e1.exit_code == 0);
        REQUIRE(e2.exit_code == 0);
        CHECK(e1.output == e2.output);
    }

    TEST_CASE("audit emits machine-readable counts for the reference config") {
        auto res = run_cli("audit --machine");
        CAPTURE(res.output);
        CHECK(res.exit_code == 0);
        CHECK(res.output.find("tunable = 779664") != std::string::npos);
        CHECK(res.output.find("total = 22604176") != std::string::npos);
        CHECK(res.output.find("placement = ") != std::string::npos);

        auto human = run_cli("audit");
        CHECK(human.exit_code == 0);
        CHECK(human.output.find("3.45%") != std::string::npos);
    }

    TEST_CASE("inspect-tokens dumps every scale with scores in range, deterministically") {
        TempDir tmp;
        const auto cfg = write_tiny_config(tmp);
        auto ft = run_cli("finetune --config " + cfg + " --epochs 1 --out " + tmp.file("m.plrk"));
        REQUIRE(ft.exit_code == 0);

        Rng rng(600);
        auto cloud = fixtures::random_cloud<float>(32, rng);
        {
            std::ofstream f(tmp.file("cloud.xyz"));
            for (const auto& p : cloud.points)
                f << p[0] << " " << p[1] << " " << p[2] << "\n";
        }
        const std::string cmd = "inspect-tokens --ckpt " + tmp.file("m.plrk") + " --cloud " +
                                tmp.file("cloud.xyz") + " --out " + tmp.file("sel.txt");
        auto r1 = run_cli(cmd);
        CAPTURE(r1.output);
        CHECK(r1.exit_code == 0);
        CHECK(r1.output.find("total_selected=3") != std::string::npos);

        std::size_t scored_lines = 0;
        std::istringstream is(r1.output);
        std::string line;
        while (std::getline(is, line)) {
            const auto at = line.find("score=");
            if (at == std::string::npos) continue;
            ++scored_lines;
            const double s = std::stod(line.substr(at + 6));
            CHECK(s > 0.0);
            CHECK(s < 1.0);
        }
        CHECK(scored_lines == 6);  // 4 + 2 generated tokens in the tiny config

        auto r2 = run_cli(cmd);
        CHECK(r1.output == r2.output);
        auto sel1 = read_bytes(tmp.file("sel.txt"));
        auto r3 = run_cli(cmd);
        CHECK(read_bytes(tmp.file("sel.txt")) == sel1);
    }

    TEST_CASE("inspect-tokens refuses clouds smaller than the largest scale") {
        TempDir tmp;
        const auto cfg = write_tiny_config(tmp);
        auto ft = run_cli("finetune --config " + cfg + " --epochs 1 --out " + tmp.file("m.plrk"));
        REQUIRE(ft.exit_code == 0);
        std::ofstream(tmp.file("small.xyz")) << "0 0 0\n1 0 0\n0 1 0\n";
        auto res = run_cli("inspect-tokens --ckpt " + tmp.file("m.plrk") + " --cloud " +
                           tmp.file("small.xyz"));
        CHECK(res.exit_code == 3);
    }
}
