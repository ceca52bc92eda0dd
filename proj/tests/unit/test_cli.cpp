#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "starnet/cli.hpp"
#include "starnet/errors.hpp"
#include "starnet/trainer.hpp"
#include "support/synth.hpp"

using namespace starnet;

namespace {

int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("starnet");
    for (const std::string& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

} // namespace

TEST_CASE("architecture descriptions parse") {
    SUBCASE("feedforward chain") {
        const Architecture arch = parse_architecture("ff:128-256-784", 0.5);
        REQUIRE(arch.layers.size() == 2);
        CHECK(arch.slope == 0.5);
        const auto& first = std::get<FeedforwardSpec>(arch.layers[0]);
        CHECK(first.in_dim == 128);
        CHECK(first.out_dim == 256);
        const auto& second = std::get<FeedforwardSpec>(arch.layers[1]);
        CHECK(second.in_dim == 256);
        CHECK(second.out_dim == 784);
    }
    SUBCASE("single conv layer") {
        const Architecture arch = parse_architecture("conv:1x8x8:k7m4u2", 1.0);
        REQUIRE(arch.layers.size() == 1);
        const auto& conv = std::get<ConvUnpoolSpec>(arch.layers[0]);
        CHECK(conv.in_channels == 1);
        CHECK(conv.in_height == 8);
        CHECK(conv.in_width == 8);
        CHECK(conv.kernel_size == 7);
        CHECK(conv.pre_shuffle_channels == 4);
        CHECK(conv.unpool_factor == 2);
        CHECK(spec_output_size(arch.layers[0]) == 784);
    }
    SUBCASE("chained conv layers propagate the output shape") {
        const Architecture arch = parse_architecture("conv:1x4x4:k3m16u2-k3m16u2", 0.5);
        REQUIRE(arch.layers.size() == 2);
        const auto& second = std::get<ConvUnpoolSpec>(arch.layers[1]);
        CHECK(second.in_channels == 4);   // 16 / 2^2
        CHECK(second.in_height == 12);    // (4 + 3 - 1) * 2
        CHECK(second.in_width == 12);
        CHECK(second.pre_shuffle_channels == 16);
    }
    SUBCASE("malformed descriptions are refused") {
        CHECK_THROWS_AS((void)parse_architecture("ff:784", 0.5), ConfigError);
        CHECK_THROWS_AS((void)parse_architecture("mlp:4-8", 0.5), ConfigError);
        CHECK_THROWS_AS((void)parse_architecture("conv:1x8x8", 0.5), ConfigError);
        CHECK_THROWS_AS((void)parse_architecture("conv:1x8:k3m4u2", 0.5), ConfigError);
        CHECK_THROWS_AS((void)parse_architecture("conv:1x8x8:k3m3u2", 0.5), ConfigError);
        CHECK_THROWS_AS((void)parse_architecture("ff:12a-784", 0.5), ConfigError);
    }
}

TEST_CASE("validate subcommand reports architecture health") {
    CHECK(run({"validate", "--arch", "ff:16-64", "--count", "100"}) == 0);
    CHECK(run({"validate", "--arch", "ff:64-16", "--count", "100"}) == 3);
    CHECK(run({"validate", "--arch", "ff:16-64"}) == 2);          // neither --count nor --dataset
    CHECK(run({"validate", "--arch", "nonsense", "--count", "5"}) == 2);
    CHECK(run({"validate"}) == 2);                                // --arch is required
    CHECK(run({"--no-such-flag"}) == 2);
}

TEST_CASE("the full command pipeline runs on a synthetic dataset") {
    namespace fs = std::filesystem;
    testsupport::TempDir dir("cli");
    const ImageBatch batch = testsupport::synth_strokes(30, 5);
    const std::string data_path = dir.file("strokes.idx");
    testsupport::write_idx(batch, data_path);
    const std::string out = dir.file("out");

    const int train_rc = run({"train", "--dataset", data_path, "--arch", "ff:16-784",
                              "--epochs", "2", "--seed", "3", "--out", out});
    CHECK(train_rc == 0);
    CHECK(fs::exists(out + "/model.star"));
    CHECK(fs::exists(out + "/metrics.csv"));
    CHECK(fs::exists(out + "/recon_final.pgm"));

    // Metrics are chronological: the data-adjacent layer's epochs come first.
    {
        std::ifstream in(out + "/metrics.csv");
        std::string header;
        std::string first_row;
        REQUIRE(std::getline(in, header));
        REQUIRE(std::getline(in, first_row));
        CHECK(header == "epoch,layer,phase,linear_residual,elastic_loss");
        CHECK(first_row.rfind("1,1,sl,", 0) == 0); // single layer: layer 1 epoch 1 first
    }

    const int infer_rc = run({"infer", "--dataset", data_path, "--model", out + "/model.star",
                              "--out", out});
    CHECK(infer_rc == 0);
    CHECK(fs::exists(out + "/latents_level0.csv"));

    const int recon_rc = run({"reconstruct", "--dataset", data_path, "--model",
                              out + "/model.star", "--out", out});
    CHECK(recon_rc == 0);
    CHECK(fs::exists(out + "/recon.pgm"));

    const int diag_rc = run({"diagnose", "--dataset", data_path, "--model", out + "/model.star",
                             "--out", out});
    CHECK(diag_rc == 0);
    CHECK(fs::exists(out + "/residuals.csv"));

    SUBCASE("an out-of-range latent level is a configuration error") {
        CHECK(run({"infer", "--dataset", data_path, "--model", out + "/model.star", "--level",
                   "9", "--out", out}) == 2);
    }
    SUBCASE("config files supply defaults and flags win") {
        const std::string cfg = dir.file("train.cfg");
        {
            std::ofstream f(cfg);
            f << "dataset=" << data_path << "\n";
            f << "arch=ff:16-784\n";
            f << "epochs=7\n"; // overridden below
            f << "seed=3\n";
        }
        const std::string out2 = dir.file("out2");
        CHECK(run({"train", "--config", cfg, "--epochs", "2", "--out", out2}) == 0);
        // Same data, seed, and epoch count as the flag-only run: identical model.
        CHECK(fs::exists(out2 + "/model.star"));
        std::ifstream a(out + "/model.star", std::ios::binary);
        std::ifstream b(out2 + "/model.star", std::ios::binary);
        const std::string bytes_a((std::istreambuf_iterator<char>(a)),
                                  std::istreambuf_iterator<char>());
        const std::string bytes_b((std::istreambuf_iterator<char>(b)),
                                  std::istreambuf_iterator<char>());
        CHECK(bytes_a == bytes_b);
    }
}

TEST_CASE("failures map to distinct exit codes") {
    testsupport::TempDir dir("clierr");
    const std::string out = dir.file("out");

    SUBCASE("missing dataset file") {
        CHECK(run({"train", "--dataset", dir.file("absent.idx"), "--arch", "ff:16-784",
                   "--out", out}) == 4);
    }
    SUBCASE("invalid architecture for the data") {
        const ImageBatch batch = testsupport::synth_strokes(10, 6);
        const std::string data_path = dir.file("strokes.idx");
        testsupport::write_idx(batch, data_path);
        // 128 -> 784 needs at least 129 datapoints.
        CHECK(run({"train", "--dataset", data_path, "--arch", "ff:128-784",
                   "--out", out}) == 3);
    }
    SUBCASE("corrupt model file") {
        const std::string model = dir.file("model.star");
        {
            std::ofstream f(model, std::ios::binary);
            f << "JUNKJUNKJUNK";
        }
        const ImageBatch batch = testsupport::synth_strokes(3, 7);
        const std::string data_path = dir.file("strokes.idx");
        testsupport::write_idx(batch, data_path);
        CHECK(run({"infer", "--dataset", data_path, "--model", model, "--out", out}) == 4);
    }
}
