#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "paracolor/cli.hpp"
#include "paracolor/error.hpp"
#include "paracolor/metrics.hpp"
#include "paracolor/training.hpp"
#include "support/fixtures.hpp"

using namespace paracolor;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "paracolor");
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class CliRun : public ::testing::Test {
protected:
    // Small random-init checkpoints where colorize and benchmark look by default.
    void write_checkpoints() {
        const training::OutputLayout layout{run_dir()};
        layout.create();
        nets::save_checkpoint(*nets::build_generator(nets::generator_spec(nets::Variant::v3, 4, 32), 1),
                              layout.generator_checkpoint(training::Pipeline::foreground), "adversarial_fg", 0);
        nets::save_checkpoint(*nets::build_generator(nets::generator_spec(nets::Variant::v2, 4, 32), 2),
                              layout.generator_checkpoint(training::Pipeline::background), "adversarial_bg", 0);
        fusion::FusionNetSpec f;
        f.stem_channels = 4;
        f.dense_layers = 2;
        f.growth = 4;
        f.decoder_layers = 2;
        nets::save_checkpoint(*fusion::build_fusion_net(f, 3), layout.fusion_checkpoint(), "fusion", 0);
    }

    std::string run_dir() const { return (dir_ / "run").string(); }

    fixtures::TempDir dir_{"cli"};
};

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
    EXPECT_EQ(run({"--help"}).code, 0);
    EXPECT_EQ(run({"colorize", "--help"}).code, 0);
    EXPECT_EQ(run({}).code, 1);
    EXPECT_EQ(run({"paint"}).code, 1);
    const auto bad = run({"evaluate", "--bogus"});
    EXPECT_EQ(bad.code, 1);
    EXPECT_NE(bad.err.find("--generated"), std::string::npos);  // subcommand help follows the error
}

TEST(Cli, DefaultOutDirHonoursEnvironment) {
    ::setenv("PARACOLOR_OUT", "/tmp/somewhere", 1);
    EXPECT_EQ(cli::default_out_dir(), "/tmp/somewhere");
    ::unsetenv("PARACOLOR_OUT");
    EXPECT_EQ(cli::default_out_dir(), "runs/default");
}

TEST(Cli, HasColor) {
    EXPECT_FALSE(cli::has_color(data::RgbImage(4, 4, 0.3)));
    data::RgbImage c(4, 4, 0.3);
    c.at(0, 1, 1) = 0.31;
    EXPECT_TRUE(cli::has_color(c));
}

TEST_F(CliRun, PrepareWritesManifestAndEcho) {
    fixtures::write_fixture(dir_ / "images", 3, 32, 1);
    const auto r = run({"prepare", "--images", (dir_ / "images").string(), "--out-dir", run_dir()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("images (main): 3"), std::string::npos);
    EXPECT_EQ(data::load_manifest_cache(dir_ / "run" / "manifest.json").entries.size(), 3u);
    const json echo = json::parse(slurp(dir_ / "run" / "prepare.config.json"));
    EXPECT_EQ(echo["images"], (dir_ / "images").string());
    EXPECT_EQ(run({"prepare", "--images", (dir_ / "missing").string(), "--out-dir", run_dir()}).code, 2);
}

TEST_F(CliRun, TrainExitCodesAndConfigPrecedence) {
    fixtures::write_fixture(dir_ / "images", 4, 32, 1);
    {
        std::ofstream cfg(dir_ / "cfg.json");
        cfg << json{{"resolution", 32}, {"batch_size", 2}, {"max_steps", 2}, {"seed", 5},
                    {"generator", {{"base_channels", 4}, {"depth", 3}}},
                    {"discriminator", {{"base_channels", 4}}}}
                   .dump();
    }
    const std::vector<std::string> common{"--config", (dir_ / "cfg.json").string(), "--images",
                                          (dir_ / "images").string(), "--out-dir", run_dir()};
    auto with = [&](std::vector<std::string> head) {
        head.insert(head.end(), common.begin(), common.end());
        return run(head);
    };
    EXPECT_EQ(with({"train", "--stage", "adversarial_fg"}).code, 1);  // no pretrained generator
    EXPECT_EQ(with({"train", "--stage", "adversarial_bg", "--from-scratch"}).code, 2);  // no scenes
    EXPECT_EQ(with({"train", "--stage", "pretrain", "--set", "weights.lambda_l1=-1"}).code, 1);
    EXPECT_EQ(with({"train", "--stage", "pretrain", "--set", "unknown_field=1"}).code, 1);

    const auto r = with({"train", "--stage", "pretrain", "--set", "seed=6", "--seed", "7", "--set",
                         "pipelines=foreground"});
    ASSERT_EQ(r.code, 0) << r.err;
    const json echo = json::parse(slurp(dir_ / "run" / "train_pretrain.config.json"));
    EXPECT_EQ(echo["seed"], 7);
    EXPECT_EQ(echo["batch_size"], 2);
    EXPECT_EQ(echo["resolution"], 32);
    EXPECT_TRUE(fs::exists(training::OutputLayout{run_dir()}.pretrain_checkpoint(training::Pipeline::foreground)));
    EXPECT_EQ(with({"train", "--stage", "adversarial_fg", "--set", "max_steps=1"}).code, 0);
}

TEST_F(CliRun, ColorizeIsDeterministicAndWritesIntermediates) {
    write_checkpoints();
    fixtures::write_fixture(dir_ / "in", 2, 40, 2);
    for (const char* name : {"a", "b"}) {
        const auto r = run({"colorize", "--input", (dir_ / "in").string(), "--output", (dir_ / name).string(),
                            "--out-dir", run_dir(), "--save-intermediates", "--fusion-strategy", "l1norm"});
        ASSERT_EQ(r.code, 0) << r.err;
        EXPECT_NE(r.err.find("color image"), std::string::npos);
    }
    for (int i = 0; i < 2; ++i) {
        const auto file = fixtures::fixture_name(i);
        ASSERT_TRUE(fs::exists(dir_ / "a" / file));
        EXPECT_EQ(slurp(dir_ / "a" / file), slurp(dir_ / "b" / file));
        EXPECT_EQ(data::read_image(dir_ / "a" / file).width, 40);
        EXPECT_TRUE(fs::exists(dir_ / "a" / "intermediates" / (fixtures::fixture_id(i) + "_foreground.png")));
    }
    EXPECT_EQ(run({"colorize", "--input", (dir_ / "in").string(), "--out-dir", (dir_ / "empty").string()}).code, 1);
    EXPECT_EQ(run({"colorize", "--input", (dir_ / "in").string(), "--out-dir", run_dir(), "--fusion-strategy",
                   "max"})
                  .code,
              1);
}

TEST_F(CliRun, EvaluateWritesReports) {
    fixtures::write_fixture(dir_ / "ref", 3, 32, 1);
    fixtures::write_fixture(dir_ / "gen", 3, 32, 2);
    const auto r = run({"evaluate", "--generated", (dir_ / "gen").string(), "--reference", (dir_ / "ref").string(),
                        "--out-dir", run_dir()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto reports = training::OutputLayout{run_dir()}.reports();
    const json report = json::parse(slurp(reports / "metrics.json"));
    EXPECT_EQ(report["images"].size(), 3u);
    EXPECT_EQ(report["counts"]["pairs"], 3);
    EXPECT_GT(report["aggregate"]["fid"].get<double>(), 0.0);
    const std::string csv = slurp(reports / "metrics.csv");
    EXPECT_EQ(csv.rfind("name,psnr,ssim,colorfulness_gen,colorfulness_ref,delta_colorful,fid\n", 0), 0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
    EXPECT_TRUE(fs::exists(fs::path(run_dir()) / "evaluate.config.json"));

    fixtures::write_fixture(dir_ / "gen_extra", 4, 32, 2);
    const std::vector<std::string> extra{"evaluate", "--generated", (dir_ / "gen_extra").string(), "--reference",
                                         (dir_ / "ref").string(), "--out-dir", run_dir()};
    EXPECT_EQ(run(extra).code, 2);
    auto partial = extra;
    partial.push_back("--allow-partial");
    const auto p = run(partial);
    EXPECT_EQ(p.code, 0);
    EXPECT_NE(p.err.find(fixtures::fixture_id(3)), std::string::npos);

    fixtures::write_fixture(dir_ / "gen_big", 3, 48, 2);
    EXPECT_EQ(run({"evaluate", "--generated", (dir_ / "gen_big").string(), "--reference", (dir_ / "ref").string(),
                   "--out-dir", run_dir()})
                  .code,
              2);
}

TEST_F(CliRun, EvaluateExternalFeatures) {
    fixtures::write_fixture(dir_ / "ref", 3, 32, 1);
    metrics::FeatureFile f{"ext", Eigen::MatrixXd::Random(3, 2)};
    metrics::write_feature_file(dir_ / "g.csv", f);
    metrics::write_feature_file(dir_ / "r.csv", f);
    const auto r = run({"evaluate", "--generated", (dir_ / "ref").string(), "--reference", (dir_ / "ref").string(),
                        "--embed-backend", "external", "--generated-features", (dir_ / "g.csv").string(),
                        "--reference-features", (dir_ / "r.csv").string(), "--out-dir", run_dir()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("fid (external): 0"), std::string::npos);
    EXPECT_EQ(run({"evaluate", "--generated", (dir_ / "ref").string(), "--reference", (dir_ / "ref").string(),
                   "--embed-backend", "external", "--out-dir", run_dir()})
                  .code,
              1);
}

TEST_F(CliRun, ScoreHumanEval) {
    std::ofstream(dir_ / "h.csv") << "c1,c2,c3,c4\n6,37,52,5\n12,40,40,8\n6,29,55,10\n7,34,49,10\n";
    const auto r = run({"score-humaneval", (dir_ / "h.csv").string(), "--out-dir", run_dir()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("fooling_score: 0.5375"), std::string::npos);
    EXPECT_NE(r.out.find("decisions: 400"), std::string::npos);
    const json j = json::parse(slurp(training::OutputLayout{run_dir()}.reports() / "humaneval.json"));
    EXPECT_DOUBLE_EQ(j["fooling_score"].get<double>(), 0.5375);
    std::ofstream(dir_ / "bad.csv") << "1,2,3\n";
    EXPECT_EQ(run({"score-humaneval", (dir_ / "bad.csv").string(), "--out-dir", run_dir()}).code, 2);
}

TEST_F(CliRun, BenchmarkReportsThreeStages) {
    write_checkpoints();
    const auto r = run({"benchmark", "--n-images", "2", "--resolution", "32", "--out-dir", run_dir()});
    ASSERT_EQ(r.code, 0) << r.err;
    const json j = json::parse(slurp(training::OutputLayout{run_dir()}.reports() / "benchmark.json"));
    EXPECT_NE(r.out.find("end_to_end"), std::string::npos);
    EXPECT_NE(j.dump().find("fusion"), std::string::npos);
}
