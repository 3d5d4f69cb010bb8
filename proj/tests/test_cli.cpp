#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include "json.hpp"
#include "seg/seg.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = SEG_CLI_PATH;

int run(const std::string& args, const fs::path& log) {
    const std::string cmd = "\"" + kCli + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / ("seg_cli_" + std::string(info->name()) + "_" + std::to_string(::getpid()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    fs::path data() {
        const fs::path d = dir_ / "data";
        EXPECT_EQ(run("gen-synthetic --entities 50 --relations 5 --avg-degree 5 --seed 3 --out \"" + d.string() + "\"",
                      dir_ / "gen.log"),
                  0)
            << slurp(dir_ / "gen.log");
        return d;
    }

    std::string train_args(const fs::path& d, const fs::path& out) {
        return "train --kg1 \"" + (d / "kg1").string() + "\" --kg2 \"" + (d / "kg2").string() + "\" --seeds \"" +
               (d / "seeds.tsv").string() + "\" --preset desk --epochs 20 --dim 8 --expansion-interval 10 --quiet --out \"" +
               out.string() + "\"";
    }

    fs::path dir_;
};

}  // namespace

TEST_F(CliTest, GenerateIsByteIdentical) {
    ASSERT_EQ(run("gen-synthetic --entities 30 --seed 5 --out \"" + (dir_ / "a").string() + "\"", dir_ / "log"), 0);
    ASSERT_EQ(run("gen-synthetic --entities 30 --seed 5 --out \"" + (dir_ / "b").string() + "\"", dir_ / "log"), 0);
    for (const char* f : {"kg1/triples", "kg2/triples", "kg2/ent_ids", "seeds.tsv", "manifest.json"})
        EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
    EXPECT_EQ(read_json(dir_ / "a" / "manifest.json").at("kg1").at("entities"), 30);
}

TEST_F(CliTest, TrainWritesArtifactsAndEvalAgrees) {
    const fs::path d = data();
    const fs::path out = dir_ / "run";
    ASSERT_EQ(run(train_args(d, out), dir_ / "train.log"), 0) << slurp(dir_ / "train.log");
    for (const char* f : {"checkpoint.json", "manifest.json", "trace.jsonl", "report.json", "soft_labels.tsv", "pseudo_seeds.tsv"})
        EXPECT_TRUE(fs::exists(out / f)) << f;
    const auto report = read_json(out / "report.json");
    for (const char* k : {"hit1", "hit5", "mrr", "n_test", "config_digest"}) EXPECT_TRUE(report.contains(k)) << k;
    const auto manifest = read_json(out / "manifest.json");
    EXPECT_EQ(manifest.at("config").at("epochs"), 20);
    EXPECT_EQ(manifest.at("config").at("match_e"), 2);
    EXPECT_EQ(manifest.at("config_digest"), report.at("config_digest"));
    EXPECT_TRUE(manifest.at("inputs").contains("kg1"));

    std::size_t lines = 0;
    std::istringstream trace(slurp(out / "trace.jsonl"));
    for (std::string line; std::getline(trace, line); ++lines) {
        const auto j = nlohmann::json::parse(line);
        for (const char* k : {"epoch", "loss", "val_hit1", "n_pseudo"}) EXPECT_TRUE(j.contains(k)) << k;
    }
    EXPECT_GE(lines, 1u);

    ASSERT_EQ(run("eval --ckpt \"" + (out / "checkpoint.json").string() + "\" --out \"" + (dir_ / "eval.json").string() + "\"",
                  dir_ / "eval.log"),
              0)
        << slurp(dir_ / "eval.log");
    const auto ev = read_json(dir_ / "eval.json");
    EXPECT_EQ(ev.at("hit1"), report.at("hit1"));
    EXPECT_EQ(ev.at("mrr"), report.at("mrr"));
}

TEST_F(CliTest, RepeatedTrainingIsByteIdentical) {
    const fs::path d = data();
    ASSERT_EQ(run(train_args(d, dir_ / "r1"), dir_ / "log"), 0);
    ASSERT_EQ(run(train_args(d, dir_ / "r2"), dir_ / "log"), 0);
    for (const char* f : {"checkpoint.json", "trace.jsonl", "report.json", "manifest.json"})
        EXPECT_EQ(slurp(dir_ / "r1" / f), slurp(dir_ / "r2" / f)) << f;
}

TEST_F(CliTest, ConfigFileAndFlagPrecedence) {
    const fs::path d = data();
    {
        std::ofstream cfg(dir_ / "cfg.json");
        cfg << R"({"epochs": 12, "dim": 6, "lr": 0.002})";
    }
    const fs::path out = dir_ / "run";
    ASSERT_EQ(run(train_args(d, out) + " --config \"" + (dir_ / "cfg.json").string() + "\"", dir_ / "log"), 0)
        << slurp(dir_ / "log");
    const auto cfg = read_json(out / "manifest.json").at("config");
    EXPECT_EQ(cfg.at("epochs"), 20);  // flag beats file
    EXPECT_EQ(cfg.at("dim"), 8);
    EXPECT_EQ(cfg.at("lr"), 0.002);  // file beats preset
}

TEST_F(CliTest, AblationFlagsDisableComponents) {
    const fs::path d = data();
    const fs::path out = dir_ / "run";
    ASSERT_EQ(run(train_args(d, out) + " --ablate bwm --ablate softlabels", dir_ / "log"), 0) << slurp(dir_ / "log");
    const auto cfg = read_json(out / "manifest.json").at("config");
    EXPECT_EQ(cfg.at("enable_weighted"), false);
    EXPECT_EQ(cfg.at("enable_soft_labels"), false);
    EXPECT_EQ(run(train_args(d, dir_ / "x") + " --ablate everything", dir_ / "log"), 2);
}

TEST_F(CliTest, FoldsWriteSummary) {
    const fs::path d = data();
    const fs::path out = dir_ / "run";
    ASSERT_EQ(run(train_args(d, out) + " --folds 2 --train-ratio 0.3 --val-ratio 0.1 --test-ratio 0.6", dir_ / "log"), 0)
        << slurp(dir_ / "log");
    EXPECT_TRUE(fs::exists(out / "fold0" / "checkpoint.json"));
    EXPECT_TRUE(fs::exists(out / "fold1" / "checkpoint.json"));
    const auto s = read_json(out / "summary.json");
    EXPECT_EQ(s.at("folds"), 2);
    EXPECT_TRUE(s.at("mean").contains("hit1"));
    EXPECT_TRUE(s.at("stddev").contains("mrr"));
    ASSERT_EQ(run("eval --run \"" + out.string() + "\" --folds 2 --out \"" + (dir_ / "e.json").string() + "\"", dir_ / "log"),
              0)
        << slurp(dir_ / "log");
    EXPECT_EQ(read_json(dir_ / "e.json").at("mean"), s.at("mean"));
}

TEST_F(CliTest, UsageErrorsExitTwo) {
    const fs::path d = data();
    EXPECT_EQ(run("train --kg1 x", dir_ / "log"), 2);
    EXPECT_EQ(run("frobnicate", dir_ / "log"), 2);
    EXPECT_EQ(run(train_args(d, dir_ / "o") + " --lr -1", dir_ / "log"), 2);
    EXPECT_NE(slurp(dir_ / "log").find("lr"), std::string::npos);
    EXPECT_EQ(run(train_args(d, dir_ / "o") + " --preset huge", dir_ / "log"), 2);
    {
        std::ofstream cfg(dir_ / "bad.json");
        cfg << R"({"not_a_field": 1})";
    }
    EXPECT_EQ(run(train_args(d, dir_ / "o") + " --config \"" + (dir_ / "bad.json").string() + "\"", dir_ / "log"), 2);
    EXPECT_NE(slurp(dir_ / "log").find("not_a_field"), std::string::npos);
    EXPECT_EQ(run("gen-synthetic --entities 3 --out \"" + (dir_ / "g").string() + "\"", dir_ / "log"), 2);
}

TEST_F(CliTest, DataErrorsExitThree) {
    const fs::path d = data();
    {
        std::ofstream t(d / "kg1" / "triples", std::ios::app);
        t << "0\t0\t999999\n";
    }
    EXPECT_EQ(run(train_args(d, dir_ / "o"), dir_ / "log"), 3);
    EXPECT_NE(slurp(dir_ / "log").find("999999"), std::string::npos) << slurp(dir_ / "log");
    EXPECT_EQ(run("eval --ckpt \"" + (dir_ / "missing.json").string() + "\"", dir_ / "log"), 3);
}

TEST_F(CliTest, HelpListsEveryConfigField) {
    ASSERT_EQ(run("train --help", dir_ / "help"), 0);
    const std::string help = slurp(dir_ / "help");
    const nlohmann::json fields = seg::TrainConfig{};
    for (const auto& [key, value] : fields.items()) {
        std::string flag = "--" + key;
        std::replace(flag.begin(), flag.end(), '_', '-');
        EXPECT_NE(help.find(flag), std::string::npos) << flag;
    }
    EXPECT_NE(help.find("desk preset: 500"), std::string::npos);
}
