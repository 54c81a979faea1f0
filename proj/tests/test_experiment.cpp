#include "tamcl/errors.hpp"
#include "tamcl/experiment.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace tamcl;
namespace fs = std::filesystem;

namespace {

const char* kTinyRun = R"(seed: 3
model:
  hidden: 8
  heads: 2
  mlp_dim: 16
  depth: 2
  patch: 4
trainer:
  lr: 0.005
  epochs: 1
  batch_size: 8
  replay_fraction: 0.25
  replay_every: 2
  alpha: 2.5
tasks:
  - id: 1
    n_train: 24
    n_test: 12
    n_labels: 2
    image: [8, 8, 1]
    text_length: 3
    vocab: 8
    seed: 21
  - id: 2
    n_train: 24
    n_test: 12
    n_labels: 3
    image: [8, 8, 1]
    text_length: 3
    vocab: 8
    seed: 22
)";

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& name) {
    auto d = fs::temp_directory_path() / ("tamcl_test_" + name);
    fs::remove_all(d);
    return d;
}

}  // namespace

TEST(RunConfig, ParsesKnobs) {
    const auto c = parse_run_config(kTinyRun);
    EXPECT_EQ(c.seed, 3u);
    EXPECT_EQ(c.model.hidden, 8u);
    EXPECT_EQ(c.model.frozen_layers, 1u);
    EXPECT_EQ(c.model.image_height, 8u);
    EXPECT_EQ(c.model.max_text, 3u);
    EXPECT_EQ(c.model.vocab, 8u);
    EXPECT_EQ(c.trainer.alpha, 2.5);
    EXPECT_EQ(c.trainer.replay_every, 2u);
    ASSERT_EQ(c.tasks.size(), 2u);
    EXPECT_EQ(c.tasks[1].n_labels, 3u);
    EXPECT_TRUE(c.model.use_tab);
}

TEST(RunConfig, FormatRoundTrip) {
    auto c = parse_run_config(std::string(kTinyRun) + "ablate: [no_tab, no_replay]\n");
    c.trainer.task_alpha[2] = 0.125;
    c.trainer.div_mode = DivMode::Literal;
    const auto back = parse_run_config(format_run_config(c));
    EXPECT_EQ(format_run_config(back), format_run_config(c));
    EXPECT_EQ(config_hash(back), config_hash(c));
    EXPECT_TRUE(back.trainer.ablations.no_tab);
    EXPECT_FALSE(back.model.use_tab);
    EXPECT_EQ(back.trainer.task_alpha.at(2), 0.125);

    auto other = c;
    other.trainer.lr *= 2;
    EXPECT_NE(config_hash(other), config_hash(c));
}

TEST(RunConfig, Errors) {
    try {
        parse_run_config(std::string(kTinyRun) + "colour: blue\n");
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("line 32"), std::string::npos) << e.what();
    }
    EXPECT_THROW(parse_run_config("seed: 1\n"), ValidationError);
    EXPECT_THROW(parse_run_config(std::string(kTinyRun) + "ablate: [no_brain]\n"), ValidationError);
    std::string mixed = kTinyRun;
    mixed.replace(mixed.rfind("image: [8, 8, 1]"), 16, "image: [4, 4, 1]");
    EXPECT_THROW(parse_run_config(mixed), ConfigError);
}

TEST(Run, DeterministicArtifacts) {
    auto c = parse_run_config(kTinyRun);
    const auto a = fresh_dir("run_a"), b = fresh_dir("run_b");
    c.output_dir = a;
    const auto ra = run_experiment(c);
    c.output_dir = b;
    const auto rb = run_experiment(c);
    EXPECT_EQ(ra.report, rb.report);
    for (const char* f : {"report.json", "report.csv", "report.txt", "metrics.csv", "final.ckpt", "config.yaml",
                          "checkpoints/after_task_1.ckpt", "checkpoints/after_task_2.ckpt"}) {
        ASSERT_TRUE(fs::exists(a / f)) << f;
        EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
    }
    EXPECT_EQ(ra.report.config_hash, config_hash(c));
    // The written config reproduces the run's hash.
    EXPECT_EQ(config_hash(load_run_config(a / "config.yaml")), config_hash(c));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Run, NoReplayLogsNoReplaySteps) {
    auto c = parse_run_config(std::string(kTinyRun) + "ablate: [no_replay]\n");
    std::size_t replays = 0, steps = 0;
    RunObserver obs;
    obs.on_step = [&](const StepLog& log, const TamClModel&, const TamClModel*) {
        ++steps;
        replays += log.replay;
    };
    const auto r = run_experiment(c, obs);
    EXPECT_EQ(steps, 6u);
    EXPECT_EQ(replays, 0u);
    EXPECT_EQ(r.tasks[1].replay_steps, 0u);

    auto full = parse_run_config(kTinyRun);
    EXPECT_EQ(run_experiment(full).tasks[1].replay_steps, 2u);
}

TEST(RenderReport, RenderIsIdempotentAndRecomputes) {
    auto c = parse_run_config(kTinyRun);
    const auto dir = fresh_dir("render");
    c.output_dir = dir;
    run_experiment(c);
    const auto first = render_report(dir);
    const auto traces = slurp(dir / "traces.csv");
    EXPECT_EQ(render_report(dir), first);
    EXPECT_EQ(slurp(dir / "traces.csv"), traces);
    EXPECT_NE(first.find(config_hash(c)), std::string::npos);
    // One trace line per metrics line.
    const auto metrics = slurp(dir / "metrics.csv");
    EXPECT_EQ(std::count(traces.begin(), traces.end(), '\n'), std::count(metrics.begin(), metrics.end(), '\n'));
    fs::remove_all(dir);
}

TEST(RenderReport, MissingArtifactsAreListed) {
    const auto dir = fresh_dir("empty");
    fs::create_directories(dir);
    try {
        render_report(dir);
        FAIL();
    } catch (const IoError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("report.json"), std::string::npos);
        EXPECT_NE(msg.find("metrics.csv"), std::string::npos);
    }
    fs::remove_all(dir);
}

TEST(Datasets, Materialize) {
    const auto c = parse_run_config(kTinyRun);
    const auto dir = fresh_dir("datasets");
    materialize_datasets(c.tasks, dir);
    for (int id : {1, 2}) {
        const auto train = read_dataset(dir / ("task_" + std::to_string(id) + "_train.bin"));
        EXPECT_EQ(train, generate_task(c.tasks[std::size_t(id - 1)]).train);
    }
    fs::remove_all(dir);
}
