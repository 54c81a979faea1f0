#include "tamcl/errors.hpp"
#include "tamcl/evaluation.hpp"
#include "tamcl/task_suite.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace tamcl;

namespace {

ModelConfig tiny_model() {
    ModelConfig c;
    c.hidden = 8;
    c.heads = 2;
    c.mlp_dim = 16;
    c.depth = 2;
    c.patch = 4;
    c.image_height = 8;
    c.image_width = 8;
    c.max_text = 3;
    c.vocab = 8;
    c.frozen_layers = 1;
    return c;
}

TaskSpec tiny_spec(int id, std::size_t labels) {
    TaskSpec s;
    s.task_id = id;
    s.n_train = 8;
    s.n_test = 60;
    s.n_labels = labels;
    s.image_height = 8;
    s.image_width = 8;
    s.text_length = 3;
    s.vocab = 8;
    s.seed = 40 + static_cast<std::uint64_t>(id);
    return s;
}

AccuracyMatrix filled(std::size_t n, std::size_t labels = 4) {
    std::vector<int> ids;
    for (std::size_t k = 0; k < n; ++k) ids.push_back(static_cast<int>(k + 1));
    AccuracyMatrix m(ids, std::vector<std::size_t>(n, labels));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) m.set(j, i, 90.0 - 5.0 * double(i - j) - double(j));
    return m;
}

}  // namespace

TEST(Forgetting, ReferenceExample) {
    const double s_r = 100.0 / 430.0;
    const double expected = (76.09 - 66.09) / (76.09 - s_r);
    EXPECT_DOUBLE_EQ(forgetting_rate(76.09, 66.09, 430), expected);
    EXPECT_NEAR(forgetting_rate(76.09, 66.09, 430), 0.1318, 0.001);
}

TEST(Forgetting, Endpoints) {
    EXPECT_EQ(forgetting_rate(80, 80, 4), 0.0);
    EXPECT_DOUBLE_EQ(forgetting_rate(80, 25, 4), 1.0);
    EXPECT_LT(forgetting_rate(70, 75, 2), 0.0);
}

TEST(Forgetting, DegenerateReference) {
    EXPECT_THROW(forgetting_rate(50, 40, 2), DegenerateReferenceError);
    EXPECT_THROW(forgetting_rate(10, 5, 4), DegenerateReferenceError);
    EXPECT_THROW(forgetting_rate(80, 5, 0), DegenerateReferenceError);
}

TEST(Forgetting, AffineInvariance) {
    // Mapping every accuracy x -> c + k (x - c) about chance c leaves the rate unchanged.
    const double c = 25.0, k = 0.6;
    auto map = [&](double x) { return c + k * (x - c); };
    EXPECT_NEAR(forgetting_rate(map(90), map(70), 4), forgetting_rate(90, 70, 4), 1e-12);
}

TEST(Forgetting, MonotoneInAfter) {
    double prev = -1e9;
    for (double after = 100; after >= 0; after -= 5) {
        const double r = forgetting_rate(100, after, 3);
        EXPECT_GT(r, prev);
        prev = r;
    }
}

TEST(Difficulty, Examples) {
    EXPECT_EQ(difficulty_score(80000, 2), 40000.0);
    EXPECT_NEAR(difficulty_score(18032, 2910), 6.19, 0.01);
    EXPECT_THROW(difficulty_score(10, 0), ConfigError);
}

TEST(AccuracyMatrixTest, BoundsAndCompleteness) {
    AccuracyMatrix m({1, 2, 3}, {2, 2, 2});
    m.set(0, 0, 90);
    EXPECT_THROW(m.set(1, 0, 50), IndexError);
    EXPECT_THROW(m.set(0, 3, 50), IndexError);
    EXPECT_THROW(m.set(0, 1, 101), ContractError);
    EXPECT_THROW(m.require_complete(), CompletenessError);
    try {
        m.require_complete();
    } catch (const CompletenessError& e) {
        EXPECT_NE(std::string(e.what()).find("task 1 after task 2"), std::string::npos) << e.what();
    }
    EXPECT_THROW(build_report(m), CompletenessError);
    EXPECT_THROW(AccuracyMatrix({1, 2}, {2}), ShapeError);
}

TEST(Report, EntryCounts) {
    for (std::size_t n : {1u, 3u, 5u}) {
        const auto r = build_report(filled(n));
        EXPECT_EQ(r.forgetting.size(), n * (n - 1) / 2);
        EXPECT_EQ(r.tasks.size(), n);
    }
    EXPECT_FALSE(build_report(filled(1)).tasks[0].mean_forgetting);
}

TEST(Report, MatchesRecomputation) {
    const auto m = filled(4, 5);
    const auto r = build_report(m, {100, 200, 300, 400});
    for (const auto& e : r.forgetting) {
        const double sa = *m.get(e.j, e.j), after = *m.get(e.j, e.i);
        ASSERT_TRUE(e.rate);
        EXPECT_DOUBLE_EQ(*e.rate, (sa - after) / (sa - 20.0));
        EXPECT_EQ(e.s_r, 20.0);
    }
    // Task 1: mean over the three later tasks.
    const double sa = *m.get(0, 0);
    double mean = 0;
    for (std::size_t i = 1; i < 4; ++i) mean += (sa - *m.get(0, i)) / (sa - 20.0);
    EXPECT_DOUBLE_EQ(*r.tasks[0].mean_forgetting, mean / 3);
    EXPECT_EQ(r.tasks[1].difficulty, 40.0);
    EXPECT_EQ(r.tasks[3].final_accuracy, *m.get(3, 3));
}

TEST(Report, UndefinedEntryWhenReferenceAtChance) {
    AccuracyMatrix m({1, 2}, {2, 2});
    m.set(0, 0, 50);
    m.set(0, 1, 40);
    m.set(1, 1, 80);
    const auto r = build_report(m);
    ASSERT_EQ(r.forgetting.size(), 1u);
    EXPECT_FALSE(r.forgetting[0].rate);
    EXPECT_FALSE(r.tasks[0].mean_forgetting);
}

TEST(Report, JsonRoundTrip) {
    auto r = build_report(filled(3), {10, 20, 30});
    r.seed = 42;
    r.config_hash = "00ff00ff00ff00ff";
    const auto back = ForgettingReport::from_json(r.to_json());
    EXPECT_EQ(back, r);
    EXPECT_EQ(back.to_json(), r.to_json());
}

TEST(Report, TextAndCsvMentionEveryTask) {
    const auto r = build_report(filled(3));
    const auto text = r.to_text();
    const auto csv = r.to_csv();
    EXPECT_NE(text.find("Forgetting rate"), std::string::npos);
    for (const char* t : {"1 <- 2", "1 <- 3", "2 <- 3"}) EXPECT_NE(text.find(t), std::string::npos) << t;
    // 6 matrix entries plus 3 forgetting entries plus a header.
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 10);
}

TEST(Evaluate, UntrainedHeadIsNearChance) {
    auto model = TamClModel::init(tiny_model(), 1);
    model.register_task(1, 3);
    const auto test = generate_task(tiny_spec(1, 3)).test;
    const double acc = evaluate(model, 1, test);
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 100.0);
    // Exact percent of a 60-example set.
    EXPECT_NEAR(std::fmod(acc * 60 / 100, 1.0), 0.0, 1e-9);
}

TEST(Evaluate, BiasedHeadPredictsOneClass) {
    auto model = TamClModel::init(tiny_model(), 2);
    model.register_task(1, 3);
    ad::Tensor w = model.heads().find(1).weight, b = model.heads().find(1).bias;
    w.mutable_value().setZero();
    b.mutable_value() << 0, 5, 0;
    auto test = generate_task(tiny_spec(1, 3)).test;
    const double ones = std::count_if(test.begin(), test.end(), [](const RawExample& e) { return e.label == 1; });
    EXPECT_DOUBLE_EQ(evaluate(model, 1, test), 100.0 * ones / double(test.size()));
    for (auto& ex : test) ex.label = 1;
    EXPECT_EQ(evaluate(model, 1, test), 100.0);
}

TEST(Evaluate, OrderInvariant) {
    auto model = TamClModel::init(tiny_model(), 3);
    model.register_task(1, 2);
    auto test = generate_task(tiny_spec(1, 2)).test;
    const double a = evaluate(model, 1, test);
    std::reverse(test.begin(), test.end());
    EXPECT_EQ(evaluate(model, 1, test), a);
}

TEST(Evaluate, Errors) {
    auto model = TamClModel::init(tiny_model(), 3);
    model.register_task(1, 2);
    auto test = generate_task(tiny_spec(1, 2)).test;
    EXPECT_THROW(evaluate(model, 2, test), RoutingError);
    EXPECT_THROW(evaluate(model, 1, {}), ContractError);
    test[3].task_id = 2;
    EXPECT_THROW(evaluate(model, 1, test), RoutingError);
}
