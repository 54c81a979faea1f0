#pragma once

#include "tamcl/embedding.hpp"
#include "tamcl/model.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tamcl {

/// Percentage of examples whose argmax over the task's own logit slice equals
/// the label. The task id of every example must be `task_id`.
double evaluate(const TamClModel& model, int task_id, std::span<const RawExample> test_set);

/// (S_A - S_after) / (S_A - S_R) with S_R = 100 / n_labels, all in percent.
/// Negative values (backward transfer) are returned as-is.
double forgetting_rate(double s_a, double s_after, std::size_t n_labels);

/// #training examples / #labels; larger means easier.
double difficulty_score(std::size_t n_train, std::size_t n_labels);

/// acc(j, i): accuracy (percent) of task j after finishing task i, i >= j.
class AccuracyMatrix {
public:
    AccuracyMatrix() = default;
    explicit AccuracyMatrix(std::vector<int> task_ids, std::vector<std::size_t> label_counts);

    std::size_t size() const { return task_ids_.size(); }
    const std::vector<int>& task_ids() const { return task_ids_; }
    const std::vector<std::size_t>& label_counts() const { return labels_; }

    void set(std::size_t j, std::size_t i, double percent);
    std::optional<double> get(std::size_t j, std::size_t i) const;
    /// Throws CompletenessError naming the first missing (j, i) entry.
    void require_complete() const;

    bool operator==(const AccuracyMatrix&) const = default;

private:
    std::vector<int> task_ids_;
    std::vector<std::size_t> labels_;
    std::vector<std::vector<std::optional<double>>> acc_;
};

struct ForgettingEntry {
    std::size_t j = 0;  // forgotten task (position in the sequence)
    std::size_t i = 0;  // task after which it was measured, i > j
    double s_a = 0.0;
    double s_after = 0.0;
    double s_r = 0.0;
    /// Absent when S_A does not exceed chance (the ratio is undefined).
    std::optional<double> rate;

    bool operator==(const ForgettingEntry&) const = default;
};

struct TaskSummary {
    int task_id = 0;
    std::size_t n_train = 0;
    std::size_t n_labels = 0;
    double difficulty = 0.0;
    double final_accuracy = 0.0;
    std::optional<double> mean_forgetting;

    bool operator==(const TaskSummary&) const = default;
};

struct ForgettingReport {
    AccuracyMatrix accuracy;
    std::vector<ForgettingEntry> forgetting;
    std::vector<TaskSummary> tasks;
    std::uint64_t seed = 0;
    std::string config_hash;

    bool operator==(const ForgettingReport&) const = default;

    std::string to_json() const;
    static ForgettingReport from_json(const std::string& text);
    /// One row per matrix entry followed by one row per forgetting entry.
    std::string to_csv() const;
    /// Aligned text tables: accuracy matrix, then forgetting rates.
    std::string to_text() const;
};

/// Computes every T_F(j <- i), i > j, and per-task summaries.
ForgettingReport build_report(const AccuracyMatrix& matrix, const std::vector<std::size_t>& n_train = {});

}  // namespace tamcl
