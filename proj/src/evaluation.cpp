#include "tamcl/evaluation.hpp"

#include "tamcl/errors.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <sstream>

namespace tamcl {

double evaluate(const TamClModel& model, int task_id, std::span<const RawExample> test_set) {
    if (!model.has_task(task_id)) throw RoutingError("evaluate: unknown task " + std::to_string(task_id));
    if (test_set.empty()) throw ContractError("evaluate: empty test set for task " + std::to_string(task_id));
    std::size_t correct = 0;
    for (const auto& ex : test_set) {
        if (ex.task_id != task_id) {
            throw RoutingError("evaluate: example of task " + std::to_string(ex.task_id) + " in test set of task " +
                               std::to_string(task_id));
        }
        const auto out = model.forward(ex);
        Index best = 0;
        out.owned.value().row(0).maxCoeff(&best);
        if (best == ex.label) ++correct;
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(test_set.size());
}

double forgetting_rate(double s_a, double s_after, std::size_t n_labels) {
    if (n_labels == 0) throw DegenerateReferenceError("forgetting_rate: task has no labels");
    const double s_r = 100.0 / static_cast<double>(n_labels);
    if (!(s_a > s_r)) {
        throw DegenerateReferenceError("forgetting_rate: reference accuracy " + std::to_string(s_a) +
                                       "% does not exceed chance " + std::to_string(s_r) + "%");
    }
    return (s_a - s_after) / (s_a - s_r);
}

double difficulty_score(std::size_t n_train, std::size_t n_labels) {
    if (n_labels == 0) throw ConfigError("difficulty_score: n_labels must be at least 1");
    return static_cast<double>(n_train) / static_cast<double>(n_labels);
}

AccuracyMatrix::AccuracyMatrix(std::vector<int> task_ids, std::vector<std::size_t> label_counts)
    : task_ids_(std::move(task_ids)), labels_(std::move(label_counts)) {
    if (task_ids_.size() != labels_.size()) throw ShapeError("accuracy matrix: one label count per task required");
    acc_.assign(task_ids_.size(), std::vector<std::optional<double>>(task_ids_.size()));
}

void AccuracyMatrix::set(std::size_t j, std::size_t i, double percent) {
    if (j >= size() || i >= size() || i < j) {
        throw IndexError("accuracy matrix: entry (" + std::to_string(j) + ", " + std::to_string(i) + ") undefined");
    }
    if (!(percent >= 0.0 && percent <= 100.0)) throw ContractError("accuracy must lie in [0, 100]");
    acc_[j][i] = percent;
}

std::optional<double> AccuracyMatrix::get(std::size_t j, std::size_t i) const {
    if (j >= size() || i >= size()) return std::nullopt;
    return acc_[j][i];
}

void AccuracyMatrix::require_complete() const {
    for (std::size_t i = 0; i < size(); ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            if (!acc_[j][i]) {
                throw CompletenessError("accuracy matrix: missing entry for task " + std::to_string(task_ids_[j]) +
                                        " after task " + std::to_string(task_ids_[i]));
            }
        }
    }
}

ForgettingReport build_report(const AccuracyMatrix& matrix, const std::vector<std::size_t>& n_train) {
    matrix.require_complete();
    ForgettingReport r;
    r.accuracy = matrix;
    const std::size_t n = matrix.size();
    for (std::size_t j = 0; j < n; ++j) {
        TaskSummary s;
        s.task_id = matrix.task_ids()[j];
        s.n_labels = matrix.label_counts()[j];
        if (j < n_train.size()) {
            s.n_train = n_train[j];
            s.difficulty = difficulty_score(s.n_train, s.n_labels);
        }
        s.final_accuracy = *matrix.get(j, n - 1);
        double total = 0.0;
        std::size_t defined = 0;
        for (std::size_t i = j + 1; i < n; ++i) {
            ForgettingEntry e;
            e.j = j;
            e.i = i;
            e.s_a = *matrix.get(j, j);
            e.s_after = *matrix.get(j, i);
            e.s_r = 100.0 / static_cast<double>(s.n_labels);
            if (e.s_a > e.s_r) {
                e.rate = forgetting_rate(e.s_a, e.s_after, s.n_labels);
                total += *e.rate;
                ++defined;
            }
            r.forgetting.push_back(e);
        }
        if (defined > 0) s.mean_forgetting = total / static_cast<double>(defined);
        r.tasks.push_back(s);
    }
    return r;
}

std::string ForgettingReport::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["config_hash"] = config_hash;
    j["task_ids"] = accuracy.task_ids();
    j["label_counts"] = accuracy.label_counts();
    auto& acc = j["accuracy"] = nlohmann::json::array();
    for (std::size_t jj = 0; jj < accuracy.size(); ++jj) {
        auto row = nlohmann::json::array();
        for (std::size_t i = 0; i < accuracy.size(); ++i) {
            auto v = accuracy.get(jj, i);
            row.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
        }
        acc.push_back(row);
    }
    auto& f = j["forgetting"] = nlohmann::json::array();
    for (const auto& e : forgetting) {
        f.push_back({{"j", e.j}, {"i", e.i}, {"s_a", e.s_a}, {"s_after", e.s_after}, {"s_r", e.s_r},
                     {"rate", e.rate ? nlohmann::json(*e.rate) : nlohmann::json(nullptr)}});
    }
    auto& t = j["tasks"] = nlohmann::json::array();
    for (const auto& s : tasks) {
        t.push_back({{"task_id", s.task_id},
                     {"n_train", s.n_train},
                     {"n_labels", s.n_labels},
                     {"difficulty", s.difficulty},
                     {"final_accuracy", s.final_accuracy},
                     {"mean_forgetting", s.mean_forgetting ? nlohmann::json(*s.mean_forgetting) : nlohmann::json(nullptr)}});
    }
    return j.dump(2) + "\n";
}

ForgettingReport ForgettingReport::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    ForgettingReport r;
    r.seed = j.at("seed");
    r.config_hash = j.at("config_hash");
    r.accuracy = AccuracyMatrix(j.at("task_ids").get<std::vector<int>>(),
                                j.at("label_counts").get<std::vector<std::size_t>>());
    const auto& acc = j.at("accuracy");
    for (std::size_t jj = 0; jj < acc.size(); ++jj) {
        for (std::size_t i = 0; i < acc[jj].size(); ++i) {
            if (!acc[jj][i].is_null()) r.accuracy.set(jj, i, acc[jj][i].get<double>());
        }
    }
    for (const auto& e : j.at("forgetting")) {
        ForgettingEntry f{e.at("j"), e.at("i"), e.at("s_a"), e.at("s_after"), e.at("s_r"), std::nullopt};
        if (!e.at("rate").is_null()) f.rate = e.at("rate").get<double>();
        r.forgetting.push_back(f);
    }
    for (const auto& s : j.at("tasks")) {
        TaskSummary t;
        t.task_id = s.at("task_id");
        t.n_train = s.at("n_train");
        t.n_labels = s.at("n_labels");
        t.difficulty = s.at("difficulty");
        t.final_accuracy = s.at("final_accuracy");
        if (!s.at("mean_forgetting").is_null()) t.mean_forgetting = s.at("mean_forgetting").get<double>();
        r.tasks.push_back(t);
    }
    return r;
}

namespace {

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

std::string exact(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string pad_left(const std::string& s, std::size_t w) {
    return s.size() >= w ? s : std::string(w - s.size(), ' ') + s;
}

std::string pad_right(const std::string& s, std::size_t w) {
    return s.size() >= w ? s : s + std::string(w - s.size(), ' ');
}

}  // namespace

std::string ForgettingReport::to_csv() const {
    std::ostringstream os;
    os << "kind,task_j,task_i,s_a,s_after,s_r,value\n";
    const auto& ids = accuracy.task_ids();
    for (std::size_t j = 0; j < accuracy.size(); ++j) {
        for (std::size_t i = j; i < accuracy.size(); ++i) {
            if (auto v = accuracy.get(j, i)) os << "accuracy," << ids[j] << ',' << ids[i] << ",,,," << exact(*v) << '\n';
        }
    }
    for (const auto& e : forgetting) {
        os << "forgetting," << ids[e.j] << ',' << ids[e.i] << ',' << exact(e.s_a) << ',' << exact(e.s_after) << ','
           << exact(e.s_r) << ',' << (e.rate ? exact(*e.rate) : "") << '\n';
    }
    return os.str();
}

std::string ForgettingReport::to_text() const {
    std::ostringstream os;
    const auto& ids = accuracy.task_ids();
    const std::size_t n = accuracy.size();
    os << "Accuracy (%) of each task (rows) after learning each task (columns)\n";
    os << pad_right("task", 12);
    for (std::size_t i = 0; i < n; ++i) os << " | " << pad_left("after " + std::to_string(ids[i]), 9);
    os << '\n' << std::string(12 + n * 12, '-') << '\n';
    for (std::size_t j = 0; j < n; ++j) {
        os << pad_right(std::to_string(ids[j]) + " (" + std::to_string(accuracy.label_counts()[j]) + " lbl)", 12);
        for (std::size_t i = 0; i < n; ++i) {
            auto v = accuracy.get(j, i);
            os << " | " << pad_left(v ? fixed(*v, 2) : "", 9);
        }
        os << '\n';
    }
    if (forgetting.empty()) return os.str();

    os << "\nForgetting rate T_F(j <- i)\n";
    os << pad_right("j <- i", 12) << " | " << pad_left("S_A", 8) << " | " << pad_left("S_after", 8) << " | "
       << pad_left("S_R", 8) << " | " << pad_left("T_F", 9) << '\n';
    os << std::string(12 + 4 * 11 + 1, '-') << '\n';
    for (const auto& e : forgetting) {
        os << pad_right(std::to_string(ids[e.j]) + " <- " + std::to_string(ids[e.i]), 12) << " | "
           << pad_left(fixed(e.s_a, 2), 8) << " | " << pad_left(fixed(e.s_after, 2), 8) << " | "
           << pad_left(fixed(e.s_r, 2), 8) << " | " << pad_left(e.rate ? fixed(100.0 * *e.rate, 2) + "%" : "n/a", 9) << '\n';
    }
    os << "\nPer-task summary\n";
    os << pad_right("task", 12) << " | " << pad_left("difficulty", 10) << " | " << pad_left("final acc", 9) << " | "
       << pad_left("mean T_F", 9) << '\n';
    for (const auto& s : tasks) {
        os << pad_right(std::to_string(s.task_id), 12) << " | " << pad_left(fixed(s.difficulty, 2), 10) << " | "
           << pad_left(fixed(s.final_accuracy, 2), 9) << " | "
           << pad_left(s.mean_forgetting ? fixed(100.0 * *s.mean_forgetting, 2) + "%" : "-", 9) << '\n';
    }
    return os.str();
}

}  // namespace tamcl
