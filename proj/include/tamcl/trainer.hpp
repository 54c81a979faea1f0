#pragma once

#include "tamcl/autodiff.hpp"
#include "tamcl/embedding.hpp"
#include "tamcl/model.hpp"
#include "tamcl/random.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tamcl {

/// How the token diversity term is signed. Repel negates the cross-entropy
/// so minimising the total loss pushes the current token away from earlier
/// ones; Literal adds the cross-entropy as written in the training step.
enum class DivMode { Repel, Literal };

std::string to_string(DivMode mode);
DivMode parse_div_mode(const std::string& text);

struct Ablations {
    bool no_tab = false;
    bool no_ikd = false;
    bool no_replay = false;
};

struct TrainerConfig {
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
    double weight_decay = 0.01;
    std::size_t epochs = 5;
    std::size_t batch_size = 16;
    double replay_fraction = 0.05;
    std::size_t replay_every = 100;
    double alpha = 5000.0;
    std::map<int, double> task_alpha;  // per-task overrides of alpha
    double temperature = 1.0;
    DivMode div_mode = DivMode::Repel;
    Ablations ablations;

    double alpha_for(int task_id) const;
};

struct LossWeights {
    double lambda = 0.0;
    double alpha = 0.0;
    double beta = 0.0;
};

/// lambda = (T_n - 1)/T_n; beta = min(L_div, 0.1 * ((1-lambda) L_c + lambda alpha L_ikd)).
/// In repel mode L_div is negative, so the bound is taken on |L_div|.
LossWeights loss_weights(double l_c, double l_ikd, double l_div, int tasks_seen, double alpha,
                         DivMode mode = DivMode::Literal);

struct ComposedLoss {
    ad::Tensor total;
    LossWeights weights;
};

/// (1-lambda) L_c + lambda alpha L_ikd + beta L_div with the weights held constant.
ComposedLoss compose_loss(const ad::Tensor& l_c, const ad::Tensor& l_ikd, const ad::Tensor& l_div,
                          int tasks_seen, double alpha, DivMode mode = DivMode::Literal);

/// KL between temperature-softmaxed student and teacher s^D rows, averaged
/// over sequence positions. Only the student receives gradient.
ad::Tensor compute_ikd(const ad::Tensor& student_sD, const ad::Tensor& teacher_sD, double temperature);

/// Mean over earlier tokens j of CE(softmax(tau_i), softmax(tau_j)) =
/// -sum softmax(tau_i) log softmax(tau_j), negated in repel mode. Bounded
/// above by -log min softmax(tau_j), so repulsion cannot grow without limit.
/// Zero for the first task.
ad::Tensor compute_div(const TokenRegistry& tokens, int current_id, DivMode mode);

struct AdamWState {
    struct Moments {
        Matrix first;
        Matrix second;
        long step = 0;
    };

    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
    double weight_decay = 0.01;
    std::map<std::string, Moments> moments;

    static AdamWState from(const TrainerConfig& config);
};

/// Decoupled-weight-decay Adam with bias correction. Moment buffers are kept
/// only for the parameters passed in; stale entries are dropped.
void adamw_step(const std::vector<NamedParameter>& trainable, AdamWState& state);

/// Per-task stores of stored training examples.
class ReplayBuffer {
public:
    ReplayBuffer(double fraction, std::uint64_t seed);

    /// Stores floor(fraction * N) examples drawn uniformly without replacement.
    std::size_t insert_task(int task_id, std::span<const RawExample> data);
    bool empty() const { return stores_.empty(); }
    std::vector<int> task_ids() const;
    const std::vector<RawExample>& store(int task_id) const;
    /// Indices into the dataset passed to insert_task.
    const std::vector<std::size_t>& stored_indices(int task_id) const;

    /// Picks a stored task uniformly, then up to `batch_size` of its examples.
    std::vector<RawExample> draw_batch(std::size_t batch_size);

    static std::size_t capacity_for(double fraction, std::size_t n);

private:
    struct Store {
        std::vector<RawExample> examples;
        std::vector<std::size_t> indices;
    };
    double fraction_;
    Rng rng_;
    std::map<int, Store> stores_;
};

struct StepLog {
    int current_task = 0;
    int batch_task = 0;
    int tasks_seen = 0;
    std::size_t epoch = 0;
    std::size_t step = 0;
    bool replay = false;
    double l_c = 0.0;
    double l_ikd = 0.0;
    double l_div = 0.0;
    double lambda = 0.0;
    double alpha = 0.0;
    double beta = 0.0;
    double total = 0.0;
};

/// One composed-loss update on a single-task batch. `current_task` is the
/// task being learned; the batch may belong to an earlier task (replay).
StepLog train_step(TamClModel& model, const TamClModel* teacher, std::span<const RawExample> batch,
                   int current_task, const TrainerConfig& config, AdamWState& optimizer);

struct TaskReport {
    int task_id = 0;
    std::size_t steps = 0;
    std::size_t replay_steps = 0;
    std::size_t buffer_stored = 0;
    std::vector<StepLog> logs;
};

/// Called after every step with the student and (when present) the teacher.
using StepObserver = std::function<void(const StepLog&, const TamClModel&, const TamClModel*)>;

/// Learns one task: snapshots the teacher, registers the token and head,
/// runs epochs x batches with replay every `replay_every` steps, then stores
/// a sample of the task's data in the buffer.
TaskReport train_task(TamClModel& model, int task_id, Index classes, std::span<const RawExample> data,
                      ReplayBuffer& buffer, const TrainerConfig& config, Rng& rng,
                      const StepObserver& observer = {});

}  // namespace tamcl
