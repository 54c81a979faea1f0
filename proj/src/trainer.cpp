#include "tamcl/trainer.hpp"

#include "tamcl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace tamcl {

std::string to_string(DivMode mode) { return mode == DivMode::Repel ? "repel" : "literal"; }

DivMode parse_div_mode(const std::string& text) {
    if (text == "repel") return DivMode::Repel;
    if (text == "literal") return DivMode::Literal;
    throw ConfigError("div_mode must be 'repel' or 'literal', got '" + text + "'");
}

double TrainerConfig::alpha_for(int task_id) const {
    auto it = task_alpha.find(task_id);
    return it == task_alpha.end() ? alpha : it->second;
}

LossWeights loss_weights(double l_c, double l_ikd, double l_div, int tasks_seen, double alpha, DivMode mode) {
    if (tasks_seen < 1) throw ContractError("loss weights need at least one task, got " + std::to_string(tasks_seen));
    LossWeights w;
    w.lambda = static_cast<double>(tasks_seen - 1) / static_cast<double>(tasks_seen);
    w.alpha = alpha;
    const double core = (1.0 - w.lambda) * l_c + w.lambda * alpha * l_ikd;
    const double div = mode == DivMode::Repel ? std::abs(l_div) : l_div;
    w.beta = std::min(div, 0.1 * core);
    return w;
}

ComposedLoss compose_loss(const ad::Tensor& l_c, const ad::Tensor& l_ikd, const ad::Tensor& l_div,
                          int tasks_seen, double alpha, DivMode mode) {
    const auto w = loss_weights(l_c.item(), l_ikd.item(), l_div.item(), tasks_seen, alpha, mode);
    auto total = ad::scale(l_c, 1.0 - w.lambda) + ad::scale(l_ikd, w.lambda * alpha) + ad::scale(l_div, w.beta);
    return {total, w};
}

ad::Tensor compute_ikd(const ad::Tensor& student_sD, const ad::Tensor& teacher_sD, double temperature) {
    return ad::kl_divergence(student_sD, teacher_sD, temperature);
}

ad::Tensor compute_div(const TokenRegistry& tokens, int current_id, DivMode mode) {
    const auto& current = tokens.find(current_id);
    std::vector<ad::Tensor> terms;
    for (const auto& tok : tokens.tokens()) {
        if (tok.task_id == current_id) break;
        terms.push_back(ad::soft_cross_entropy(tok.tau, current.tau));
    }
    if (terms.empty()) return ad::Tensor::scalar(0.0);
    auto avg = ad::mean(ad::concat_rows(terms));
    return mode == DivMode::Repel ? ad::scale(avg, -1.0) : avg;
}

AdamWState AdamWState::from(const TrainerConfig& config) {
    AdamWState s;
    s.lr = config.lr;
    s.beta1 = config.beta1;
    s.beta2 = config.beta2;
    s.eps = config.eps;
    s.weight_decay = config.weight_decay;
    return s;
}

void adamw_step(const std::vector<NamedParameter>& trainable, AdamWState& state) {
    std::set<std::string> live;
    for (const auto& p : trainable) {
        if (!p.tensor.grad()) throw ContractError("adamw: trainable parameter '" + p.name + "' has no gradient");
        live.insert(p.name);
    }
    std::erase_if(state.moments, [&](const auto& kv) { return !live.contains(kv.first); });

    for (const auto& p : trainable) {
        const Matrix& g = *p.tensor.grad();
        auto [it, fresh] = state.moments.try_emplace(p.name);
        auto& m = it->second;
        if (fresh) {
            m.first = Matrix::Zero(g.rows(), g.cols());
            m.second = Matrix::Zero(g.rows(), g.cols());
        }
        ++m.step;
        m.first = state.beta1 * m.first + (1.0 - state.beta1) * g;
        m.second = state.beta2 * m.second + (1.0 - state.beta2) * g.cwiseProduct(g);
        const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(m.step));
        const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(m.step));

        ad::Tensor handle = p.tensor;
        Matrix& w = handle.mutable_value();
        w *= (1.0 - state.lr * state.weight_decay);
        w.array() -= state.lr * (m.first.array() / c1) / ((m.second.array() / c2).sqrt() + state.eps);
    }
}

ReplayBuffer::ReplayBuffer(double fraction, std::uint64_t seed) : fraction_(fraction), rng_(seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("replay fraction must lie in [0, 1]");
}

std::size_t ReplayBuffer::capacity_for(double fraction, std::size_t n) {
    // The small offset absorbs representation error such as 0.05 * 2000.
    return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

std::size_t ReplayBuffer::insert_task(int task_id, std::span<const RawExample> data) {
    if (stores_.contains(task_id)) throw RegistryError("replay store for task " + std::to_string(task_id) + " exists");
    const std::size_t k = capacity_for(fraction_, data.size());
    if (k == 0) return 0;
    std::vector<std::size_t> all(data.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    Store store;
    std::sample(all.begin(), all.end(), std::back_inserter(store.indices), k, rng_);
    for (auto i : store.indices) store.examples.push_back(data[i]);
    stores_.emplace(task_id, std::move(store));
    return k;
}

std::vector<int> ReplayBuffer::task_ids() const {
    std::vector<int> ids;
    for (const auto& [id, _] : stores_) ids.push_back(id);
    return ids;
}

const std::vector<RawExample>& ReplayBuffer::store(int task_id) const {
    auto it = stores_.find(task_id);
    if (it == stores_.end()) throw RoutingError("no replay store for task " + std::to_string(task_id));
    return it->second.examples;
}

const std::vector<std::size_t>& ReplayBuffer::stored_indices(int task_id) const {
    auto it = stores_.find(task_id);
    if (it == stores_.end()) throw RoutingError("no replay store for task " + std::to_string(task_id));
    return it->second.indices;
}

std::vector<RawExample> ReplayBuffer::draw_batch(std::size_t batch_size) {
    if (stores_.empty()) throw ContractError("draw_batch on an empty replay buffer");
    std::uniform_int_distribution<std::size_t> pick(0, stores_.size() - 1);
    auto it = std::next(stores_.begin(), static_cast<std::ptrdiff_t>(pick(rng_)));
    const auto& examples = it->second.examples;
    std::vector<RawExample> batch;
    std::sample(examples.begin(), examples.end(), std::back_inserter(batch),
                std::min(batch_size, examples.size()), rng_);
    return batch;
}

StepLog train_step(TamClModel& model, const TamClModel* teacher, std::span<const RawExample> batch,
                   int current_task, const TrainerConfig& config, AdamWState& optimizer) {
    if (batch.empty()) throw ContractError("train_step: empty batch");
    const int batch_task = batch.front().task_id;
    for (const auto& ex : batch) {
        if (ex.task_id != batch_task) {
            throw ContractError("train_step: batch mixes tasks " + std::to_string(batch_task) + " and " +
                                std::to_string(ex.task_id));
        }
    }
    const int tasks_seen = static_cast<int>(model.tasks().size());
    const bool use_ikd = tasks_seen > 1 && !config.ablations.no_ikd;
    if (use_ikd && teacher == nullptr) {
        throw ContractError("train_step: task " + std::to_string(tasks_seen) + " requires a teacher snapshot");
    }

    model.set_training_task(current_task, batch_task);
    model.zero_grad();

    std::vector<ad::Tensor> ce_terms, kd_terms;
    ce_terms.reserve(batch.size());
    for (const auto& ex : batch) {
        auto out = model.forward(ex);
        ce_terms.push_back(ad::cross_entropy(out.owned, ex.label));
        if (use_ikd) {
            auto target = teacher->encode_features(ex);
            for (std::size_t p = 0; p < out.features.size(); ++p) {
                kd_terms.push_back(compute_ikd(out.features[p], target[p], config.temperature));
            }
        }
    }
    auto l_c = ad::mean(ad::concat_rows(ce_terms));
    auto l_ikd = kd_terms.empty() ? ad::Tensor::scalar(0.0) : ad::mean(ad::concat_rows(kd_terms));
    auto l_div = compute_div(model.tokens(), current_task, config.div_mode);
    const double alpha = config.alpha_for(current_task);
    auto composed = compose_loss(l_c, l_ikd, l_div, tasks_seen, alpha, config.div_mode);

    ad::backward(composed.total);
    adamw_step(model.trainable_parameters(), optimizer);

    StepLog log;
    log.current_task = current_task;
    log.batch_task = batch_task;
    log.tasks_seen = tasks_seen;
    log.replay = batch_task != current_task;
    log.l_c = l_c.item();
    log.l_ikd = l_ikd.item();
    log.l_div = l_div.item();
    log.lambda = composed.weights.lambda;
    log.alpha = alpha;
    log.beta = composed.weights.beta;
    log.total = composed.total.item();
    return log;
}

TaskReport train_task(TamClModel& model, int task_id, Index classes, std::span<const RawExample> data,
                      ReplayBuffer& buffer, const TrainerConfig& config, Rng& rng, const StepObserver& observer) {
    if (model.has_task(task_id)) throw RegistryError("task " + std::to_string(task_id) + " already learned");
    if (data.empty()) throw ContractError("train_task: task " + std::to_string(task_id) + " has no training data");
    if (config.batch_size == 0 || config.replay_every == 0) {
        throw ConfigError("train_task: batch size and replay frequency must be positive");
    }

    std::optional<TamClModel> teacher;
    if (!model.tasks().empty()) teacher.emplace(model.clone_frozen());
    model.register_task(task_id, classes);
    const TamClModel* teacher_ptr = teacher ? &*teacher : nullptr;
    auto optimizer = AdamWState::from(config);

    TaskReport report;
    report.task_id = task_id;
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<RawExample> batch;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t step = 0, start = 0; start < order.size(); ++step, start += config.batch_size) {
            batch.clear();
            for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
                batch.push_back(data[order[i]]);
            }
            auto log = train_step(model, teacher_ptr, batch, task_id, config, optimizer);
            log.epoch = epoch;
            log.step = step;
            ++report.steps;
            report.logs.push_back(log);
            if (observer) observer(log, model, teacher_ptr);

            if (!config.ablations.no_replay && step % config.replay_every == 0 && !buffer.empty()) {
                const auto replay = buffer.draw_batch(config.batch_size);
                auto rlog = train_step(model, teacher_ptr, replay, task_id, config, optimizer);
                rlog.epoch = epoch;
                rlog.step = step;
                ++report.replay_steps;
                report.logs.push_back(rlog);
                if (observer) observer(rlog, model, teacher_ptr);
            }
        }
    }
    if (!config.ablations.no_replay) report.buffer_stored = buffer.insert_task(task_id, data);
    return report;
}

}  // namespace tamcl
