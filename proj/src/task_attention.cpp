#include "tamcl/task_attention.hpp"

#include "tamcl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tamcl {

const TaskToken& TokenRegistry::add(TaskToken token) {
    if (contains(token.task_id)) {
        throw RegistryError("task token for task " + std::to_string(token.task_id) + " already registered");
    }
    tokens_.push_back(std::move(token));
    return tokens_.back();
}

const TaskToken& TokenRegistry::find(int task_id) const {
    for (const auto& t : tokens_) {
        if (t.task_id == task_id) return t;
    }
    throw RoutingError("no task token for task " + std::to_string(task_id));
}

bool TokenRegistry::contains(int task_id) const {
    return std::any_of(tokens_.begin(), tokens_.end(), [&](const TaskToken& t) { return t.task_id == task_id; });
}

const TaskToken& init_task_token(TokenRegistry& registry, int task_id, std::size_t width, Rng& rng) {
    if (registry.contains(task_id)) {
        throw RegistryError("task token for task " + std::to_string(task_id) + " already registered");
    }
    const double a = 1.0 / std::sqrt(static_cast<double>(width));
    return registry.add({task_id, ad::Tensor::parameter(uniform_matrix(1, Index(width), a, rng))});
}

TaskAttentionBlock TaskAttentionBlock::init(std::size_t width, std::size_t heads, std::size_t mlp_dim, Rng& rng) {
    TaskAttentionBlock b;
    b.norm1 = LayerNormParams::init(width);
    b.attention = MultiHeadAttention::init(width, heads, false, rng);
    b.norm2 = LayerNormParams::init(width);
    b.mlp = Mlp::init(width, mlp_dim, rng);
    return b;
}

ad::Tensor task_attend(const ad::Tensor& s_D, const TaskToken& token, const TaskAttentionBlock& tab,
                       Matrix* weights) {
    if (s_D.cols() != token.tau.cols()) {
        throw ShapeError("task_attend: sequence " + ad::shape_string(s_D) + " vs token " +
                         ad::shape_string(token.tau));
    }
    const ad::Tensor parts[] = {token.tau, s_D};
    auto normed = tab.norm1(ad::concat_rows(parts));
    // The query is the (normalised) task-token row only.
    auto s_hat = attend(ad::slice_rows(normed, 0, 1), normed, tab.attention, weights);
    return tab.mlp(tab.norm2(s_hat)) + s_hat;
}

const HeadSlice& ClassifierHead::slice_for(int task) const {
    for (const auto& s : slices) {
        if (s.task_id == task) return s;
    }
    throw RoutingError("head of task " + std::to_string(task_id) + " has no slice for task " +
                       std::to_string(task));
}

ClassifierHead expand_classifier(const ClassifierHead* prev, int task_id, Index e_orig,
                                 std::size_t width, Rng& rng) {
    if (e_orig < 1) throw ConfigError("expand_classifier: a task needs at least one output");
    const Index g = static_cast<Index>(width);
    const Index e_prev = prev ? prev->width() : 0;
    if (prev && prev->weight.rows() != g) {
        throw ShapeError("expand_classifier: previous head width " + ad::shape_string(prev->weight) +
                         " vs latent size " + std::to_string(width));
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(width));
    Matrix w(g, e_prev + e_orig);
    Matrix b(1, e_prev + e_orig);
    if (prev) {
        w.leftCols(e_prev) = prev->weight.value();
        b.leftCols(e_prev) = prev->bias.value();
    }
    w.rightCols(e_orig) = uniform_matrix(g, e_orig, bound, rng);
    b.rightCols(e_orig) = uniform_matrix(1, e_orig, bound, rng);

    ClassifierHead head;
    head.task_id = task_id;
    head.weight = ad::Tensor::parameter(std::move(w));
    head.bias = ad::Tensor::parameter(std::move(b));
    if (prev) head.slices = prev->slices;
    head.slices.push_back({task_id, e_prev, e_orig});
    return head;
}

ad::Tensor classify(const ad::Tensor& s_task, const ClassifierHead& head) {
    if (s_task.rows() != 1 || s_task.cols() != head.weight.rows()) {
        throw ShapeError("classify: input " + ad::shape_string(s_task) + " does not match head " +
                         ad::shape_string(head.weight));
    }
    return ad::add_row(ad::matmul(s_task, head.weight), head.bias);
}

ad::Tensor owned_logits(const ad::Tensor& logits, const ClassifierHead& head) {
    const auto& s = head.slice_for(head.task_id);
    return ad::slice_cols(logits, s.offset, s.width);
}

const ClassifierHead& HeadRegistry::add(ClassifierHead head) {
    if (contains(head.task_id)) {
        throw RegistryError("classifier head for task " + std::to_string(head.task_id) + " already registered");
    }
    heads_.push_back(std::move(head));
    return heads_.back();
}

const ClassifierHead& HeadRegistry::find(int task_id) const {
    for (const auto& h : heads_) {
        if (h.task_id == task_id) return h;
    }
    throw RoutingError("no classifier head for task " + std::to_string(task_id));
}

bool HeadRegistry::contains(int task_id) const {
    return std::any_of(heads_.begin(), heads_.end(), [&](const ClassifierHead& h) { return h.task_id == task_id; });
}

}  // namespace tamcl
