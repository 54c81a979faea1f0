#pragma once

#include "tamcl/autodiff.hpp"
#include "tamcl/random.hpp"
#include "tamcl/transformer.hpp"

#include <cstddef>
#include <vector>

namespace tamcl {

struct TaskToken {
    int task_id = 0;
    ad::Tensor tau;  // [1, G]
};

/// Ordered registry of task tokens, one per learned task.
class TokenRegistry {
public:
    const TaskToken& add(TaskToken token);
    const TaskToken& find(int task_id) const;
    bool contains(int task_id) const;
    std::size_t size() const { return tokens_.size(); }
    const std::vector<TaskToken>& tokens() const { return tokens_; }

private:
    std::vector<TaskToken> tokens_;
};

/// tau ~ Uniform(-a, a), a = 1/sqrt(G); registers and returns the token.
const TaskToken& init_task_token(TokenRegistry& registry, int task_id, std::size_t width, Rng& rng);

struct TaskAttentionBlock {
    LayerNormParams norm1, norm2;
    MultiHeadAttention attention;  // no q/k/v bias; output carries b_o
    Mlp mlp;

    static TaskAttentionBlock init(std::size_t width, std::size_t heads, std::size_t mlp_dim, Rng& rng);

    template <typename Fn>
    void for_each_parameter(Fn&& fn) const {
        norm1.for_each_parameter("tab.norm1", fn);
        attention.for_each_parameter("tab.attention", fn);
        norm2.for_each_parameter("tab.norm2", fn);
        mlp.for_each_parameter("tab.mlp", fn);
    }
};

/// Single-query attention of the task token over [tau; s_D], followed by the
/// LN/MLP sub-layer with residual. Returns s^{D+1} of shape [1, G]. When
/// `weights` is non-null it receives the [h, n+1] attention rows.
ad::Tensor task_attend(const ad::Tensor& s_D, const TaskToken& token, const TaskAttentionBlock& tab,
                       Matrix* weights = nullptr);

struct HeadSlice {
    int task_id = 0;
    Index offset = 0;
    Index width = 0;
};

struct ClassifierHead {
    int task_id = 0;
    ad::Tensor weight;  // [G, E_i]
    ad::Tensor bias;    // [1, E_i]
    std::vector<HeadSlice> slices;

    Index width() const { return weight.cols(); }
    const HeadSlice& slice_for(int task) const;
};

/// New head for `task_id` of width E_prev + e_orig. Columns inherited from
/// `prev` are copied; the new columns are freshly initialised.
ClassifierHead expand_classifier(const ClassifierHead* prev, int task_id, Index e_orig,
                                 std::size_t width, Rng& rng);

/// Full logits of the head, [1, E_i].
ad::Tensor classify(const ad::Tensor& s_task, const ClassifierHead& head);

/// The logit columns owned by the head's own task.
ad::Tensor owned_logits(const ad::Tensor& logits, const ClassifierHead& head);

class HeadRegistry {
public:
    const ClassifierHead& add(ClassifierHead head);
    const ClassifierHead& find(int task_id) const;
    bool contains(int task_id) const;
    const ClassifierHead* latest() const { return heads_.empty() ? nullptr : &heads_.back(); }
    std::size_t size() const { return heads_.size(); }
    const std::vector<ClassifierHead>& heads() const { return heads_; }

private:
    std::vector<ClassifierHead> heads_;
};

}  // namespace tamcl
