#pragma once

#include "tamcl/autodiff.hpp"
#include "tamcl/embedding.hpp"
#include "tamcl/task_attention.hpp"
#include "tamcl/transformer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tamcl {

struct ModelConfig {
    std::size_t hidden = 64;
    std::size_t heads = 4;
    std::size_t mlp_dim = 128;
    std::size_t depth = 4;
    std::size_t patch = 4;
    std::size_t image_height = 16;
    std::size_t image_width = 16;
    std::size_t channels = 1;
    std::size_t max_text = 8;
    std::size_t vocab = 32;
    std::size_t frozen_layers = 2;
    /// false routes the class-token row of s^D straight to the head.
    bool use_tab = true;

    EmbeddingConfig embedding() const {
        return {hidden, patch, image_height, image_width, channels, max_text, vocab};
    }
    EncoderConfig encoder() const { return {depth, hidden, heads, mlp_dim}; }
};

struct NamedParameter {
    std::string name;
    ad::Tensor tensor;
};

/// FNV-1a over parameter names, shapes and raw value bytes.
std::uint64_t hash_parameters(const std::vector<NamedParameter>& params);

struct TaskEntry {
    int task_id = 0;
    Index classes = 0;  // E_orig
};

struct ModelOutput {
    std::vector<ad::Tensor> features;  // s^D, one per image pass
    ad::Tensor task_features;          // [1, G] input of the classifier
    ad::Tensor logits;                 // [1, E_i]
    ad::Tensor owned;                  // the task's own slice of the logits
};

/// Shared encoder + task-attention block + per-task tokens and heads.
/// Parameters are graph leaves shared by handle, so the model is move-only;
/// use clone() for an independent copy.
class TamClModel {
public:
    static TamClModel init(const ModelConfig& config, std::uint64_t seed);

    TamClModel(TamClModel&&) = default;
    TamClModel& operator=(TamClModel&&) = default;
    TamClModel(const TamClModel&) = delete;
    TamClModel& operator=(const TamClModel&) = delete;

    /// Deep copy with gradient tracking disabled on every parameter.
    TamClModel clone_frozen() const;
    TamClModel clone() const;

    const ModelConfig& config() const { return config_; }
    const std::vector<TaskEntry>& tasks() const { return tasks_; }
    bool has_task(int task_id) const { return tokens_.contains(task_id); }

    /// Adds the task token and the expanded classifier head.
    void register_task(int task_id, Index classes);

    /// Marks exactly the parameters that train while learning `task_id` on a
    /// batch of `batch_task` (a replay batch leaves the current head out of
    /// the graph, so it is frozen for that step).
    void set_training_task(int task_id, std::optional<int> batch_task = std::nullopt);
    void freeze_all();

    std::vector<ad::Tensor> encode_features(const RawExample& example) const;
    ModelOutput forward(const RawExample& example) const;

    std::vector<NamedParameter> named_parameters() const;
    std::vector<NamedParameter> trainable_parameters() const;
    void zero_grad() const;

    const EmbeddingParams& embedding() const { return embedding_; }
    const EncoderStack& encoder() const { return encoder_; }
    EncoderStack& encoder() { return encoder_; }
    const TaskAttentionBlock& tab() const { return tab_; }
    const TokenRegistry& tokens() const { return tokens_; }
    const HeadRegistry& heads() const { return heads_; }

    void save(const std::filesystem::path& path) const;
    static TamClModel load(const std::filesystem::path& path);

private:
    TamClModel() = default;
    void rebind_parameters(bool requires_grad);

    ModelConfig config_;
    Rng rng_;
    EmbeddingParams embedding_;
    EncoderStack encoder_;
    TaskAttentionBlock tab_;
    TokenRegistry tokens_;
    HeadRegistry heads_;
    std::vector<TaskEntry> tasks_;
};

}  // namespace tamcl
