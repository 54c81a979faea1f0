#pragma once

#include "tamcl/autodiff.hpp"
#include "tamcl/random.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace tamcl {

struct Linear {
    ad::Tensor weight;               // [in, out]
    std::optional<ad::Tensor> bias;  // [1, out]

    static Linear init(std::size_t in, std::size_t out, bool with_bias, Rng& rng);
    ad::Tensor operator()(const ad::Tensor& x) const;

    template <typename Fn>
    void for_each_parameter(const std::string& prefix, Fn&& fn) const {
        fn(prefix + ".weight", weight);
        if (bias) fn(prefix + ".bias", *bias);
    }
};

struct LayerNormParams {
    ad::Tensor gamma;
    ad::Tensor beta;
    double eps = 1e-5;

    static LayerNormParams init(std::size_t width);
    ad::Tensor operator()(const ad::Tensor& x) const;

    template <typename Fn>
    void for_each_parameter(const std::string& prefix, Fn&& fn) const {
        fn(prefix + ".gamma", gamma);
        fn(prefix + ".beta", beta);
    }
};

struct MultiHeadAttention {
    Linear query, key, value, output;
    std::size_t heads = 1;

    static MultiHeadAttention init(std::size_t width, std::size_t heads, bool qkv_bias, Rng& rng);

    template <typename Fn>
    void for_each_parameter(const std::string& prefix, Fn&& fn) const {
        query.for_each_parameter(prefix + ".query", fn);
        key.for_each_parameter(prefix + ".key", fn);
        value.for_each_parameter(prefix + ".value", fn);
        output.for_each_parameter(prefix + ".output", fn);
    }
};

/// Scaled dot-product attention of `queries` [m, G] over `keys_values` [n, G]
/// split into `heads` heads with scale 1/sqrt(G/h). When `weights` is non-null
/// it receives the attention rows, one block of m rows per head ([h*m, n]).
ad::Tensor attend(const ad::Tensor& queries, const ad::Tensor& keys_values,
                  const MultiHeadAttention& mha, Matrix* weights = nullptr);

struct Mlp {
    Linear hidden, output;

    static Mlp init(std::size_t width, std::size_t inner, Rng& rng);
    ad::Tensor operator()(const ad::Tensor& x) const { return output(ad::gelu(hidden(x))); }

    template <typename Fn>
    void for_each_parameter(const std::string& prefix, Fn&& fn) const {
        hidden.for_each_parameter(prefix + ".hidden", fn);
        output.for_each_parameter(prefix + ".output", fn);
    }
};

struct SelfAttentionBlock {
    LayerNormParams norm1, norm2;
    MultiHeadAttention attention;
    Mlp mlp;

    static SelfAttentionBlock init(std::size_t width, std::size_t heads, std::size_t mlp_dim, Rng& rng);

    template <typename Fn>
    void for_each_parameter(const std::string& prefix, Fn&& fn) const {
        norm1.for_each_parameter(prefix + ".norm1", fn);
        attention.for_each_parameter(prefix + ".attention", fn);
        norm2.for_each_parameter(prefix + ".norm2", fn);
        mlp.for_each_parameter(prefix + ".mlp", fn);
    }
};

/// Pre-norm block: s^ = MSA(LN(s)) + s; out = MLP(LN(s^)) + s^.
ad::Tensor sab_forward(const ad::Tensor& s_prev, const SelfAttentionBlock& block);

struct EncoderConfig {
    std::size_t depth = 4;
    std::size_t hidden = 64;
    std::size_t heads = 4;
    std::size_t mlp_dim = 128;
};

struct EncoderStack {
    std::vector<SelfAttentionBlock> blocks;
    std::vector<bool> frozen;

    static EncoderStack init(const EncoderConfig& config, Rng& rng);
    std::size_t depth() const { return blocks.size(); }
    std::size_t frozen_count() const;

    template <typename Fn>
    void for_each_parameter(Fn&& fn) const {
        for (std::size_t d = 0; d < blocks.size(); ++d) {
            blocks[d].for_each_parameter("encoder." + std::to_string(d), fn);
        }
    }
};

/// Applies every block in order and returns s^D.
ad::Tensor encode(const ad::Tensor& s0, const EncoderStack& stack);

/// Freezes the first k blocks (bottom-up); the rest stay trainable.
void set_frozen(EncoderStack& stack, std::size_t k);

/// 6 of 11 frozen blocks, scaled to `depth` and rounded to nearest.
std::size_t default_frozen_count(std::size_t depth);

}  // namespace tamcl
