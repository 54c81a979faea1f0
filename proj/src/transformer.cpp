#include "tamcl/transformer.hpp"

#include "tamcl/errors.hpp"

#include <algorithm>
#include <cmath>

namespace tamcl {

Linear Linear::init(std::size_t in, std::size_t out, bool with_bias, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Linear l;
    l.weight = ad::Tensor::parameter(uniform_matrix(Index(in), Index(out), bound, rng));
    if (with_bias) l.bias = ad::Tensor::parameter(uniform_matrix(1, Index(out), bound, rng));
    return l;
}

ad::Tensor Linear::operator()(const ad::Tensor& x) const {
    auto y = ad::matmul(x, weight);
    return bias ? ad::add_row(y, *bias) : y;
}

LayerNormParams LayerNormParams::init(std::size_t width) {
    return {ad::Tensor::parameter(Matrix::Ones(1, Index(width))),
            ad::Tensor::parameter(Matrix::Zero(1, Index(width)))};
}

ad::Tensor LayerNormParams::operator()(const ad::Tensor& x) const {
    return ad::layer_norm(x, gamma, beta, eps);
}

MultiHeadAttention MultiHeadAttention::init(std::size_t width, std::size_t heads, bool qkv_bias, Rng& rng) {
    if (heads == 0 || width % heads != 0) {
        throw ConfigError("attention: width " + std::to_string(width) + " not divisible by " +
                          std::to_string(heads) + " heads");
    }
    MultiHeadAttention m;
    m.query = Linear::init(width, width, qkv_bias, rng);
    m.key = Linear::init(width, width, qkv_bias, rng);
    m.value = Linear::init(width, width, qkv_bias, rng);
    m.output = Linear::init(width, width, true, rng);
    m.heads = heads;
    return m;
}

ad::Tensor attend(const ad::Tensor& queries, const ad::Tensor& keys_values,
                  const MultiHeadAttention& mha, Matrix* weights) {
    const Index width = mha.query.weight.rows();
    if (queries.cols() != width || keys_values.cols() != width) {
        throw ShapeError("attention: inputs " + ad::shape_string(queries) + " / " +
                         ad::shape_string(keys_values) + " do not match width " + std::to_string(width));
    }
    const auto h = static_cast<Index>(mha.heads);
    const Index dh = width / h;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    auto q = mha.query(queries);
    auto k = mha.key(keys_values);
    auto v = mha.value(keys_values);
    if (weights) weights->resize(h * queries.rows(), keys_values.rows());

    std::vector<ad::Tensor> per_head;
    per_head.reserve(std::size_t(h));
    for (Index i = 0; i < h; ++i) {
        auto qh = ad::slice_cols(q, i * dh, dh);
        auto kh = ad::slice_cols(k, i * dh, dh);
        auto vh = ad::slice_cols(v, i * dh, dh);
        auto scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_scale);
        auto a = ad::softmax(scores, 1);
        if (weights) weights->middleRows(i * queries.rows(), queries.rows()) = a.value();
        per_head.push_back(ad::matmul(a, vh));
    }
    return mha.output(h == 1 ? per_head.front() : ad::concat_cols(per_head));
}

Mlp Mlp::init(std::size_t width, std::size_t inner, Rng& rng) {
    return {Linear::init(width, inner, true, rng), Linear::init(inner, width, true, rng)};
}

SelfAttentionBlock SelfAttentionBlock::init(std::size_t width, std::size_t heads, std::size_t mlp_dim, Rng& rng) {
    SelfAttentionBlock b;
    b.norm1 = LayerNormParams::init(width);
    b.attention = MultiHeadAttention::init(width, heads, true, rng);
    b.norm2 = LayerNormParams::init(width);
    b.mlp = Mlp::init(width, mlp_dim, rng);
    return b;
}

ad::Tensor sab_forward(const ad::Tensor& s_prev, const SelfAttentionBlock& block) {
    auto normed = block.norm1(s_prev);
    auto s_hat = attend(normed, normed, block.attention) + s_prev;
    return block.mlp(block.norm2(s_hat)) + s_hat;
}

EncoderStack EncoderStack::init(const EncoderConfig& config, Rng& rng) {
    if (config.depth == 0) throw ConfigError("encoder: depth must be at least 1");
    EncoderStack s;
    for (std::size_t d = 0; d < config.depth; ++d) {
        s.blocks.push_back(SelfAttentionBlock::init(config.hidden, config.heads, config.mlp_dim, rng));
    }
    s.frozen.assign(config.depth, false);
    return s;
}

std::size_t EncoderStack::frozen_count() const {
    return static_cast<std::size_t>(std::count(frozen.begin(), frozen.end(), true));
}

ad::Tensor encode(const ad::Tensor& s0, const EncoderStack& stack) {
    if (stack.blocks.empty()) throw ContractError("encode: empty encoder stack");
    ad::Tensor s = s0;
    for (const auto& block : stack.blocks) s = sab_forward(s, block);
    return s;
}

void set_frozen(EncoderStack& stack, std::size_t k) {
    if (k > stack.depth()) {
        throw ConfigError("set_frozen: cannot freeze " + std::to_string(k) + " of " +
                          std::to_string(stack.depth()) + " blocks");
    }
    stack.frozen.assign(stack.depth(), false);
    std::fill_n(stack.frozen.begin(), k, true);
}

std::size_t default_frozen_count(std::size_t depth) {
    return static_cast<std::size_t>(std::lround(6.0 / 11.0 * static_cast<double>(depth)));
}

}  // namespace tamcl
