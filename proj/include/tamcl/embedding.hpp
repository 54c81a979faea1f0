#pragma once

#include "tamcl/autodiff.hpp"
#include "tamcl/random.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace tamcl {

/// H x W x C image with values in [0, 1], stored row-major (channel fastest).
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<double> pixels;

    double at(std::size_t y, std::size_t x, std::size_t c) const {
        return pixels[(y * width + x) * channels + c];
    }
    bool operator==(const Image&) const = default;
};

/// One multimodal example: one or two images, a token sequence and a label
/// local to its task.
struct RawExample {
    std::vector<Image> images;
    std::vector<int> tokens;
    int label = 0;
    int task_id = 0;

    bool operator==(const RawExample&) const = default;
};

struct EmbeddingConfig {
    std::size_t hidden = 64;
    std::size_t patch = 4;
    std::size_t image_height = 16;
    std::size_t image_width = 16;
    std::size_t channels = 1;
    std::size_t max_text = 8;
    std::size_t vocab = 32;

    std::size_t patch_count() const { return image_height * image_width / (patch * patch); }
    std::size_t patch_dim() const { return patch * patch * channels; }
};

struct EmbeddingParams {
    EmbeddingConfig config;
    ad::Tensor patch_projection;  // [P*P*C, H]
    ad::Tensor word_embedding;    // [|V|, H]
    ad::Tensor image_position;    // [N+1, H]
    ad::Tensor text_position;     // [L_max+1, H]
    ad::Tensor image_class;       // [1, H]
    ad::Tensor text_class;        // [1, H]
    ad::Tensor image_type;        // [1, H]
    ad::Tensor text_type;         // [1, H]

    static EmbeddingParams init(const EmbeddingConfig& config, Rng& rng);

    template <typename Fn>
    void for_each_parameter(Fn&& fn) const {
        fn("patch_projection", patch_projection);
        fn("word_embedding", word_embedding);
        fn("image_position", image_position);
        fn("text_position", text_position);
        fn("image_class", image_class);
        fn("text_class", text_class);
        fn("image_type", image_type);
        fn("text_type", text_type);
    }
};

struct FusedSequence {
    ad::Tensor s0;             // [(N+1)+(L+1), H]
    std::size_t boundary = 0;  // first text row, == N+1
};

/// Flattens P x P patches in row-major patch order; each row holds one patch
/// flattened as (dy, dx, c). Returns [N, P*P*C].
Matrix patchify(const Image& image, std::size_t patch);

/// [v_class; v_1 V; ...; v_N V] + V_pos, shape [N+1, H].
ad::Tensor embed_image(const Image& image, const EmbeddingParams& params);

/// [t_class; T[l_1]; ...; T[l_L]] + T_pos[0..L], shape [L+1, H].
ad::Tensor embed_text(std::span<const int> token_ids, const EmbeddingParams& params);

/// s0 = [v_type + image_emb; t_type + text_emb].
FusedSequence fuse(const ad::Tensor& image_emb, const ad::Tensor& text_emb, const EmbeddingParams& params);

/// Averages non-overlapping adjacent pairs: out[j] = (v[2j] + v[2j+1]) / 2.
/// Accepts a [1, 2H] row and returns [1, H].
ad::Tensor compress_dual(const ad::Tensor& v);

}  // namespace tamcl
