#include "tamcl/embedding.hpp"

#include "tamcl/errors.hpp"

#include <cmath>
#include <string>

namespace tamcl {

EmbeddingParams EmbeddingParams::init(const EmbeddingConfig& config, Rng& rng) {
    if (config.patch == 0 || config.image_height % config.patch != 0 ||
        config.image_width % config.patch != 0) {
        throw ConfigError("embedding: image " + std::to_string(config.image_height) + "x" +
                          std::to_string(config.image_width) + " not divisible by patch size " +
                          std::to_string(config.patch));
    }
    const auto h = static_cast<Index>(config.hidden);
    const auto pd = static_cast<Index>(config.patch_dim());
    EmbeddingParams p;
    p.config = config;
    p.patch_projection = ad::Tensor::parameter(uniform_matrix(pd, h, 1.0 / std::sqrt(double(pd)), rng));
    p.word_embedding = ad::Tensor::parameter(normal_matrix(static_cast<Index>(config.vocab), h, 0.5, rng));
    p.image_position = ad::Tensor::parameter(normal_matrix(static_cast<Index>(config.patch_count()) + 1, h, 0.02, rng));
    p.text_position = ad::Tensor::parameter(normal_matrix(static_cast<Index>(config.max_text) + 1, h, 0.02, rng));
    p.image_class = ad::Tensor::parameter(normal_matrix(1, h, 0.02, rng));
    p.text_class = ad::Tensor::parameter(normal_matrix(1, h, 0.02, rng));
    p.image_type = ad::Tensor::parameter(normal_matrix(1, h, 0.02, rng));
    p.text_type = ad::Tensor::parameter(normal_matrix(1, h, 0.02, rng));
    return p;
}

Matrix patchify(const Image& image, std::size_t patch) {
    if (patch == 0 || image.height % patch != 0 || image.width % patch != 0) {
        throw ShapeError("patchify: image H=" + std::to_string(image.height) + " W=" +
                         std::to_string(image.width) + " not divisible by P=" + std::to_string(patch));
    }
    if (image.pixels.size() != image.height * image.width * image.channels) {
        throw ShapeError("patchify: pixel buffer does not match H*W*C");
    }
    const std::size_t grid_w = image.width / patch;
    const std::size_t n = (image.height / patch) * grid_w;
    const std::size_t c = image.channels;
    Matrix out(static_cast<Index>(n), static_cast<Index>(patch * patch * c));
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t y0 = (k / grid_w) * patch;
        const std::size_t x0 = (k % grid_w) * patch;
        // Each patch row of the image is contiguous in the HWC buffer.
        for (std::size_t dy = 0; dy < patch; ++dy) {
            const double* src = image.pixels.data() + ((y0 + dy) * image.width + x0) * c;
            for (std::size_t j = 0; j < patch * c; ++j) {
                out(static_cast<Index>(k), static_cast<Index>(dy * patch * c + j)) = src[j];
            }
        }
    }
    return out;
}

ad::Tensor embed_image(const Image& image, const EmbeddingParams& params) {
    const auto& cfg = params.config;
    if (image.channels != cfg.channels) {
        throw ShapeError("embed_image: image has " + std::to_string(image.channels) +
                         " channels, model expects " + std::to_string(cfg.channels));
    }
    auto patches = ad::Tensor::constant(patchify(image, cfg.patch));
    if (patches.rows() + 1 != params.image_position.rows()) {
        throw ShapeError("embed_image: " + std::to_string(patches.rows()) +
                         " patches do not match positional table " + ad::shape_string(params.image_position));
    }
    const ad::Tensor rows[] = {params.image_class, ad::matmul(patches, params.patch_projection)};
    return ad::concat_rows(rows) + params.image_position;
}

ad::Tensor embed_text(std::span<const int> token_ids, const EmbeddingParams& params) {
    const auto& cfg = params.config;
    if (token_ids.size() > cfg.max_text) {
        throw ShapeError("embed_text: " + std::to_string(token_ids.size()) +
                         " tokens exceed maximum length " + std::to_string(cfg.max_text));
    }
    for (int id : token_ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab) {
            throw VocabularyError("embed_text: token id " + std::to_string(id) +
                                  " outside vocabulary of size " + std::to_string(cfg.vocab));
        }
    }
    const auto len = static_cast<Index>(token_ids.size());
    auto position = ad::slice_rows(params.text_position, 0, len + 1);
    if (len == 0) return params.text_class + position;
    const ad::Tensor rows[] = {params.text_class, ad::gather_rows(params.word_embedding, token_ids)};
    return ad::concat_rows(rows) + position;
}

FusedSequence fuse(const ad::Tensor& image_emb, const ad::Tensor& text_emb, const EmbeddingParams& params) {
    if (image_emb.cols() != text_emb.cols() || image_emb.cols() != params.image_type.cols()) {
        throw ShapeError("fuse: width mismatch " + ad::shape_string(image_emb) + " vs " +
                         ad::shape_string(text_emb));
    }
    const ad::Tensor parts[] = {ad::add_row(image_emb, params.image_type),
                                ad::add_row(text_emb, params.text_type)};
    return {ad::concat_rows(parts), static_cast<std::size_t>(image_emb.rows())};
}

ad::Tensor compress_dual(const ad::Tensor& v) {
    if (v.rows() != 1 || v.cols() % 2 != 0) {
        throw ShapeError("compress_dual: expected a [1, even] row, got " + ad::shape_string(v));
    }
    const Index half = v.cols() / 2;
    Matrix out(1, half);
    for (Index j = 0; j < half; ++j) out(0, j) = 0.5 * (v.value()(0, 2 * j) + v.value()(0, 2 * j + 1));
    return ad::make_op("compress_dual", std::move(out), {v}, [half](const Matrix& g) {
        Matrix dv(1, 2 * half);
        for (Index j = 0; j < half; ++j) dv(0, 2 * j) = dv(0, 2 * j + 1) = 0.5 * g(0, j);
        return std::vector<Matrix>{std::move(dv)};
    });
}

}  // namespace tamcl
