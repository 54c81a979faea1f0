#include "support.hpp"

#include "tamcl/embedding.hpp"
#include "tamcl/errors.hpp"

#include <gtest/gtest.h>

using namespace tamcl;

namespace {

EmbeddingParams make_params(EmbeddingConfig cfg, std::uint64_t seed = 1) {
    Rng rng(seed);
    return EmbeddingParams::init(cfg, rng);
}

Image random_image(std::size_t h, std::size_t w, std::size_t c, Rng& rng) {
    Image img{h, w, c, {}};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < h * w * c; ++i) img.pixels.push_back(u(rng));
    return img;
}

void zero(const ad::Tensor& t) {
    ad::Tensor h = t;
    h.mutable_value().setZero();
}

}  // namespace

TEST(EmbedImage, PatchCountAndShape) {
    EmbeddingConfig cfg{8, 2, 4, 4, 1, 4, 10};
    auto p = make_params(cfg);
    Rng rng(2);
    auto out = embed_image(random_image(4, 4, 1, rng), p);
    EXPECT_EQ(cfg.patch_count(), 4u);
    EXPECT_EQ(out.rows(), 5);
    EXPECT_EQ(out.cols(), 8);
}

TEST(EmbedImage, ZeroImageLeavesClassRow) {
    EmbeddingConfig cfg{8, 2, 4, 4, 1, 4, 10};
    auto p = make_params(cfg);
    zero(p.image_position);
    Image img{4, 4, 1, std::vector<double>(16, 0.0)};
    auto out = embed_image(img, p).value();
    EXPECT_EQ(out.row(0), p.image_class.value().row(0));
    EXPECT_TRUE(out.bottomRows(4).isZero(0.0));
}

TEST(EmbedImage, PatchOrderMatchesLoopOracle) {
    Rng rng(3);
    const std::size_t P = 4, H = 8, W = 8, C = 3;
    auto img = random_image(H, W, C, rng);
    Matrix got = patchify(img, P);
    ASSERT_EQ(got.rows(), 4);
    ASSERT_EQ(got.cols(), static_cast<Index>(P * P * C));
    Index k = 0;
    for (std::size_t py = 0; py < H / P; ++py) {
        for (std::size_t px = 0; px < W / P; ++px, ++k) {
            Index col = 0;
            for (std::size_t dy = 0; dy < P; ++dy)
                for (std::size_t dx = 0; dx < P; ++dx)
                    for (std::size_t c = 0; c < C; ++c) EXPECT_EQ(got(k, col++), img.at(py * P + dy, px * P + dx, c));
        }
    }
}

TEST(EmbedImage, ProjectionIsLinearInPatches) {
    EmbeddingConfig cfg{6, 4, 8, 8, 3, 2, 5};
    auto p = make_params(cfg);
    Rng rng(4);
    auto img = random_image(8, 8, 3, rng);
    Matrix expected(5, 6);
    expected.row(0) = p.image_class.value().row(0);
    expected.bottomRows(4) = patchify(img, 4) * p.patch_projection.value();
    expected += p.image_position.value();
    EXPECT_TRUE(embed_image(img, p).value().isApprox(expected, 1e-14));
}

TEST(EmbedImage, NonDivisibleDimsNameHWP) {
    Image img{5, 4, 1, std::vector<double>(20, 0.0)};
    try {
        patchify(img, 2);
        FAIL();
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("H=5"), std::string::npos);
        EXPECT_NE(msg.find("W=4"), std::string::npos);
        EXPECT_NE(msg.find("P=2"), std::string::npos);
    }
    EXPECT_THROW(EmbeddingParams::init(EmbeddingConfig{8, 3, 4, 4, 1, 2, 4}, *std::make_unique<Rng>(1)), ConfigError);
}

TEST(EmbedImage, WrongChannelsOrSize) {
    auto p = make_params(EmbeddingConfig{8, 2, 4, 4, 1, 4, 10});
    Rng rng(5);
    EXPECT_THROW(embed_image(random_image(4, 4, 3, rng), p), ShapeError);
    EXPECT_THROW(embed_image(random_image(8, 8, 1, rng), p), ShapeError);
}

TEST(EmbedText, EmptyTextIsClassPlusFirstPosition) {
    auto p = make_params(EmbeddingConfig{8, 2, 4, 4, 1, 4, 10});
    auto out = embed_text({}, p).value();
    ASSERT_EQ(out.rows(), 1);
    EXPECT_EQ(out, p.text_class.value() + p.text_position.value().topRows(1));
}

TEST(EmbedText, LookupSelectsRow) {
    auto p = make_params(EmbeddingConfig{8, 2, 4, 4, 1, 4, 10});
    zero(p.text_position);
    const int ids[] = {7};
    auto out = embed_text(ids, p).value();
    EXPECT_EQ(out.row(1), p.word_embedding.value().row(7));
}

TEST(EmbedText, MatchesGatherOracle) {
    auto p = make_params(EmbeddingConfig{8, 2, 4, 4, 1, 8, 20});
    const int ids[] = {3, 19, 0, 3, 11, 5};
    auto out = embed_text(ids, p).value();
    ASSERT_EQ(out.rows(), 7);
    EXPECT_EQ(out.row(0), p.text_class.value().row(0) + p.text_position.value().row(0));
    for (int l = 0; l < 6; ++l) {
        EXPECT_EQ(out.row(l + 1), p.word_embedding.value().row(ids[l]) + p.text_position.value().row(l + 1));
    }
}

TEST(EmbedText, Errors) {
    auto p = make_params(EmbeddingConfig{8, 2, 4, 4, 1, 3, 10});
    const int bad_id[] = {10};
    const int negative[] = {-1};
    const int too_long[] = {1, 2, 3, 4};
    EXPECT_THROW(embed_text(bad_id, p), VocabularyError);
    EXPECT_THROW(embed_text(negative, p), VocabularyError);
    EXPECT_THROW(embed_text(too_long, p), ShapeError);
}

TEST(Fuse, ZeroEmbeddingsGiveTypeRows) {
    auto p = make_params(EmbeddingConfig{8, 2, 4, 4, 1, 6, 10});
    auto img = ad::Tensor::constant(Matrix::Zero(5, 8));
    auto txt = ad::Tensor::constant(Matrix::Zero(7, 8));
    auto fused = fuse(img, txt, p);
    EXPECT_EQ(fused.boundary, 5u);
    EXPECT_EQ(fused.s0.rows(), 12);
    for (Index r = 0; r < 5; ++r) EXPECT_EQ(fused.s0.value().row(r), p.image_type.value().row(0));
    for (Index r = 5; r < 12; ++r) EXPECT_EQ(fused.s0.value().row(r), p.text_type.value().row(0));
}

TEST(Fuse, SlicingAtBoundaryRecoversInputs) {
    auto p = make_params(EmbeddingConfig{8, 2, 4, 4, 1, 6, 10});
    Rng rng(6);
    Matrix a = normal_matrix(5, 8, 1.0, rng), b = normal_matrix(4, 8, 1.0, rng);
    auto fused = fuse(ad::Tensor::constant(a), ad::Tensor::constant(b), p);
    const Matrix& s = fused.s0.value();
    Matrix img = s.topRows(fused.boundary);
    img.rowwise() -= p.image_type.value().row(0);
    Matrix txt = s.bottomRows(s.rows() - fused.boundary);
    txt.rowwise() -= p.text_type.value().row(0);
    EXPECT_TRUE(img.isApprox(a, 1e-15));
    EXPECT_TRUE(txt.isApprox(b, 1e-15));
}

TEST(Fuse, WidthMismatch) {
    auto p = make_params(EmbeddingConfig{8, 2, 4, 4, 1, 6, 10});
    EXPECT_THROW(fuse(ad::Tensor::constant(Matrix::Zero(5, 8)), ad::Tensor::constant(Matrix::Zero(2, 6)), p),
                 ShapeError);
}

TEST(FusedLength, ImagePlusText) {
    auto p = make_params(EmbeddingConfig{8, 4, 16, 8, 1, 8, 10});
    Rng rng(7);
    for (int len : {0, 3, 8}) {
        std::vector<int> ids(static_cast<std::size_t>(len), 1);
        auto fused = fuse(embed_image(random_image(16, 8, 1, rng), p), embed_text(ids, p), p);
        EXPECT_EQ(fused.s0.rows(), static_cast<Index>((8 + 1) + (len + 1)));
    }
}

TEST(CompressDual, KnownValues) {
    Matrix a(1, 4);
    a << 2.5, 2.5, -1, -1;
    EXPECT_EQ(compress_dual(ad::Tensor::constant(a)).value(), (Matrix(1, 2) << 2.5, -1).finished());
    Matrix b(1, 4);
    b << 1, 3, 5, 7;
    EXPECT_EQ(compress_dual(ad::Tensor::constant(b)).value(), (Matrix(1, 2) << 2, 6).finished());
}

TEST(CompressDual, FullWidthMatchesLoop) {
    Rng rng(8);
    Matrix v = normal_matrix(1, 1536, 1.0, rng);
    auto out = compress_dual(ad::Tensor::constant(v)).value();
    ASSERT_EQ(out.cols(), 768);
    for (Index j = 0; j < 768; ++j) EXPECT_EQ(out(0, j), (v(0, 2 * j) + v(0, 2 * j + 1)) / 2);
}

TEST(CompressDual, LinearAndDifferentiable) {
    Rng rng(9);
    Matrix x = normal_matrix(1, 10, 1.0, rng), y = normal_matrix(1, 10, 1.0, rng);
    const double a = 0.7, b = -2.0;
    Matrix lhs = compress_dual(ad::Tensor::constant(a * x + b * y)).value();
    Matrix rhs = a * compress_dual(ad::Tensor::constant(x)).value() + b * compress_dual(ad::Tensor::constant(y)).value();
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
    auto v = ad::Tensor::parameter(x);
    EXPECT_LT(oracle::max_grad_error({v}, [&] { return oracle::probe(compress_dual(v)); }), 1e-7);
}

TEST(CompressDual, OddLength) {
    EXPECT_THROW(compress_dual(ad::Tensor::constant(Matrix::Zero(1, 3))), ShapeError);
}

TEST(EmbeddingGradients, ReachEveryParameter) {
    auto p = make_params(EmbeddingConfig{8, 2, 4, 4, 1, 4, 10});
    Rng rng(10);
    const int ids[] = {1, 4, 9};
    auto fused = fuse(embed_image(random_image(4, 4, 1, rng), p), embed_text(ids, p), p);
    ad::backward(oracle::probe(fused.s0));
    p.for_each_parameter([](const std::string& name, const ad::Tensor& t) {
        ASSERT_TRUE(t.grad().has_value()) << name;
        EXPECT_GT(t.grad()->cwiseAbs().maxCoeff(), 0.0) << name;
    });
}
