#include "tamcl/gradcheck.hpp"

#include "tamcl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

namespace tamcl {

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_difference_check(const std::vector<NamedParameter>& params,
                                        const std::function<ad::Tensor()>& build_loss, double eps) {
    for (auto p : params) p.tensor.zero_grad();
    ad::backward(build_loss());

    GradCheckReport report;
    for (const auto& p : params) {
        GradCheckEntry entry;
        entry.name = p.name;
        entry.size = p.tensor.value().size();
        const Matrix analytic = p.tensor.grad() ? *p.tensor.grad() : Matrix::Zero(p.tensor.rows(), p.tensor.cols());
        ad::Tensor handle = p.tensor;
        Matrix& w = handle.mutable_value();
        for (Index r = 0; r < w.rows(); ++r) {
            for (Index c = 0; c < w.cols(); ++c) {
                const double saved = w(r, c);
                w(r, c) = saved + eps;
                const double up = build_loss().item();
                w(r, c) = saved - eps;
                const double down = build_loss().item();
                w(r, c) = saved;
                const double numeric = (up - down) / (2.0 * eps);
                entry.max_rel_error = std::max(entry.max_rel_error, relative_error(analytic(r, c), numeric));
                entry.max_abs_grad = std::max(entry.max_abs_grad, std::abs(analytic(r, c)));
            }
        }
        report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
        report.entries.push_back(entry);
    }
    return report;
}

namespace {

ModelConfig toy_config() {
    ModelConfig c;
    c.hidden = 16;
    c.heads = 2;
    c.mlp_dim = 32;
    c.depth = 2;
    c.patch = 4;
    c.image_height = 4;
    c.image_width = 8;
    c.channels = 1;
    c.max_text = 3;
    c.vocab = 8;
    c.frozen_layers = 0;
    return c;
}

RawExample toy_example(int task_id, int label, Rng& rng) {
    RawExample ex;
    Image img{4, 8, 1, {}};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 32; ++i) img.pixels.push_back(u(rng));
    ex.images.push_back(img);
    std::uniform_int_distribution<int> tok(0, 7);
    ex.tokens = {tok(rng), tok(rng), tok(rng)};
    ex.label = label;
    ex.task_id = task_id;
    return ex;
}

}  // namespace

ToyProblem make_toy_problem(std::uint64_t seed, DivMode mode) {
    auto student = TamClModel::init(toy_config(), seed);
    student.register_task(1, 2);
    auto teacher = student.clone_frozen();
    student.register_task(2, 3);

    Rng rng(mix_seed(seed, 1));
    std::normal_distribution<double> noise(0.0, 0.05);
    for (auto& p : student.named_parameters()) {
        ad::Tensor handle = p.tensor;
        for (auto& v : handle.mutable_value().reshaped()) v += noise(rng);
    }

    ToyProblem problem{std::move(student), std::move(teacher), {}, 2, {}};
    problem.trainer.div_mode = mode;
    problem.batch = {toy_example(2, 0, rng), toy_example(2, 2, rng)};
    problem.student.set_training_task(2, 2);
    return problem;
}

ComposedLoss toy_loss(const ToyProblem& problem, std::optional<LossWeights> weights) {
    const auto& cfg = problem.trainer;
    std::vector<ad::Tensor> ce, kd;
    for (const auto& ex : problem.batch) {
        auto out = problem.student.forward(ex);
        ce.push_back(ad::cross_entropy(out.owned, ex.label));
        auto target = problem.teacher.encode_features(ex);
        for (std::size_t p = 0; p < out.features.size(); ++p) {
            kd.push_back(compute_ikd(out.features[p], target[p], cfg.temperature));
        }
    }
    auto l_c = ad::mean(ad::concat_rows(ce));
    auto l_ikd = ad::mean(ad::concat_rows(kd));
    auto l_div = compute_div(problem.student.tokens(), problem.current_task, cfg.div_mode);
    const int seen = static_cast<int>(problem.student.tasks().size());
    const double alpha = cfg.alpha_for(problem.current_task);
    const auto w = weights ? *weights : loss_weights(l_c.item(), l_ikd.item(), l_div.item(), seen, alpha, cfg.div_mode);
    return {ad::scale(l_c, 1.0 - w.lambda) + ad::scale(l_ikd, w.lambda * w.alpha) + ad::scale(l_div, w.beta), w};
}

namespace {

std::string fmt(const char* pattern, double v) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), pattern, v);
    return buf;
}

CheckOutcome check_gradients(std::uint64_t seed, DivMode mode) {
    auto problem = make_toy_problem(seed, mode);
    // Weights stay at their base-point values; the min() in beta is not smooth.
    const auto fixed = toy_loss(problem).weights;
    const auto report = finite_difference_check(problem.student.trainable_parameters(),
                                                [&] { return toy_loss(problem, fixed).total; });
    return {"gradients (" + to_string(mode) + ")", report.max_rel_error < 1e-3,
            fmt("max relative error %.3e", report.max_rel_error)};
}

}  // namespace

std::vector<CheckOutcome> run_self_check(std::uint64_t seed) {
    std::vector<CheckOutcome> out;
    out.push_back(check_gradients(seed, DivMode::Repel));
    out.push_back(check_gradients(seed, DivMode::Literal));

    {
        bool ok = true;
        std::string detail;
        for (int n = 1; n <= 5; ++n) {
            const double lambda = loss_weights(1, 1, 1, n, 1).lambda;
            ok = ok && lambda == static_cast<double>(n - 1) / n;
            detail += fmt(n == 1 ? "%.4f" : ", %.4f", lambda);
        }
        out.push_back({"lambda schedule", ok, detail});
    }

    {
        ModelConfig c = toy_config();
        auto model = TamClModel::init(c, seed);
        bool ok = true;
        std::string widths;
        const Index sizes[] = {2, 3, 4};
        for (int t = 0; t < 3; ++t) {
            const ClassifierHead* prev = model.heads().latest();
            std::optional<Matrix> before;
            if (prev) before = classify(ad::Tensor::constant(Matrix::Constant(1, 16, 0.3)), *prev).value();
            model.register_task(t + 1, sizes[t]);
            const auto& head = model.heads().find(t + 1);
            widths += (t ? ", " : "") + std::to_string(head.width());
            if (before) {
                const Matrix after = classify(ad::Tensor::constant(Matrix::Constant(1, 16, 0.3)), head).value();
                ok = ok && after.leftCols(before->cols()) == *before;
            }
        }
        const auto& last = model.heads().find(3);
        ok = ok && model.heads().find(1).width() == 2 && model.heads().find(2).width() == 5 && last.width() == 9;
        out.push_back({"head expansion", ok, "widths " + widths});
    }

    {
        Rng rng(mix_seed(seed, 3));
        auto tab = TaskAttentionBlock::init(16, 2, 32, rng);
        TokenRegistry tokens;
        const auto& token = init_task_token(tokens, 1, 16, rng);
        double worst = 0.0;
        bool shapes = true;
        for (Index n : {1, 9, 33}) {
            Matrix weights;
            auto s = ad::Tensor::constant(normal_matrix(n, 16, 1.0, rng));
            auto y = task_attend(s, token, tab, &weights);
            shapes = shapes && y.rows() == 1 && y.cols() == 16;
            worst = std::max(worst, (weights.rowwise().sum().array() - 1.0).abs().maxCoeff());
        }
        out.push_back({"task attention rows", shapes && worst <= 1e-9, fmt("max |row sum - 1| %.2e", worst)});
    }

    {
        auto problem = make_toy_problem(seed);
        const auto path = std::filesystem::temp_directory_path() / ("tamcl_check_" + std::to_string(seed) + ".ckpt");
        problem.student.save(path);
        const auto loaded = TamClModel::load(path);
        std::filesystem::remove(path);
        const bool ok = hash_parameters(loaded.named_parameters()) == hash_parameters(problem.student.named_parameters());
        out.push_back({"checkpoint round trip", ok, ok ? "hashes equal" : "hashes differ"});
    }
    return out;
}

}  // namespace tamcl
