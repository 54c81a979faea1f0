#pragma once

#include "tamcl/model.hpp"
#include "tamcl/trainer.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace tamcl {

struct GradCheckEntry {
    std::string name;
    Index size = 0;
    double max_rel_error = 0.0;
    double max_abs_grad = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps structurally zero
/// gradients (attention key biases) from turning roundoff into error.
double relative_error(double analytic, double numeric, double floor = 1e-4);

/// Compares the analytic gradient of `build_loss` against central differences
/// for every entry of every parameter in `params`.
GradCheckReport finite_difference_check(const std::vector<NamedParameter>& params,
                                        const std::function<ad::Tensor()>& build_loss, double eps = 1e-5);

/// Two-task toy setup: D=2, G=16, h=2, a two-patch image and three text
/// tokens. The student is perturbed away from its teacher so every loss term
/// carries gradient.
struct ToyProblem {
    TamClModel student;
    TamClModel teacher;
    std::vector<RawExample> batch;
    int current_task = 2;
    TrainerConfig trainer;
};

ToyProblem make_toy_problem(std::uint64_t seed, DivMode mode = DivMode::Repel);

/// The composed loss with the weights given (or evaluated at the current
/// parameters when absent).
ComposedLoss toy_loss(const ToyProblem& problem, std::optional<LossWeights> weights = std::nullopt);

struct CheckOutcome {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Finite-difference and structural invariant checks run by `tamcl check`.
std::vector<CheckOutcome> run_self_check(std::uint64_t seed);

}  // namespace tamcl
