#pragma once

// Shared helpers for the unit tests: a plain central-difference oracle and a
// few random-input builders. Kept independent of the library's own checker.

#include "tamcl/autodiff.hpp"
#include "tamcl/random.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace tamcl::oracle {

inline double rel_err(double a, double b, double floor = 1e-8) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Max relative error between backward() and central differences of
/// `f` with respect to every entry of every tensor in `wrt`.
inline double max_grad_error(std::vector<ad::Tensor> wrt, const std::function<ad::Tensor()>& f,
                             double eps = 1e-5, double floor = 1e-8) {
    for (auto& t : wrt) t.zero_grad();
    ad::backward(f());
    double worst = 0.0;
    for (auto& t : wrt) {
        const Matrix g = t.grad() ? *t.grad() : Matrix::Zero(t.rows(), t.cols());
        Matrix& w = t.mutable_value();
        for (Index i = 0; i < w.size(); ++i) {
            const double x = w.data()[i];
            w.data()[i] = x + eps;
            const double up = f().item();
            w.data()[i] = x - eps;
            const double down = f().item();
            w.data()[i] = x;
            worst = std::max(worst, rel_err(g.data()[i], (up - down) / (2 * eps), floor));
        }
    }
    return worst;
}

inline ad::Tensor random_param(Index r, Index c, Rng& rng, double scale = 1.0) {
    return ad::Tensor::parameter(normal_matrix(r, c, scale, rng));
}

/// Weighted sum with fixed random weights, so gradients are not all ones.
inline ad::Tensor probe(const ad::Tensor& x, std::uint64_t seed = 99) {
    Rng rng(seed);
    return ad::sum(ad::mul(x, ad::Tensor::constant(normal_matrix(x.rows(), x.cols(), 1.0, rng))));
}

}  // namespace tamcl::oracle
