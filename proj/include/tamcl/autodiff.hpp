#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tensor is a cheap handle to a graph node. Leaves are created with
// Tensor::constant or Tensor::parameter; every op returns a new node that
// remembers its inputs only when at least one of them requires a gradient,
// so forward passes over frozen weights build no graph at all.

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tamcl {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

namespace ad {

using BackwardFn = std::function<std::vector<Matrix>(const Matrix& grad_out)>;

struct Node {
    Matrix value;
    std::optional<Matrix> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    BackwardFn backward;
    const char* op = "leaf";
};

class Tensor {
public:
    Tensor() = default;

    static Tensor constant(Matrix value);
    static Tensor parameter(Matrix value);
    static Tensor scalar(double value);

    bool defined() const { return node_ != nullptr; }
    const Matrix& value() const { return node_->value; }
    Index rows() const { return node_->value.rows(); }
    Index cols() const { return node_->value.cols(); }
    std::vector<Index> shape() const { return {rows(), cols()}; }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->inputs.empty() && !node_->backward; }
    /// Only leaves may toggle gradient tracking; used to freeze parameters.
    void set_requires_grad(bool flag);

    const std::optional<Matrix>& grad() const { return node_->grad; }
    void zero_grad() { node_->grad.reset(); }

    /// Direct write access for optimizers and checkpoint loading (leaves only).
    Matrix& mutable_value();

    const char* op() const { return node_->op; }
    const Node* id() const { return node_.get(); }

private:
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
    std::shared_ptr<Node> node_;

    friend Tensor make_op(const char*, Matrix, std::vector<Tensor>, BackwardFn);
    friend void backward(const Tensor&);
};

/// Builds an interior node. `fn` returns one gradient per input, in order;
/// entries for inputs that do not require gradients may be left empty.
Tensor make_op(const char* name, Matrix value, std::vector<Tensor> inputs, BackwardFn fn);

/// Accumulates d(loss)/d(leaf) into every reachable leaf with requires_grad.
/// Repeated calls accumulate; clear with zero_grad.
void backward(const Tensor& loss);

std::string shape_string(const Tensor& t);

// Linear algebra
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Element-wise
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// Adds a [1,n] row to every row of an [m,n] tensor.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor gelu(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// Reductions
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Structural
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, Index start, Index count);
Tensor slice_cols(const Tensor& a, Index start, Index count);
Tensor gather_rows(const Tensor& table, std::span<const int> ids);
Tensor detach(const Tensor& a);

// Normalisation and probability
/// axis 1 (or -1) normalises each row; axis 0 normalises each column.
Tensor softmax(const Tensor& x, int axis = -1);
Tensor log_softmax(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Losses (all return [1,1])
/// -log softmax(logits)[label] for a [1,n] logit row.
Tensor cross_entropy(const Tensor& logits, int label);
/// KL(softmax(teacher/T) || softmax(student/T)) per row, averaged over rows.
/// The teacher side is read by value and never receives a gradient.
Tensor kl_divergence(const Tensor& student, const Tensor& teacher, double temperature = 1.0);
/// -sum softmax(target) * log softmax(logits) per row, averaged over rows.
/// Both sides receive gradient.
Tensor soft_cross_entropy(const Tensor& logits, const Tensor& target);

/// Rejects NaN/inf entries with a NumericError naming `where`.
void check_finite(const Matrix& m, const char* where);

}  // namespace ad
}  // namespace tamcl
