#include "tamcl/autodiff.hpp"

#include "tamcl/errors.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace tamcl::ad {

namespace {

std::string dims(const Matrix& m) {
    std::ostringstream os;
    os << '[' << m.rows() << ',' << m.cols() << ']';
    return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                         shape_string(b));
    }
}

Matrix row_softmax(const Matrix& x) {
    Matrix y(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
        const double mx = x.row(r).maxCoeff();
        y.row(r) = (x.row(r).array() - mx).exp();
        y.row(r) /= y.row(r).sum();
    }
    return y;
}

Matrix row_log_softmax(const Matrix& x) {
    Matrix y(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
        const double mx = x.row(r).maxCoeff();
        const double lse = mx + std::log((x.row(r).array() - mx).exp().sum());
        y.row(r) = x.row(r).array() - lse;
    }
    return y;
}

}  // namespace

Tensor Tensor::constant(Matrix value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Tensor(std::move(node));
}

Tensor Tensor::parameter(Matrix value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) {
    Matrix m(1, 1);
    m(0, 0) = value;
    return constant(std::move(m));
}

double Tensor::item() const {
    if (rows() != 1 || cols() != 1) {
        throw ContractError("item() on non-scalar tensor " + shape_string(*this));
    }
    return node_->value(0, 0);
}

void Tensor::set_requires_grad(bool flag) {
    if (!is_leaf()) throw ContractError("set_requires_grad on a non-leaf tensor");
    node_->requires_grad = flag;
}

Matrix& Tensor::mutable_value() {
    if (!is_leaf()) throw ContractError("mutable_value on a non-leaf tensor");
    return node_->value;
}

Tensor make_op(const char* name, Matrix value, std::vector<Tensor> inputs, BackwardFn fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->op = name;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (auto& in : inputs) node->inputs.push_back(in.node_);
        node->backward = std::move(fn);
    }
    return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.rows() != 1 || loss.cols() != 1) {
        throw ContractError("backward requires a scalar loss, got " +
                            (loss.defined() ? shape_string(loss) : std::string("undefined")));
    }
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order (inputs before users).
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node_.get(), 0}};
    seen.insert(loss.node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    std::unordered_map<Node*, Matrix> grads;
    grads.emplace(loss.node_.get(), Matrix::Ones(1, 1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        auto g = grads.find(node);
        if (g == grads.end()) continue;
        if (!node->backward) {
            if (node->grad) {
                *node->grad += g->second;
            } else {
                node->grad = g->second;
            }
            continue;
        }
        std::vector<Matrix> in_grads = node->backward(g->second);
        for (std::size_t i = 0; i < node->inputs.size(); ++i) {
            Node* in = node->inputs[i].get();
            if (!in->requires_grad || i >= in_grads.size() || in_grads[i].size() == 0) continue;
            auto [slot, inserted] = grads.try_emplace(in, std::move(in_grads[i]));
            if (!inserted) slot->second += in_grads[i];
        }
        grads.erase(g);
    }
}

std::string shape_string(const Tensor& t) { return dims(t.value()); }

void check_finite(const Matrix& m, const char* where) {
    if (!m.allFinite()) throw NumericError(std::string(where) + ": non-finite input");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions differ, " + shape_string(a) + " x " +
                         shape_string(b));
    }
    Matrix out = a.value() * b.value();
    return make_op("matmul", std::move(out), {a, b}, [a, b](const Matrix& g) {
        std::vector<Matrix> r(2);
        if (a.requires_grad()) r[0] = g * b.value().transpose();
        if (b.requires_grad()) r[1] = a.value().transpose() * g;
        return r;
    });
}

Tensor transpose(const Tensor& a) {
    return make_op("transpose", a.value().transpose(), {a},
                   [](const Matrix& g) { return std::vector<Matrix>{g.transpose()}; });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    return make_op("add", a.value() + b.value(), {a, b},
                   [](const Matrix& g) { return std::vector<Matrix>{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    return make_op("sub", a.value() - b.value(), {a, b},
                   [](const Matrix& g) { return std::vector<Matrix>{g, -g}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Matrix out = a.value().cwiseProduct(b.value());
    return make_op("mul", std::move(out), {a, b}, [a, b](const Matrix& g) {
        return std::vector<Matrix>{g.cwiseProduct(b.value()), g.cwiseProduct(a.value())};
    });
}

Tensor scale(const Tensor& a, double factor) {
    return make_op("scale", a.value() * factor, {a},
                   [factor](const Matrix& g) { return std::vector<Matrix>{g * factor}; });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw ShapeError("add_row: cannot broadcast " + shape_string(row) + " onto " +
                         shape_string(a));
    }
    Matrix out = a.value().rowwise() + row.value().row(0);
    return make_op("add_row", std::move(out), {a, row}, [](const Matrix& g) {
        return std::vector<Matrix>{g, g.colwise().sum()};
    });
}

namespace {
constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;
}  // namespace

Tensor gelu(const Tensor& a) {
    constexpr double k = kGeluScale;
    constexpr double c = kGeluCubic;
    const Matrix& x = a.value();
    Matrix t = (k * (x.array() + c * x.array().cube())).tanh().matrix();
    Matrix out = (0.5 * x.array() * (1.0 + t.array())).matrix();
    return make_op("gelu", std::move(out), {a}, [x, t](const Matrix& g) {
        Eigen::ArrayXXd sech2 = 1.0 - t.array().square();
        Eigen::ArrayXXd d = 0.5 * (1.0 + t.array()) +
                            0.5 * x.array() * sech2 * kGeluScale * (1.0 + 3.0 * kGeluCubic * x.array().square());
        return std::vector<Matrix>{(g.array() * d).matrix()};
    });
}

Tensor sum(const Tensor& a) {
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    const Index r = a.rows(), c = a.cols();
    return make_op("sum", std::move(out), {a}, [r, c](const Matrix& g) {
        return std::vector<Matrix>{Matrix::Constant(r, c, g(0, 0))};
    });
}

Tensor mean(const Tensor& a) {
    const double n = static_cast<double>(a.value().size());
    return scale(sum(a), 1.0 / n);
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const Index cols = parts[0].cols();
    Index rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != cols) {
            throw ShapeError("concat_rows: width mismatch " + shape_string(parts[0]) + " vs " +
                             shape_string(p));
        }
        rows += p.rows();
    }
    Matrix out(rows, cols);
    std::vector<Index> offsets;
    Index at = 0;
    for (const auto& p : parts) {
        offsets.push_back(at);
        out.middleRows(at, p.rows()) = p.value();
        at += p.rows();
    }
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    std::vector<Index> heights;
    for (const auto& p : parts) heights.push_back(p.rows());
    return make_op("concat_rows", std::move(out), inputs, [offsets, heights](const Matrix& g) {
        std::vector<Matrix> r;
        r.reserve(offsets.size());
        for (std::size_t i = 0; i < offsets.size(); ++i) r.emplace_back(g.middleRows(offsets[i], heights[i]));
        return r;
    });
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const Index rows = parts[0].rows();
    Index cols = 0;
    for (const auto& p : parts) {
        if (p.rows() != rows) {
            throw ShapeError("concat_cols: height mismatch " + shape_string(parts[0]) + " vs " +
                             shape_string(p));
        }
        cols += p.cols();
    }
    Matrix out(rows, cols);
    std::vector<Index> offsets, widths;
    Index at = 0;
    for (const auto& p : parts) {
        offsets.push_back(at);
        widths.push_back(p.cols());
        out.middleCols(at, p.cols()) = p.value();
        at += p.cols();
    }
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    return make_op("concat_cols", std::move(out), inputs, [offsets, widths](const Matrix& g) {
        std::vector<Matrix> r;
        r.reserve(offsets.size());
        for (std::size_t i = 0; i < offsets.size(); ++i) r.emplace_back(g.middleCols(offsets[i], widths[i]));
        return r;
    });
}

Tensor slice_rows(const Tensor& a, Index start, Index count) {
    if (start < 0 || count < 0 || start + count > a.rows()) {
        throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " + shape_string(a));
    }
    const Index r = a.rows(), c = a.cols();
    return make_op("slice_rows", a.value().middleRows(start, count), {a},
                   [r, c, start, count](const Matrix& g) {
                       Matrix full = Matrix::Zero(r, c);
                       full.middleRows(start, count) = g;
                       return std::vector<Matrix>{std::move(full)};
                   });
}

Tensor slice_cols(const Tensor& a, Index start, Index count) {
    if (start < 0 || count < 0 || start + count > a.cols()) {
        throw ShapeError("slice_cols: cols [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " + shape_string(a));
    }
    const Index r = a.rows(), c = a.cols();
    return make_op("slice_cols", a.value().middleCols(start, count), {a},
                   [r, c, start, count](const Matrix& g) {
                       Matrix full = Matrix::Zero(r, c);
                       full.middleCols(start, count) = g;
                       return std::vector<Matrix>{std::move(full)};
                   });
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
    Matrix out(static_cast<Index>(ids.size()), table.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table.rows()) {
            throw IndexError("gather_rows: id " + std::to_string(ids[i]) + " outside table " +
                             shape_string(table));
        }
        out.row(static_cast<Index>(i)) = table.value().row(ids[i]);
    }
    std::vector<int> idx(ids.begin(), ids.end());
    const Index r = table.rows(), c = table.cols();
    return make_op("gather_rows", std::move(out), {table}, [idx, r, c](const Matrix& g) {
        Matrix full = Matrix::Zero(r, c);
        for (std::size_t i = 0; i < idx.size(); ++i) full.row(idx[i]) += g.row(static_cast<Index>(i));
        return std::vector<Matrix>{std::move(full)};
    });
}

Tensor detach(const Tensor& a) { return Tensor::constant(a.value()); }

Tensor softmax(const Tensor& x, int axis) {
    if (axis == 0) return transpose(softmax(transpose(x), 1));
    if (axis != 1 && axis != -1) throw ShapeError("softmax: axis must be 0, 1 or -1");
    if (x.cols() < 1) throw ShapeError("softmax: empty axis");
    check_finite(x.value(), "softmax");
    Matrix y = row_softmax(x.value());
    return make_op("softmax", y, {x}, [y](const Matrix& g) {
        Matrix dx(y.rows(), y.cols());
        for (Index r = 0; r < y.rows(); ++r) {
            const double dot = g.row(r).dot(y.row(r));
            dx.row(r) = y.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
        }
        return std::vector<Matrix>{std::move(dx)};
    });
}

Tensor log_softmax(const Tensor& x) {
    check_finite(x.value(), "log_softmax");
    Matrix y = row_log_softmax(x.value());
    Matrix p = y.array().exp().matrix();
    return make_op("log_softmax", std::move(y), {x}, [p](const Matrix& g) {
        Matrix dx(p.rows(), p.cols());
        for (Index r = 0; r < p.rows(); ++r) dx.row(r) = g.row(r) - p.row(r) * g.row(r).sum();
        return std::vector<Matrix>{std::move(dx)};
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const Index n = x.cols();
    if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n) {
        throw ShapeError("layer_norm: affine params " + shape_string(gamma) + "/" +
                         shape_string(beta) + " do not match input " + shape_string(x));
    }
    if (!(eps > 0.0)) throw ShapeError("layer_norm: eps must be positive");
    const Matrix& xv = x.value();
    Matrix xhat(xv.rows(), n);
    Eigen::VectorXd inv_std(xv.rows());
    for (Index r = 0; r < xv.rows(); ++r) {
        const double mu = xv.row(r).mean();
        const double var = (xv.row(r).array() - mu).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
    }
    Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
    out.rowwise() += beta.value().row(0);
    Matrix gv = gamma.value();
    return make_op("layer_norm", std::move(out), {x, gamma, beta},
                   [xhat, inv_std, gv, n](const Matrix& g) {
                       std::vector<Matrix> r(3);
                       Matrix dxhat = (g.array().rowwise() * gv.row(0).array()).matrix();
                       r[0].resize(g.rows(), n);
                       const double nd = static_cast<double>(n);
                       for (Index i = 0; i < g.rows(); ++i) {
                           const double s1 = dxhat.row(i).sum();
                           const double s2 = dxhat.row(i).dot(xhat.row(i));
                           r[0].row(i) = (inv_std(i) / nd) *
                                         (nd * dxhat.row(i).array() - s1 - xhat.row(i).array() * s2)
                                             .matrix();
                       }
                       r[1] = g.cwiseProduct(xhat).colwise().sum();
                       r[2] = g.colwise().sum();
                       return r;
                   });
}

Tensor cross_entropy(const Tensor& logits, int label) {
    if (logits.rows() != 1) throw ShapeError("cross_entropy: expected [1,n] logits, got " + shape_string(logits));
    if (label < 0 || label >= logits.cols()) {
        throw IndexError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                         std::to_string(logits.cols()) + ")");
    }
    check_finite(logits.value(), "cross_entropy");
    Matrix logp = row_log_softmax(logits.value());
    Matrix out(1, 1);
    out(0, 0) = -logp(0, label);
    return make_op("cross_entropy", std::move(out), {logits}, [logp, label](const Matrix& g) {
        Matrix dx = logp.array().exp().matrix();
        dx(0, label) -= 1.0;
        return std::vector<Matrix>{dx * g(0, 0)};
    });
}

Tensor kl_divergence(const Tensor& student, const Tensor& teacher, double temperature) {
    require_same_shape(student, teacher, "kl_divergence");
    if (!(temperature > 0.0)) throw ContractError("kl_divergence: temperature must be positive");
    check_finite(student.value(), "kl_divergence");
    check_finite(teacher.value(), "kl_divergence");
    const Matrix log_q = row_log_softmax(student.value() / temperature);
    const Matrix log_p = row_log_softmax(teacher.value() / temperature);
    const Matrix p = log_p.array().exp().matrix();
    const double m = static_cast<double>(student.rows());
    double total = 0.0;
    for (Index r = 0; r < p.rows(); ++r) {
        for (Index c = 0; c < p.cols(); ++c) {
            if (p(r, c) > 0.0) total += p(r, c) * (log_p(r, c) - log_q(r, c));
        }
    }
    Matrix out(1, 1);
    out(0, 0) = total / m;
    const Matrix q = log_q.array().exp().matrix();
    return make_op("kl_divergence", std::move(out), {student}, [p, q, temperature, m](const Matrix& g) {
        return std::vector<Matrix>{(q - p) * (g(0, 0) / (temperature * m))};
    });
}

Tensor soft_cross_entropy(const Tensor& logits, const Tensor& target) {
    require_same_shape(logits, target, "soft_cross_entropy");
    check_finite(logits.value(), "soft_cross_entropy");
    check_finite(target.value(), "soft_cross_entropy");
    const Matrix log_q = row_log_softmax(logits.value());
    const Matrix p = row_softmax(target.value());
    const double m = static_cast<double>(logits.rows());
    Matrix out(1, 1);
    out(0, 0) = -(p.cwiseProduct(log_q)).sum() / m;
    const Matrix q = log_q.array().exp().matrix();
    return make_op("soft_cross_entropy", std::move(out), {logits, target}, [p, q, log_q, m](const Matrix& g) {
        const double s = g(0, 0) / m;
        // d/dt of -sum p log q with p = softmax(t): p * (-log q + sum_row(p log q)).
        const Eigen::VectorXd row_mean = p.cwiseProduct(log_q).rowwise().sum();
        const Matrix dt = (p.array() * ((-log_q).array().colwise() + row_mean.array())).matrix();
        return std::vector<Matrix>{(q - p) * s, dt * s};
    });
}

}  // namespace tamcl::ad
