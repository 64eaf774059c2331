#include "gkd/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "gkd/errors.hpp"

namespace gkd {

namespace {

std::atomic<std::uint64_t> next_node_id{1};

std::shared_ptr<detail::Node> make_node(Shape shape, std::vector<double> values,
                                        bool requires_grad) {
    auto node = std::make_shared<detail::Node>();
    node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    return node;
}

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor* t) { return t->requires_grad(); });
}

// Result node; attaches parents and the backward rule only when some input is tracked.
Tensor make_result(Shape shape, std::vector<double> values,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(detail::Node&)> rule) {
    const bool tracked = any_requires_grad(inputs);
    auto node = make_node(std::move(shape), std::move(values), tracked);
    if (tracked) {
        for (const Tensor* in : inputs) node->parents.push_back(in->node());
        node->backward = std::move(rule);
    }
    return Tensor::from_node(std::move(node));
}

void require_matrix(const Tensor& t, const char* what) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(what) + ": expected a matrix, got shape " +
                             shape_string(t.shape()));
    }
}

enum class Broadcast { same, left_scalar, right_scalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Broadcast::same;
    if (a.rank() == 0) return Broadcast::left_scalar;
    if (b.rank() == 0) return Broadcast::right_scalar;
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
}

template <typename Fwd, typename DA, typename DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, DA da, DB db) {
    const Broadcast kind = broadcast_kind(a, b, name);
    const Shape& out_shape = kind == Broadcast::left_scalar ? b.shape() : a.shape();
    const std::size_t n = shape_numel(out_shape);
    auto av = a.values();
    auto bv = b.values();
    auto lhs = [=](std::size_t i) { return kind == Broadcast::left_scalar ? av[0] : av[i]; };
    auto rhs = [=](std::size_t i) { return kind == Broadcast::right_scalar ? bv[0] : bv[i]; };

    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(lhs(i), rhs(i));

    auto an = a.node();
    auto bn = b.node();
    return make_result(out_shape, std::move(out), {&a, &b}, [=](detail::Node& self) {
        const auto& g = self.grad;
        auto x = [&](std::size_t i) {
            return kind == Broadcast::left_scalar ? an->values[0] : an->values[i];
        };
        auto y = [&](std::size_t i) {
            return kind == Broadcast::right_scalar ? bn->values[0] : bn->values[i];
        };
        if (an->requires_grad) {
            auto& ga = an->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                ga[kind == Broadcast::left_scalar ? 0 : i] += g[i] * da(x(i), y(i));
            }
        }
        if (bn->requires_grad) {
            auto& gb = bn->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                gb[kind == Broadcast::right_scalar ? 0 : i] += g[i] * db(x(i), y(i));
            }
        }
    });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& t, Fwd fwd, Deriv deriv) {
    auto tv = t.values();
    std::vector<double> out(tv.size());
    for (std::size_t i = 0; i < tv.size(); ++i) out[i] = fwd(tv[i]);
    auto tn = t.node();
    return make_result(t.shape(), std::move(out), {&t}, [tn, deriv](detail::Node& self) {
        auto& gt = tn->ensure_grad();
        for (std::size_t i = 0; i < gt.size(); ++i) {
            gt[i] += self.grad[i] * deriv(tn->values[i], self.values[i]);
        }
    });
}

}  // namespace

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::vector<double>& detail::Node::ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    return grad;
}

// -- Tensor -----------------------------------------------------------------

Tensor::Tensor() : node_(make_node({}, {0.0}, false)) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    for (std::size_t e : shape) {
        if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_string(shape));
    }
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("shape " + shape_string(shape) + " holds " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(values.size()));
    }
    node_ = make_node(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor({}, {value}, requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
    return Tensor({rows, cols}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged matrix literal");
        values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
    std::vector<double> values(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) values[i * n + i] = 1.0;
    return Tensor({n, n}, std::move(values));
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

std::size_t Tensor::rows() const {
    require_matrix(*this, "rows");
    return node_->shape[0];
}

std::size_t Tensor::cols() const {
    require_matrix(*this, "cols");
    return node_->shape[1];
}

double Tensor::item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
    return node_->values[0];
}

double Tensor::operator()(std::size_t i) const { return node_->values.at(i); }

double Tensor::operator()(std::size_t i, std::size_t j) const {
    return node_->values.at(i * cols() + j);
}

std::vector<double> Tensor::grad_or_zeros() const {
    if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
    return node_->grad;
}

void Tensor::set_requires_grad(bool flag) { node_->requires_grad = flag; }

Tensor Tensor::detach() const { return from_node(make_node(shape(), node_->values, false)); }

Tensor Tensor::clone() const {
    return from_node(make_node(shape(), node_->values, node_->requires_grad));
}

// -- tape -------------------------------------------------------------------

GradTape::GradTape(const Tensor& loss) {
    if (loss.numel() != 1 || loss.rank() != 0) {
        throw ContractError("backward requires a scalar loss, got shape " +
                            shape_string(loss.shape()));
    }
    if (!loss.requires_grad()) {
        throw ContractError("backward on a loss that is not on the gradient tape");
    }
    std::unordered_set<const detail::Node*> seen;
    std::vector<std::shared_ptr<detail::Node>> stack{loss.node()};
    while (!stack.empty()) {
        auto node = std::move(stack.back());
        stack.pop_back();
        if (!seen.insert(node.get()).second) continue;
        for (const auto& p : node->parents) {
            if (p->requires_grad) stack.push_back(p);
        }
        nodes_.push_back(std::move(node));
    }
    // Ids are allocated at creation, so inputs always carry smaller ids than consumers.
    std::sort(nodes_.begin(), nodes_.end(),
              [](const auto& a, const auto& b) { return a->id < b->id; });
}

void GradTape::run() {
    if (consumed_) throw ContractError("gradient tape already consumed");
    consumed_ = true;
    auto& root = nodes_.back();
    root->ensure_grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        detail::Node& node = **it;
        if (node.backward && !node.grad.empty()) node.backward(node);
    }
    for (auto& node : nodes_) {
        if (node->backward) {
            node->backward = nullptr;
            node->parents.clear();
        }
    }
}

void backward(const Tensor& loss) { GradTape(loss).run(); }

// -- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "div", [](double x, double y) { return x / y; },
        [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Tensor neg(const Tensor& t) {
    return unary(t, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& t, double factor) {
    return unary(
        t, [factor](double x) { return x * factor; },
        [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& t, double offset) {
    return unary(
        t, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& t) {
    return unary(
        t, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor square(const Tensor& t) {
    return unary(t, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sqrt(const Tensor& t) {
    return unary(
        t, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor clamp_min(const Tensor& t, double floor) {
    return unary(
        t, [floor](double x) { return x > floor ? x : floor; },
        [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& t) {
    return unary(t, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& t) {
    return unary(
        t, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor map(const Tensor& t, const std::function<double(double)>& f,
           const std::function<double(double)>& df) {
    return unary(t, f, [df](double x, double) { return df(x); });
}

// -- structural -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
        throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                             shape_string(b.shape()));
    }
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    auto av = a.values();
    auto bv = b.values();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double* row = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            const double* brow = bv.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
        }
    }
    auto an = a.node();
    auto bn = b.node();
    return make_result({m, n}, std::move(out), {&a, &b}, [an, bn, m, k, n](detail::Node& self) {
        const auto& g = self.grad;
        if (an->requires_grad) {
            // dA = G · Bᵀ
            auto& ga = an->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bn->values[p * n + j];
                    ga[i * k + p] += acc;
                }
            }
        }
        if (bn->requires_grad) {
            // dB = Aᵀ · G
            auto& gb = bn->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = an->values[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
                }
            }
        }
    });
}

Tensor transpose(const Tensor& t) {
    require_matrix(t, "transpose");
    const std::size_t r = t.shape()[0], c = t.shape()[1];
    auto tv = t.values();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = tv[i * c + j];
    auto tn = t.node();
    return make_result({c, r}, std::move(out), {&t}, [tn, r, c](detail::Node& self) {
        auto& gt = tn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gt[i * c + j] += self.grad[j * r + i];
    });
}

Tensor reshape(const Tensor& t, Shape shape) {
    if (shape_numel(shape) != t.numel()) {
        throw DimensionError("reshape: " + shape_string(t.shape()) + " to " + shape_string(shape));
    }
    auto tn = t.node();
    std::vector<double> values(t.values().begin(), t.values().end());
    return make_result(std::move(shape), std::move(values), {&t}, [tn](detail::Node& self) {
        auto& gt = tn->ensure_grad();
        for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += self.grad[i];
    });
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> indices) {
    require_matrix(t, "gather_rows");
    const std::size_t r = t.shape()[0], c = t.shape()[1];
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    std::vector<double> out;
    out.reserve(idx.size() * c);
    auto tv = t.values();
    for (std::size_t i : idx) {
        if (i >= r) throw DimensionError("gather_rows: row index out of range");
        out.insert(out.end(), tv.begin() + static_cast<std::ptrdiff_t>(i * c),
                   tv.begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
    }
    auto tn = t.node();
    return make_result({idx.size(), c}, std::move(out), {&t}, [tn, idx, c](detail::Node& self) {
        auto& gt = tn->ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < c; ++j) gt[idx[i] * c + j] += self.grad[i * c + j];
    });
}

Tensor take(const Tensor& t, std::span<const std::size_t> index, Shape shape) {
    if (shape_numel(shape) != index.size()) {
        throw DimensionError("take: " + std::to_string(index.size()) + " indices for shape " +
                             shape_string(shape));
    }
    std::vector<std::size_t> idx(index.begin(), index.end());
    auto tv = t.values();
    std::vector<double> out(idx.size(), 0.0);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] == kNoIndex) continue;
        if (idx[i] >= tv.size()) throw DimensionError("take: index out of range");
        out[i] = tv[idx[i]];
    }
    auto tn = t.node();
    return make_result(std::move(shape), std::move(out), {&t}, [tn, idx](detail::Node& self) {
        auto& gt = tn->ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i)
            if (idx[i] != kNoIndex) gt[idx[i]] += self.grad[i];
    });
}

Tensor outer(const Tensor& u, const Tensor& v) {
    if (u.rank() != 1 || v.rank() != 1) {
        throw DimensionError("outer: expected vectors, got " + shape_string(u.shape()) + " and " +
                             shape_string(v.shape()));
    }
    return matmul(reshape(u, {u.numel(), 1}), reshape(v, {1, v.numel()}));
}

// -- reductions -------------------------------------------------------------

Tensor reduce(Reduce op, const Tensor& t) {
    const std::size_t n = t.numel();
    auto tv = t.values();
    double value = 0.0;
    std::size_t arg = 0;
    switch (op) {
        case Reduce::sum:
        case Reduce::mean:
            for (double x : tv) value += x;
            if (op == Reduce::mean) value /= static_cast<double>(n);
            break;
        case Reduce::max:
            value = tv[0];
            for (std::size_t i = 1; i < n; ++i) {
                if (tv[i] > value) {
                    value = tv[i];
                    arg = i;
                }
            }
            break;
    }
    auto tn = t.node();
    return make_result({}, {value}, {&t}, [tn, op, n, arg](detail::Node& self) {
        auto& gt = tn->ensure_grad();
        const double g = self.grad[0];
        if (op == Reduce::max) {
            gt[arg] += g;
            return;
        }
        const double w = op == Reduce::mean ? g / static_cast<double>(n) : g;
        for (double& x : gt) x += w;
    });
}

Tensor reduce(Reduce op, const Tensor& t, std::size_t axis) {
    if (axis >= t.rank()) {
        throw DimensionError("reduce: axis " + std::to_string(axis) + " out of range for shape " +
                             shape_string(t.shape()));
    }
    const Shape& in = t.shape();
    std::size_t outer_n = 1, inner_n = 1;
    for (std::size_t d = 0; d < axis; ++d) outer_n *= in[d];
    for (std::size_t d = axis + 1; d < in.size(); ++d) inner_n *= in[d];
    const std::size_t extent = in[axis];

    Shape out_shape;
    for (std::size_t d = 0; d < in.size(); ++d)
        if (d != axis) out_shape.push_back(in[d]);

    auto tv = t.values();
    std::vector<double> out(outer_n * inner_n, 0.0);
    std::vector<std::size_t> argmax(op == Reduce::max ? out.size() : 0);
    for (std::size_t o = 0; o < outer_n; ++o) {
        for (std::size_t i = 0; i < inner_n; ++i) {
            const std::size_t base = o * extent * inner_n + i;
            const std::size_t slot = o * inner_n + i;
            if (op == Reduce::max) {
                double best = tv[base];
                std::size_t best_e = 0;
                for (std::size_t e = 1; e < extent; ++e) {
                    const double x = tv[base + e * inner_n];
                    if (x > best) {
                        best = x;
                        best_e = e;
                    }
                }
                out[slot] = best;
                argmax[slot] = best_e;
            } else {
                double acc = 0.0;
                for (std::size_t e = 0; e < extent; ++e) acc += tv[base + e * inner_n];
                out[slot] = op == Reduce::mean ? acc / static_cast<double>(extent) : acc;
            }
        }
    }
    auto tn = t.node();
    return make_result(std::move(out_shape), std::move(out), {&t},
                       [tn, op, outer_n, inner_n, extent, argmax](detail::Node& self) {
                           auto& gt = tn->ensure_grad();
                           for (std::size_t o = 0; o < outer_n; ++o) {
                               for (std::size_t i = 0; i < inner_n; ++i) {
                                   const std::size_t base = o * extent * inner_n + i;
                                   const double g = self.grad[o * inner_n + i];
                                   if (op == Reduce::max) {
                                       gt[base + argmax[o * inner_n + i] * inner_n] += g;
                                       continue;
                                   }
                                   const double w =
                                       op == Reduce::mean ? g / static_cast<double>(extent) : g;
                                   for (std::size_t e = 0; e < extent; ++e)
                                       gt[base + e * inner_n] += w;
                               }
                           }
                       });
}

}  // namespace gkd
