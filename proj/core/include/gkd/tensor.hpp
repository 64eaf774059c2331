#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace gkd {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct Node {
    std::uint64_t id = 0;
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Propagates this node's grad into its parents.
    std::function<void(Node&)> backward;

    std::vector<double>& ensure_grad();
};

}  // namespace detail

/// Dense row-major float64 array. Copies share storage and tape identity;
/// use clone() or detach() for an independent value.
class Tensor {
  public:
    Tensor();
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value);
    static Tensor vector(std::vector<double> values, bool requires_grad = false);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                         bool requires_grad = false);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor identity(std::size_t n);

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->values.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> values() const { return node_->values; }
    // Writes bypass the tape; intended for parameter updates and fixtures.
    std::span<double> mutable_values() { return node_->values; }
    double item() const;
    double operator()(std::size_t i) const;
    double operator()(std::size_t i, std::size_t j) const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag);
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    // Gradient, or zeros when backward never reached this tensor.
    std::vector<double> grad_or_zeros() const;
    void zero_grad() { node_->grad.clear(); }

    // Same values, no tape participation.
    Tensor detach() const;
    // Same values and requires_grad flag, fresh leaf.
    Tensor clone() const;

    std::uint64_t node_id() const { return node_->id; }
    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    const std::shared_ptr<detail::Node>& node() const { return node_; }

    static Tensor from_node(std::shared_ptr<detail::Node> node);

  private:
    std::shared_ptr<detail::Node> node_;
};

/// Ancestors of a scalar loss in topological order (inputs before consumers).
class GradTape {
  public:
    explicit GradTape(const Tensor& loss);

    std::span<const std::shared_ptr<detail::Node>> nodes() const { return nodes_; }
    // Seeds d(loss)/d(loss) = 1, propagates to every ancestor, then releases the graph.
    void run();

  private:
    std::vector<std::shared_ptr<detail::Node>> nodes_;
    bool consumed_ = false;
};

void backward(const Tensor& loss);

// -- elementwise ------------------------------------------------------------
// Binary ops accept equal shapes, or a rank-0 operand broadcast over the other.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& t);
Tensor scale(const Tensor& t, double factor);
Tensor add_scalar(const Tensor& t, double offset);
Tensor relu(const Tensor& t);  // derivative at 0 is 0
Tensor square(const Tensor& t);
Tensor sqrt(const Tensor& t);
Tensor clamp_min(const Tensor& t, double floor);
Tensor exp(const Tensor& t);
Tensor log(const Tensor& t);

/// Pointwise f with caller-supplied derivative df; both see the input value.
Tensor map(const Tensor& t, const std::function<double(double)>& f,
           const std::function<double(double)>& df);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& t) { return neg(t); }
inline Tensor operator*(const Tensor& t, double s) { return scale(t, s); }
inline Tensor operator*(double s, const Tensor& t) { return scale(t, s); }

// -- structural -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& t);
Tensor reshape(const Tensor& t, Shape shape);
/// Row i of the result is row indices[i] of t.
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> indices);
inline constexpr std::size_t kNoIndex = static_cast<std::size_t>(-1);

/// Flat gather: result[i] = t.values()[index[i]], or 0 where index[i] == kNoIndex.
Tensor take(const Tensor& t, std::span<const std::size_t> index, Shape shape);
/// u as an n×1 column times v as a 1×m row.
Tensor outer(const Tensor& u, const Tensor& v);

// -- reductions -------------------------------------------------------------

enum class Reduce { sum, mean, max };

Tensor reduce(Reduce op, const Tensor& t);
Tensor reduce(Reduce op, const Tensor& t, std::size_t axis);

inline Tensor sum(const Tensor& t) { return reduce(Reduce::sum, t); }
inline Tensor sum(const Tensor& t, std::size_t axis) { return reduce(Reduce::sum, t, axis); }
inline Tensor mean(const Tensor& t) { return reduce(Reduce::mean, t); }
inline Tensor mean(const Tensor& t, std::size_t axis) { return reduce(Reduce::mean, t, axis); }
inline Tensor max(const Tensor& t) { return reduce(Reduce::max, t); }
inline Tensor max(const Tensor& t, std::size_t axis) { return reduce(Reduce::max, t, axis); }

}  // namespace gkd
