#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace umixer {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ')';
    return os.str();
}

namespace detail {

using BackwardFn = std::function<void(std::span<const double>)>;

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    BackwardFn backward_fn;  // consumes this node's grad, accumulates into parents

    std::vector<double>& grad_buffer() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

// Disables graph recording for its lifetime (inference, evaluation).
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_mode_enabled() { return detail::grad_mode(); }

// Dense row-major float64 array with an optional handle into the
// differentiation graph. Copies share the underlying node.
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        if (shape_numel(shape) != values.size()) {
            throw DimensionError("Tensor: shape " + shape_str(shape) + " holds " +
                                 std::to_string(shape_numel(shape)) + " values, got " +
                                 std::to_string(values.size()));
        }
        for (auto extent : shape) {
            if (extent == 0) throw DimensionError("Tensor: zero extent in shape " + shape_str(shape));
        }
        node_->shape = std::move(shape);
        node_->value = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return Tensor({1}, {value}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const double> data() const { return node_->value; }
    // In-place access for leaf parameters (optimizer updates, initialization).
    std::span<double> mutable_data() { return node_->value; }
    double at(std::size_t i) const { return node_->value.at(i); }

    double item() const {
        if (numel() != 1) throw ContractError("Tensor::item: tensor has " + std::to_string(numel()) + " elements");
        return node_->value[0];
    }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool is_leaf() const { return !node_->backward_fn; }

    // Accumulated gradient; zeros when nothing has flowed into this tensor.
    std::span<const double> grad() const { return node_->grad_buffer(); }
    void zero_grad() const { node_->grad.assign(node_->value.size(), 0.0); }

    // Value copy cut off from the graph.
    Tensor detach() const { return Tensor(node_->shape, node_->value, false); }

    const std::shared_ptr<detail::Node>& node() const { return node_; }

    static Tensor from_node(std::shared_ptr<detail::Node> node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

private:
    std::shared_ptr<detail::Node> node_;
};

namespace detail {

// Builds an op result. The backward closure is attached only when recording
// is on and at least one input participates in differentiation.
inline Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs,
                          const std::function<BackwardFn()>& make_backward) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (grad_mode()) {
        for (const auto& in : inputs) {
            if (in.defined() && in.requires_grad()) {
                node->requires_grad = true;
                break;
            }
        }
    }
    if (node->requires_grad) {
        for (const auto& in : inputs) {
            if (in.defined() && in.requires_grad()) node->parents.push_back(in.node());
        }
        node->backward_fn = make_backward();
    }
    return Tensor::from_node(std::move(node));
}

}  // namespace detail

// Reverse-mode sweep from a one-element tensor. Gradients accumulate into
// every reachable leaf with requires_grad; intermediate buffers are released.
inline void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward: loss must have exactly one element, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) return;

    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, bool>> stack{{loss.node().get(), false}};
    while (!stack.empty()) {
        auto [node, expanded] = stack.back();
        stack.pop_back();
        if (expanded) {
            order.push_back(node);
            continue;
        }
        if (!visited.insert(node).second) continue;
        stack.emplace_back(node, true);
        for (const auto& p : node->parents) {
            if (!visited.count(p.get())) stack.emplace_back(p.get(), false);
        }
    }

    loss.node()->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (!node->backward_fn) continue;
        if (!node->grad.empty()) node->backward_fn(node->grad);
        std::vector<double>().swap(node->grad);
    }
}

}  // namespace umixer
