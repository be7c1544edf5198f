#pragma once

#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "paracolor/nn/tensor.hpp"

namespace paracolor::nn {

namespace detail {

struct Node {
    Tensor value;
    Tensor grad;  // empty until something flows into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    Tensor& grad_buffer();
};

}  // namespace detail

/// Handle to a value in the computation graph. Copies share the node, so a
/// parameter held by a network and by an optimizer is the same object.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);
    explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

    bool defined() const noexcept { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    int dim(std::size_t axis) const { return node_->value.dim(axis); }
    double item() const { return node_->value.item(); }

    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
    const Tensor& grad() const { return node_->grad; }
    void zero_grad();

    /// Reverse-mode sweep from this scalar.
    void backward() const;

    /// Same value, cut from the graph.
    Var detach() const;

    const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled() noexcept;

// Elementwise arithmetic; operands must have identical shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
/// Multiplies every element of `x` by the one-element variable `gate`.
Var gate(const Var& gate, const Var& x);

Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var abs(const Var& a);
Var square(const Var& a);
/// sqrt(a + eps), smooth for a >= 0.
Var sqrt_eps(const Var& a, double eps);

Var sum(const Var& a);
Var mean(const Var& a);

Var reshape(const Var& a, Shape shape);

/// Concatenates rank-4 tensors along the channel axis.
Var concat_channels(const std::vector<Var>& parts);
Var slice_channels(const Var& a, int begin, int count);

/// 2-D convolution, NCHW input, OIhw weights, zero padding. `bias` may be undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding);

/// Applies the same fixed k x k kernel to every channel, no padding.
Var depthwise_fixed(const Var& x, const Tensor& kernel);

/// Pads H and W by repeating border values.
Var pad_replicate(const Var& x, int pad);

Var upsample_nearest2x(const Var& x);

/// Batch statistics in training mode (running estimates updated in place),
/// running estimates otherwise.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Var& running_mean, Var& running_var,
               bool training, double momentum, double eps);
Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps);

Var dropout(const Var& x, double p, std::mt19937_64& rng);

/// Batched matrix product of rank-3 tensors with optional transposes.
Var bmm(const Var& a, const Var& b, bool transpose_a, bool transpose_b);

/// Softmax over axis 1 of a rank-3 tensor.
Var softmax_axis1(const Var& a);

}  // namespace paracolor::nn
