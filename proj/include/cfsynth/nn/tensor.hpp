#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cfs::nn {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void()> backward;

    // Lazily allocates and returns the gradient buffer.
    std::vector<double>& grad_buffer();
};

}  // namespace detail

// Reverse-mode autodiff value. Copies share the underlying node.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double v, bool requires_grad = false);
    static Tensor from(const Shape& shape, std::vector<double> values, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int dim(int axis) const;
    std::size_t size() const;

    std::span<const double> values() const;
    std::span<double> mutable_values();
    double item() const;

    // Empty span when no gradient has been accumulated.
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    bool requires_grad() const;
    void set_requires_grad(bool on);

    // New leaf sharing no state with this tensor.
    Tensor detach() const;

    std::shared_ptr<detail::Node> node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

// Graph recording is on by default; the guard switches it off for inference.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Seeds d(loss)/d(loss) = 1 and propagates to every reachable leaf.
void backward(const Tensor& loss);

namespace detail {

// Builds a result node; the backward closure is kept only if some input
// requires a gradient and recording is enabled.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(Node& out)> backward);

}  // namespace detail

}  // namespace cfs::nn
