#include "cfsynth/nn/tensor.hpp"

#include "cfsynth/error.hpp"

#include <sstream>
#include <unordered_set>

namespace cfs::nn {

namespace {
thread_local bool t_grad_enabled = true;
}

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

std::vector<double>& detail::Node::grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) { return full(shape, 0.0, requires_grad); }

Tensor Tensor::full(const Shape& shape, double v, bool requires_grad) {
    return from(shape, std::vector<double>(numel(shape), v), requires_grad);
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values, bool requires_grad) {
    require(values.size() == numel(shape),
            "tensor value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
    auto node = std::make_shared<detail::Node>();
    node->shape = shape;
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

const Shape& Tensor::shape() const { return node_->shape; }

int Tensor::dim(int axis) const {
    const int rank = static_cast<int>(node_->shape.size());
    if (axis < 0) axis += rank;
    return node_->shape.at(static_cast<std::size_t>(axis));
}

std::size_t Tensor::size() const { return node_->value.size(); }

std::span<const double> Tensor::values() const { return node_->value; }
std::span<double> Tensor::mutable_values() { return node_->value; }

double Tensor::item() const {
    require(node_->value.size() == 1, "item() on non-scalar tensor " + shape_str(node_->shape));
    return node_->value[0];
}

std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }

void Tensor::zero_grad() { node_->grad.clear(); }

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }

Tensor Tensor::detach() const { return from(node_->shape, node_->value, false); }

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Tensor detail::make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                           std::function<void(Node& out)> backward) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    bool track = false;
    if (t_grad_enabled) {
        for (const auto& in : inputs) track = track || in.requires_grad();
    }
    if (track) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (auto& in : inputs) node->inputs.push_back(in.node());
        Node* self = node.get();
        node->backward = [self, fn = std::move(backward)]() { fn(*self); };
    }
    return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
    require(loss.size() == 1, "backward() needs a scalar loss, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            detail::Node* child = node->inputs[next++].get();
            if (child->requires_grad && !child->inputs.empty() && seen.insert(child).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (node->backward && !node->grad.empty()) node->backward();
    }
    // Interior gradients are no longer needed; leaves keep theirs.
    for (detail::Node* node : order) {
        if (!node->inputs.empty()) {
            node->grad.clear();
            node->grad.shrink_to_fit();
        }
    }
}

}  // namespace cfs::nn
