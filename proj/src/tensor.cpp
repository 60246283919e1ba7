#include "swt/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "swt/errors.hpp"

namespace swt {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::vector<double>& TensorImpl::grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("tensor shape " + shape_str(shape) + " needs " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(data.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor({}, {value}, requires_grad);
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ContractError("item() on tensor of shape " + shape_str(shape()));
    }
    return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw DimensionError("at(): index rank mismatch");
    std::size_t flat = 0;
    std::size_t i = 0;
    for (std::size_t v : index) {
        if (v >= impl_->shape[i]) throw DimensionError("at(): index out of range");
        flat = flat * impl_->shape[i] + v;
        ++i;
    }
    return impl_->data[flat];
}

Tensor Tensor::detach() const {
    return Tensor(impl_->shape, impl_->data, false);
}

Tensor Tensor::clone() const {
    return Tensor(impl_->shape, impl_->data, impl_->requires_grad);
}

void Tensor::backward() const {
    if (numel() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
    }
    if (!impl_->requires_grad) {
        throw ContractError("backward() on a tensor with no gradient history");
    }

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    visited.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorImpl* parent = node->parents[next++].get();
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    impl_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
    for (TensorImpl* node : order) {
        if (node->backward_fn) {
            node->grad.clear();
            node->grad.shrink_to_fit();
            node->backward_fn = nullptr;
            node->parents.clear();
        }
    }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> parents, BackwardFn backward) {
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i])) {
            throw NumericError(std::string("non-finite value produced by ") + op + " at flat index " +
                               std::to_string(i));
        }
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->op = op;
    bool needs_grad = false;
    if (g_grad_enabled) {
        for (const Tensor& p : parents) needs_grad = needs_grad || p.requires_grad();
    }
    if (needs_grad) {
        impl->requires_grad = true;
        impl->parents.reserve(parents.size());
        for (const Tensor& p : parents) impl->parents.push_back(p.impl_ptr());
        impl->backward_fn = std::move(backward);
    }
    return Tensor(std::move(impl));
}

}  // namespace swt
