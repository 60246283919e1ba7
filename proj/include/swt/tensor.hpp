#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace swt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;

// Receives the output node; reads out.grad and accumulates into out.parents.
using BackwardFn = std::function<void(TensorImpl& out)>;

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    BackwardFn backward_fn;
    const char* op = "leaf";

    // Lazily allocated zero buffer.
    std::vector<double>& grad_buffer();
};

/// Dense row-major f64 tensor with shared ownership of its storage and an
/// optional reverse-mode autograd record. Copies of a Tensor alias the same
/// node; use clone() or detach() for an independent buffer.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<const double> data() const { return impl_->data; }
    // Mutation is reserved for leaves (parameters, optimizer updates, fixtures).
    std::span<double> mutable_data() { return impl_->data; }
    double item() const;
    double at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool value) { impl_->requires_grad = value; }
    bool is_leaf() const { return !impl_->backward_fn; }
    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const double> grad() const { return impl_->grad; }
    void zero_grad() { impl_->grad.clear(); }

    // Same values, no history.
    Tensor detach() const;
    // Independent leaf copy, keeping requires_grad.
    Tensor clone() const;

    /// Reverse-mode sweep from this scalar. Leaves with requires_grad receive
    /// dLoss/dLeaf (accumulated); intermediate nodes release their grads and
    /// graph links afterwards, so a second call on the same graph is an error.
    void backward() const;

    TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

// Graph recording is on by default; a guard disables it for its lifetime
// (evaluation, teacher forward, optimizer updates).
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

// Creates an op result. Records history only when grad mode is on and some
// parent requires grad. Throws NumericError if data holds NaN/Inf.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> parents, BackwardFn backward);

}  // namespace swt
