#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "fame/error.hpp"

namespace fame {

/// Dense row-major tensor of 64-bit floats with an optional gradient slot.
/// A Tensor is a cheap shared handle: copies alias the same storage, which
/// is what lets tape closures and optimizer state refer to live parameters.
class Tensor {
public:
    Tensor() : s_(std::make_shared<Storage>()) {}

    explicit Tensor(std::vector<size_t> shape) : s_(std::make_shared<Storage>()) {
        s_->shape = std::move(shape);
        s_->values.assign(element_count(s_->shape), 0.0);
    }

    Tensor(std::vector<size_t> shape, std::vector<double> values)
        : s_(std::make_shared<Storage>()) {
        if (element_count(shape) != values.size()) {
            throw DimensionError("tensor: " + shape_string(shape) + " does not hold " +
                                 std::to_string(values.size()) + " values");
        }
        s_->shape = std::move(shape);
        s_->values = std::move(values);
    }

    static Tensor zeros(std::vector<size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<size_t> shape, double v) {
        Tensor t(std::move(shape));
        for (double& x : t.values()) x = v;
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const std::vector<size_t>& shape() const { return s_->shape; }
    size_t size() const { return s_->values.size(); }
    size_t rank() const { return s_->shape.size(); }

    size_t rows() const { return rank() == 2 ? s_->shape[0] : (rank() == 1 ? 1 : 0); }
    size_t cols() const { return rank() == 2 ? s_->shape[1] : (rank() == 1 ? s_->shape[0] : 0); }

    std::vector<double>& values() { return s_->values; }
    const std::vector<double>& values() const { return s_->values; }

    double item() const {
        if (size() != 1) throw DimensionError("item: tensor has " + std::to_string(size()) + " elements");
        return s_->values[0];
    }

    double& at(size_t i) { return s_->values[i]; }
    double at(size_t i) const { return s_->values[i]; }
    double& at(size_t r, size_t c) { return s_->values[r * cols() + c]; }
    double at(size_t r, size_t c) const { return s_->values[r * cols() + c]; }

    bool has_grad() const { return !s_->grad.empty(); }

    /// Gradient accumulator, zero-initialized on first access.
    std::vector<double>& grad() {
        if (s_->grad.empty()) s_->grad.assign(s_->values.size(), 0.0);
        return s_->grad;
    }

    const std::vector<double>& grad() const { return s_->grad; }

    void zero_grad() {
        if (!s_->grad.empty()) s_->grad.assign(s_->values.size(), 0.0);
    }

    void drop_grad() { s_->grad.clear(); }

    bool same_storage(const Tensor& other) const { return s_ == other.s_; }

    static size_t element_count(const std::vector<size_t>& shape) {
        size_t n = 1;
        for (size_t d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

    static std::string shape_string(const std::vector<size_t>& shape) {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

    std::string shape_string() const { return shape_string(s_->shape); }

private:
    struct Storage {
        std::vector<size_t> shape;
        std::vector<double> values;
        std::vector<double> grad;  // empty until touched
    };
    std::shared_ptr<Storage> s_;
};

/// Linear record of primitive applications. Ops append one backward step per
/// application while executing forward, so replaying the steps in reverse
/// order propagates gradients to every recorded input exactly once. A Tape
/// is confined to one thread; independent tapes may run concurrently.
class Tape {
public:
    void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

    size_t size() const { return steps_.size(); }

    /// Seeds d(loss)/d(loss) = 1 and replays all recorded steps in reverse.
    void backward(Tensor loss) {
        if (loss.size() != 1) {
            throw DimensionError("backward: loss must be scalar, got " + loss.shape_string());
        }
        loss.grad()[0] += 1.0;
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    }

    void clear() { steps_.clear(); }

private:
    std::vector<std::function<void()>> steps_;
};

}  // namespace fame
