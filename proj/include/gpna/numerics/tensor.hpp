#pragma once
// Dense row-major 64-bit tensors with a dynamic reverse-mode tape.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gpna/error.hpp"

namespace gpna::num {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until first touched by backward
    bool requires_grad = false;
    std::uint64_t node_id = 0;

    std::vector<double>& ensure_grad()
    {
        if (grad.size() != values.size())
            grad.assign(values.size(), 0.0);
        return grad;
    }
};

/// Shared handle to a Node. Copies alias the same storage, so a parameter
/// held by several modules is one array with one gradient.
class Tensor {
public:
    Tensor() = default;

    static Tensor make(Shape shape, std::vector<double> values, bool requires_grad)
    {
        if (shape.empty())
            throw ShapeError("tensor shape must have at least one dimension");
        for (auto d : shape)
            if (d == 0)
                throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
        if (numel(shape) != values.size())
            throw ShapeError("shape " + to_string(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->values = std::move(values);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor constant(Shape shape, std::vector<double> values)
    {
        return make(std::move(shape), std::move(values), false);
    }

    static Tensor parameter(Shape shape, std::vector<double> values)
    {
        return make(std::move(shape), std::move(values), true);
    }

    static Tensor zeros(Shape shape, bool requires_grad = false)
    {
        auto n = numel(shape);
        return make(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) { return make({1}, {v}, requires_grad); }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t size() const { return node_->values.size(); }
    bool requires_grad() const { return node_->requires_grad; }
    std::uint64_t node_id() const { return node_->node_id; }

    std::span<const double> values() const { return node_->values; }
    std::span<double> mutable_values() { return node_->values; }
    const std::vector<double>& vec() const { return node_->values; }

    /// Accumulated gradient; zeros if nothing has flowed into this tensor yet.
    std::span<const double> grad() const { return node_->ensure_grad(); }
    std::span<double> mutable_grad() { return node_->ensure_grad(); }
    void zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }

    double item() const
    {
        if (size() != 1)
            throw ShapeError("item() on tensor of shape " + to_string(shape()));
        return node_->values[0];
    }

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& shared() const { return node_; }

    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Records executed operations in order. Backward replays them in exact reverse.
/// A tape belongs to one thread.
class Tape {
public:
    using BackwardFn = std::function<void(const Node& out)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    /// Creates the output node of an op. The backward rule is kept only when some
    /// parent requires a gradient.
    Tensor record(Shape shape, std::vector<double> values, std::initializer_list<Tensor> parents, BackwardFn fn)
    {
        bool needs_grad = false;
        for (const auto& p : parents)
            needs_grad = needs_grad || p.requires_grad();
        return record_if(std::move(shape), std::move(values), needs_grad, std::move(fn));
    }

    Tensor record_if(Shape shape, std::vector<double> values, bool needs_grad, BackwardFn fn)
    {
        needs_grad = needs_grad && grad_enabled_;
        Tensor out = Tensor::make(std::move(shape), std::move(values), needs_grad);
        out.node()->node_id = ++next_id_;
        if (needs_grad)
            entries_.push_back({out.shared(), std::move(fn)});
        return out;
    }

    /// Propagates d(loss)/d(.) to every reachable tensor that requires a gradient.
    /// Leaf gradients accumulate across calls; intermediate gradients are reset.
    void backward(const Tensor& loss)
    {
        if (loss.size() != 1)
            throw InputError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
        if (!loss.requires_grad())
            return;
        for (auto& e : entries_)
            e.out->grad.assign(e.out->values.size(), 0.0);
        loss.node()->ensure_grad()[0] += 1.0;
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it)
            it->fn(*it->out);
    }

    std::size_t size() const { return entries_.size(); }

    /// With gradients disabled nothing is recorded: outputs are plain constants.
    void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
    bool grad_enabled() const { return grad_enabled_; }

    void clear()
    {
        entries_.clear();
        next_id_ = 0;
    }

private:
    struct Entry {
        std::shared_ptr<Node> out;
        BackwardFn fn;
    };

    std::vector<Entry> entries_;
    std::uint64_t next_id_ = 0;
    bool grad_enabled_ = true;
};

}  // namespace gpna::num
