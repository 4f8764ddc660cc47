#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <vector>

#include "volshift/common.hpp"

namespace volshift {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string r = "[";
    for (size_t i = 0; i < s.size(); ++i) r += (i ? "x" : "") + std::to_string(s[i]);
    return r + "]";
}

// Dense N-d value grid, row-major, axes ordered [batch, channels, depth,
// height, width] with trailing axes optional. Gradient storage is allocated
// lazily on first accumulation.
template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;

    int64_t numel() const { return int64_t(value.size()); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
    }
};

template <typename T>
class TensorT {
  public:
    TensorT() = default;

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        TensorT t;
        t.p_ = std::make_shared<TensorImpl<T>>();
        t.p_->shape = std::move(shape);
        int64_t n = numel_of(t.p_->shape);
        for (int64_t e : t.p_->shape)
            if (e < 1) throw ShapeError(strf("tensor extent must be >= 1, got shape ", shape_str(t.p_->shape)));
        t.p_->value.assign(size_t(n), T(0));
        t.p_->requires_grad = requires_grad;
        return t;
    }

    static TensorT full(Shape shape, T v, bool requires_grad = false) {
        TensorT t = zeros(std::move(shape), requires_grad);
        for (auto& x : t.values()) x = v;
        return t;
    }

    static TensorT from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (numel_of(shape) != int64_t(data.size()))
            throw ShapeError(strf("data length ", data.size(), " does not match shape ", shape_str(shape)));
        TensorT t = zeros(shape, requires_grad);
        t.p_->value = std::move(data);
        return t;
    }

    static TensorT scalar(T v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    bool defined() const { return bool(p_); }
    const Shape& shape() const { return p_->shape; }
    int64_t extent(int axis) const { return p_->shape[size_t(axis)]; }
    int rank() const { return int(p_->shape.size()); }
    int64_t numel() const { return p_->numel(); }
    bool requires_grad() const { return p_->requires_grad; }
    void set_requires_grad(bool b) { p_->requires_grad = b; }

    std::vector<T>& values() { return p_->value; }
    const std::vector<T>& values() const { return p_->value; }
    T* data() { return p_->value.data(); }
    const T* data() const { return p_->value.data(); }

    std::vector<T>& grad() {
        p_->ensure_grad();
        return p_->grad;
    }
    const std::vector<T>& grad_ref() const { return p_->grad; }
    bool has_grad() const { return !p_->grad.empty(); }
    void zero_grad() { p_->grad.clear(); }

    T item() const {
        if (numel() != 1) throw ShapeError(strf("item() on non-scalar tensor ", shape_str(shape())));
        return p_->value[0];
    }

    bool is_scalar() const { return numel() == 1; }

    // identity comparison (same storage)
    bool same_as(const TensorT& o) const { return p_ == o.p_; }
    const void* id() const { return p_.get(); }

    TensorImpl<T>* impl() const { return p_.get(); }

  private:
    std::shared_ptr<TensorImpl<T>> p_;
};

// Execution record of a differentiation graph. Ops push one closure per node
// in execution order; backward() replays them in reverse, which is a valid
// topological order because every op's inputs were created before it ran.
template <typename T>
class Tape {
  public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }
    void set_recording(bool b) { recording_ = b; }

    void record(std::function<void()> backward_fn) {
        if (recording_) nodes_.push_back(std::move(backward_fn));
    }

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    // Seeds d(loss)/d(loss) = 1 and propagates through all recorded nodes.
    void backward(TensorT<T>& loss) {
        if (!loss.is_scalar()) throw ShapeError(strf("backward requires a scalar loss, got ", shape_str(loss.shape())));
        loss.grad()[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

  private:
    bool recording_;
    std::vector<std::function<void()>> nodes_;
};

using Tensor = TensorT<float>;
using TapeF = Tape<float>;

}  // namespace volshift
