#pragma once

#include "m3fas/types.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace m3fas {

using Shape = std::vector<Eigen::Index>;

std::string shape_str(const Shape& shape);
Eigen::Index shape_numel(const Shape& shape);

struct TensorNode {
    Shape shape;
    Eigen::ArrayXd value;
    Eigen::ArrayXd grad;  // empty until first accumulation
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.size() != value.size()) grad = Eigen::ArrayXd::Zero(value.size());
    }
};

// Shared handle to an n-d array with optional gradient storage. Copies share
// the underlying node; ops return fresh nodes.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double v, bool requires_grad = false);
    static Tensor from_array(const Shape& shape, Eigen::ArrayXd data,
                             bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return bool(node_); }
    const Shape& shape() const { return node_->shape; }
    Eigen::Index size() const { return node_->value.size(); }
    Eigen::Index dim(std::size_t i) const { return node_->shape[i]; }
    std::size_t rank() const { return node_->shape.size(); }

    // A Tensor is a shared handle: const handles still expose the mutable
    // payload, like a shared_ptr would.
    Eigen::ArrayXd& value() const { return node_->value; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) const { node_->requires_grad = b; }
    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    Eigen::ArrayXd& grad() const;
    void ensure_grad() const { node_->ensure_grad(); }
    void zero_grad() const {
        if (has_grad()) node_->grad.setZero();
    }
    double item() const;

    std::shared_ptr<TensorNode> node() const { return node_; }

  private:
    std::shared_ptr<TensorNode> node_;
};

// Ordered record of backward rules for one forward pass. Ops append while an
// active TapeScope exists; backward() replays in reverse and clears.
class Tape {
  public:
    void record(std::function<void()> step) { steps_.push_back(std::move(step)); }
    std::size_t size() const { return steps_.size(); }
    bool empty() const { return steps_.empty(); }
    void clear() { steps_.clear(); }
    void run_reverse() {
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
        steps_.clear();
    }

  private:
    std::vector<std::function<void()>> steps_;
};

// One logical training thread owns a tape at a time.
Tape* active_tape();

class TapeScope {
  public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    Tape* previous_;
};

// Seed d(loss)/d(loss) = 1 and replay the active tape in reverse, populating
// grads for every tensor that requires them. The tape is cleared afterwards.
void backward(const Tensor& loss);

namespace detail {
inline bool tracking(std::initializer_list<const Tensor*> inputs) {
    if (!active_tape()) return false;
    for (const Tensor* t : inputs)
        if (t && t->defined() && t->requires_grad()) return true;
    return false;
}
}  // namespace detail

}  // namespace m3fas
