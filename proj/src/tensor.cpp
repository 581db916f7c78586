#include "m3fas/tensor.hpp"

#include <sstream>

namespace m3fas {

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

Eigen::Index shape_numel(const Shape& shape) {
    Eigen::Index n = 1;
    for (Eigen::Index d : shape) {
        require(d >= 0, "negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return from_array(shape, Eigen::ArrayXd::Zero(shape_numel(shape)), requires_grad);
}

Tensor Tensor::full(const Shape& shape, double v, bool requires_grad) {
    return from_array(shape, Eigen::ArrayXd::Constant(shape_numel(shape), v), requires_grad);
}

Tensor Tensor::from_array(const Shape& shape, Eigen::ArrayXd data, bool requires_grad) {
    require(data.size() == shape_numel(shape),
            "data length does not match shape " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<TensorNode>();
    t.node_->shape = shape;
    t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from_array({1}, Eigen::ArrayXd::Constant(1, v), requires_grad);
}

Eigen::ArrayXd& Tensor::grad() const {
    require(has_grad(), "tensor has no gradient");
    return node_->grad;
}

double Tensor::item() const {
    require(size() == 1, "item() requires a 1-element tensor, got " + shape_str(shape()));
    return node_->value[0];
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

void backward(const Tensor& loss) {
    Tape* tape = active_tape();
    if (!tape) throw InvalidInputError("backward: no active tape");
    require(loss.defined() && loss.size() == 1, "backward: loss must be a scalar tensor");
    Tensor seed = loss;
    seed.ensure_grad();
    seed.grad()[0] += 1.0;
    tape->run_reverse();
}

}  // namespace m3fas
