#include "m3fas/adam.hpp"

#include <cmath>

namespace m3fas {

Adam::Adam(std::vector<Tensor> params, const AdamConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    require(!params_.empty(), "Adam: no parameters");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Tensor& p : params_) {
        require(p.defined(), "Adam: undefined parameter tensor");
        m_.push_back(Eigen::ArrayXd::Zero(p.size()));
        v_.push_back(Eigen::ArrayXd::Zero(p.size()));
    }
}

void Adam::step() {
    bool any_grad = false;
    for (const Tensor& p : params_) any_grad = any_grad || p.has_grad();
    if (!any_grad)
        throw InvalidInputError("Adam::step: no gradients populated; run backward first");

    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));

    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        if (!p.has_grad()) continue;
        if (cfg_.weight_decay != 0.0)
            p.value() -= cfg_.lr * cfg_.weight_decay * p.value();
        const Eigen::ArrayXd& g = p.grad();
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.square();
        p.value() -= cfg_.lr * (m_[i] / bc1) / ((v_[i] / bc2).sqrt() + cfg_.eps);
        p.zero_grad();
    }
}

}  // namespace m3fas
