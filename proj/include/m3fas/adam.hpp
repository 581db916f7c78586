#pragma once

#include "m3fas/tensor.hpp"

#include <vector>

namespace m3fas {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;  // decoupled
};

// Bias-corrected Adam with decoupled weight decay. Per step: decay first,
// then the moment update; gradients are zeroed afterwards. Parameters whose
// gradient was never populated in this step are left untouched.
class Adam {
  public:
    Adam(std::vector<Tensor> params, const AdamConfig& cfg);

    void step();
    Eigen::Index step_count() const { return step_; }
    const AdamConfig& config() const { return cfg_; }

  private:
    std::vector<Tensor> params_;
    std::vector<Eigen::ArrayXd> m_, v_;
    AdamConfig cfg_;
    Eigen::Index step_ = 0;
};

}  // namespace m3fas
