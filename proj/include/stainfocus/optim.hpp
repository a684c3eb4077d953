#pragma once

#include "stainfocus/encoders.hpp"

#include <vector>

namespace stainfocus {

struct RAdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Rectified Adam: plain momentum SGD until the variance estimate is
// tractable (rho_t > 5), then Adam with the variance rectification term.
class RAdam {
public:
    RAdam(ParameterList params, RAdamOptions options = {});

    void step(double lr);
    void zero_grad();
    [[nodiscard]] long steps() const noexcept { return t_; }
    [[nodiscard]] const ParameterList& parameters() const noexcept { return params_; }

private:
    ParameterList params_;
    RAdamOptions opt_;
    std::vector<Tensor> m_, v_;
    long t_ = 0;
};

// lr * (1 + cos(pi * step / total)) / 2, for step in [0, total).
double cosine_lr(double base_lr, long step, long total);

}  // namespace stainfocus
