#include "stainfocus/optim.hpp"

#include <cmath>
#include <numbers>

namespace stainfocus {

RAdam::RAdam(ParameterList params, RAdamOptions options) : params_(std::move(params)), opt_(options) {
    for (const auto& p : params_) {
        m_.emplace_back(p.var.value().shape(), 0.0);
        v_.emplace_back(p.var.value().shape(), 0.0);
    }
}

void RAdam::step(double lr) {
    ++t_;
    const double b1 = opt_.beta1, b2 = opt_.beta2;
    const double bias1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double b2t = std::pow(b2, static_cast<double>(t_));
    const double bias2 = 1.0 - b2t;
    const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
    const double rho_t = rho_inf - 2.0 * static_cast<double>(t_) * b2t / bias2;
    const bool rectified = rho_t > 5.0;
    const double r = rectified ? std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)) : 0.0;

    for (std::size_t i = 0; i < params_.size(); ++i) {
        ad::Var var = params_[i].var;
        if (!var.has_grad()) continue;
        const Tensor& g = var.node()->grad;
        Tensor& w = var.mutable_value();
        double* m = m_[i].data();
        double* v = v_[i].data();
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            const double m_hat = m[j] / bias1;
            if (rectified) {
                w[j] -= lr * r * m_hat * std::sqrt(bias2) / (std::sqrt(v[j]) + opt_.eps);
            } else {
                w[j] -= lr * m_hat;
            }
        }
    }
}

void RAdam::zero_grad() {
    for (const auto& p : params_) {
        ad::Var v = p.var;
        v.zero_grad();
    }
}

double cosine_lr(double base_lr, long step, long total) {
    if (total <= 0) return base_lr;
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

}  // namespace stainfocus
