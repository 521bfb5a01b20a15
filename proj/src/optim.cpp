#include "medart/optim.hpp"

#include <cmath>

namespace medart {

AdamW::AdamW(std::vector<Tensor> params, double lr, double weight_decay, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
        v_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    }
}

void AdamW::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (size_t k = 0; k < params_.size(); ++k) {
        Tensor& p = params_[k];
        if (!p.has_grad()) continue;
        auto x = p.data();
        const auto g = p.grad();
        auto& m = m_[k];
        auto& v = v_[k];
        for (size_t i = 0; i < x.size(); ++i) {
            m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
            v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
            x[i] -= lr_ * wd_ * x[i];
            x[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

double AdamW::clip_grad_norm(double max_norm) {
    double sq = 0.0;
    for (const auto& p : params_)
        if (p.has_grad())
            for (double g : p.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (auto& p : params_)
            if (p.has_grad())
                for (double& g : p.mutable_grad()) g *= s;
    }
    return norm;
}

}  // namespace medart
