#pragma once

#include <vector>

#include "medart/tensor.hpp"

namespace medart {

/// Adam with decoupled weight decay.
class AdamW {
public:
    AdamW(std::vector<Tensor> params, double lr, double weight_decay = 0.01, double beta1 = 0.9,
          double beta2 = 0.999, double eps = 1e-8);

    void step();
    void zero_grad();
    /// Rescales gradients so their global L2 norm is at most max_norm; returns the pre-clip norm.
    double clip_grad_norm(double max_norm);
    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    const std::vector<Tensor>& params() const { return params_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, wd_, b1_, b2_, eps_;
    long t_ = 0;
};

}  // namespace medart
