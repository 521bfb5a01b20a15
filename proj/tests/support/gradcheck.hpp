#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "medart/tensor.hpp"

namespace medart::testing {

/// Largest relative error between the autodiff gradient of f with respect to
/// every input and fourth-order central finite differences.
inline double gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
                        double h = 1e-4) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    Tensor out = f(inputs);
    out.backward();
    double worst = 0.0;
    for (auto& t : inputs) {
        std::vector<double> analytic(t.grad().begin(), t.grad().end());
        if (analytic.empty()) analytic.assign(static_cast<size_t>(t.numel()), 0.0);
        auto d = t.data();
        for (size_t i = 0; i < d.size(); ++i) {
            const double keep = d[i];
            auto at = [&](double dx) {
                NoGradGuard ng;
                d[i] = keep + dx;
                return f(inputs).item();
            };
            const double numeric = (8 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12 * h);
            d[i] = keep;
            const double denom = std::max({1e-6, std::abs(numeric), std::abs(analytic[i])});
            worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
        }
    }
    return worst;
}

/// Weighted sum with fixed pseudo-random weights, to reduce a tensor to a
/// scalar without symmetric cancellations.
inline Tensor probe(const Tensor& x) {
    std::vector<double> w(static_cast<size_t>(x.numel()));
    for (size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + 0.7 * static_cast<double>(i));
    return sum(mul(x, Tensor::from(x.shape(), w)));
}

inline Tensor randn(const Shape& s, uint64_t seed, double stddev = 1.0) {
    std::vector<double> v(static_cast<size_t>(shape_numel(s)));
    uint64_t z = seed * 0x9E3779B97F4A7C15ull + 1;
    for (auto& x : v) {
        // xorshift-based uniform pair -> approximate normal via sum of uniforms
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) {
            z ^= z << 13;
            z ^= z >> 7;
            z ^= z << 17;
            acc += static_cast<double>(z >> 11) * 0x1.0p-53;
        }
        x = (acc - 2.0) * std::sqrt(3.0) * stddev;
    }
    return Tensor::from(s, std::move(v));
}

}  // namespace medart::testing
