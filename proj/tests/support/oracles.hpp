#pragma once

// Independent reference computations, written with plain loops and no use of
// the library routines they are compared against.

#include <cmath>
#include <vector>

#include "medart/diffusion.hpp"
#include "medart/sampler.hpp"

namespace medart::testing {

using Rows = std::vector<std::vector<double>>;

inline double poly_kernel(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0;
    for (size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    const double k = dot / static_cast<double>(a.size()) + 1.0;
    return k * k * k;
}

/// Unbiased MMD^2 by explicit double loops.
inline double brute_mmd2(const Rows& x, const Rows& y) {
    const double m = static_cast<double>(x.size()), n = static_cast<double>(y.size());
    double sxx = 0, syy = 0, sxy = 0;
    for (size_t i = 0; i < x.size(); ++i)
        for (size_t j = 0; j < x.size(); ++j)
            if (i != j) sxx += poly_kernel(x[i], x[j]);
    for (size_t i = 0; i < y.size(); ++i)
        for (size_t j = 0; j < y.size(); ++j)
            if (i != j) syy += poly_kernel(y[i], y[j]);
    for (const auto& a : x)
        for (const auto& b : y) sxy += poly_kernel(a, b);
    return sxx / (m * (m - 1)) + syy / (n * (n - 1)) - 2.0 * sxy / (m * n);
}

/// Per-image per-channel mean and population std of a [B, C, H, W] buffer.
struct LoopStats {
    std::vector<double> mu, sd;  // [B*C]
};

inline LoopStats loop_color_stats(const std::vector<double>& x, int B, int C, int H, int W) {
    LoopStats s;
    const int hw = H * W;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double* p = x.data() + (static_cast<size_t>(b) * C + c) * hw;
            double m = 0;
            for (int i = 0; i < hw; ++i) m += p[i];
            m /= hw;
            double v = 0;
            for (int i = 0; i < hw; ++i) v += (p[i] - m) * (p[i] - m);
            s.mu.push_back(m);
            s.sd.push_back(std::sqrt(v / hw));
        }
    return s;
}

inline double loop_color_loss(const std::vector<double>& g, const std::vector<double>& r, int B, int C, int H, int W) {
    const auto a = loop_color_stats(g, B, C, H, W), b = loop_color_stats(r, B, C, H, W);
    double acc = 0;
    for (size_t i = 0; i < a.mu.size(); ++i)
        acc += (a.mu[i] - b.mu[i]) * (a.mu[i] - b.mu[i]) + (a.sd[i] - b.sd[i]) * (a.sd[i] - b.sd[i]);
    return acc / B;
}

/// Data x0 ~ N(m, s^2) independently per element. The exact noise predictor
/// at step t is sigma (z - alpha m) / (alpha^2 s^2 + sigma^2).
struct LinearGaussian {
    double m = 0.3;
    double s = 0.5;

    double eps(double z, double alpha, double sigma) const {
        return sigma * (z - alpha * m) / (alpha * alpha * s * s + sigma * sigma);
    }

    EpsFn eps_fn(const NoiseSchedule& sched) const {
        return [this, &sched](const Tensor& z, int t, const TextEmbedding&) {
            const double a = sched.alpha_at(t), g = sched.sigma_at(t);
            std::vector<double> out(z.data().begin(), z.data().end());
            for (double& v : out) v = eps(v, a, g);
            return Tensor::from(z.shape(), std::move(out));
        };
    }

    /// First-order data-prediction update on every integer step from t_start
    /// down to t_end, then the data prediction at t_end.
    std::vector<double> reference(std::vector<double> z, const NoiseSchedule& sched, int t_start, int t_end) const {
        for (int t = t_start; t > t_end; --t) {
            const int s_ = t - 1;
            const double at = sched.alpha[t - 1], st = sched.sigma[t - 1];
            const double as = sched.alpha[s_ - 1], ss = sched.sigma[s_ - 1];
            const double h = std::log(as / ss) - std::log(at / st);
            for (double& v : z) {
                const double x = (v - st * eps(v, at, st)) / at;
                v = (ss / st) * v - as * std::expm1(-h) * x;
            }
        }
        const double a = sched.alpha[t_end - 1], g = sched.sigma[t_end - 1];
        for (double& v : z) v = (v - g * eps(v, a, g)) / a;
        return z;
    }

    /// Scalar second-order multistep recurrence over the given grid, written
    /// independently of the library sampler.
    std::vector<double> multistep(std::vector<double> z, const NoiseSchedule& sched, const std::vector<int>& ts) const {
        auto lam = [&](int t) { return std::log(sched.alpha[t - 1] / sched.sigma[t - 1]); };
        std::vector<double> prev;
        double lam_prev = 0;
        for (size_t i = 1; i < ts.size(); ++i) {
            const int a = ts[i - 1], b = ts[i];
            const double as = sched.alpha[a - 1], ss = sched.sigma[a - 1];
            const double at = sched.alpha[b - 1], st = sched.sigma[b - 1];
            const double h = lam(b) - lam(a);
            std::vector<double> x(z.size());
            for (size_t k = 0; k < z.size(); ++k) x[k] = (z[k] - ss * eps(z[k], as, ss)) / as;
            for (size_t k = 0; k < z.size(); ++k) {
                double d = x[k];
                if (!prev.empty()) {
                    const double r = (lam(a) - lam_prev) / h;
                    d = (1 + 1 / (2 * r)) * x[k] - prev[k] / (2 * r);
                }
                z[k] = (st / ss) * z[k] - at * std::expm1(-h) * d;
            }
            prev = x;
            lam_prev = lam(a);
        }
        const double a = sched.alpha[ts.back() - 1], g = sched.sigma[ts.back() - 1];
        for (double& v : z) v = (v - g * eps(v, a, g)) / a;
        return z;
    }

    /// Closed-form probability-flow map from t_start to the data prediction at t_end.
    std::vector<double> exact(std::vector<double> z, const NoiseSchedule& sched, int t_start, int t_end) const {
        const double a0 = sched.alpha[t_start - 1], g0 = sched.sigma[t_start - 1];
        const double a1 = sched.alpha[t_end - 1], g1 = sched.sigma[t_end - 1];
        const double r0 = std::sqrt(a0 * a0 * s * s + g0 * g0), r1 = std::sqrt(a1 * a1 * s * s + g1 * g1);
        for (double& v : z) {
            const double z1 = a1 * m + r1 * (v - a0 * m) / r0;
            v = (z1 - g1 * eps(z1, a1, g1)) / a1;
        }
        return z;
    }
};

inline double rel_l2(const std::vector<double>& a, const std::vector<double>& ref) {
    double num = 0, den = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - ref[i]) * (a[i] - ref[i]);
        den += ref[i] * ref[i];
    }
    return std::sqrt(num / den);
}

}  // namespace medart::testing
