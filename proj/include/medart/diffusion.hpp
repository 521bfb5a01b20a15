#pragma once

#include <span>
#include <vector>

#include "medart/rng.hpp"
#include "medart/tensor.hpp"

namespace medart {

enum class ScheduleKind { Linear };

/// Per-timestep coefficients for T discrete steps. Public accessors take
/// 1-indexed t in {1, ..., T}; storage is 0-indexed.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha_bar;
    std::vector<double> alpha;  // sqrt(alpha_bar)
    std::vector<double> sigma;  // sqrt(1 - alpha_bar)
    std::vector<double> lam;    // log(alpha / sigma)

    void check_t(int t) const;
    double beta_at(int t) const { return check_t(t), beta[t - 1]; }
    double alpha_bar_at(int t) const { return check_t(t), alpha_bar[t - 1]; }
    double alpha_at(int t) const { return check_t(t), alpha[t - 1]; }
    double sigma_at(int t) const { return check_t(t), sigma[t - 1]; }
    double lam_at(int t) const { return check_t(t), lam[t - 1]; }
};

NoiseSchedule build_schedule(int T = 1000, double beta_start = 1e-4, double beta_end = 0.02,
                             ScheduleKind kind = ScheduleKind::Linear);

/// Schedule from explicit per-step variances, each in (0, 1).
NoiseSchedule schedule_from_betas(std::vector<double> betas);

/// Gaussian noise and 1-indexed timesteps for a batch.
struct NoiseSample {
    Tensor eps;
    std::vector<int> t;
};

/// Draws eps ~ N(0, I) shaped like `like` and t uniform on {1, ..., T}.
NoiseSample draw_noise(const Shape& like, int T, Rng& rng);

/// z_t = alpha[t] * z0 + sigma[t] * eps, per sample.
Tensor forward_noise(const Tensor& z0, const NoiseSample& ns, const NoiseSchedule& sched);

/// Mean squared error over all elements and the batch.
Tensor diffusion_loss(const Tensor& eps_hat, const Tensor& eps);

}  // namespace medart
