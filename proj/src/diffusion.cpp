#include "medart/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace medart {

void NoiseSchedule::check_t(int t) const {
    if (t < 1 || t > T)
        throw std::out_of_range("timestep " + std::to_string(t) + " outside {1.." + std::to_string(T) + "}");
}

NoiseSchedule schedule_from_betas(std::vector<double> betas) {
    if (betas.size() < 2) throw std::invalid_argument("schedule needs at least 2 steps");
    NoiseSchedule s;
    s.T = static_cast<int>(betas.size());
    double prod = 1.0;
    for (double b : betas) {
        if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("beta outside (0, 1): " + std::to_string(b));
        prod *= 1.0 - b;
        s.alpha_bar.push_back(prod);
        s.alpha.push_back(std::sqrt(prod));
        s.sigma.push_back(std::sqrt(1.0 - prod));
        s.lam.push_back(std::log(s.alpha.back() / s.sigma.back()));
    }
    s.beta = std::move(betas);
    return s;
}

NoiseSchedule build_schedule(int T, double beta_start, double beta_end, ScheduleKind kind) {
    if (T < 2) throw std::invalid_argument("schedule needs T >= 2");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw std::invalid_argument("need 0 < beta_start <= beta_end < 1");
    std::vector<double> betas(static_cast<size_t>(T));
    switch (kind) {
        case ScheduleKind::Linear:
            for (int i = 0; i < T; ++i)
                betas[i] = beta_start + (beta_end - beta_start) * static_cast<double>(i) / static_cast<double>(T - 1);
            break;
    }
    return schedule_from_betas(std::move(betas));
}

NoiseSample draw_noise(const Shape& like, int T, Rng& rng) {
    NoiseSample ns;
    ns.eps = Tensor::from(like, rng.normal_vec(static_cast<size_t>(shape_numel(like))));
    for (int64_t b = 0; b < like.at(0); ++b) ns.t.push_back(static_cast<int>(rng.uniform_int(1, T)));
    return ns;
}

Tensor forward_noise(const Tensor& z0, const NoiseSample& ns, const NoiseSchedule& sched) {
    if (z0.shape() != ns.eps.shape())
        throw std::invalid_argument("forward_noise: latent " + shape_str(z0.shape()) + " vs noise " +
                                    shape_str(ns.eps.shape()));
    if (static_cast<int64_t>(ns.t.size()) != z0.dim(0)) throw std::invalid_argument("forward_noise: one t per sample");
    std::vector<double> a, s;
    for (int t : ns.t) {
        a.push_back(sched.alpha_at(t));
        s.push_back(sched.sigma_at(t));
    }
    return add(scale_per_sample(z0, a), scale_per_sample(ns.eps, s));
}

Tensor diffusion_loss(const Tensor& eps_hat, const Tensor& eps) {
    if (eps_hat.shape() != eps.shape())
        throw std::invalid_argument("diffusion_loss: shape mismatch " + shape_str(eps_hat.shape()) + " vs " +
                                    shape_str(eps.shape()));
    return mean(square(sub(eps_hat, eps)));
}

}  // namespace medart
