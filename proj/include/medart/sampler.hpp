#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "medart/denoiser.hpp"
#include "medart/diffusion.hpp"
#include "medart/tensor.hpp"

namespace medart {

enum class StepSpacing { TimeUniform, LambdaUniform };

/// M solver updates over step_times t_0 = T > t_1 > ... > t_M, then a final
/// data prediction at t_M.
struct SamplerConfig {
    int M = 20;
    double w = 4.5;
    std::vector<int> step_times;

    void validate(const NoiseSchedule& sched) const;
};

std::vector<int> make_step_times(const NoiseSchedule& sched, int M, StepSpacing spacing = StepSpacing::TimeUniform);
SamplerConfig make_sampler_config(const NoiseSchedule& sched, int M, double w,
                                  StepSpacing spacing = StepSpacing::TimeUniform);

/// Noise predictor seen by the sampler: eps(z, t, cond) for a batch sharing one t.
using EpsFn = std::function<Tensor(const Tensor& z, int t, const TextEmbedding& cond)>;

/// Adapts a model (+ optional adapters) to EpsFn. The model must outlive the result.
EpsFn model_eps_fn(const DenoiserModel& model, const LoraSet* adapters);

/// eps_u + w (eps_c - eps_u). w == 1 and w == 0 evaluate only the conditional /
/// unconditional branch; otherwise both branches run as one stacked batch.
Tensor cfg_eps(const EpsFn& eps, const Tensor& z, int t, const TextEmbedding& cond, const TextEmbedding& uncond,
               double w);

/// x_hat = (z - sigma_t eps_hat) / alpha_t.
Tensor data_prediction(const Tensor& z, const Tensor& eps_hat, int t, const NoiseSchedule& sched);

/// Multistep solver state after an update.
struct SamplerState {
    Tensor z;
    std::deque<Tensor> history;      // most recent data predictions, newest last, at most 2
    std::deque<double> lam_history;  // lambda at the matching timesteps
};

struct SampleOptions {
    /// Solver updates per recomputation segment when gradients are recorded.
    /// 0 records the whole chain; -1 picks ceil(sqrt(M + 1)).
    int checkpoint_segment = -1;
    /// When > 0, only the final grad_steps updates (plus the final prediction)
    /// are recorded; earlier updates run detached.
    int grad_steps = 0;
    /// Called after each update i (1-based) with the solver state. Under
    /// recomputation it may fire again during backward.
    std::function<void(int, const SamplerState&)> observer;
};

/// Classifier-free-guided DPM-Solver++(2M) from z_T. Differentiable with
/// respect to model parameters and both embeddings when grad mode is on.
Tensor sample(const EpsFn& eps, const TextEmbedding& cond, const TextEmbedding& uncond, const SamplerConfig& cfg,
              const NoiseSchedule& sched, const Tensor& z_T, const SampleOptions& opts = {});

}  // namespace medart
