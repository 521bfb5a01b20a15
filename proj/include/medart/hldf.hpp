#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "medart/denoiser.hpp"
#include "medart/diffusion.hpp"
#include "medart/optim.hpp"
#include "medart/rng.hpp"
#include "medart/sampler.hpp"

namespace medart {

/// Per-image, per-channel spatial statistics; both [B, C].
struct ColorStats {
    Tensor mu;
    Tensor sd;  // population std (divisor H*W)
};

ColorStats color_stats(const Tensor& x);

/// Batch mean of sum_c (mu_c(gen) - mu_c(real))^2 + (sd_c(gen) - sd_c(real))^2.
Tensor color_loss(const Tensor& x_gen, const Tensor& x_real);

/// Interval value that never fires.
inline constexpr int64_t kNeverInterval = std::numeric_limits<int64_t>::max();

struct HldfConfig {
    int64_t N = 500;  // color term every N steps
    int M = 20;       // sampler steps during training; color weight is 1/M
    double w = 4.5;
    double lr = 1e-4;
    double weight_decay = 0.01;
    double grad_clip = 1.0;
    int epochs = 1;
    int batch = 1;
    int rank = 8;
    double lora_scale = 1.0;
    double caption_dropout = 0.1;
    int checkpoint_segment = -1;  // see SampleOptions
    int grad_steps = 0;           // 0 = backpropagate through every sampler step
    StepSpacing spacing = StepSpacing::TimeUniform;

    void validate() const;
    double color_weight() const { return 1.0 / M; }
    /// Steps are 1-indexed; the gate is step mod N == 0.
    bool gate(int64_t step) const { return step >= 1 && step % N == 0; }
};

struct TrainBatch {
    Tensor images;  // [B, 3, H, W] in [0, 1]
    std::vector<std::string> captions;
};

struct LossTerms {
    Tensor diffusion;
    std::optional<Tensor> color;  // unweighted color loss when the gate fires
    Tensor total;
};

struct StepRecord {
    int64_t step = 0;
    double l_diffusion = 0.0;
    std::optional<double> l_color;
    double total = 0.0;
    double wall_ms = 0.0;
};

/// Fine-tunes either LoRA adapters (base frozen) or, when adapters is null,
/// every base parameter. Random draws come from named substreams of one seed:
/// "noise" (eps and t), "dropout" (caption dropout), "sampler" (z_T of gated steps).
class HldfTrainer {
public:
    HldfTrainer(DenoiserModel& model, LoraSet* adapters, const NoiseSchedule& sched, const HldfConfig& cfg,
                const SeedStreams& seeds, const LatentCodec& codec);

    /// Builds the loss for `step` without touching parameters.
    LossTerms losses(const TrainBatch& batch, int64_t step);
    /// losses + backward + clip + AdamW update. Throws on a non-finite loss
    /// before any parameter changes.
    StepRecord hldf_step(const TrainBatch& batch, int64_t step);
    /// hldf_step at the next 1-indexed step.
    StepRecord step(const TrainBatch& batch) { return hldf_step(batch, ++step_); }

    int64_t current_step() const { return step_; }
    int64_t color_evaluations() const { return color_evals_; }
    const SamplerConfig& sampler_config() const { return sampler_cfg_; }
    AdamW& optimizer() { return opt_; }

private:
    DenoiserModel& model_;
    LoraSet* adapters_;
    NoiseSchedule sched_;
    HldfConfig cfg_;
    const LatentCodec& codec_;
    SamplerConfig sampler_cfg_;
    Rng noise_rng_, dropout_rng_, sampler_rng_;
    AdamW opt_;
    int64_t step_ = 0;
    int64_t color_evals_ = 0;
};

}  // namespace medart
