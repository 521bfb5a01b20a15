#pragma once

#include <cstdint>
#include <string>

#include "medart/denoiser.hpp"

namespace medart::testing {

/// Shared-seed twin fine-tuning on the synthetic corpus: one LoRA run with
/// the color term every `interval` steps, one without, from the same base.
struct TwinConfig {
    uint64_t seed = 7;
    int image_size = 32;
    int train_per_class = 32;
    DitConfig dit;
    int pretrain_steps = 1500;
    double pretrain_lr = 2e-3;
    int finetune_steps = 400;
    double finetune_lr = 1e-3;
    int batch = 6;
    int64_t interval = 10;
    int train_sampler_steps = 20;
    double guidance = 4.5;
    int rank = 8;
    int grad_steps = 0;
    int eval_per_class = 16;
    int eval_sampler_steps = 20;
    std::string work_dir = "twin_work";
    bool verbose = false;

    TwinConfig();
};

struct TwinOutcome {
    double gap_hldf = 0.0;      // mean over classes and channels of |mu_gen - mu_real|
    double gap_baseline = 0.0;
    double gap_base_model = 0.0;  // pretrained model before fine-tuning
    double fd_hldf = 0.0;         // channel-stats Frechet distance, all classes pooled
    double fd_baseline = 0.0;
    int64_t color_evaluations = 0;
    double seconds = 0.0;
};

TwinOutcome run_twin(const TwinConfig& cfg);

}  // namespace medart::testing
