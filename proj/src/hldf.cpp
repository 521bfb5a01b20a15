#include "medart/hldf.hpp"

#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace medart {

ColorStats color_stats(const Tensor& x) {
    if (x.ndim() != 4) throw std::invalid_argument("color_stats: expected [B,C,H,W], got " + shape_str(x.shape()));
    if (x.dim(2) * x.dim(3) < 2) throw std::invalid_argument("color_stats: need at least 2 pixels per channel");
    auto [mu, sd] = channel_mean_std(x);
    return {mu, sd};
}

Tensor color_loss(const Tensor& x_gen, const Tensor& x_real) {
    if (x_gen.shape() != x_real.shape())
        throw std::invalid_argument("color_loss: shape mismatch " + shape_str(x_gen.shape()) + " vs " +
                                    shape_str(x_real.shape()));
    const ColorStats g = color_stats(x_gen);
    const ColorStats r = color_stats(x_real);
    Tensor per = add(sum(square(sub(g.mu, r.mu))), sum(square(sub(g.sd, r.sd))));
    return scale(per, 1.0 / static_cast<double>(x_gen.dim(0)));
}

void HldfConfig::validate() const {
    if (N < 1) throw std::invalid_argument("HLDF interval N must be >= 1");
    if (M < 1) throw std::invalid_argument("HLDF sampler steps M must be >= 1");
    if (w < 0.0) throw std::invalid_argument("guidance weight must be >= 0");
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (batch < 1 || epochs < 1 || rank < 1) throw std::invalid_argument("batch, epochs and rank must be >= 1");
    if (caption_dropout < 0.0 || caption_dropout > 1.0) throw std::invalid_argument("caption_dropout outside [0, 1]");
}

namespace {
std::vector<Tensor> trainable(DenoiserModel& model, LoraSet* adapters) {
    if (adapters) {
        model.set_base_trainable(false);
        adapters->set_trainable(true);
        return adapters->parameters();
    }
    model.set_base_trainable(true);
    std::vector<Tensor> ps;
    for (const auto& [_, t] : model.params().items()) ps.push_back(t);
    return ps;
}
}  // namespace

HldfTrainer::HldfTrainer(DenoiserModel& model, LoraSet* adapters, const NoiseSchedule& sched, const HldfConfig& cfg,
                         const SeedStreams& seeds, const LatentCodec& codec)
    : model_(model),
      adapters_(adapters),
      sched_(sched),
      cfg_(cfg),
      codec_(codec),
      noise_rng_(seeds.stream("noise")),
      dropout_rng_(seeds.stream("dropout")),
      sampler_rng_(seeds.stream("sampler")),
      opt_(trainable(model, adapters), cfg.lr, cfg.weight_decay) {
    cfg_.validate();
    if (model.config().timesteps != sched.T)
        throw std::invalid_argument("model timesteps do not match the noise schedule");
    sampler_cfg_ = make_sampler_config(sched_, cfg_.M, cfg_.w, cfg_.spacing);
}

LossTerms HldfTrainer::losses(const TrainBatch& batch, int64_t step) {
    if (step < 1) throw std::invalid_argument("training steps are 1-indexed");
    if (batch.images.ndim() != 4 || batch.images.dim(0) != static_cast<int64_t>(batch.captions.size()))
        throw std::invalid_argument("batch images and captions disagree");
    const int64_t B = batch.images.dim(0);

    std::vector<std::string> caps = batch.captions;
    for (auto& c : caps)
        if (dropout_rng_.uniform() < cfg_.caption_dropout) c.clear();

    Tensor z0 = codec_.encode(batch.images);
    NoiseSample ns = draw_noise(z0.shape(), sched_.T, noise_rng_);
    TextEmbedding cond = model_.encode_text(caps, adapters_);
    Tensor zt = forward_noise(z0, ns, sched_);
    Tensor eps_hat = model_.predict_eps(zt, ns.t, cond, adapters_);

    LossTerms out;
    out.diffusion = diffusion_loss(eps_hat, ns.eps);
    out.total = out.diffusion;
    if (cfg_.gate(step)) {
        TextEmbedding c = model_.encode_text(batch.captions, adapters_);
        TextEmbedding u = model_.encode_text(std::vector<std::string>(static_cast<size_t>(B)), adapters_);
        Tensor z_T = Tensor::from(z0.shape(), sampler_rng_.normal_vec(static_cast<size_t>(z0.numel())));
        SampleOptions so;
        so.checkpoint_segment = cfg_.checkpoint_segment;
        so.grad_steps = cfg_.grad_steps;
        Tensor x_gen = codec_.decode(sample(model_eps_fn(model_, adapters_), c, u, sampler_cfg_, sched_, z_T, so));
        out.color = color_loss(x_gen, batch.images);
        out.total = add(out.total, scale(*out.color, cfg_.color_weight()));
    }
    return out;
}

StepRecord HldfTrainer::hldf_step(const TrainBatch& batch, int64_t step) {
    const auto t0 = std::chrono::steady_clock::now();
    LossTerms terms = losses(batch, step);
    StepRecord rec;
    rec.step = step;
    rec.l_diffusion = terms.diffusion.item();
    if (terms.color) {
        rec.l_color = terms.color->item();
        ++color_evals_;
    }
    rec.total = terms.total.item();
    if (!std::isfinite(rec.total)) {
        std::ostringstream os;
        os << "non-finite loss at step " << step << ": L_diffusion=" << rec.l_diffusion;
        if (rec.l_color) os << " L_color=" << *rec.l_color;
        throw std::runtime_error(os.str());
    }
    opt_.zero_grad();
    terms.total.backward();
    if (cfg_.grad_clip > 0.0) opt_.clip_grad_norm(cfg_.grad_clip);
    opt_.step();
    opt_.zero_grad();
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

}  // namespace medart
