#include "medart/sampler.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace medart {

void SamplerConfig::validate(const NoiseSchedule& sched) const {
    if (M < 1) throw std::invalid_argument("sampler needs M >= 1");
    if (w < 0.0) throw std::invalid_argument("guidance weight must be >= 0");
    if (static_cast<int>(step_times.size()) != M + 1)
        throw std::invalid_argument("step_times must have M + 1 entries");
    for (size_t i = 0; i < step_times.size(); ++i) {
        sched.check_t(step_times[i]);
        if (i > 0 && step_times[i] >= step_times[i - 1])
            throw std::invalid_argument("step_times must be strictly decreasing");
    }
}

std::vector<int> make_step_times(const NoiseSchedule& sched, int M, StepSpacing spacing) {
    const int T = sched.T;
    if (M < 1) throw std::invalid_argument("sampler needs M >= 1");
    if (M > T - 1) throw std::invalid_argument("M = " + std::to_string(M) + " exceeds T - 1");
    std::vector<int> ts(static_cast<size_t>(M + 1));
    if (spacing == StepSpacing::TimeUniform) {
        for (int i = 0; i <= M; ++i)
            ts[i] = static_cast<int>(std::lround(T - static_cast<double>(i) * (T - 1) / M));
    } else {
        const double lo = sched.lam_at(T), hi = sched.lam_at(1);
        int prev = T + 1;
        for (int i = 0; i <= M; ++i) {
            const double target = lo + (hi - lo) * static_cast<double>(i) / M;
            // lam is decreasing in t: first t (from the top) whose lam reaches the target
            int best = 1;
            for (int t = T; t >= 1; --t)
                if (sched.lam_at(t) >= target) {
                    best = t;
                    break;
                }
            // keep strictly decreasing while leaving room for the remaining steps
            best = std::min(best, prev - 1);
            best = std::max(best, M - i + 1);
            ts[i] = best;
            prev = best;
        }
    }
    return ts;
}

SamplerConfig make_sampler_config(const NoiseSchedule& sched, int M, double w, StepSpacing spacing) {
    SamplerConfig cfg;
    cfg.M = M;
    cfg.w = w;
    cfg.step_times = make_step_times(sched, M, spacing);
    cfg.validate(sched);
    return cfg;
}

EpsFn model_eps_fn(const DenoiserModel& model, const LoraSet* adapters) {
    return [&model, adapters](const Tensor& z, int t, const TextEmbedding& cond) {
        std::vector<int> ts(static_cast<size_t>(z.dim(0)), t);
        return model.predict_eps(z, ts, cond, adapters);
    };
}

Tensor cfg_eps(const EpsFn& eps, const Tensor& z, int t, const TextEmbedding& cond, const TextEmbedding& uncond,
               double w) {
    if (w < 0.0) throw std::invalid_argument("guidance weight must be >= 0");
    const int64_t B = z.dim(0);
    if (cond.batch() != B || uncond.batch() != B)
        throw std::invalid_argument("cfg_eps: conditioning batch does not match latents");
    if (w == 1.0) return eps(z, t, cond);
    if (w == 0.0) return eps(z, t, uncond);
    Tensor both = eps(concat0({z, z}), t, concat_embeddings({uncond, cond}));
    Tensor eu = slice0(both, 0, B);
    Tensor ec = slice0(both, B, 2 * B);
    return add(eu, scale(sub(ec, eu), w));
}

Tensor data_prediction(const Tensor& z, const Tensor& eps_hat, int t, const NoiseSchedule& sched) {
    const double a = sched.alpha_at(t), s = sched.sigma_at(t);
    if (!(a > 0.0)) throw std::domain_error("data_prediction: alpha_t must be positive");
    if (z.shape() != eps_hat.shape()) throw std::invalid_argument("data_prediction: shape mismatch");
    return scale(sub(z, scale(eps_hat, s)), 1.0 / a);
}

namespace {

struct Carry {
    Tensor z;
    Tensor x_last;  // newest data prediction; undefined before the first update
};

// Operations are numbered 1..M+1: op i <= M is solver update i (t_{i-1} -> t_i),
// op M+1 is the final data prediction at t_M, which replaces carry.z.
Carry run_ops(const EpsFn& eps, const TextEmbedding& cond, const TextEmbedding& uncond, const SamplerConfig& cfg,
              const NoiseSchedule& sched, Carry carry, int first, int last,
              const std::function<void(int, const SamplerState&)>* observer) {
    const auto& ts = cfg.step_times;
    SamplerState st;
    if (carry.x_last.defined()) {
        st.history.push_back(carry.x_last);
        st.lam_history.push_back(sched.lam_at(ts[first - 2]));
    }
    for (int i = first; i <= last; ++i) {
        if (i == cfg.M + 1) {
            Tensor e = cfg_eps(eps, carry.z, ts[cfg.M], cond, uncond, cfg.w);
            carry.z = data_prediction(carry.z, e, ts[cfg.M], sched);
            carry.x_last = Tensor();
            break;
        }
        const int s = ts[i - 1], t = ts[i];
        Tensor e = cfg_eps(eps, carry.z, s, cond, uncond, cfg.w);
        Tensor x0 = data_prediction(carry.z, e, s, sched);
        const double h = sched.lam_at(t) - sched.lam_at(s);
        Tensor d = x0;
        if (!st.history.empty()) {
            const double h_prev = sched.lam_at(s) - st.lam_history.back();
            const double r = h_prev / h;
            d = sub(scale(x0, 1.0 + 1.0 / (2.0 * r)), scale(st.history.back(), 1.0 / (2.0 * r)));
        }
        carry.z = sub(scale(carry.z, sched.sigma_at(t) / sched.sigma_at(s)),
                      scale(d, sched.alpha_at(t) * std::expm1(-h)));
        carry.x_last = x0;
        st.history.push_back(x0);
        st.lam_history.push_back(sched.lam_at(s));
        while (st.history.size() > 2) {
            st.history.pop_front();
            st.lam_history.pop_front();
        }
        if (observer && *observer) {
            st.z = carry.z;
            (*observer)(i, st);
        }
    }
    return carry;
}

}  // namespace

Tensor sample(const EpsFn& eps, const TextEmbedding& cond, const TextEmbedding& uncond, const SamplerConfig& cfg,
              const NoiseSchedule& sched, const Tensor& z_T, const SampleOptions& opts) {
    cfg.validate(sched);
    const int total = cfg.M + 1;
    const auto* obs = &opts.observer;
    Carry carry{z_T, Tensor()};

    int first = 1;
    if (opts.grad_steps > 0 && opts.grad_steps < cfg.M) {
        const int detached_last = cfg.M - opts.grad_steps;
        {
            NoGradGuard ng;
            carry = run_ops(eps, cond, uncond, cfg, sched, carry, 1, detached_last, obs);
        }
        carry.z = carry.z.detach();
        carry.x_last = carry.x_last.detach();
        first = detached_last + 1;
    }

    int seg = opts.checkpoint_segment;
    if (seg < 0) seg = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(total))));
    if (seg == 0 || !GradMode::enabled()) return run_ops(eps, cond, uncond, cfg, sched, carry, first, total, obs).z;

    // Segments re-run during backward, after this call has returned.
    struct Context {
        EpsFn eps;
        SamplerConfig cfg;
        NoiseSchedule sched;
        std::vector<uint8_t> cond_mask, uncond_mask;
        std::function<void(int, const SamplerState&)> observer;
    };
    auto ctx = std::make_shared<const Context>(Context{eps, cfg, sched, cond.mask, uncond.mask, opts.observer});
    for (int a = first; a <= total; a += seg) {
        const int b = std::min(total, a + seg - 1);
        const bool has_hist = carry.x_last.defined();
        SegmentFn fn = [ctx, a, b, total, has_hist](const std::vector<Tensor>& in) {
            size_t k = 0;
            Carry c;
            c.z = in[k++];
            if (has_hist) c.x_last = in[k++];
            TextEmbedding ce{in[k++], ctx->cond_mask};
            TextEmbedding ue{in[k++], ctx->uncond_mask};
            Carry out = run_ops(ctx->eps, ce, ue, ctx->cfg, ctx->sched, c, a, b, &ctx->observer);
            if (b == total) return std::vector<Tensor>{out.z};
            return std::vector<Tensor>{out.z, out.x_last};
        };
        std::vector<Tensor> in{carry.z};
        if (has_hist) in.push_back(carry.x_last);
        in.push_back(cond.tokens);
        in.push_back(uncond.tokens);
        auto out = checkpoint(fn, in);
        carry.z = out[0];
        carry.x_last = out.size() > 1 ? out[1] : Tensor();
    }
    return carry.z;
}

}  // namespace medart
