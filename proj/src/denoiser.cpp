#include "medart/denoiser.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

#include "medart/archive.hpp"

namespace medart {

void DitConfig::validate() const {
    auto need = [](bool ok, const std::string& what) {
        if (!ok) throw std::invalid_argument("DitConfig: " + what);
    };
    need(latent_channels > 0 && latent_size > 0 && patch_size > 0, "sizes must be positive");
    need(latent_size % patch_size == 0, "latent_size must be divisible by patch_size");
    need(hidden_dim > 0 && heads > 0 && hidden_dim % heads == 0, "hidden_dim must be divisible by heads");
    need(cond_dim > 0 && text_heads > 0 && cond_dim % text_heads == 0, "cond_dim must be divisible by text_heads");
    need(cond_max_tokens >= 1 && cond_max_tokens <= kMaxCondTokens, "cond_max_tokens must be in [1, 120]");
    need(depth >= 1 && text_layers >= 0, "depth must be >= 1");
    need(vocab_size >= 2 && ffn_mult >= 1 && timesteps >= 2, "vocab_size/ffn_mult/timesteps out of range");
}

void to_json(nlohmann::ordered_json& j, const DitConfig& c) {
    j = {{"latent_channels", c.latent_channels}, {"latent_size", c.latent_size}, {"patch_size", c.patch_size},
         {"hidden_dim", c.hidden_dim},           {"depth", c.depth},             {"heads", c.heads},
         {"cond_dim", c.cond_dim},               {"cond_max_tokens", c.cond_max_tokens},
         {"text_layers", c.text_layers},         {"text_heads", c.text_heads},   {"vocab_size", c.vocab_size},
         {"ffn_mult", c.ffn_mult},               {"timesteps", c.timesteps}};
}

void from_json(const nlohmann::ordered_json& j, DitConfig& c) {
    j.at("latent_channels").get_to(c.latent_channels);
    j.at("latent_size").get_to(c.latent_size);
    j.at("patch_size").get_to(c.patch_size);
    j.at("hidden_dim").get_to(c.hidden_dim);
    j.at("depth").get_to(c.depth);
    j.at("heads").get_to(c.heads);
    j.at("cond_dim").get_to(c.cond_dim);
    j.at("cond_max_tokens").get_to(c.cond_max_tokens);
    j.at("text_layers").get_to(c.text_layers);
    j.at("text_heads").get_to(c.text_heads);
    j.at("vocab_size").get_to(c.vocab_size);
    j.at("ffn_mult").get_to(c.ffn_mult);
    j.at("timesteps").get_to(c.timesteps);
}

TextEmbedding concat_embeddings(const std::vector<TextEmbedding>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_embeddings: nothing to concatenate");
    int64_t L = 0;
    for (const auto& p : parts) L = std::max(L, p.length());
    const int64_t D = parts[0].tokens.dim(2);
    std::vector<Tensor> padded;
    TextEmbedding out;
    for (const auto& p : parts) {
        const int64_t B = p.batch(), Lp = p.length();
        if (p.tokens.dim(2) != D) throw std::invalid_argument("concat_embeddings: width mismatch");
        if (Lp == L) {
            padded.push_back(p.tokens);
        } else {
            // Pad each sample's token rows: [B, Lp, D] -> [B, L, D].
            std::vector<Tensor> rows;
            const Tensor pad = Tensor::zeros({L - Lp, D});
            for (int64_t b = 0; b < B; ++b)
                rows.push_back(concat0({reshape(slice0(p.tokens, b, b + 1), {Lp, D}), pad}));
            padded.push_back(reshape(concat0(rows), {B, L, D}));
        }
        for (int64_t b = 0; b < B; ++b)
            for (int64_t l = 0; l < L; ++l) out.mask.push_back(l < Lp ? p.mask[b * Lp + l] : 0);
    }
    out.tokens = concat0(padded);
    return out;
}

Tensor AffineCodec::encode(const Tensor& x) const {
    if (x.ndim() != 4 || x.dim(1) != 3)
        throw std::invalid_argument("codec expects [B,3,H,W] images, got " + shape_str(x.shape()));
    return add_scalar(scale(x, 2.0), -1.0);
}

Tensor AffineCodec::decode(const Tensor& z) const {
    if (z.ndim() != 4 || z.dim(1) != 3)
        throw std::invalid_argument("codec expects [B,3,H,W] latents, got " + shape_str(z.shape()));
    return clamp(scale(add_scalar(z, 1.0), 0.5), 0.0, 1.0);
}

DenoiserModel::DenoiserModel(const DitConfig& cfg, Rng& init) : cfg_(cfg), tokenizer_(std::make_unique<WordPunctTokenizer>()) {
    cfg_.validate();
    const int64_t cd = cfg_.cond_dim, hd = cfg_.hidden_dim;
    const int64_t cff = cd * cfg_.ffn_mult, hff = hd * cfg_.ffn_mult;

    tok_embed_ = params_.add("text.tok_embed",
                             Tensor::from({cfg_.vocab_size, cd}, init.normal_vec(static_cast<size_t>(cfg_.vocab_size * cd), 0.5)));
    text_pos_ = params_.add("text.pos", Tensor::from({cfg_.cond_max_tokens, cd},
                                                     init.normal_vec(static_cast<size_t>(cfg_.cond_max_tokens * cd), 0.02)));
    for (int i = 0; i < cfg_.text_layers; ++i) {
        const std::string p = "text.blocks." + std::to_string(i);
        TextBlock b;
        b.ln1 = LayerNorm::create(params_, p + ".ln1", cd);
        b.attn.q = Linear::create(params_, p + ".attn.q", cd, cd, init);
        b.attn.k = Linear::create(params_, p + ".attn.k", cd, cd, init);
        b.attn.v = Linear::create(params_, p + ".attn.v", cd, cd, init);
        b.attn.out = Linear::create(params_, p + ".attn.out", cd, cd, init);
        b.ln2 = LayerNorm::create(params_, p + ".ln2", cd);
        b.fc1 = Linear::create(params_, p + ".ffn.fc1", cd, cff, init);
        b.fc2 = Linear::create(params_, p + ".ffn.fc2", cff, cd, init);
        text_blocks_.push_back(std::move(b));
    }
    text_ln_f_ = LayerNorm::create(params_, "text.ln_f", cd);

    patch_embed_ = Linear::create(params_, "dit.patch_embed", cfg_.patch_dim(), hd, init);
    dit_pos_ = params_.add("dit.pos", Tensor::from({cfg_.tokens(), hd}, init.normal_vec(static_cast<size_t>(cfg_.tokens() * hd), 0.02)));
    t_proj_ = Linear::create(params_, "dit.t_proj", hd, hd, init);
    for (int i = 0; i < cfg_.depth; ++i) {
        const std::string p = "dit.blocks." + std::to_string(i);
        DitBlock b;
        b.ln1 = LayerNorm::create(params_, p + ".ln1", hd);
        b.self_attn.q = Linear::create(params_, p + ".self_attn.q", hd, hd, init);
        b.self_attn.k = Linear::create(params_, p + ".self_attn.k", hd, hd, init);
        b.self_attn.v = Linear::create(params_, p + ".self_attn.v", hd, hd, init);
        b.self_attn.out = Linear::create(params_, p + ".self_attn.out", hd, hd, init);
        b.ln2 = LayerNorm::create(params_, p + ".ln2", hd);
        b.cross_attn.q = Linear::create(params_, p + ".cross_attn.q", hd, hd, init);
        b.cross_attn.k = Linear::create(params_, p + ".cross_attn.k", cd, hd, init);
        b.cross_attn.v = Linear::create(params_, p + ".cross_attn.v", cd, hd, init);
        b.cross_attn.out = Linear::create(params_, p + ".cross_attn.out", hd, hd, init);
        b.ln3 = LayerNorm::create(params_, p + ".ln3", hd);
        b.fc1 = Linear::create(params_, p + ".ffn.fc1", hd, hff, init);
        b.fc2 = Linear::create(params_, p + ".ffn.fc2", hff, hd, init);
        dit_blocks_.push_back(std::move(b));
    }
    dit_ln_f_ = LayerNorm::create(params_, "dit.ln_f", hd);
    head_ = Linear::create(params_, "dit.head", hd, cfg_.patch_dim(), init, 0.02);
}

std::vector<int64_t> DenoiserModel::token_ids(const std::string& caption) const {
    std::vector<int64_t> ids;
    for (auto& tok : tokenizer_->tokenize(caption)) {
        if (static_cast<int>(ids.size()) == cfg_.cond_max_tokens) break;
        std::string lower(tok);
        std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
        // id 0 is reserved for padding
        ids.push_back(1 + static_cast<int64_t>(fnv1a64(lower) % static_cast<uint64_t>(cfg_.vocab_size - 1)));
    }
    return ids;
}

TextEmbedding DenoiserModel::encode_text(const std::vector<std::string>& captions, const LoraSet* adapters) const {
    if (captions.empty()) throw std::invalid_argument("encode_text: empty caption list");
    const int64_t B = static_cast<int64_t>(captions.size());
    std::vector<std::vector<int64_t>> ids;
    int64_t L = 1;
    for (const auto& c : captions) {
        ids.push_back(token_ids(c));
        L = std::max<int64_t>(L, static_cast<int64_t>(ids.back().size()));
    }
    std::vector<int64_t> flat;
    TextEmbedding out;
    for (const auto& row : ids)
        for (int64_t l = 0; l < L; ++l) {
            const bool real = l < static_cast<int64_t>(row.size());
            flat.push_back(real ? row[l] : 0);
            out.mask.push_back(real ? 1 : 0);
        }
    const int64_t cd = cfg_.cond_dim;
    Tensor x = reshape(embedding(tok_embed_, flat), {B, L, cd});
    x = add(x, slice0(text_pos_, 0, L));
    for (const auto& b : text_blocks_) {
        Tensor h = b.ln1.forward(x);
        Tensor a = attention(b.attn.q.forward(h, adapters), b.attn.k.forward(h, adapters),
                             b.attn.v.forward(h, adapters), cfg_.text_heads, out.mask);
        x = add(x, b.attn.out.forward(a, adapters));
        h = b.ln2.forward(x);
        x = add(x, b.fc2.forward(gelu(b.fc1.forward(h, adapters)), adapters));
    }
    out.tokens = text_ln_f_.forward(x);
    return out;
}

Tensor DenoiserModel::timestep_features(std::span<const int> t) const {
    const int64_t D = cfg_.hidden_dim, half = D / 2;
    std::vector<double> f(static_cast<size_t>(static_cast<int64_t>(t.size()) * D), 0.0);
    for (size_t b = 0; b < t.size(); ++b)
        for (int64_t i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            f[b * D + i] = std::sin(t[b] * freq);
            f[b * D + half + i] = std::cos(t[b] * freq);
        }
    return Tensor::from({static_cast<int64_t>(t.size()), D}, std::move(f));
}

Tensor DenoiserModel::predict_eps(const Tensor& z, std::span<const int> t, const TextEmbedding& cond,
                                  const LoraSet* adapters) const {
    const int64_t C = cfg_.latent_channels, S = cfg_.latent_size;
    if (z.ndim() != 4 || z.dim(1) != C || z.dim(2) != S || z.dim(3) != S)
        throw std::invalid_argument("predict_eps: latent shape " + shape_str(z.shape()) + " does not match config");
    const int64_t B = z.dim(0);
    if (static_cast<int64_t>(t.size()) != B) throw std::invalid_argument("predict_eps: need one timestep per sample");
    for (int ti : t)
        if (ti < 1 || ti > cfg_.timesteps) throw std::out_of_range("predict_eps: timestep " + std::to_string(ti));
    if (cond.batch() != B) throw std::invalid_argument("predict_eps: conditioning batch mismatch");

    Tensor x = patch_embed_.forward(patchify(z, cfg_.patch_size), adapters);
    x = add(x, dit_pos_);
    x = add_per_sample(x, t_proj_.forward(timestep_features(t), adapters));
    for (const auto& b : dit_blocks_) {
        Tensor h = b.ln1.forward(x);
        Tensor a = attention(b.self_attn.q.forward(h, adapters), b.self_attn.k.forward(h, adapters),
                             b.self_attn.v.forward(h, adapters), cfg_.heads);
        x = add(x, b.self_attn.out.forward(a, adapters));
        h = b.ln2.forward(x);
        a = attention(b.cross_attn.q.forward(h, adapters), b.cross_attn.k.forward(cond.tokens, adapters),
                      b.cross_attn.v.forward(cond.tokens, adapters), cfg_.heads, cond.mask);
        x = add(x, b.cross_attn.out.forward(a, adapters));
        h = b.ln3.forward(x);
        x = add(x, b.fc2.forward(gelu(b.fc1.forward(h, adapters)), adapters));
    }
    Tensor out = head_.forward(dit_ln_f_.forward(x), adapters);
    return unpatchify(out, C, S, S, cfg_.patch_size);
}

std::vector<const Linear*> DenoiserModel::all_linears() const {
    std::vector<const Linear*> v;
    for (const auto& b : text_blocks_)
        for (const Linear* l : {&b.attn.q, &b.attn.k, &b.attn.v, &b.attn.out, &b.fc1, &b.fc2}) v.push_back(l);
    v.push_back(&patch_embed_);
    v.push_back(&t_proj_);
    for (const auto& b : dit_blocks_)
        for (const Linear* l : {&b.self_attn.q, &b.self_attn.k, &b.self_attn.v, &b.self_attn.out, &b.cross_attn.q,
                                &b.cross_attn.k, &b.cross_attn.v, &b.cross_attn.out, &b.fc1, &b.fc2})
            v.push_back(l);
    v.push_back(&head_);
    return v;
}

const Linear* DenoiserModel::find_linear(const std::string& name) const {
    for (const Linear* l : all_linears())
        if (l->name == name) return l;
    return nullptr;
}

std::vector<std::string> DenoiserModel::linear_names() const {
    std::vector<std::string> names;
    for (const Linear* l : all_linears()) names.push_back(l->name);
    return names;
}

std::vector<std::string> DenoiserModel::default_lora_targets(bool dit, bool text) const {
    std::vector<std::string> out;
    for (const auto& n : linear_names()) {
        const bool in_text = n.rfind("text.blocks.", 0) == 0;
        const bool in_dit = n.rfind("dit.blocks.", 0) == 0;
        if ((in_text && text) || (in_dit && dit)) out.push_back(n);
    }
    return out;
}

void DenoiserModel::save(const std::string& path) const {
    Archive ar;
    ar.meta["format"] = "medart-archive";
    ar.meta["kind"] = "model";
    ar.meta["config"] = cfg_;
    ar.meta["tokenizer"] = tokenizer_->id();
    for (const auto& [name, t] : params_.items()) ar.tensors.emplace_back(name, t);
    write_archive(path, ar);
}

DenoiserModel DenoiserModel::load(const std::string& path) {
    Archive ar = read_archive(path);
    if (ar.meta.value("kind", "") != "model") throw std::runtime_error("not a model checkpoint: " + path);
    DitConfig cfg = ar.meta.at("config").get<DitConfig>();
    Rng dummy(0);
    DenoiserModel m(cfg, dummy);
    for (const auto& [name, t] : m.params_.items()) {
        const Tensor* src = ar.find(name);
        if (!src) throw std::runtime_error("checkpoint missing parameter " + name);
        if (src->shape() != t.shape()) throw std::runtime_error("checkpoint shape mismatch for " + name);
        Tensor handle = t;
        std::copy(src->data().begin(), src->data().end(), handle.data().begin());
    }
    return m;
}

}  // namespace medart
