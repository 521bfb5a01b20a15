#pragma once

#include <json.hpp>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "medart/lora.hpp"
#include "medart/nn.hpp"
#include "medart/tensor.hpp"
#include "medart/tokenizer.hpp"

namespace medart {

/// Hard ceiling on conditioning length; captions are budgeted to this.
inline constexpr int kMaxCondTokens = 120;

struct DitConfig {
    int latent_channels = 3;
    int latent_size = 32;
    int patch_size = 4;
    int hidden_dim = 64;
    int depth = 2;
    int heads = 4;
    int cond_dim = 32;
    int cond_max_tokens = kMaxCondTokens;
    int text_layers = 2;
    int text_heads = 4;
    int vocab_size = 1024;
    int ffn_mult = 4;
    int timesteps = 1000;

    void validate() const;
    int tokens() const { return (latent_size / patch_size) * (latent_size / patch_size); }
    int patch_dim() const { return latent_channels * patch_size * patch_size; }
};

void to_json(nlohmann::ordered_json& j, const DitConfig& c);
void from_json(const nlohmann::ordered_json& j, DitConfig& c);

/// Encoded captions. tokens [B, L, cond_dim]; mask [B*L], 1 = real token.
struct TextEmbedding {
    Tensor tokens;
    std::vector<uint8_t> mask;

    int64_t batch() const { return tokens.dim(0); }
    int64_t length() const { return tokens.dim(1); }
};

/// Stacks embeddings along the batch, right-padding shorter ones with masked zeros.
TextEmbedding concat_embeddings(const std::vector<TextEmbedding>& parts);

/// Image <-> latent mapping. Images are [B, 3, H, W] in [0, 1].
class LatentCodec {
public:
    virtual ~LatentCodec() = default;
    virtual Tensor encode(const Tensor& x) const = 0;
    virtual Tensor decode(const Tensor& z) const = 0;
    virtual std::string id() const = 0;
};

/// z = 2x - 1, x = clamp((z + 1) / 2, 0, 1).
class AffineCodec final : public LatentCodec {
public:
    Tensor encode(const Tensor& x) const override;
    Tensor decode(const Tensor& z) const override;
    std::string id() const override { return "affine-identity-v1"; }
};

/// Toy diffusion transformer with a small trainable text encoder.
///
/// Text side: hashed-vocabulary token embedding + learned positions, then
/// `text_layers` pre-norm blocks (masked self-attention, GELU FFN).
/// Image side: patch embedding + learned positions + projected sinusoidal
/// timestep embedding, then `depth` blocks of self-attention, cross-attention
/// onto the text tokens, and FFN, followed by a linear head back to patches.
class DenoiserModel final : public LinearHost {
public:
    DenoiserModel(const DitConfig& cfg, Rng& init);

    const DitConfig& config() const { return cfg_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }
    const Tokenizer& tokenizer() const { return *tokenizer_; }

    /// Empty captions encode to a single masked pad token (the unconditional embedding).
    TextEmbedding encode_text(const std::vector<std::string>& captions, const LoraSet* adapters = nullptr) const;
    /// Token ids used by encode_text, truncated to cond_max_tokens.
    std::vector<int64_t> token_ids(const std::string& caption) const;

    Tensor predict_eps(const Tensor& z, std::span<const int> t, const TextEmbedding& cond,
                       const LoraSet* adapters = nullptr) const;

    const Linear* find_linear(const std::string& name) const override;
    std::vector<std::string> linear_names() const override;
    /// Attention and FFN projections of the DiT and/or text encoder.
    std::vector<std::string> default_lora_targets(bool dit, bool text) const;

    void set_base_trainable(bool on) { params_.set_requires_grad(on); }

    void save(const std::string& path) const;
    static DenoiserModel load(const std::string& path);

private:
    struct AttnProj {
        Linear q, k, v, out;
    };
    struct TextBlock {
        LayerNorm ln1, ln2;
        AttnProj attn;
        Linear fc1, fc2;
    };
    struct DitBlock {
        LayerNorm ln1, ln2, ln3;
        AttnProj self_attn, cross_attn;
        Linear fc1, fc2;
    };

    std::vector<const Linear*> all_linears() const;
    Tensor timestep_features(std::span<const int> t) const;

    DitConfig cfg_;
    ParameterStore params_;
    std::unique_ptr<Tokenizer> tokenizer_;

    Tensor tok_embed_, text_pos_;
    std::vector<TextBlock> text_blocks_;
    LayerNorm text_ln_f_;

    Linear patch_embed_, t_proj_, head_;
    Tensor dit_pos_;
    std::vector<DitBlock> dit_blocks_;
    LayerNorm dit_ln_f_;
};

}  // namespace medart
