#pragma once

#include "medart/denoiser.hpp"

namespace medart::testing {

inline DitConfig tiny_dit() {
    DitConfig c;
    c.latent_size = 8;
    c.patch_size = 2;
    c.hidden_dim = 16;
    c.depth = 1;
    c.heads = 2;
    c.cond_dim = 8;
    c.text_layers = 1;
    c.text_heads = 2;
    c.vocab_size = 64;
    c.ffn_mult = 2;
    return c;
}

}  // namespace medart::testing
