#pragma once

#include <stdexcept>
#include <string>

#include "rfedit/text_encoder.hpp"

namespace rfedit {

// Architecture hyperparameters; stored in the checkpoint header. All sizes
// default to the desk-scale configuration that trains in minutes on a CPU.
struct ModelConfig {
    int image_size = 16;
    int channels = 3;
    int patch_size = 2;
    int hidden_dim = 64;
    int num_heads = 4;
    int num_blocks = 2;
    int d_pool = 32;
    int d_ctxt = 32;
    int max_text_tokens = 8;
    Vocabulary vocab = Vocabulary::default_vocab();

    int tokens_per_side() const { return image_size / patch_size; }
    int num_image_tokens() const { return tokens_per_side() * tokens_per_side(); }
    int patch_dim() const { return patch_size * patch_size * channels; }

    void validate() const {
        if (image_size <= 0 || channels <= 0 || patch_size <= 0)
            throw std::invalid_argument("image dimensions must be positive");
        if (image_size % patch_size != 0)
            throw std::invalid_argument("patch size must divide image size");
        if (hidden_dim <= 0 || num_heads <= 0 || hidden_dim % num_heads != 0)
            throw std::invalid_argument("heads must divide hidden dim");
        if (num_blocks <= 0) throw std::invalid_argument("need at least one block");
        if (d_pool <= 0 || d_pool % 2 != 0)
            throw std::invalid_argument("pooled dim must be positive and even");
        if (d_ctxt <= 0) throw std::invalid_argument("context dim must be positive");
        if (max_text_tokens <= 0) throw std::invalid_argument("max text tokens must be positive");
        if (vocab.size() < 2) throw std::invalid_argument("vocabulary too small");
    }
};

}  // namespace rfedit
