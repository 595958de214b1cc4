#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace rfedit::cli {

// Raw command-line values; unset fields fall back to the config file, then
// the preset, then built-in defaults. Flag spellings map to config keys by
// dropping the leading dashes.
struct Options {
    std::optional<std::string> config;
    std::optional<std::string> checkpoint;
    std::optional<std::string> out;
    std::optional<std::string> out_dir;
    std::optional<std::string> input;
    std::optional<std::string> init_noise;
    std::optional<std::string> loss_log;
    std::optional<std::string> manifest;
    std::optional<std::string> metrics;

    std::optional<std::string> prompt;
    std::optional<std::string> edit_prompt;
    std::optional<std::string> preset;
    std::optional<std::string> target_blocks;
    std::optional<std::string> metric_channel;
    std::optional<std::string> lambda_fine_grid;
    std::optional<std::string> lambda_coarse_grid;
    std::optional<std::string> tau_m_grid;
    std::optional<std::string> start_step_grid;

    std::optional<int> steps;
    std::optional<int> start_step;
    std::optional<int> corpus_size;
    std::optional<int> batch_size;
    std::optional<int> image_size;
    std::optional<int> patch_size;
    std::optional<int> hidden_dim;
    std::optional<int> heads;
    std::optional<int> blocks;
    std::optional<int> d_pool;
    std::optional<int> d_ctxt;
    std::optional<int> max_text_tokens;

    std::optional<uint64_t> seed;
    std::optional<uint64_t> corpus_seed;

    std::optional<double> guidance;
    std::optional<double> lambda_fine;
    std::optional<double> lambda_coarse;
    std::optional<double> tau_m;
    std::optional<double> boundary;
    std::optional<double> lr;
    std::optional<double> uncond_prob;
    std::optional<double> grad_clip;

    bool no_mask = false;  // flag; config key "no-mask"
};

int run_train(const Options& opt);
int run_generate(const Options& opt);
int run_edit(const Options& opt);
int run_sweep(const Options& opt);
int run_invert(const Options& opt);
int run_inspect_mask(const Options& opt);

}  // namespace rfedit::cli
