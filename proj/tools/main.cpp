#include <string>

#include "CLI11.hpp"
#include "commands.hpp"

namespace {

using rfedit::cli::Options;

void add_config_opt(CLI::App* cmd, Options& o) {
    cmd->add_option("--config", o.config,
                    "JSON config file; flat keys mirror the flag names, explicit flags win");
}

void add_sampling_opts(CLI::App* cmd, Options& o) {
    cmd->add_option("--checkpoint", o.checkpoint, "model checkpoint to load");
    cmd->add_option("--steps", o.steps, "sampler steps (default 30)");
    cmd->add_option("--seed", o.seed, "rng seed for the initial noise (default 0)");
    cmd->add_option("--guidance", o.guidance,
                    "classifier-free guidance scale; 1 disables (default 1)");
    cmd->add_option("--init-noise", o.init_noise,
                    "raw little-endian f32 file to use as the initial noise instead of the seed");
}

void add_edit_opts(CLI::App* cmd, Options& o) {
    cmd->add_option("--prompt", o.prompt, "base caption");
    cmd->add_option("--edit-prompt", o.edit_prompt, "caption describing the edit");
    cmd->add_option("--preset", o.preset, "named parameter preset: eyeglasses or smile");
    cmd->add_option("--lambda-fine", o.lambda_fine,
                    "attention-level edit strength; 0 disables (default 5)");
    cmd->add_option("--lambda-coarse", o.lambda_coarse,
                    "pooled-condition blend in [0,1]; 0 disables (default 0.5)");
    cmd->add_option("--tau-m", o.tau_m, "mask threshold in [0,1] (default 0.5)");
    cmd->add_option("--boundary", o.boundary, "mask sharpness (default 10)");
    cmd->add_option("--start-step", o.start_step,
                    "first sampler step the edit applies to (default 0)");
    cmd->add_option("--target-blocks", o.target_blocks,
                    "comma-separated block indices to edit (default: all)");
}

}  // namespace

int main(int argc, char** argv) {
    Options opt;
    CLI::App app{"rfedit: a desk-scale rectified-flow image lab with attention-level editing"};
    app.require_subcommand(1);

    auto* train = app.add_subcommand("train", "train a model on the built-in synthetic corpus");
    add_config_opt(train, opt);
    train->add_option("--out", opt.out, "checkpoint output path");
    train->add_option("--steps", opt.steps, "optimization steps (default 2000)");
    train->add_option("--batch-size", opt.batch_size, "samples per step (default 8)");
    train->add_option("--lr", opt.lr, "learning rate (default 1e-3)");
    train->add_option("--uncond-prob", opt.uncond_prob,
                      "caption dropout probability (default 0.1)");
    train->add_option("--grad-clip", opt.grad_clip,
                      "global gradient norm clip; 0 disables (default 1)");
    train->add_option("--seed", opt.seed, "seed for init, batching, and noise (default 0)");
    train->add_option("--corpus-size", opt.corpus_size, "synthetic corpus size (default 512)");
    train->add_option("--corpus-seed", opt.corpus_seed, "corpus master seed (default 0)");
    train->add_option("--loss-log", opt.loss_log,
                      "per-step loss output path (default <out>.loss.txt)");
    train->add_option("--manifest", opt.manifest,
                      "corpus manifest output path (default <out>.manifest.txt)");
    train->add_option("--image-size", opt.image_size, "square image side (default 16)");
    train->add_option("--patch-size", opt.patch_size, "patch side (default 2)");
    train->add_option("--hidden-dim", opt.hidden_dim, "transformer width (default 64)");
    train->add_option("--heads", opt.heads, "attention heads (default 4)");
    train->add_option("--blocks", opt.blocks, "joint transformer blocks (default 2)");
    train->add_option("--d-pool", opt.d_pool, "pooled condition width (default 32)");
    train->add_option("--d-ctxt", opt.d_ctxt, "per-token condition width (default 32)");
    train->add_option("--max-text-tokens", opt.max_text_tokens,
                      "caption length cap (default 8)");

    auto* generate = app.add_subcommand("generate", "sample an image from noise");
    add_config_opt(generate, opt);
    add_sampling_opts(generate, opt);
    generate->add_option("--prompt", opt.prompt, "caption; empty is unconditional");
    generate->add_option("--out", opt.out, "output image (binary PPM)");

    auto* edit = app.add_subcommand("edit", "generate with an attention-level edit applied");
    add_config_opt(edit, opt);
    add_sampling_opts(edit, opt);
    add_edit_opts(edit, opt);
    edit->add_flag_callback("--no-mask", [&opt] { opt.no_mask = true; },
                            "apply the edit to every image token");
    edit->add_option("--out", opt.out, "output image (binary PPM)");

    auto* sweep = app.add_subcommand(
        "sweep", "run an edit across one parameter grid and write a strip plus metrics");
    add_config_opt(sweep, opt);
    add_sampling_opts(sweep, opt);
    add_edit_opts(sweep, opt);
    sweep->add_flag_callback("--no-mask", [&opt] { opt.no_mask = true; },
                             "apply the edit to every image token");
    sweep->add_option("--lambda-fine-grid", opt.lambda_fine_grid,
                      "comma-separated values for the fine strength axis");
    sweep->add_option("--lambda-coarse-grid", opt.lambda_coarse_grid,
                      "comma-separated values for the coarse blend axis");
    sweep->add_option("--tau-m-grid", opt.tau_m_grid,
                      "comma-separated values for the mask threshold axis");
    sweep->add_option("--start-step-grid", opt.start_step_grid,
                      "comma-separated values for the start step axis");
    sweep->add_option("--metric-channel", opt.metric_channel,
                      "channel for the object-region mean: red, green, or blue (default red)");
    sweep->add_option("--metrics", opt.metrics,
                      "metrics table output path (default <out>.metrics.txt)");
    sweep->add_option("--out", opt.out, "output strip image (binary PPM)");

    auto* invert = app.add_subcommand("invert",
                                      "integrate an image back to its generating noise");
    add_config_opt(invert, opt);
    invert->add_option("--checkpoint", opt.checkpoint, "model checkpoint to load");
    invert->add_option("--input", opt.input, "input image (binary PPM)");
    invert->add_option("--prompt", opt.prompt, "caption; empty is unconditional");
    invert->add_option("--steps", opt.steps, "sampler steps (default 30)");
    invert->add_option("--guidance", opt.guidance,
                       "classifier-free guidance scale; 1 disables (default 1)");
    invert->add_option("--out", opt.out, "output noise (raw little-endian f32)");

    auto* inspect = app.add_subcommand("inspect-mask",
                                       "run an edit and dump every token mask it computes");
    add_config_opt(inspect, opt);
    add_sampling_opts(inspect, opt);
    add_edit_opts(inspect, opt);
    inspect->add_option("--out-dir", opt.out_dir, "directory for the mask images");
    inspect->add_option("--out", opt.out, "also write the edited image here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (app.got_subcommand(train)) return rfedit::cli::run_train(opt);
    if (app.got_subcommand(generate)) return rfedit::cli::run_generate(opt);
    if (app.got_subcommand(edit)) return rfedit::cli::run_edit(opt);
    if (app.got_subcommand(sweep)) return rfedit::cli::run_sweep(opt);
    if (app.got_subcommand(invert)) return rfedit::cli::run_invert(opt);
    if (app.got_subcommand(inspect)) return rfedit::cli::run_inspect_mask(opt);
    return 2;
}
