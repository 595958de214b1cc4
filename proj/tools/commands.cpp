#include "commands.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "rfedit/editor.hpp"
#include "rfedit/flow.hpp"
#include "rfedit/image_io.hpp"
#include "rfedit/model_io.hpp"
#include "rfedit/synth.hpp"
#include "rfedit/trainer.hpp"

namespace rfedit::cli {
namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// Non-finite numbers in a result that was otherwise produced correctly.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Every config-file key the tool understands, across all subcommands. Keys
// mirror flag spellings without the leading dashes.
const std::vector<std::string> kKnownKeys = {
    "checkpoint",   "out",           "out-dir",        "input",
    "init-noise",   "loss-log",      "manifest",       "metrics",
    "prompt",       "edit-prompt",   "preset",         "target-blocks",
    "metric-channel", "lambda-fine-grid", "lambda-coarse-grid", "tau-m-grid",
    "start-step-grid", "steps",      "start-step",     "corpus-size",
    "batch-size",   "image-size",    "patch-size",     "hidden-dim",
    "heads",        "blocks",        "d-pool",         "d-ctxt",
    "max-text-tokens", "seed",       "corpus-seed",    "guidance",
    "lambda-fine",  "lambda-coarse", "tau-m",          "boundary",
    "lr",           "uncond-prob",   "grad-clip",      "no-mask",
};

json load_file_config(const std::optional<std::string>& path) {
    if (!path) return json::object();
    std::ifstream in(*path);
    if (!in) throw std::invalid_argument("cannot open config file: " + *path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("config file is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) throw std::invalid_argument("config file must hold a JSON object");
    for (const auto& item : j.items()) {
        if (std::find(kKnownKeys.begin(), kKnownKeys.end(), item.key()) == kKnownKeys.end())
            throw std::invalid_argument("unknown config key: " + item.key());
    }
    return j;
}

std::optional<std::string> file_str(const json& file, const char* key) {
    auto it = file.find(key);
    if (it == file.end()) return std::nullopt;
    if (!it->is_string()) throw std::invalid_argument(std::string(key) + " must be a string");
    return it->get<std::string>();
}

std::optional<int> file_int(const json& file, const char* key) {
    auto it = file.find(key);
    if (it == file.end()) return std::nullopt;
    if (!it->is_number_integer())
        throw std::invalid_argument(std::string(key) + " must be an integer");
    return static_cast<int>(it->get<int64_t>());
}

std::optional<uint64_t> file_u64(const json& file, const char* key) {
    auto it = file.find(key);
    if (it == file.end()) return std::nullopt;
    if (!it->is_number_integer())
        throw std::invalid_argument(std::string(key) + " must be a nonnegative integer");
    if (!it->is_number_unsigned() && it->get<int64_t>() < 0)
        throw std::invalid_argument(std::string(key) + " must be a nonnegative integer");
    return it->get<uint64_t>();
}

std::optional<double> file_f64(const json& file, const char* key) {
    auto it = file.find(key);
    if (it == file.end()) return std::nullopt;
    if (!it->is_number()) throw std::invalid_argument(std::string(key) + " must be a number");
    return it->get<double>();
}

std::optional<bool> file_bool(const json& file, const char* key) {
    auto it = file.find(key);
    if (it == file.end()) return std::nullopt;
    if (!it->is_boolean()) throw std::invalid_argument(std::string(key) + " must be a boolean");
    return it->get<bool>();
}

// Precedence, lowest to highest: built-in default, config file, preset,
// explicit flag.
std::string resolve_str(const std::optional<std::string>& cli, const json& file, const char* key,
                        const std::string& builtin) {
    if (cli) return *cli;
    if (auto v = file_str(file, key)) return *v;
    return builtin;
}

std::optional<std::string> resolve_opt_str(const std::optional<std::string>& cli, const json& file,
                                           const char* key) {
    if (cli) return cli;
    return file_str(file, key);
}

std::string require_str(const std::optional<std::string>& cli, const json& file, const char* key) {
    auto v = resolve_opt_str(cli, file, key);
    if (!v) throw std::invalid_argument(std::string("missing required --") + key);
    return *v;
}

int resolve_int(const std::optional<int>& cli, const json& file, const char* key, int builtin,
                std::optional<int> preset = std::nullopt) {
    if (cli) return *cli;
    if (preset) return *preset;
    if (auto v = file_int(file, key)) return *v;
    return builtin;
}

uint64_t resolve_u64(const std::optional<uint64_t>& cli, const json& file, const char* key,
                     uint64_t builtin) {
    if (cli) return *cli;
    if (auto v = file_u64(file, key)) return *v;
    return builtin;
}

double resolve_f64(const std::optional<double>& cli, const json& file, const char* key,
                   double builtin, std::optional<double> preset = std::nullopt) {
    if (cli) return *cli;
    if (preset) return *preset;
    if (auto v = file_f64(file, key)) return *v;
    return builtin;
}

bool resolve_flag(bool cli_set, const json& file, const char* key, bool builtin) {
    if (cli_set) return true;
    if (auto v = file_bool(file, key)) return *v;
    return builtin;
}

std::vector<double> parse_number_list(const std::string& text, const std::string& what) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto first = item.find_first_not_of(" \t");
        const auto last = item.find_last_not_of(" \t");
        if (first == std::string::npos)
            throw std::invalid_argument(what + ": empty entry in list");
        item = item.substr(first, last - first + 1);
        size_t used = 0;
        double v = 0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            throw std::invalid_argument(what + ": cannot parse '" + item + "'");
        }
        if (used != item.size())
            throw std::invalid_argument(what + ": cannot parse '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw std::invalid_argument(what + ": list is empty");
    return out;
}

std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
    std::vector<int> out;
    for (double v : parse_number_list(text, what)) {
        if (v != std::floor(v))
            throw std::invalid_argument(what + ": entries must be integers");
        out.push_back(static_cast<int>(v));
    }
    return out;
}

int channel_index(const std::string& name) {
    if (name == "red") return 0;
    if (name == "green") return 1;
    if (name == "blue") return 2;
    throw std::invalid_argument("metric channel must be red, green, or blue");
}

void write_sidecar(const std::string& path, const ordered_json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write " + path);
}

void put_f32_le(std::ostream& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    char b[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                 static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
    out.write(b, 4);
}

float get_f32_le(const unsigned char* p) {
    uint32_t bits = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                    (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
    float v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

void write_f32_raw(const std::string& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (size_t i = 0; i < t.numel(); ++i) put_f32_le(out, t.at(i));
    if (!out) throw std::runtime_error("cannot write " + path);
}

Tensor read_f32_raw(const std::string& path, const std::vector<int>& shape) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    Tensor t = Tensor::zeros(shape);
    if (bytes.size() != t.numel() * 4)
        throw std::invalid_argument(path + " holds " + std::to_string(bytes.size() / 4) +
                                    " floats, expected " + std::to_string(t.numel()));
    for (size_t i = 0; i < t.numel(); ++i) t.at(i) = get_f32_le(bytes.data() + i * 4);
    return t;
}

void check_finite(const Tensor& t, const std::string& what) {
    if (!t.all_finite()) throw NumericError(what + " contains non-finite values");
}

Tensor initial_noise(const Model& model, uint64_t seed, const std::optional<std::string>& path) {
    const auto& c = model.cfg;
    if (path) {
        Tensor t = read_f32_raw(*path, {c.image_size, c.image_size, c.channels});
        check_finite(t, "initial noise");
        return t;
    }
    Rng rng(seed);
    return Tensor::randn({c.image_size, c.image_size, c.channels}, rng);
}

Tensor hstrip(const std::vector<Tensor>& panels) {
    const int h = panels[0].dim(0), w = panels[0].dim(1), c = panels[0].dim(2);
    const int n = static_cast<int>(panels.size());
    Tensor out = Tensor::zeros({h, w * n, c});
    for (int p = 0; p < n; ++p)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ch = 0; ch < c; ++ch)
                    out.at((static_cast<size_t>(y) * w * n + static_cast<size_t>(p) * w + x) * c +
                           ch) = panels[static_cast<size_t>(p)].at(
                        (static_cast<size_t>(y) * w + x) * c + ch);
    return out;
}

int guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const PpmError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    } catch (const CheckpointError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    }
}

// Shared resolution for the editing family (edit, sweep, inspect-mask).
struct EditValues {
    std::string checkpoint;
    std::string prompt;
    std::string edit_prompt;
    std::optional<std::string> preset;
    std::optional<std::string> init_noise;
    double lambda_fine = 5.0;
    double lambda_coarse = 0.5;
    double tau_m = 0.5;
    double boundary = 10.0;
    int start_step = 0;
    int steps = 30;
    uint64_t seed = 0;
    double guidance = 1.0;
    bool no_mask = false;
    std::vector<int> target_blocks;
};

EditValues resolve_edit_values(const Options& opt, const json& file) {
    EditValues v;
    v.checkpoint = require_str(opt.checkpoint, file, "checkpoint");
    v.prompt = require_str(opt.prompt, file, "prompt");
    v.edit_prompt = require_str(opt.edit_prompt, file, "edit-prompt");
    v.preset = resolve_opt_str(opt.preset, file, "preset");
    v.init_noise = resolve_opt_str(opt.init_noise, file, "init-noise");

    std::optional<double> p_lf, p_lc, p_tau;
    std::optional<int> p_start;
    if (v.preset) {
        EditConfig pc;
        apply_preset(pc, *v.preset);
        p_lf = pc.lambda_fine;
        p_lc = pc.lambda_coarse;
        p_tau = pc.tau_m;
        p_start = pc.start_step;
    }

    v.lambda_fine = resolve_f64(opt.lambda_fine, file, "lambda-fine", 5.0, p_lf);
    v.lambda_coarse = resolve_f64(opt.lambda_coarse, file, "lambda-coarse", 0.5, p_lc);
    v.tau_m = resolve_f64(opt.tau_m, file, "tau-m", 0.5, p_tau);
    v.boundary = resolve_f64(opt.boundary, file, "boundary", 10.0);
    v.start_step = resolve_int(opt.start_step, file, "start-step", 0, p_start);
    v.steps = resolve_int(opt.steps, file, "steps", 30);
    v.seed = resolve_u64(opt.seed, file, "seed", 0);
    v.guidance = resolve_f64(opt.guidance, file, "guidance", 1.0);
    v.no_mask = resolve_flag(opt.no_mask, file, "no-mask", false);
    if (auto blocks = resolve_opt_str(opt.target_blocks, file, "target-blocks"))
        v.target_blocks = parse_int_list(*blocks, "--target-blocks");
    return v;
}

EditConfig make_edit_config(const EditValues& v) {
    EditConfig cfg;
    cfg.edit_prompt = v.edit_prompt;
    cfg.lambda_fine = static_cast<float>(v.lambda_fine);
    cfg.lambda_coarse = static_cast<float>(v.lambda_coarse);
    cfg.tau_m = static_cast<float>(v.tau_m);
    cfg.boundary = static_cast<float>(v.boundary);
    cfg.start_step = v.start_step;
    cfg.masking = !v.no_mask;
    cfg.target_blocks = v.target_blocks;
    return cfg;
}

ordered_json edit_sidecar(const char* command, const EditValues& v) {
    ordered_json j;
    j["command"] = command;
    j["checkpoint"] = v.checkpoint;
    j["prompt"] = v.prompt;
    j["edit-prompt"] = v.edit_prompt;
    j["preset"] = v.preset ? ordered_json(*v.preset) : ordered_json(nullptr);
    j["lambda-fine"] = v.lambda_fine;
    j["lambda-coarse"] = v.lambda_coarse;
    j["tau-m"] = v.tau_m;
    j["boundary"] = v.boundary;
    j["start-step"] = v.start_step;
    j["no-mask"] = v.no_mask;
    j["target-blocks"] = v.target_blocks;
    j["steps"] = v.steps;
    j["seed"] = v.seed;
    j["guidance"] = v.guidance;
    j["init-noise"] = v.init_noise ? ordered_json(*v.init_noise) : ordered_json(nullptr);
    return j;
}

}  // namespace

int run_train(const Options& opt) {
    return guarded([&]() -> int {
        const json file = load_file_config(opt.config);

        ModelConfig mc;
        mc.image_size = resolve_int(opt.image_size, file, "image-size", mc.image_size);
        mc.patch_size = resolve_int(opt.patch_size, file, "patch-size", mc.patch_size);
        mc.hidden_dim = resolve_int(opt.hidden_dim, file, "hidden-dim", mc.hidden_dim);
        mc.num_heads = resolve_int(opt.heads, file, "heads", mc.num_heads);
        mc.num_blocks = resolve_int(opt.blocks, file, "blocks", mc.num_blocks);
        mc.d_pool = resolve_int(opt.d_pool, file, "d-pool", mc.d_pool);
        mc.d_ctxt = resolve_int(opt.d_ctxt, file, "d-ctxt", mc.d_ctxt);
        mc.max_text_tokens =
            resolve_int(opt.max_text_tokens, file, "max-text-tokens", mc.max_text_tokens);
        mc.validate();

        TrainConfig tc;
        tc.lr = resolve_f64(opt.lr, file, "lr", tc.lr);
        tc.uncond_prob = resolve_f64(opt.uncond_prob, file, "uncond-prob", tc.uncond_prob);
        tc.grad_clip = resolve_f64(opt.grad_clip, file, "grad-clip", tc.grad_clip);
        tc.batch_size = resolve_int(opt.batch_size, file, "batch-size", tc.batch_size);
        tc.total_steps = resolve_int(opt.steps, file, "steps", tc.total_steps);
        tc.seed = resolve_u64(opt.seed, file, "seed", 0);
        tc.validate();

        const int corpus_size = resolve_int(opt.corpus_size, file, "corpus-size", 512);
        const uint64_t corpus_seed = resolve_u64(opt.corpus_seed, file, "corpus-seed", 0);
        const std::string out = require_str(opt.out, file, "out");
        const std::string loss_log = resolve_str(opt.loss_log, file, "loss-log", out + ".loss.txt");
        const std::string manifest =
            resolve_str(opt.manifest, file, "manifest", out + ".manifest.txt");

        auto corpus = generate_corpus(corpus_seed, corpus_size, {}, mc.image_size);
        Rng init_rng(tc.seed);
        Model model = Model::init(mc, init_rng);

        std::cout << "training " << tc.total_steps << " steps on " << corpus.size()
                  << " samples\n";
        TrainResult result = train(model, corpus, tc, [&](int step, double loss) {
            if (step % 100 == 0 || step == tc.total_steps)
                std::cout << "step " << step << "/" << tc.total_steps << " loss " << std::fixed
                          << std::setprecision(6) << loss << std::defaultfloat << '\n';
        });

        save_model(out, model);
        write_loss_log(loss_log, result.loss_log);
        write_manifest(manifest, corpus);

        ordered_json j;
        j["command"] = "train";
        j["out"] = out;
        j["loss-log"] = loss_log;
        j["manifest"] = manifest;
        j["image-size"] = mc.image_size;
        j["patch-size"] = mc.patch_size;
        j["hidden-dim"] = mc.hidden_dim;
        j["heads"] = mc.num_heads;
        j["blocks"] = mc.num_blocks;
        j["d-pool"] = mc.d_pool;
        j["d-ctxt"] = mc.d_ctxt;
        j["max-text-tokens"] = mc.max_text_tokens;
        j["corpus-size"] = corpus_size;
        j["corpus-seed"] = corpus_seed;
        j["steps"] = tc.total_steps;
        j["batch-size"] = tc.batch_size;
        j["lr"] = tc.lr;
        j["uncond-prob"] = tc.uncond_prob;
        j["grad-clip"] = tc.grad_clip;
        j["seed"] = tc.seed;
        j["diverged"] = result.diverged;
        write_sidecar(out + ".json", j);

        if (result.diverged) {
            std::cerr << "error: training diverged at step " << result.diverged_step
                      << "; checkpoint holds the last finite parameters\n";
            return 3;
        }
        std::cout << "wrote " << out << '\n';
        return 0;
    });
}

int run_generate(const Options& opt) {
    return guarded([&]() -> int {
        const json file = load_file_config(opt.config);
        const std::string ckpt = require_str(opt.checkpoint, file, "checkpoint");
        const std::string out = require_str(opt.out, file, "out");
        const std::string prompt = resolve_str(opt.prompt, file, "prompt", "");
        const int steps = resolve_int(opt.steps, file, "steps", 30);
        const uint64_t seed = resolve_u64(opt.seed, file, "seed", 0);
        const double guidance = resolve_f64(opt.guidance, file, "guidance", 1.0);
        const auto init_noise = resolve_opt_str(opt.init_noise, file, "init-noise");

        Model model = load_model(ckpt);
        Schedule sched = Schedule::uniform(steps);
        Tensor noise = initial_noise(model, seed, init_noise);
        Tensor image =
            euler_sample(model, noise, sched, model.encode(prompt), static_cast<float>(guidance));
        check_finite(image, "generated image");
        write_ppm(out, image);

        ordered_json j;
        j["command"] = "generate";
        j["checkpoint"] = ckpt;
        j["prompt"] = prompt;
        j["steps"] = steps;
        j["seed"] = seed;
        j["guidance"] = guidance;
        j["init-noise"] = init_noise ? ordered_json(*init_noise) : ordered_json(nullptr);
        j["out"] = out;
        write_sidecar(out + ".json", j);
        std::cout << "wrote " << out << '\n';
        return 0;
    });
}

int run_edit(const Options& opt) {
    return guarded([&]() -> int {
        const json file = load_file_config(opt.config);
        const EditValues v = resolve_edit_values(opt, file);
        const std::string out = require_str(opt.out, file, "out");

        Model model = load_model(v.checkpoint);
        EditConfig cfg = make_edit_config(v);
        cfg.validate(model.cfg.num_blocks);
        Schedule sched = Schedule::uniform(v.steps);
        Tensor noise = initial_noise(model, v.seed, v.init_noise);
        Tensor image = edited_generate(model, noise, v.prompt, cfg, sched,
                                       static_cast<float>(v.guidance));
        check_finite(image, "edited image");
        write_ppm(out, image);

        ordered_json j = edit_sidecar("edit", v);
        j["out"] = out;
        write_sidecar(out + ".json", j);
        std::cout << "wrote " << out << '\n';
        return 0;
    });
}

int run_sweep(const Options& opt) {
    return guarded([&]() -> int {
        const json file = load_file_config(opt.config);
        const EditValues v = resolve_edit_values(opt, file);
        const std::string out = require_str(opt.out, file, "out");
        const std::string metrics_path =
            resolve_str(opt.metrics, file, "metrics", out + ".metrics.txt");
        const int channel =
            channel_index(resolve_str(opt.metric_channel, file, "metric-channel", "red"));

        struct Axis {
            const char* name;
            std::optional<std::string> text;
        };
        std::vector<Axis> axes = {
            {"lambda-fine", resolve_opt_str(opt.lambda_fine_grid, file, "lambda-fine-grid")},
            {"lambda-coarse", resolve_opt_str(opt.lambda_coarse_grid, file, "lambda-coarse-grid")},
            {"tau-m", resolve_opt_str(opt.tau_m_grid, file, "tau-m-grid")},
            {"start-step", resolve_opt_str(opt.start_step_grid, file, "start-step-grid")},
        };
        int given = 0;
        const Axis* axis = nullptr;
        for (const auto& a : axes)
            if (a.text) {
                ++given;
                axis = &a;
            }
        if (given != 1)
            throw std::invalid_argument("sweep needs exactly one of --lambda-fine-grid, "
                                        "--lambda-coarse-grid, --tau-m-grid, --start-step-grid");
        const std::string axis_name = axis->name;
        std::vector<double> grid =
            parse_number_list(*axis->text, "--" + axis_name + "-grid");
        if (axis_name == "start-step")
            for (double g : grid)
                if (g != std::floor(g) || g < 0)
                    throw std::invalid_argument(
                        "--start-step-grid entries must be nonnegative integers");

        Model model = load_model(v.checkpoint);
        Schedule sched = Schedule::uniform(v.steps);
        Tensor noise = initial_noise(model, v.seed, v.init_noise);

        // All panel metrics are measured against the unedited generation:
        // the object region is its estimated mask, the background its
        // complement.
        Tensor reference = euler_sample(model, noise, sched, model.encode(v.prompt),
                                        static_cast<float>(v.guidance));
        check_finite(reference, "reference image");
        std::vector<uint8_t> ref_mask = estimate_object_mask(reference);

        std::vector<Tensor> panels;
        std::ostringstream table;
        table << std::setprecision(9);
        for (double g : grid) {
            EditConfig cfg = make_edit_config(v);
            if (axis_name == "lambda-fine")
                cfg.lambda_fine = static_cast<float>(g);
            else if (axis_name == "lambda-coarse")
                cfg.lambda_coarse = static_cast<float>(g);
            else if (axis_name == "tau-m")
                cfg.tau_m = static_cast<float>(g);
            else
                cfg.start_step = static_cast<int>(g);
            cfg.validate(model.cfg.num_blocks);

            Tensor image = edited_generate(model, noise, v.prompt, cfg, sched,
                                           static_cast<float>(v.guidance));
            check_finite(image, "edited image");
            const double in_mean = mean_channel_in_mask(image, ref_mask, channel);
            const double bg = background_mse(image, reference, ref_mask);
            table << g << ' ' << in_mean << ' ' << bg << '\n';
            std::cout << axis_name << "=" << g << " object-mean=" << in_mean
                      << " background-mse=" << bg << '\n';
            panels.push_back(std::move(image));
        }

        write_ppm(out, hstrip(panels));
        std::ofstream mout(metrics_path, std::ios::binary);
        if (!mout) throw std::runtime_error("cannot write " + metrics_path);
        mout << table.str();
        if (!mout) throw std::runtime_error("cannot write " + metrics_path);

        ordered_json j = edit_sidecar("sweep", v);
        j["axis"] = axis_name;
        j["grid"] = grid;
        j["metric-channel"] = channel == 0 ? "red" : channel == 1 ? "green" : "blue";
        j["out"] = out;
        j["metrics"] = metrics_path;
        write_sidecar(out + ".json", j);
        std::cout << "wrote " << out << " and " << metrics_path << '\n';
        return 0;
    });
}

int run_invert(const Options& opt) {
    return guarded([&]() -> int {
        const json file = load_file_config(opt.config);
        const std::string ckpt = require_str(opt.checkpoint, file, "checkpoint");
        const std::string input = require_str(opt.input, file, "input");
        const std::string out = require_str(opt.out, file, "out");
        const std::string prompt = resolve_str(opt.prompt, file, "prompt", "");
        const int steps = resolve_int(opt.steps, file, "steps", 30);
        const double guidance = resolve_f64(opt.guidance, file, "guidance", 1.0);

        Model model = load_model(ckpt);
        Tensor image = read_ppm(input);
        model.check_image_shape(image);
        Schedule sched = Schedule::uniform(steps);
        Tensor noise =
            invert(model, image, sched, model.encode(prompt), static_cast<float>(guidance));
        check_finite(noise, "recovered noise");
        write_f32_raw(out, noise);

        ordered_json j;
        j["command"] = "invert";
        j["checkpoint"] = ckpt;
        j["input"] = input;
        j["prompt"] = prompt;
        j["steps"] = steps;
        j["guidance"] = guidance;
        j["out"] = out;
        j["dtype"] = "f32";
        j["shape"] = noise.shape;
        write_sidecar(out + ".json", j);
        std::cout << "wrote " << out << '\n';
        return 0;
    });
}

int run_inspect_mask(const Options& opt) {
    return guarded([&]() -> int {
        const json file = load_file_config(opt.config);
        const EditValues v = resolve_edit_values(opt, file);
        const std::string out_dir = require_str(opt.out_dir, file, "out-dir");
        if (v.no_mask)
            throw std::invalid_argument("mask inspection requires masking; drop --no-mask");

        Model model = load_model(v.checkpoint);
        EditConfig cfg = make_edit_config(v);
        cfg.validate(model.cfg.num_blocks);
        Schedule sched = Schedule::uniform(v.steps);
        Tensor noise = initial_noise(model, v.seed, v.init_noise);

        EditSession session;
        Tensor image = edited_generate(model, noise, v.prompt, cfg, sched,
                                       static_cast<float>(v.guidance), &session);
        check_finite(image, "edited image");

        std::filesystem::create_directories(out_dir);
        const int tps = model.cfg.tokens_per_side();
        for (const auto& rec : session.masks) {
            std::ostringstream name;
            name << out_dir << "/mask_s" << rec.step << "_b" << rec.block << ".ppm";
            write_mask_ppm(name.str(), rec.mask, tps, tps);
        }
        if (auto img_out = resolve_opt_str(opt.out, file, "out")) write_ppm(*img_out, image);

        ordered_json j = edit_sidecar("inspect-mask", v);
        j["out-dir"] = out_dir;
        j["masks-written"] = session.masks.size();
        write_sidecar(out_dir + "/config.json", j);
        std::cout << "wrote " << session.masks.size() << " masks to " << out_dir << '\n';
        return 0;
    });
}

}  // namespace rfedit::cli
