#include <cstring>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rfedit/editor.hpp"
#include "rfedit/flow.hpp"
#include "rfedit/image_io.hpp"
#include "rfedit/model_io.hpp"
#include "rfedit/synth.hpp"
#include "rfedit/trainer.hpp"

namespace py = pybind11;
using namespace rfedit;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

py::array_t<float> to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<float> arr(shape);
    std::memcpy(arr.mutable_data(), t.ptr(), sizeof(float) * t.numel());
    return arr;
}

Tensor tensor_from_array(const FloatArray& arr) {
    std::vector<int> shape;
    shape.reserve(static_cast<size_t>(arr.ndim()));
    for (py::ssize_t i = 0; i < arr.ndim(); ++i)
        shape.push_back(static_cast<int>(arr.shape(i)));
    Tensor t = Tensor::zeros(shape);
    std::memcpy(t.ptr(), arr.data(), sizeof(float) * t.numel());
    return t;
}

Tensor image_from_array(const Model& model, const FloatArray& arr) {
    Tensor t = tensor_from_array(arr);
    model.check_image_shape(t);
    return t;
}

Tensor initial_noise(const Model& model, uint64_t seed, const std::optional<FloatArray>& init) {
    if (init) return image_from_array(model, *init);
    const auto& c = model.cfg;
    Rng rng(seed);
    return Tensor::randn({c.image_size, c.image_size, c.channels}, rng);
}

EditConfig build_edit_config(const std::string& edit_prompt, double lambda_fine,
                             double lambda_coarse, double tau_m, double boundary, int start_step,
                             bool masking, const std::vector<int>& target_blocks) {
    EditConfig cfg;
    cfg.edit_prompt = edit_prompt;
    cfg.lambda_fine = static_cast<float>(lambda_fine);
    cfg.lambda_coarse = static_cast<float>(lambda_coarse);
    cfg.tau_m = static_cast<float>(tau_m);
    cfg.boundary = static_cast<float>(boundary);
    cfg.start_step = start_step;
    cfg.masking = masking;
    cfg.target_blocks = target_blocks;
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Desk-scale rectified-flow image lab with attention-level editing";
    m.attr("__version__") = "0.1.0";

    py::class_<Model>(m, "Model")
        .def_property_readonly("image_size", [](const Model& md) { return md.cfg.image_size; })
        .def_property_readonly("channels", [](const Model& md) { return md.cfg.channels; })
        .def_property_readonly("hidden_dim", [](const Model& md) { return md.cfg.hidden_dim; })
        .def_property_readonly("num_blocks", [](const Model& md) { return md.cfg.num_blocks; })
        .def_property_readonly("num_heads", [](const Model& md) { return md.cfg.num_heads; })
        .def("save", [](Model& md, const std::string& path) { save_model(path, md); },
             py::arg("path"))
        .def(
            "encode_pool",
            [](const Model& md, const std::string& prompt) {
                return to_array(md.encode(prompt).pool);
            },
            py::arg("prompt"), "Pooled condition vector for a caption.")
        .def(
            "generate",
            [](const Model& md, const std::string& prompt, int steps, uint64_t seed,
               double guidance, const std::optional<FloatArray>& init_noise) {
                Schedule sched = Schedule::uniform(steps);
                Tensor noise = initial_noise(md, seed, init_noise);
                return to_array(euler_sample(md, noise, sched, md.encode(prompt),
                                             static_cast<float>(guidance)));
            },
            py::arg("prompt") = "", py::arg("steps") = 30, py::arg("seed") = 0,
            py::arg("guidance") = 1.0, py::arg("init_noise") = std::nullopt,
            "Sample an image as a float32 [height, width, channels] array.")
        .def(
            "edit",
            [](const Model& md, const std::string& prompt, const std::string& edit_prompt,
               double lambda_fine, double lambda_coarse, double tau_m, double boundary,
               int start_step, bool masking, const std::vector<int>& target_blocks, int steps,
               uint64_t seed, double guidance, const std::optional<FloatArray>& init_noise) {
                EditConfig cfg = build_edit_config(edit_prompt, lambda_fine, lambda_coarse, tau_m,
                                                   boundary, start_step, masking, target_blocks);
                Schedule sched = Schedule::uniform(steps);
                Tensor noise = initial_noise(md, seed, init_noise);
                return to_array(edited_generate(md, noise, prompt, cfg, sched,
                                                static_cast<float>(guidance)));
            },
            py::arg("prompt"), py::arg("edit_prompt"), py::arg("lambda_fine") = 5.0,
            py::arg("lambda_coarse") = 0.5, py::arg("tau_m") = 0.5, py::arg("boundary") = 10.0,
            py::arg("start_step") = 0, py::arg("masking") = true,
            py::arg("target_blocks") = std::vector<int>{}, py::arg("steps") = 30,
            py::arg("seed") = 0, py::arg("guidance") = 1.0,
            py::arg("init_noise") = std::nullopt,
            "Generate with the attention-level edit applied.")
        .def(
            "invert",
            [](const Model& md, const FloatArray& image, const std::string& prompt, int steps,
               double guidance) {
                Schedule sched = Schedule::uniform(steps);
                return to_array(invert(md, image_from_array(md, image), sched, md.encode(prompt),
                                       static_cast<float>(guidance)));
            },
            py::arg("image"), py::arg("prompt") = "", py::arg("steps") = 30,
            py::arg("guidance") = 1.0, "Integrate an image back to its generating noise.")
        .def(
            "train_synthetic",
            [](Model& md, int steps, int corpus_size, uint64_t corpus_seed, int batch_size,
               double lr, double uncond_prob, double grad_clip, uint64_t seed) {
                TrainConfig tc;
                tc.total_steps = steps;
                tc.batch_size = batch_size;
                tc.lr = lr;
                tc.uncond_prob = uncond_prob;
                tc.grad_clip = grad_clip;
                tc.seed = seed;
                auto corpus = generate_corpus(corpus_seed, corpus_size, {}, md.cfg.image_size);
                TrainResult r = train(md, corpus, tc);
                py::dict out;
                out["losses"] = r.loss_log;
                out["diverged"] = r.diverged;
                return out;
            },
            py::arg("steps") = 2000, py::arg("corpus_size") = 512, py::arg("corpus_seed") = 0,
            py::arg("batch_size") = 8, py::arg("lr") = 1e-3, py::arg("uncond_prob") = 0.1,
            py::arg("grad_clip") = 1.0, py::arg("seed") = 0,
            "Train in place on the built-in synthetic corpus; returns the loss log.");

    m.def(
        "init_model",
        [](uint64_t seed, int image_size, int patch_size, int hidden_dim, int heads, int blocks,
           int d_pool, int d_ctxt, int max_text_tokens) {
            ModelConfig cfg;
            cfg.image_size = image_size;
            cfg.patch_size = patch_size;
            cfg.hidden_dim = hidden_dim;
            cfg.num_heads = heads;
            cfg.num_blocks = blocks;
            cfg.d_pool = d_pool;
            cfg.d_ctxt = d_ctxt;
            cfg.max_text_tokens = max_text_tokens;
            cfg.validate();
            Rng rng(seed);
            return Model::init(cfg, rng);
        },
        py::arg("seed") = 0, py::arg("image_size") = 16, py::arg("patch_size") = 2,
        py::arg("hidden_dim") = 64, py::arg("heads") = 4, py::arg("blocks") = 2,
        py::arg("d_pool") = 32, py::arg("d_ctxt") = 32, py::arg("max_text_tokens") = 8,
        "Fresh model with the training-time initialization.");

    m.def("load_model", &load_model, py::arg("path"));

    m.def(
        "write_ppm",
        [](const std::string& path, const FloatArray& image) {
            write_ppm(path, tensor_from_array(image));
        },
        py::arg("path"), py::arg("image"), "Write a [height, width, 3] array as binary PPM.");

    m.def(
        "read_ppm", [](const std::string& path) { return to_array(read_ppm(path)); },
        py::arg("path"), "Read a binary PPM into a float32 array in [0, 1].");

    m.def(
        "object_mask",
        [](const FloatArray& image, double background, double thresh) {
            Tensor t = tensor_from_array(image);
            if (t.ndim() != 3) throw std::invalid_argument("image must be [height, width, channels]");
            auto mask = estimate_object_mask(t, static_cast<float>(background),
                                             static_cast<float>(thresh));
            py::array_t<uint8_t> arr({static_cast<py::ssize_t>(t.dim(0)),
                                      static_cast<py::ssize_t>(t.dim(1))});
            std::memcpy(arr.mutable_data(), mask.data(), mask.size());
            return arr;
        },
        py::arg("image"), py::arg("background") = 0.5, py::arg("thresh") = 0.15,
        "Pixels deviating from the flat background, as a 0/1 uint8 array.");
}
