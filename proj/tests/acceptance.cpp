// Acceptance gate: one line per criterion, [PASS]/[FAIL] plus the measured
// values. Exit code is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "rfedit/editor.hpp"
#include "rfedit/flow.hpp"
#include "rfedit/image_io.hpp"
#include "rfedit/model_io.hpp"
#include "rfedit/synth.hpp"
#include "rfedit/trainer.hpp"
#include "test_util.hpp"

using namespace rfedit;

namespace {

int failures = 0;

void report(int idx, bool ok, const std::string& what) {
    std::printf("[%s] criterion %2d: %s\n", ok ? "PASS" : "FAIL", idx, what.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string fmt(const char* pattern, ...) {
    char buf[512];
    va_list args;
    va_start(args, pattern);
    std::vsnprintf(buf, sizeof buf, pattern, args);
    va_end(args);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool bits_equal(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) return false;
    return std::memcmp(a.ptr(), b.ptr(), a.numel() * sizeof(float)) == 0;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.image_size = 4;
    cfg.patch_size = 2;
    cfg.hidden_dim = 8;
    cfg.num_heads = 2;
    cfg.num_blocks = 1;
    cfg.d_pool = 8;
    cfg.d_ctxt = 8;
    cfg.max_text_tokens = 4;
    return cfg;
}

// 1. Orthogonal decomposition over random pairs in several widths.
void criterion_projection() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(101);
    double worst_resid = 0.0, worst_recon = 0.0;
    for (int dim : {2, 64, 256}) {
        for (int i = 0; i < 1000; ++i) {
            Tensor v = Tensor::randn({dim}, rng);
            Tensor b = Tensor::randn({dim}, rng);
            Tensor proj = project_onto(v, b);
            Tensor orth = orthogonal_component(v, b);

            const double denom =
                std::max(static_cast<double>(norm2(v)) * norm2(b), 1e-12);
            worst_resid = std::max(worst_resid, std::fabs(dot_all(orth, b)) / denom);

            double err = 0.0, ref = 0.0;
            for (size_t j = 0; j < v.numel(); ++j) {
                const double d = static_cast<double>(proj.at(j)) + orth.at(j) - v.at(j);
                err += d * d;
                ref += static_cast<double>(v.at(j)) * v.at(j);
            }
            worst_recon = std::max(worst_recon, std::sqrt(err / std::max(ref, 1e-12)));
        }
    }
    const double wall = seconds_since(t0);
    const bool ok = worst_resid < 1e-5 && worst_recon < 1e-6 && wall < 1.0;
    report(1, ok,
           fmt("projection: residual max %.3g (< 1e-05), recon max %.3g (< 1e-06), %.2f s (< 1 s)",
               worst_resid, worst_recon, wall));
}

// 2. Disabled edits reproduce plain generation byte for byte, 10 seeds.
void criterion_identity() {
    const auto t0 = std::chrono::steady_clock::now();
    testutil::TempDir dir;
    Rng init_rng(7);
    Model model = Model::init(ModelConfig{}, init_rng, InitStyle::kAllRandom);
    Schedule sched = Schedule::uniform(8);
    PromptEmbedding prompt = model.encode("a blue circle");

    bool ok = true;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Rng nrng(seed);
        Tensor noise = Tensor::randn({16, 16, 3}, nrng);
        write_ppm(dir.file("plain.ppm"), euler_sample(model, noise, sched, prompt));
        const std::string plain = testutil::read_file_bytes(dir.file("plain.ppm"));

        EditConfig off;
        off.edit_prompt = "red";
        off.lambda_fine = 0.0f;
        off.lambda_coarse = 0.0f;
        write_ppm(dir.file("off.ppm"),
                  edited_generate(model, noise, "a blue circle", off, sched));
        ok = ok && plain == testutil::read_file_bytes(dir.file("off.ppm"));

        EditConfig late;
        late.edit_prompt = "red";
        late.lambda_fine = 8.0f;
        late.lambda_coarse = 0.7f;
        late.start_step = sched.steps;
        write_ppm(dir.file("late.ppm"),
                  edited_generate(model, noise, "a blue circle", late, sched));
        ok = ok && plain == testutil::read_file_bytes(dir.file("late.ppm"));
    }
    const double wall = seconds_since(t0);
    ok = ok && wall < 60.0;
    report(2, ok,
           fmt("identity: 10 seeds, zero-strength and late-start runs byte-identical, "
               "%.1f s (< 60 s)",
               wall));
}

// 3. Rows the mask rejects are bit-copies of the base attention output.
void criterion_mask_exactness() {
    testutil::TempDir dir;
    Rng init_rng(8);
    Model model = Model::init(ModelConfig{}, init_rng, InitStyle::kAllRandom);
    Schedule sched = Schedule::uniform(6);
    Rng nrng(3);
    Tensor noise = Tensor::randn({16, 16, 3}, nrng);

    EditConfig cfg;
    cfg.edit_prompt = "red";
    cfg.lambda_fine = 5.0f;
    EditSession session;
    session.capture_traces = true;
    edited_generate(model, noise, "a blue circle", cfg, sched, 1.0f, &session);

    const size_t expected =
        static_cast<size_t>(sched.steps) * static_cast<size_t>(model.cfg.num_blocks);
    bool ok = session.masks.size() == expected && session.traces.size() == expected;

    size_t zero_rows = 0;
    for (size_t i = 0; ok && i < session.masks.size(); ++i) {
        const auto& m = session.masks[i];
        const auto& t = session.traces[i];
        ok = m.step == t.step && m.block == t.block;
        const int d = t.base.dim(1);
        for (size_t row = 0; ok && row < m.mask.size(); ++row) {
            if (m.mask[row] != 0) continue;
            ++zero_rows;
            ok = std::memcmp(t.base.ptr() + row * d, t.edited.ptr() + row * d,
                             sizeof(float) * static_cast<size_t>(d)) == 0;
        }
    }

    bool files_ok = true;
    const int tps = model.cfg.tokens_per_side();
    for (const auto& m : session.masks) {
        const std::string path = dir.file("m.ppm");
        write_mask_ppm(path, m.mask, tps, tps);
        const std::string bytes = testutil::read_file_bytes(path);
        const size_t header = bytes.find("255\n") + 4;
        for (size_t i = header; i < bytes.size(); ++i) {
            const unsigned char px = static_cast<unsigned char>(bytes[i]);
            files_ok = files_ok && (px == 0 || px == 255);
        }
    }
    report(3, ok && files_ok,
           fmt("mask exactness: %zu step/block records, %zu masked-off rows bit-equal, "
               "mask files are 0/255 only",
               session.masks.size(), zero_rows));
}

// 4. The scalar mask pipeline against hand-derived values.
void criterion_mask_pipeline() {
    Tensor img_q = Tensor::from_values({2, 1}, {2.0f, 0.0f});
    Tensor edit_k = Tensor::from_values({2, 1}, {1.0f, 0.0f});

    // Stages recomputed with the same primitives the mask uses.
    const float s0[] = {2.0f, 0.0f};
    const float s1[] = {0.0f, 0.0f};
    auto sm0 = softmax_vec(s0, 2);
    auto sm1 = softmax_vec(s1, 2);
    std::vector<float> col = {sm0[0], sm1[0]};
    auto normed = minmax_normalize(col);
    const float soft_hi = sigmoid_scalar(10.0f * (normed[0] - 0.5f));
    const float soft_lo = sigmoid_scalar(10.0f * (normed[1] - 0.5f));

    bool ok = std::fabs(sm0[0] - 0.880797f) < 1e-6f;
    ok = ok && std::fabs(soft_hi - 0.993307f) < 1e-6f && std::fabs(soft_lo - 0.006693f) < 1e-6f;
    ok = ok && std::fabs(sigmoid_scalar(5.0f) - 0.993307f) < 1e-6f &&
         std::fabs(sigmoid_scalar(-5.0f) - 0.006693f) < 1e-6f;

    auto mask = attention_mask(img_q, edit_k, 1, 10.0f, 0.5f);
    ok = ok && mask.size() == 2 && mask[0] == 1 && mask[1] == 0;
    report(4, ok,
           fmt("mask pipeline: soft stages %.6f / %.6f match 0.993307 / 0.006693, "
               "binary mask (1,0)",
               soft_hi, soft_lo));
}

// 5. Euler along the straight path's constant field, in double.
void criterion_flow_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(5);
    TensorT<double> x0 = TensorT<double>::randn({4, 4, 3}, rng);
    TensorT<double> c = TensorT<double>::randn({4, 4, 3}, rng);
    auto vel = [&](const TensorT<double>&, double, int) { return c.clone(); };

    double worst = 0.0;
    for (int steps : {1, 2, 30}) {
        Schedule sched = Schedule::uniform(steps);
        TensorT<double> x1 = TensorT<double>::zeros(x0.shape);
        for (size_t i = 0; i < x0.numel(); ++i) x1.at(i) = x0.at(i) + c.at(i);
        TensorT<double> got = integrate<double>(vel, x1.clone(), sched.knots);
        for (size_t i = 0; i < x0.numel(); ++i)
            worst = std::max(worst, std::fabs(got.at(i) - x0.at(i)));
    }

    double worst_rt = 0.0;
    Schedule sched = Schedule::uniform(30);
    TensorT<double> eps = TensorT<double>::randn({4, 4, 3}, rng);
    TensorT<double> down = integrate<double>(vel, eps.clone(), sched.knots);
    TensorT<double> back = integrate<double>(vel, down.clone(), sched.ascending());
    for (size_t i = 0; i < eps.numel(); ++i)
        worst_rt = std::max(worst_rt, std::fabs(back.at(i) - eps.at(i)));

    const double wall = seconds_since(t0);
    const bool ok = worst < 1e-12 && worst_rt < 1e-12 && wall < 1.0;
    report(5, ok,
           fmt("flow oracle: recovery err %.3g, round-trip err %.3g (< 1e-12), %.2f s (< 1 s)",
               worst, worst_rt, wall));
}

// 6. Finite differences against the tape for each layer type and the model.
void criterion_gradients() {
    using DT = TensorT<double>;
    double worst = 0.0, frac = 1.0;
    size_t checked = 0;
    auto merge = [&](const testutil::GradCheckResult& r) {
        worst = std::max(worst, r.worst_rel);
        frac = std::min(frac, r.frac_below_1e3);
        checked += r.checked;
    };

    Rng rng(6);
    {
        DT x = DT::randn({3, 4}, rng, 1.0, true);
        DT w = DT::randn({5, 4}, rng, 1.0, true);
        DT b = DT::randn({5}, rng, 1.0, true);
        DT tgt = DT::randn({3, 5}, rng);
        merge(testutil::gradcheck([&] { return mse(linear(x, w, b), tgt); }, {&x, &w, &b}));
        merge(testutil::gradcheck([&] { return mse(linear(x, w, DT{}), tgt); }, {&x, &w}));
    }
    {
        DT x = DT::randn({4, 6}, rng, 1.0, true);
        DT tgt = DT::randn({4, 6}, rng);
        merge(testutil::gradcheck([&] { return mse(layer_norm(x), tgt); }, {&x}));
        merge(testutil::gradcheck([&] { return mse(silu(x), tgt); }, {&x}));
        merge(testutil::gradcheck([&] { return mse(sigmoid(x), tgt); }, {&x}));
        merge(testutil::gradcheck([&] { return mse(softmax_rows(x), tgt); }, {&x}));
    }
    {
        DT q = DT::randn({6, 8}, rng, 1.0, true);
        DT k = DT::randn({5, 8}, rng, 1.0, true);
        DT v = DT::randn({5, 8}, rng, 1.0, true);
        DT tgt = DT::randn({6, 8}, rng);
        merge(testutil::gradcheck([&] { return mse(multihead_attention(q, k, v, 2), tgt); },
                                  {&q, &k, &v}));
    }
    {
        DT table = DT::randn({7, 5}, rng, 1.0, true);
        DT tgt = DT::randn({5}, rng);
        std::vector<int> ids = {1, 3, 0, 6, 3};
        merge(testutil::gradcheck([&] { return mse(mean_rows(embedding(table, ids)), tgt); },
                                  {&table}));
    }
    {
        auto model = ModelT<double>::init(tiny_config(), rng, InitStyle::kAllRandom);
        DT x0 = DT::randn({4, 4, 3}, rng);
        DT eps = DT::randn({4, 4, 3}, rng);
        auto make_loss = [&] {
            auto prompt = model.encode("a red circle");
            auto v = [&](const DT& xt, double t) { return model.predict_velocity(xt, prompt, t); };
            return cfm_loss_at<double>(v, x0, eps, 0.35);
        };
        auto named = model.named_params();
        std::vector<DT*> params;
        for (auto& [name, t] : named) params.push_back(t);
        merge(testutil::gradcheck(make_loss, params, 6));
    }
    const bool ok = frac >= 0.95 && worst < 1e-2;
    report(6, ok,
           fmt("gradients: %zu coords, %.1f%% under 1e-3 (>= 95%%), worst rel %.3g (< 1e-02)",
               checked, frac * 100.0, worst));
}

// 7. Default-config training run; the model is reused by criteria 8-10.
Model criterion_training() {
    const auto t0 = std::chrono::steady_clock::now();
    ModelConfig mc;
    TrainConfig tc;
    auto corpus = generate_corpus(0, 512);
    Rng init_rng(tc.seed);
    Model model = Model::init(mc, init_rng);
    TrainResult r = train(model, corpus, tc);
    const double wall = seconds_since(t0);

    double head = 0.0, tail = 0.0;
    const bool complete = !r.diverged && r.loss_log.size() == 2000;
    if (complete) {
        for (int i = 0; i < 100; ++i) head += r.loss_log[static_cast<size_t>(i)].second;
        for (int i = 1900; i < 2000; ++i) tail += r.loss_log[static_cast<size_t>(i)].second;
        head /= 100.0;
        tail /= 100.0;
    }
    const double ratio = complete && head > 0.0 ? tail / head : 1.0;
    const bool ok = complete && ratio < 0.5 && wall < 1800.0;
    report(7, ok,
           fmt("training: 2000 steps on 512 samples, loss %.4f -> %.4f, ratio %.3f (< 0.5), "
               "%.0f s (< 1800 s)",
               head, tail, ratio, wall));
    return model;
}

struct SweepResult {
    Tensor reference;
    std::vector<uint8_t> ref_mask;
    std::vector<double> red_means;  // over lambda_fine {0,2,4,6,8}, masking on
    Tensor masked8;
};

// 8. Red response in the object region grows with the fine strength.
SweepResult criterion_edit_efficacy(const Model& model) {
    SweepResult out;
    Schedule sched = Schedule::uniform(30);
    Rng nrng(0);
    Tensor noise = Tensor::randn({16, 16, 3}, nrng);

    out.reference = euler_sample(model, noise, sched, model.encode("blue circle"));
    out.ref_mask = estimate_object_mask(out.reference);
    size_t object_px = 0;
    for (uint8_t m : out.ref_mask) object_px += m;

    const double grid[] = {0.0, 2.0, 4.0, 6.0, 8.0};
    for (double lf : grid) {
        EditConfig cfg;
        cfg.edit_prompt = "red";
        cfg.lambda_fine = static_cast<float>(lf);
        Tensor image = edited_generate(model, noise, "blue circle", cfg, sched);
        if (lf == 8.0) out.masked8 = image.clone();
        out.red_means.push_back(mean_channel_in_mask(image, out.ref_mask, 0));
    }

    int inversions = 0;
    double worst_drop = 0.0;
    for (size_t i = 0; i + 1 < out.red_means.size(); ++i) {
        const double drop = out.red_means[i] - out.red_means[i + 1];
        if (drop > 0.0) {
            ++inversions;
            worst_drop = std::max(worst_drop, drop);
        }
    }
    const double gain = out.red_means.back() - out.red_means.front();
    const bool monotone = inversions == 0 || (inversions == 1 && worst_drop <= 0.01);
    const bool ok = object_px > 0 && monotone && gain >= 0.05;
    report(8, ok,
           fmt("edit efficacy: red means %.3f %.3f %.3f %.3f %.3f over %zu object px, "
               "gain %.3f (>= 0.05), %d inversion(s) max %.4f (<= 0.01)",
               out.red_means[0], out.red_means[1], out.red_means[2], out.red_means[3],
               out.red_means[4], object_px, gain, inversions, worst_drop));
    return out;
}

// 9. Masking keeps background changes small relative to no masking.
void criterion_disentanglement(const Model& model, const SweepResult& sweep) {
    Schedule sched = Schedule::uniform(30);
    Rng nrng(0);
    Tensor noise = Tensor::randn({16, 16, 3}, nrng);

    EditConfig cfg;
    cfg.edit_prompt = "red";
    cfg.lambda_fine = 8.0f;
    cfg.masking = false;
    Tensor unmasked = edited_generate(model, noise, "blue circle", cfg, sched);

    const double bg_on = background_mse(sweep.masked8, sweep.reference, sweep.ref_mask);
    const double bg_off = background_mse(unmasked, sweep.reference, sweep.ref_mask);
    const bool ok = bg_off > 0.0 && bg_on <= 0.5 * bg_off;
    report(9, ok,
           fmt("disentanglement: background mse %.3g masked vs %.3g unmasked, "
               "ratio %.3f (<= 0.5)",
               bg_on, bg_off, bg_off > 0.0 ? bg_on / bg_off : 1.0));
}

// 10. Pooled-condition strength moves the output monotonically.
void criterion_coarse_ablation(const Model& model, const SweepResult& sweep) {
    Schedule sched = Schedule::uniform(30);
    Rng nrng(0);
    Tensor noise = Tensor::randn({16, 16, 3}, nrng);

    std::vector<double> dist;
    Tensor at_zero;
    for (double lc : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        EditConfig cfg;
        cfg.edit_prompt = "red";
        cfg.lambda_fine = 0.0f;
        cfg.lambda_coarse = static_cast<float>(lc);
        cfg.masking = false;
        Tensor image = edited_generate(model, noise, "blue circle", cfg, sched);
        if (lc == 0.0) {
            at_zero = image.clone();
            dist.push_back(0.0);
            continue;
        }
        double acc = 0.0;
        for (size_t i = 0; i < image.numel(); ++i) {
            const double d = static_cast<double>(image.at(i)) - at_zero.at(i);
            acc += d * d;
        }
        dist.push_back(std::sqrt(acc));
    }

    const bool identity = bits_equal(at_zero, sweep.reference);
    bool monotone = true;
    for (size_t i = 0; i + 1 < dist.size(); ++i)
        monotone = monotone && dist[i + 1] >= dist[i] - 1e-3;
    report(10, identity && monotone,
           fmt("coarse ablation: zero point bit-identical %s, distances 0 %.3f %.3f %.3f %.3f "
               "non-decreasing %s",
               identity ? "yes" : "NO", dist[1], dist[2], dist[3], dist[4],
               monotone ? "yes" : "NO"));
}

// 11. File format golden checks.
void criterion_formats() {
    testutil::TempDir dir;

    write_ppm(dir.file("red.ppm"), Tensor::from_values({1, 1, 3}, {1.0f, 0.0f, 0.0f}));
    const std::string red = testutil::read_file_bytes(dir.file("red.ppm"));
    const std::string expect = std::string("P6\n1 1\n255\n") + '\xff' + '\x00' + '\x00';
    const bool ppm_ok = red == expect;

    Rng rng(9);
    Model model = Model::init(tiny_config(), rng, InitStyle::kAllRandom);
    save_model(dir.file("a.ckpt"), model);
    Model loaded = load_model(dir.file("a.ckpt"));
    save_model(dir.file("b.ckpt"), loaded);
    const bool ckpt_ok = testutil::read_file_bytes(dir.file("a.ckpt")) ==
                         testutil::read_file_bytes(dir.file("b.ckpt"));

    std::string corrupt = testutil::read_file_bytes(dir.file("a.ckpt"));
    corrupt[0] = 'X';
    testutil::write_file_bytes(dir.file("c.ckpt"), corrupt);
    bool magic_ok = false;
    try {
        load_checkpoint(dir.file("c.ckpt"));
    } catch (const CheckpointError& e) {
        magic_ok = e.kind == CheckpointError::Kind::kBadMagic;
    }
    report(11, ppm_ok && ckpt_ok && magic_ok,
           fmt("formats: 1x1 red ppm %s, checkpoint save/load/save byte-identical %s, "
               "corrupt magic rejected %s",
               ppm_ok ? "exact" : "WRONG", ckpt_ok ? "yes" : "NO", magic_ok ? "yes" : "NO"));
}

}  // namespace

int main() {
    criterion_projection();
    criterion_identity();
    criterion_mask_exactness();
    criterion_mask_pipeline();
    criterion_flow_oracle();
    criterion_gradients();
    Model trained = criterion_training();
    SweepResult sweep = criterion_edit_efficacy(trained);
    criterion_disentanglement(trained, sweep);
    criterion_coarse_ablation(trained, sweep);
    criterion_formats();

    std::printf("%d of 11 criteria passed\n", 11 - failures);
    return failures;
}
