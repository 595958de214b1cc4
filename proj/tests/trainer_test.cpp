#include <cmath>
#include <sstream>

#include "doctest.h"
#include "rfedit/model_io.hpp"
#include "rfedit/trainer.hpp"
#include "test_util.hpp"

using namespace rfedit;

namespace {

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

// shapes that fit a 4px canvas
JitterRanges tiny_jitter() { return JitterRanges{1, 2, 1, 1}; }

}  // namespace

TEST_CASE("adam first step matches the bias-corrected closed form") {
    auto p = Tensor::from_values({1}, {1.0f});
    p.requires_grad = true;
    p.ensure_grad();
    (*p.grad)[0] = 1.0f;
    std::vector<Tensor*> params{&p};
    AdamState state;
    TrainConfig cfg;
    cfg.lr = 0.1;
    adam_step(params, state, cfg);
    // mhat = vhat = 1 on step one, so the update is lr/(1+eps)
    CHECK(p.at(0) == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-6));
    CHECK(state.step == 1);
}

TEST_CASE("adam converges on a quadratic") {
    auto p = Tensor::from_values({1}, {5.0f});
    p.requires_grad = true;
    p.ensure_grad();
    std::vector<Tensor*> params{&p};
    AdamState state;
    TrainConfig cfg;
    cfg.lr = 0.1;
    auto target = Tensor::from_values({1}, {3.0f});
    for (int i = 0; i < 500; ++i) {
        p.zero_grad();
        auto loss = mse(p, target);
        backward(loss);
        adam_step(params, state, cfg);
    }
    CHECK(p.at(0) == doctest::Approx(3.0f).epsilon(1e-3));
}

TEST_CASE("gradient clipping rescales to the requested norm") {
    auto a = Tensor::zeros({2}, true);
    auto b = Tensor::zeros({1}, true);
    (*a.grad)[0] = 3.0f;
    (*a.grad)[1] = 0.0f;
    (*b.grad)[0] = 4.0f;
    std::vector<Tensor*> params{&a, &b};
    const double pre = clip_grad_norm(params, 1.0);
    CHECK(pre == doctest::Approx(5.0));
    CHECK((*a.grad)[0] == doctest::Approx(0.6f));
    CHECK((*b.grad)[0] == doctest::Approx(0.8f));

    // below the limit nothing changes
    (*a.grad)[0] = 0.1f;
    (*a.grad)[1] = 0.0f;
    (*b.grad)[0] = 0.0f;
    clip_grad_norm(params, 1.0);
    CHECK((*a.grad)[0] == 0.1f);

    // zero disables clipping
    (*a.grad)[0] = 100.0f;
    clip_grad_norm(params, 0.0);
    CHECK((*a.grad)[0] == 100.0f);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.uncond_prob = 1.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("training runs deterministically and reduces loss on a tiny setup") {
    auto corpus = generate_corpus(0, 12, tiny_jitter(), 4);
    TrainConfig tcfg;
    tcfg.total_steps = 60;
    tcfg.batch_size = 4;
    tcfg.lr = 5e-3;
    tcfg.seed = 0;

    Rng r1(0), r2(0);
    auto m1 = Model::init(tiny_config(), r1);
    auto m2 = Model::init(tiny_config(), r2);
    auto res1 = train(m1, corpus, tcfg);
    auto res2 = train(m2, corpus, tcfg);

    CHECK(!res1.diverged);
    REQUIRE(res1.loss_log.size() == 60);
    CHECK(res1.loss_log.front().first == 1);
    CHECK(res1.loss_log.back().first == 60);
    for (auto& [step, loss] : res1.loss_log) CHECK(std::isfinite(loss));

    // bit-identical across runs with the same seed
    auto p1 = m1.named_params(), p2 = m2.named_params();
    for (size_t i = 0; i < p1.size(); ++i) CHECK(*p1[i].second->data == *p2[i].second->data);
    for (size_t i = 0; i < res1.loss_log.size(); ++i)
        CHECK(res1.loss_log[i].second == res2.loss_log[i].second);

    // averaged loss moves down on this easy corpus
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 10; ++i) {
        head += res1.loss_log[static_cast<size_t>(i)].second;
        tail += res1.loss_log[res1.loss_log.size() - 1 - static_cast<size_t>(i)].second;
    }
    CHECK(tail < head);
}

TEST_CASE("zero training steps leave the initialization untouched") {
    auto corpus = generate_corpus(0, 6, tiny_jitter(), 4);
    Rng r1(3), r2(3);
    auto m1 = Model::init(tiny_config(), r1);
    auto m2 = Model::init(tiny_config(), r2);
    TrainConfig tcfg;
    tcfg.total_steps = 0;
    auto res = train(m1, corpus, tcfg);
    CHECK(res.loss_log.empty());
    auto p1 = m1.named_params(), p2 = m2.named_params();
    for (size_t i = 0; i < p1.size(); ++i) CHECK(*p1[i].second->data == *p2[i].second->data);
}

TEST_CASE("divergence is detected and reported") {
    auto corpus = generate_corpus(0, 6, tiny_jitter(), 4);
    Rng rng(1);
    auto model = Model::init(tiny_config(), rng);
    TrainConfig tcfg;
    tcfg.lr = 1e18;  // adam caps the step size at lr, so weights blow up fast
    tcfg.grad_clip = 0.0;
    tcfg.total_steps = 50;
    auto res = train(model, corpus, tcfg);
    CHECK(res.diverged);
    CHECK(res.diverged_step >= 1);
    // the log only contains finite losses
    for (auto& [step, loss] : res.loss_log) CHECK(std::isfinite(loss));
    CHECK(res.loss_log.size() == static_cast<size_t>(res.diverged_step) - 1);
}

TEST_CASE("train rejects empty and mismatched corpora") {
    Rng rng(1);
    auto model = Model::init(tiny_config(), rng);
    TrainConfig tcfg;
    CHECK_THROWS_AS(train(model, {}, tcfg), std::invalid_argument);
    auto corpus16 = generate_corpus(0, 3);  // 16px images against a 4px model
    CHECK_THROWS_AS(train(model, corpus16, tcfg), std::invalid_argument);
}

TEST_CASE("loss log format is step space loss") {
    testutil::TempDir dir;
    const std::string path = dir.file("loss.txt");
    write_loss_log(path, {{1, 0.5}, {2, 0.25}});
    auto text = testutil::read_file_bytes(path);
    std::istringstream is(text);
    int step;
    double loss;
    is >> step >> loss;
    CHECK(step == 1);
    CHECK(loss == doctest::Approx(0.5));
    is >> step >> loss;
    CHECK(step == 2);
    CHECK(loss == doctest::Approx(0.25));
}
