#include <cmath>

#include "doctest.h"
#include "rfedit/editor.hpp"
#include "rfedit/image_io.hpp"
#include "test_util.hpp"

using namespace rfedit;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.image_size = 4;
    cfg.patch_size = 2;
    cfg.hidden_dim = 8;
    cfg.num_heads = 2;
    cfg.num_blocks = 2;
    cfg.d_pool = 8;
    cfg.d_ctxt = 8;
    cfg.max_text_tokens = 4;
    return cfg;
}

AttentionTriple random_triple(Rng& rng, int n = 5, int d = 7) {
    return AttentionTriple{Tensor::randn({n, d}, rng), Tensor::randn({n, d}, rng),
                           Tensor::randn({n, d}, rng)};
}

}  // namespace

TEST_CASE("fine edit with zero strength is bit-equal to base") {
    Rng rng(1);
    auto a = random_triple(rng);
    auto out = fine_edit(a, 0.0f);
    for (size_t i = 0; i < out.numel(); ++i) CHECK(out.at(i) == a.base.at(i));
}

TEST_CASE("fine edit leaves masked-out rows bit-equal to base") {
    Rng rng(2);
    auto a = random_triple(rng);
    std::vector<uint8_t> mask{1, 0, 1, 0, 0};
    auto out = fine_edit(a, 3.0f, &mask);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 7; ++j) {
            const size_t idx = static_cast<size_t>(i) * 7 + j;
            if (mask[static_cast<size_t>(i)] == 0)
                CHECK(out.at(idx) == a.base.at(idx));
            else
                CHECK(out.at(idx) != a.base.at(idx));
        }
}

TEST_CASE("fine edit adds an orthogonalized direction per row") {
    Rng rng(3);
    auto a = random_triple(rng, 4, 6);
    const float lambda = 2.5f;
    auto out = fine_edit(a, lambda);
    for (int i = 0; i < 4; ++i) {
        // recover the added direction and check it against the closed form
        Tensor dir = Tensor::zeros({6});
        Tensor erow = Tensor::zeros({6});
        Tensor prow = Tensor::zeros({6});
        for (int j = 0; j < 6; ++j) {
            const size_t idx = static_cast<size_t>(i) * 6 + j;
            dir.at(static_cast<size_t>(j)) = (out.at(idx) - a.base.at(idx)) / lambda;
            erow.at(static_cast<size_t>(j)) = a.edit.at(idx);
            prow.at(static_cast<size_t>(j)) = a.prior.at(idx);
        }
        auto expect = orthogonal_component(erow, prow);
        for (int j = 0; j < 6; ++j)
            CHECK(dir.at(static_cast<size_t>(j)) ==
                  doctest::Approx(expect.at(static_cast<size_t>(j))).epsilon(1e-4));
        CHECK(std::fabs(dot_all(dir, prow)) / (norm2(dir) * norm2(prow) + 1e-12f) < 1e-5f);
    }
}

TEST_CASE("fine edit handles a zero prior row") {
    Rng rng(4);
    auto a = random_triple(rng, 2, 3);
    for (int j = 0; j < 3; ++j) a.prior.at(static_cast<size_t>(j)) = 0.0f;
    auto out = fine_edit(a, 1.0f);
    // zero prior: the full edit response is added unprojected
    for (int j = 0; j < 3; ++j)
        CHECK(out.at(static_cast<size_t>(j)) ==
              doctest::Approx(a.base.at(static_cast<size_t>(j)) + a.edit.at(static_cast<size_t>(j))));
}

TEST_CASE("attention mask golden pipeline") {
    // image queries 2 and 0, edit keys 1 and 0, single head, unit dim:
    // first-key attention is (0.880797, 0.5) -> minmax (1, 0) ->
    // sigmoid at +-5 is (0.993307, 0.006693) -> mask (1, 0)
    auto q = Tensor::from_values({2, 1}, {2.0f, 0.0f});
    auto k = Tensor::from_values({2, 1}, {1.0f, 0.0f});
    auto mask = attention_mask(q, k, 1, 10.0f, 0.5f);
    REQUIRE(mask.size() == 2);
    CHECK(mask[0] == 1);
    CHECK(mask[1] == 0);
}

TEST_CASE("attention mask with a single key degenerates to a constant map") {
    // softmax over one key is 1 for every query and head; the constant map
    // minmax-normalizes to all zeros and thresholds to all zero
    auto q = Tensor::from_values({2, 2}, {2.0f, 0.0f, 0.0f, 2.0f});
    auto k = Tensor::from_values({1, 2}, {1.0f, 1.0f});
    auto mask = attention_mask(q, k, 2, 10.0f, 0.5f);
    CHECK(mask[0] == 0);
    CHECK(mask[1] == 0);
}

TEST_CASE("attention mask threshold sweeps from all-pass to all-block") {
    Rng rng(5);
    auto q = Tensor::randn({6, 4}, rng);
    auto k = Tensor::randn({2, 4}, rng);
    auto lo = attention_mask(q, k, 2, 10.0f, 0.0f);
    for (auto m : lo) CHECK(m == 1);
    // sigmoid output never reaches 1.0 exactly, so tau=1 blocks everything
    auto hi = attention_mask(q, k, 2, 10.0f, 1.0f);
    for (auto m : hi) CHECK(m == 0);
}

TEST_CASE("coarse edit frozen algebra") {
    auto c = Tensor::from_values({2}, {1.0f, 0.0f});
    auto e = Tensor::from_values({2}, {1.0f, 1.0f});
    // direction = e - proj_c(e) = (0,1); at lambda=0.5: 0.5*c + 0.5*dir
    auto mid = coarse_edit(c, e, 0.5f);
    CHECK(mid.at(0) == doctest::Approx(0.5f));
    CHECK(mid.at(1) == doctest::Approx(0.5f));
    auto full = coarse_edit(c, e, 1.0f);
    CHECK(full.at(0) == doctest::Approx(0.0f));
    CHECK(full.at(1) == doctest::Approx(1.0f));
}

TEST_CASE("coarse edit at zero strength is bit-equal to the base pool") {
    Rng rng(6);
    auto c = Tensor::randn({8}, rng);
    auto e = Tensor::randn({8}, rng);
    auto out = coarse_edit(c, e, 0.0f);
    for (size_t i = 0; i < c.numel(); ++i) CHECK(out.at(i) == c.at(i));
}

TEST_CASE("coarse edit against a zero base keeps the raw edit pool") {
    auto c = Tensor::zeros({3});
    auto e = Tensor::from_values({3}, {0.5f, -1.0f, 2.0f});
    auto out = coarse_edit(c, e, 0.75f);
    for (size_t i = 0; i < 3; ++i) CHECK(out.at(i) == doctest::Approx(0.75f * e.at(i)));
}

TEST_CASE("edit config validation") {
    EditConfig cfg;
    cfg.lambda_coarse = 1.5f;
    CHECK_THROWS_AS(cfg.validate(2), std::invalid_argument);
    cfg = EditConfig{};
    cfg.tau_m = -0.1f;
    CHECK_THROWS_AS(cfg.validate(2), std::invalid_argument);
    cfg = EditConfig{};
    cfg.start_step = -1;
    CHECK_THROWS_AS(cfg.validate(2), std::invalid_argument);
    cfg = EditConfig{};
    cfg.target_blocks = {2};
    CHECK_THROWS_AS(cfg.validate(2), std::invalid_argument);
    cfg.target_blocks = {0, 1};
    CHECK_NOTHROW(cfg.validate(2));
}

TEST_CASE("presets pin the reference hyperparameters") {
    EditConfig cfg;
    apply_preset(cfg, "eyeglasses");
    CHECK(cfg.lambda_coarse == 0.8f);
    CHECK(cfg.lambda_fine == 5.0f);
    CHECK(cfg.tau_m == 0.5f);
    CHECK(cfg.start_step == 3);
    apply_preset(cfg, "smile");
    CHECK(cfg.lambda_coarse == 0.5f);
    CHECK(cfg.lambda_fine == 8.0f);
    CHECK(cfg.start_step == 5);
    CHECK_THROWS_AS(apply_preset(cfg, "hats"), std::invalid_argument);
}

TEST_CASE("disabled edit reproduces plain generation byte for byte") {
    testutil::TempDir dir;
    Rng rng(7);
    auto model = Model::init(tiny_config(), rng, InitStyle::kAllRandom);
    auto sched = Schedule::uniform(4);

    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        Rng noise_rng(seed);
        auto noise = Tensor::randn({4, 4, 3}, noise_rng);
        auto plain = euler_sample(model, noise, sched, model.encode("red circle"));

        EditConfig cfg;
        cfg.edit_prompt = "blue";
        cfg.lambda_fine = 0.0f;
        cfg.lambda_coarse = 0.0f;
        auto edited = edited_generate(model, noise, "red circle", cfg, sched);

        const auto p1 = dir.file("plain_" + std::to_string(seed) + ".ppm");
        const auto p2 = dir.file("edited_" + std::to_string(seed) + ".ppm");
        write_ppm(p1, plain);
        write_ppm(p2, edited);
        CHECK(testutil::read_file_bytes(p1) == testutil::read_file_bytes(p2));

        // float-level identity, stronger than the quantized bytes
        for (size_t i = 0; i < plain.numel(); ++i) CHECK(plain.at(i) == edited.at(i));
    }
}

TEST_CASE("start step at or past the step count disables the edit") {
    Rng rng(8);
    auto model = Model::init(tiny_config(), rng, InitStyle::kAllRandom);
    auto sched = Schedule::uniform(3);
    Rng noise_rng(5);
    auto noise = Tensor::randn({4, 4, 3}, noise_rng);
    auto plain = euler_sample(model, noise, sched, model.encode("red"));

    for (int start : {3, 10}) {
        EditConfig cfg;
        cfg.edit_prompt = "blue";
        cfg.lambda_fine = 4.0f;
        cfg.lambda_coarse = 0.9f;
        cfg.start_step = start;
        EditSession session;
        auto edited = edited_generate(model, noise, "red", cfg, sched, 1.0f, &session);
        CHECK(session.masks.empty());
        for (size_t i = 0; i < plain.numel(); ++i) CHECK(plain.at(i) == edited.at(i));
    }
}

TEST_CASE("an active edit changes the output") {
    Rng rng(9);
    auto model = Model::init(tiny_config(), rng, InitStyle::kAllRandom);
    auto sched = Schedule::uniform(4);
    Rng noise_rng(6);
    auto noise = Tensor::randn({4, 4, 3}, noise_rng);
    auto plain = euler_sample(model, noise, sched, model.encode("red circle"));

    EditConfig cfg;
    cfg.edit_prompt = "blue";
    cfg.lambda_fine = 5.0f;
    cfg.masking = false;
    auto edited = edited_generate(model, noise, "red circle", cfg, sched);
    bool differs = false;
    for (size_t i = 0; i < plain.numel(); ++i)
        if (plain.at(i) != edited.at(i)) differs = true;
    CHECK(differs);
}

TEST_CASE("sessions record one mask per edited step and targeted block") {
    Rng rng(10);
    auto model = Model::init(tiny_config(), rng, InitStyle::kAllRandom);
    auto sched = Schedule::uniform(5);
    Rng noise_rng(7);
    auto noise = Tensor::randn({4, 4, 3}, noise_rng);

    EditConfig cfg;
    cfg.edit_prompt = "blue";
    cfg.lambda_fine = 2.0f;
    cfg.start_step = 2;
    cfg.target_blocks = {1};
    EditSession session;
    edited_generate(model, noise, "red", cfg, sched, 1.0f, &session);
    // steps 2,3,4 edited, one targeted block
    REQUIRE(session.masks.size() == 3);
    for (size_t i = 0; i < session.masks.size(); ++i) {
        CHECK(session.masks[i].step == static_cast<int>(i) + 2);
        CHECK(session.masks[i].block == 1);
        CHECK(session.masks[i].mask.size() == 4);
        for (auto m : session.masks[i].mask) CHECK((m == 0 || m == 1));
    }
}

TEST_CASE("masked-out token rows keep the base attention output bitwise") {
    Rng rng(11);
    auto model = Model::init(tiny_config(), rng, InitStyle::kAllRandom);
    auto sched = Schedule::uniform(4);
    Rng noise_rng(8);
    auto noise = Tensor::randn({4, 4, 3}, noise_rng);

    EditConfig cfg;
    cfg.edit_prompt = "blue";
    cfg.lambda_fine = 6.0f;
    EditSession session;
    session.capture_traces = true;
    edited_generate(model, noise, "red", cfg, sched, 1.0f, &session);

    REQUIRE(session.masks.size() == session.traces.size());
    REQUIRE(!session.masks.empty());
    size_t zero_rows = 0;
    for (size_t r = 0; r < session.masks.size(); ++r) {
        const auto& mask = session.masks[r].mask;
        const auto& tr = session.traces[r];
        CHECK(session.masks[r].step == tr.step);
        CHECK(session.masks[r].block == tr.block);
        const int d = tr.base.dim(1);
        for (size_t i = 0; i < mask.size(); ++i) {
            if (mask[i] != 0) continue;
            ++zero_rows;
            for (int j = 0; j < d; ++j)
                CHECK(tr.edited.at(i * static_cast<size_t>(d) + j) ==
                      tr.base.at(i * static_cast<size_t>(d) + j));
        }
    }
    INFO("masked-out rows seen: ", zero_rows);
    CHECK(zero_rows > 0);
}

TEST_CASE("disabling masking equals an all-ones mask") {
    Rng rng(12);
    auto a = random_triple(rng, 3, 4);
    std::vector<uint8_t> ones{1, 1, 1};
    auto with_mask = fine_edit(a, 2.0f, &ones);
    auto no_mask = fine_edit(a, 2.0f, nullptr);
    for (size_t i = 0; i < with_mask.numel(); ++i) CHECK(with_mask.at(i) == no_mask.at(i));
}
