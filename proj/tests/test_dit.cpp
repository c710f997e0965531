#include <cmath>
#include <string>

#include "doctest.h"
#include "td/adam.hpp"
#include "td/dit.hpp"
#include "td/rng.hpp"

using namespace td;

namespace {

DiTConfig tiny_config(bool conditional = true) {
    DiTConfig cfg;
    cfg.depth = 2;
    cfg.dim = 64;
    cfg.heads = 4;
    cfg.patch = 2;
    cfg.in_channels = conditional ? 8 : 4;
    cfg.latent_h = cfg.latent_w = 8;
    return cfg;
}

float grad_abs_sum(const Tensor& t) {
    float s = 0;
    if (!t.has_grad()) return 0;
    for (float v : const_cast<Tensor&>(t).grad()) s += std::fabs(v);
    return s;
}

}  // namespace

TEST_CASE("concat_condition stacks channels and slices recover the inputs") {
    Tensor z = random_normal({4, 8, 8}, 1);
    Tensor m = random_normal({4, 8, 8}, 2);
    Tensor x = concat_condition(z, m);
    CHECK(x.shape() == Shape{8, 8, 8});
    CHECK(slice(x, 0, 0, 4).vec() == z.vec());
    CHECK(slice(x, 0, 4, 8).vec() == m.vec());

    Tensor bad = random_normal({4, 8, 4}, 3);
    CHECK_THROWS_AS(concat_condition(z, bad), ShapeError);

    Tensor zb = random_normal({2, 4, 8, 8}, 4);
    Tensor mb = random_normal({2, 4, 8, 8}, 5);
    CHECK(concat_condition(zb, mb).shape() == Shape{2, 8, 8, 8});
}

TEST_CASE("patchify: 8x32x32 with p=2 gives 256 tokens of width 32") {
    Tensor u = random_normal({8, 32, 32}, 6);
    Tensor tokens = patchify(u, 2);
    CHECK(tokens.shape() == Shape{256, 32});
    CHECK_THROWS_AS(patchify(random_normal({8, 30, 32}, 1), 4), ShapeError);
}

TEST_CASE("patchify degenerates to one token when p spans the input") {
    Tensor u = random_normal({4, 6, 6}, 7);
    Tensor tokens = patchify(u, 6);
    CHECK(tokens.shape() == Shape{1, 4 * 36});
}

TEST_CASE("unpatchify inverts patchify exactly") {
    Tensor u = random_normal({4, 8, 8}, 8);
    CHECK(unpatchify(patchify(u, 2), 4, 8, 8, 2).vec() == u.vec());
    Tensor ub = random_normal({3, 4, 8, 8}, 9);
    CHECK(unpatchify(patchify(ub, 2), 4, 8, 8, 2).vec() == ub.vec());
}

TEST_CASE("timestep embedding: bounded, deterministic, injective over 1..1000") {
    const int dim = 64, max_t = 1000;
    std::vector<std::vector<float>> embeds(max_t);
    for (int t = 1; t <= max_t; ++t) {
        embeds[t - 1] = timestep_embed(t, dim, max_t);
        for (float v : embeds[t - 1]) {
            CHECK(v >= -1.0f);
            CHECK(v <= 1.0f);
        }
    }
    CHECK(timestep_embed(500, dim, max_t) == embeds[499]);

    // exhaustive pairwise distinctness
    double min_gap = 1e9;
    for (int a = 0; a < max_t; ++a)
        for (int b = a + 1; b < max_t; ++b) {
            float max_diff = 0;
            for (int i = 0; i < dim; ++i)
                max_diff = std::max(max_diff, std::fabs(embeds[a][i] - embeds[b][i]));
            min_gap = std::min(min_gap, static_cast<double>(max_diff));
        }
    CHECK(min_gap > 1e-6);

    CHECK_THROWS_AS(timestep_embed(0, dim, max_t), ValidationError);
    CHECK_THROWS_AS(timestep_embed(1001, dim, max_t), ValidationError);
}

TEST_CASE("freshly initialized block is an exact identity") {
    DiT dit = DiT::init(tiny_config(), 10);
    Tensor tokens = random_normal({16, 64}, 11);
    Tensor cond = random_normal({1, 64}, 12);
    Tensor out = dit.block_apply(0, tokens, cond, 1, 16);
    REQUIRE(out.shape() == tokens.shape());
    for (size_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == tokens.data()[i]);
}

TEST_CASE("block commutes with token permutation (no positional encoding inside)") {
    DiT dit = DiT::init(tiny_config(), 13);
    // give the block non-trivial modulation so it is not the identity
    for (auto& v : dit.params.get("block0.mod.w").vec()) v = 0.05f;
    Tensor tokens = random_normal({16, 64}, 14);
    Tensor cond = random_normal({1, 64}, 15);

    // permutation: reverse token order via slices
    std::vector<Tensor> rev;
    for (size_t i = 0; i < 16; ++i) rev.push_back(slice(tokens, 0, 15 - i, 16 - i));
    Tensor permuted = concat(std::span<const Tensor>(rev), 0);

    Tensor a = dit.block_apply(0, tokens, cond, 1, 16);
    Tensor b = dit.block_apply(0, permuted, cond, 1, 16);
    for (size_t i = 0; i < 16; ++i)
        for (size_t j = 0; j < 64; ++j)
            CHECK(b.data()[(15 - i) * 64 + j] ==
                  doctest::Approx(a.data()[i * 64 + j]).epsilon(1e-4));
}

TEST_CASE("zero-initialized model predicts exactly zero") {
    for (bool conditional : {true, false}) {
        DiT dit = DiT::init(tiny_config(conditional), 16);
        Tensor z = random_normal({4, 8, 8}, 17);
        Tensor m = random_normal({4, 8, 8}, 18);
        Tensor out = dit.predict_noise(z, conditional ? &m : nullptr, 500);
        REQUIRE(out.shape() == Shape{4, 8, 8});
        for (float v : out.vec()) CHECK(v == 0.0f);
    }
}

TEST_CASE("predict_noise output always matches the latent shape") {
    for (int latent : {8, 32, 64}) {
        DiTConfig cfg = tiny_config();
        cfg.latent_h = cfg.latent_w = latent;
        DiT dit = DiT::init(cfg, 19);
        Tensor z = random_normal({4, static_cast<size_t>(latent), static_cast<size_t>(latent)}, 20);
        Tensor m = random_normal(z.shape(), 21);
        CHECK(dit.predict_noise(z, &m, 42).shape() == z.shape());

        Tensor zb = random_normal({3, 4, static_cast<size_t>(latent), static_cast<size_t>(latent)}, 22);
        Tensor mb = random_normal(zb.shape(), 23);
        std::vector<int> t = {1, 500, 1000};
        CHECK(dit.predict_noise(zb, &mb, t).shape() == zb.shape());
    }
}

TEST_CASE("predict_noise validates conditioning and timesteps") {
    DiT cond_model = DiT::init(tiny_config(true), 24);
    DiT uncond_model = DiT::init(tiny_config(false), 25);
    Tensor z = random_normal({4, 8, 8}, 26);
    Tensor m = random_normal({4, 8, 8}, 27);
    CHECK_THROWS_AS(cond_model.predict_noise(z, nullptr, 10), ValidationError);
    CHECK_THROWS_AS(uncond_model.predict_noise(z, &m, 10), ValidationError);
    CHECK_THROWS_AS(cond_model.predict_noise(z, &m, 0), ValidationError);
    Tensor wrong = random_normal({4, 16, 16}, 28);
    CHECK_THROWS_AS(cond_model.predict_noise(wrong, &m, 10), ShapeError);
}

TEST_CASE("deterministic forward pass") {
    DiT dit = DiT::init(tiny_config(), 29);
    for (auto& v : dit.params.get("final.head.w").vec()) v = 0.01f;  // non-zero output
    Tensor z = random_normal({4, 8, 8}, 30);
    Tensor m = random_normal({4, 8, 8}, 31);
    Tensor a = dit.predict_noise(z, &m, 123);
    Tensor b = dit.predict_noise(z, &m, 123);
    CHECK(a.vec() == b.vec());
}

TEST_CASE("gradient flow: every block has nonzero gradient after one optimizer step") {
    DiT dit = DiT::init(tiny_config(), 32);
    Tensor z = random_normal({4, 4, 8, 8}, 33);
    Tensor m = random_normal({4, 4, 8, 8}, 34);
    Tensor target = random_normal({4, 4, 8, 8}, 35);
    std::vector<int> t = {10, 200, 600, 900};

    AdamState state;
    AdamConfig cfg;
    cfg.lr = 1e-2f;
    auto train_step = [&] {
        Tape tape;
        Tensor out = dit.predict_noise(z, &m, t);
        Tensor loss = mse_loss(out, target);
        tape.backward(loss);
    };
    train_step();  // at zero init only the head sees gradient
    adam_step(dit.params.tensors(), state, cfg);
    dit.params.zero_grads();
    train_step();  // now modulation (and thus every block) participates

    for (int layer = 0; layer < dit.cfg.depth; ++layer) {
        float block_total = 0;
        std::string prefix = "block" + std::to_string(layer) + ".";
        for (size_t i = 0; i < dit.params.size(); ++i)
            if (dit.params.names()[i].rfind(prefix, 0) == 0)
                block_total += grad_abs_sum(dit.params.tensors()[i]);
        CHECK(block_total > 0.0f);
    }
    // the modulation projections specifically carry gradient now
    CHECK(grad_abs_sum(dit.params.get("block0.mod.w")) > 0.0f);
}

TEST_CASE("conditioning is live: different masks change the prediction after training") {
    DiT dit = DiT::init(tiny_config(), 36);
    Tensor z = random_normal({2, 4, 8, 8}, 37);
    Tensor m = random_normal({2, 4, 8, 8}, 38);
    Tensor target = random_normal({2, 4, 8, 8}, 39);
    std::vector<int> t = {100, 800};

    AdamState state;
    AdamConfig cfg;
    cfg.lr = 5e-3f;
    for (int step = 0; step < 25; ++step) {
        Tape tape;
        Tensor loss = mse_loss(dit.predict_noise(z, &m, t), target);
        tape.backward(loss);
        adam_step(dit.params.tensors(), state, cfg);
        dit.params.zero_grads();
    }

    Tensor z1 = random_normal({4, 8, 8}, 40);
    Tensor mask_a = random_normal({4, 8, 8}, 41);
    Tensor mask_b = random_normal({4, 8, 8}, 42);
    Tensor out_a = dit.predict_noise(z1, &mask_a, 500);
    Tensor out_b = dit.predict_noise(z1, &mask_b, 500);
    CHECK(out_a.vec() != out_b.vec());
}

TEST_CASE("presets carry the published architecture sizes") {
    DiTConfig paper = dit_preset("paper-256", true);
    CHECK(paper.depth == 12);
    CHECK(paper.dim == 768);
    CHECK(paper.latent_h == 32);
    CHECK(paper.in_channels == 8);
    DiTConfig paper512 = dit_preset("paper-512", false);
    CHECK(paper512.latent_h == 64);
    CHECK(paper512.in_channels == 4);
    DiTConfig desk = dit_preset("desk-64", true);
    CHECK(desk.depth == 4);
    CHECK(desk.dim == 128);
    CHECK(desk.heads == 4);
    CHECK(desk.patch == 2);
    CHECK_THROWS_AS(dit_preset("paper-1024", true), ConfigError);
}
