#include <doctest.h>

#include <cmath>

#include "vseg/model.hpp"

using namespace vseg;

namespace {

ModelConfig tiny_cfg() {
    ModelConfig c;
    c.depths = 3;
    c.base_width = 8;
    c.cond_width = 4;
    c.temb_dim = 16;
    c.gn_groups = 4;
    c.liif_dim = 8;
    c.attn_dim = 8;
    return c;
}

ConditionBlock random_block(Rng& rng, int h, int w) {
    ConditionBlock c;
    c.slices = rng.uniform_tensor({3, h, w}, 0.0, 1.0);
    c.center_index = 1;
    return c;
}

std::vector<Var> zero_feats(const ModelConfig& cfg, int h, int w) {
    std::vector<Var> f;
    for (int k = 0; k < cfg.depths; ++k)
        f.push_back(make_constant(Tensor({cfg.denoiser_width(k), h >> k, w >> k})));
    return f;
}

GraphContext block_graph(Rng& rng, int h, int w, double density = 0.15) {
    Volume m(3, h, w);
    for (std::int64_t i = 0; i < m.size(); ++i) m[i] = rng.uniform() < density ? 1.0 : 0.0;
    return GraphContext(build_graph(m, GridSpec{3, 2, 2}, EdgePolicy{}));
}

double l2(const Tensor& t) {
    double s = 0;
    for (std::int64_t i = 0; i < t.size(); ++i) s += t[i] * t[i];
    return std::sqrt(s);
}

}  // namespace

TEST_CASE("embed_condition: deterministic for fixed inputs") {
    GuidedDiffusionModel model(tiny_cfg(), Tier::AB, 11);
    Rng rng(2);
    ConditionBlock c = random_block(rng, 16, 16);
    auto feats = zero_feats(model.config(), 16, 16);
    auto p1 = model.embed_condition(c, 5, feats);
    auto p2 = model.embed_condition(c, 5, feats);
    REQUIRE(p1.depth() == p2.depth());
    for (int k = 0; k < p1.depth(); ++k)
        for (std::int64_t i = 0; i < p1.levels[k]->value.size(); ++i)
            CHECK(p1.levels[k]->value[i] == p2.levels[k]->value[i]);
}

TEST_CASE("embed_condition: slice order matters through the grouped channels") {
    GuidedDiffusionModel model(tiny_cfg(), Tier::AB, 11);
    Rng rng(3);
    ConditionBlock c = random_block(rng, 16, 16);
    ConditionBlock swapped = c;
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            std::swap(swapped.slices[(0 * 16 + y) * 16 + x], swapped.slices[(2 * 16 + y) * 16 + x]);
        }
    auto feats = zero_feats(model.config(), 16, 16);
    auto pa = model.embed_condition(c, 3, feats);
    auto pb = model.embed_condition(swapped, 3, feats);
    double diff = 0;
    for (std::int64_t i = 0; i < pa.levels[0]->value.size(); ++i)
        diff += std::abs(pa.levels[0]->value[i] - pb.levels[0]->value[i]);
    CHECK(diff > 1e-6);
}

TEST_CASE("embed_condition: zero inputs still produce finite nonzero features") {
    GuidedDiffusionModel model(tiny_cfg(), Tier::AB, 19);
    ConditionBlock c;
    c.slices = Tensor({3, 16, 16});
    auto feats = zero_feats(model.config(), 16, 16);
    auto p = model.embed_condition(c, 7, feats);
    double norm = 0;
    for (int k = 0; k < p.depth(); ++k) {
        CHECK(p.levels[k]->value.all_finite());
        norm += l2(p.levels[k]->value);
    }
    CHECK(norm > 0.0);
}

TEST_CASE("embed_condition: depth mismatch and bad t rejected") {
    GuidedDiffusionModel model(tiny_cfg(), Tier::AB, 4);
    Rng rng(5);
    ConditionBlock c = random_block(rng, 16, 16);
    auto feats = zero_feats(model.config(), 16, 16);
    feats.pop_back();
    CHECK_THROWS_AS(model.embed_condition(c, 3, feats), std::invalid_argument);
    auto ok = zero_feats(model.config(), 16, 16);
    CHECK_THROWS_AS(model.embed_condition(c, 0, ok), std::out_of_range);
}

TEST_CASE("group separation: zeroing slice i zeroes exactly channel group i of the stem") {
    GuidedDiffusionModel model(tiny_cfg(), Tier::AB, 23);
    Rng rng(6);
    ConditionBlock c = random_block(rng, 8, 8);
    Var full = model.encoder().stem(make_constant(c.slices));
    int per_group = full->value.dim(0) / 3;
    std::int64_t plane = 64;
    for (int zeroed = 0; zeroed < 3; ++zeroed) {
        ConditionBlock cz = c;
        for (std::int64_t i = 0; i < plane; ++i) cz.slices[zeroed * plane + i] = 0.0;
        Var out = model.encoder().stem(make_constant(cz.slices));
        for (int g = 0; g < 3; ++g)
            for (int ch = 0; ch < per_group; ++ch)
                for (std::int64_t i = 0; i < plane; ++i) {
                    double v = out->value[(g * per_group + ch) * plane + i];
                    double ref = full->value[(g * per_group + ch) * plane + i];
                    if (g == zeroed) CHECK(v == 0.0);
                    else CHECK(v == ref);
                }
    }
}

TEST_CASE("pyramid alignment: level k is input/2^k") {
    GuidedDiffusionModel model(tiny_cfg(), Tier::AB, 8);
    Rng rng(7);
    ConditionBlock c = random_block(rng, 32, 16);
    auto feats = zero_feats(model.config(), 32, 16);
    auto p = model.embed_condition(c, 2, feats);
    for (int k = 0; k < p.depth(); ++k) {
        CHECK(p.levels[k]->value.dim(1) == 32 >> k);
        CHECK(p.levels[k]->value.dim(2) == 16 >> k);
    }
}

TEST_CASE("denoise_step: output shape matches the central-slice mask") {
    Rng rng(9);
    for (int hw : {16, 64}) {
        GuidedDiffusionModel model(tiny_cfg(), Tier::AB, 31);
        ConditionBlock c = random_block(rng, hw, hw);
        Tensor x_t = rng.normal_tensor({hw, hw});
        auto out = model.denoise_step(x_t, c, 3, nullptr);
        CHECK(out.eps_hat->value.shape() == std::vector<int>{1, hw, hw});
        CHECK(out.eps_hat->value.all_finite());
    }
}

TEST_CASE("denoise_step: channel contract is [noisy mask || 3 CT slices]") {
    GuidedDiffusionModel model(tiny_cfg(), Tier::A, 31);
    Rng rng(10);
    Var bad = make_constant(rng.normal_tensor({3, 8, 8}));
    CHECK_THROWS_AS(model.denoiser().encode(bad, 1), std::invalid_argument);
    // misaligned x_t/condition rejected
    ConditionBlock c = random_block(rng, 8, 8);
    Tensor x_t = rng.normal_tensor({16, 16});
    CHECK_THROWS_AS(model.denoise_step(x_t, c, 1, nullptr), std::invalid_argument);
}

TEST_CASE("denoise_step: graph tier requires a graph") {
    GuidedDiffusionModel model(tiny_cfg(), Tier::ABC, 31);
    Rng rng(11);
    ConditionBlock c = random_block(rng, 8, 8);
    Tensor x_t = rng.normal_tensor({8, 8});
    CHECK_THROWS_AS(model.denoise_step(x_t, c, 1, nullptr), std::invalid_argument);
}

TEST_CASE("denoise_step: fused condition changes the prediction") {
    Rng rng(12);
    ConditionBlock c = random_block(rng, 8, 8);
    Tensor x_t = rng.normal_tensor({8, 8});
    GraphContext ctx = block_graph(rng, 8, 8);

    GuidedDiffusionModel abc(tiny_cfg(), Tier::ABC, 77);
    GuidedDiffusionModel a_only(tiny_cfg(), Tier::A, 77);  // same parameters, component A alone
    // the output head starts at zero; give it weight so path differences reach eps_hat
    for (auto* m : {&abc, &a_only}) {
        Var hw = m->params().get("den.head.w");
        for (std::int64_t i = 0; i < hw->value.size(); ++i) hw->value[i] = 0.05 * (i % 7 - 3);
    }
    auto with_graph = abc.denoise_step(x_t, c, 2, &ctx);
    auto vanilla = a_only.denoise_step(x_t, c, 2, nullptr);
    double diff = 0;
    for (std::int64_t i = 0; i < with_graph.eps_hat->value.size(); ++i)
        diff += std::abs(with_graph.eps_hat->value[i] - vanilla.eps_hat->value[i]);
    CHECK(diff > 1e-6);
}

TEST_CASE("denoise_step: deterministic under fixed parameters and inputs") {
    Rng rng(13);
    ConditionBlock c = random_block(rng, 8, 8);
    Tensor x_t = rng.normal_tensor({8, 8});
    GraphContext ctx = block_graph(rng, 8, 8);
    GuidedDiffusionModel model(tiny_cfg(), Tier::ABC, 99);
    auto o1 = model.denoise_step(x_t, c, 4, &ctx);
    auto o2 = model.denoise_step(x_t, c, 4, &ctx);
    for (std::int64_t i = 0; i < o1.eps_hat->value.size(); ++i)
        CHECK(o1.eps_hat->value[i] == o2.eps_hat->value[i]);
}

TEST_CASE("denoise_step: probe-parameter gradients match finite differences") {
    Rng rng(14);
    ConditionBlock c = random_block(rng, 8, 8);
    Tensor x0 = rng.normal_tensor({8, 8});
    Tensor eps = rng.normal_tensor({8, 8});
    auto sched = make_linear_schedule(10, 1e-3, 0.1);
    Tensor x_t = forward_sample(x0, 6, eps, sched).x_t;
    GraphContext ctx = block_graph(rng, 8, 8);
    GuidedDiffusionModel model(tiny_cfg(), Tier::ABC, 55);

    auto loss_value = [&]() {
        auto out = model.denoise_step(x_t, c, 6, &ctx);
        return mse_loss(out.eps_hat, make_constant(eps.reshaped({1, 8, 8})));
    };
    // probe one weight in each component
    for (const char* pname : {"den.stem.w", "cond.s1.c1.w", "gc.gat0.w.w", "den.fuse.w"}) {
        Var p = model.params().get(pname);
        model.params().zero_grads();
        backward(loss_value());
        std::int64_t idx = p->value.size() / 2;
        double analytic = p->grad.empty() ? 0.0 : p->grad[idx];
        const double h = 1e-5;
        double keep = p->value[idx];
        p->value[idx] = keep + h;
        double hi = loss_value()->value[0];
        p->value[idx] = keep - h;
        double lo = loss_value()->value[0];
        p->value[idx] = keep;
        double fd = (hi - lo) / (2 * h);
        CHECK(std::abs(fd - analytic) / std::max({1e-8, std::abs(fd), std::abs(analytic)}) < 1e-4);
    }
}

TEST_CASE("checkpoint round trip preserves predictions and config") {
    Rng rng(15);
    ConditionBlock c = random_block(rng, 8, 8);
    Tensor x_t = rng.normal_tensor({8, 8});
    GraphContext ctx = block_graph(rng, 8, 8);
    GuidedDiffusionModel model(tiny_cfg(), Tier::ABC, 123);
    auto before = model.denoise_step(x_t, c, 2, &ctx);

    Config extra;
    schedule_to_config(make_linear_schedule(10, 1e-3, 0.1), extra);
    extra.set("run.note", "test");
    save_checkpoint("/tmp/vseg_ckpt.bin", model, extra);
    auto ck = load_checkpoint("/tmp/vseg_ckpt.bin");
    CHECK(ck.config.get_str("run.note", "") == "test");
    CHECK(ck.schedule.T == 10);
    CHECK(ck.model->tier() == Tier::ABC);
    auto after = ck.model->denoise_step(x_t, c, 2, &ctx);
    for (std::int64_t i = 0; i < before.eps_hat->value.size(); ++i)
        CHECK(before.eps_hat->value[i] == after.eps_hat->value[i]);
}

TEST_CASE("denoise_step: all-depth fusion is config-gated and changes the path") {
    Rng rng(21);
    ConditionBlock c = random_block(rng, 16, 16);
    Tensor x_t = rng.normal_tensor({16, 16});
    GraphContext ctx = block_graph(rng, 16, 16);
    ModelConfig cfg = tiny_cfg();
    cfg.fuse_all_depths = true;
    GuidedDiffusionModel deep(cfg, Tier::ABC, 345);
    Var hw = deep.params().get("den.head.w");
    for (std::int64_t i = 0; i < hw->value.size(); ++i) hw->value[i] = 0.04 * (i % 5 - 2);
    auto out = deep.denoise_step(x_t, c, 2, &ctx);
    CHECK(out.eps_hat->value.all_finite());
    CHECK(deep.params().has("den.fusedec0.w"));

    GuidedDiffusionModel flat(tiny_cfg(), Tier::ABC, 345);
    CHECK(!flat.params().has("den.fusedec0.w"));
    Config round;
    cfg.to_config(round);
    CHECK(ModelConfig::from_config(round).fuse_all_depths);
}
