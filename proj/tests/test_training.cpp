#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "vseg/training.hpp"

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

TrainItem make_item(Rng& rng, int hw) {
    Volume mask3(3, hw, hw);
    for (int z = 0; z < 3; ++z)
        for (int y = hw / 4; y < hw / 2; ++y)
            for (int x = 2; x < hw - 2; ++x) mask3.at(z, y, x) = 1.0;
    TrainItem item{ConditionBlock{}, Tensor({hw, hw}), GraphContext(build_graph(mask3, GridSpec{3, 2, 2}, EdgePolicy{}))};
    item.cond.slices = rng.uniform_tensor({3, hw, hw}, 0.0, 1.0);
    item.cond.center_index = 1;
    for (int y = 0; y < hw; ++y)
        for (int x = 0; x < hw; ++x) item.mask_center[y * hw + x] = mask3.at(1, y, x);
    return item;
}

std::string phantom_manifest() {
    static std::string manifest;
    if (manifest.empty()) {
        PhantomParams p;
        p.seed = 11;
        p.size = 32;
        p.depth = 6;
        p.n_branches = 4;
        std::filesystem::remove_all("/tmp/vseg_train_ds");
        manifest = write_phantom_dataset("/tmp/vseg_train_ds", p, 2);
    }
    return manifest;
}

}  // namespace

TEST_CASE("total_loss: tier A is exactly the denoising term") {
    Rng rng(3);
    auto item = make_item(rng, 16);
    GuidedDiffusionModel model(tiny_cfg(), Tier::A, 5);
    auto sched = make_linear_schedule(10, 1e-3, 0.1);
    Rng noise(7);
    auto terms = total_loss(model, sched, item, 4, noise, 1.0, 1.0);
    CHECK(terms.graph == 0.0);
    CHECK(terms.total == terms.denoising);
}

TEST_CASE("total_loss: additivity against independently computed terms") {
    Rng rng(4);
    auto item = make_item(rng, 16);
    GuidedDiffusionModel model(tiny_cfg(), Tier::ABC, 6);
    auto sched = make_linear_schedule(10, 1e-3, 0.1);

    Rng noise_a(21);
    auto terms = total_loss(model, sched, item, 7, noise_a, 1.0, 1.0);

    // recompute both terms separately with the identical noise draw
    Rng noise_b(21);
    Tensor x0 = mask_to_signal(item.mask_center);
    Tensor eps = noise_b.normal_tensor(x0.shape());
    auto st = forward_sample(x0, 7, eps, sched);
    auto out = model.denoise_step(st.x_t, item.cond, 7, &item.graph);
    double den = denoising_loss(eps, out.eps_hat->value.reshaped(eps.shape()));
    std::vector<std::uint8_t> labels;
    for (const auto& n : item.graph.graph.nodes) labels.push_back(n.label);
    double gl = graph_loss(out.node_probs, labels)->value[0];
    CHECK(std::abs(terms.total - (den + gl)) < 1e-10);
    CHECK(std::abs(terms.denoising - den) < 1e-12);
    CHECK(std::abs(terms.graph - gl) < 1e-12);
}

TEST_CASE("total_loss: perfect predictions reach the floor") {
    // with eps_hat == eps and probabilities equal to the labels, both terms
    // vanish up to the clamp
    Tensor eps({4, 4}, 0.3);
    CHECK(denoising_loss(eps, eps) == 0.0);
    Tensor probs({3});
    probs[0] = 1;
    probs[1] = 0;
    probs[2] = 1;
    std::vector<std::uint8_t> labels{1, 0, 1};
    double total = denoising_loss(eps, eps) + graph_loss(make_constant(probs), labels)->value[0];
    CHECK(total <= 1e-6);
}

TEST_CASE("total_loss: finite-difference gradients of the combined objective") {
    Rng rng(5);
    auto item = make_item(rng, 8);
    GuidedDiffusionModel model(tiny_cfg(), Tier::ABC, 8);
    auto sched = make_linear_schedule(10, 1e-3, 0.1);

    auto eval = [&](bool want_grad) {
        if (want_grad) model.params().zero_grads();
        Rng noise(33);
        LossTerms t = total_loss(model, sched, item, 5, noise, 1.0, 1.0);
        if (!want_grad) model.params().zero_grads();
        return t.total;
    };
    for (const char* pname : {"den.enc0.c1.w", "gc.gat0.a", "cond.stem.w", "gc.head.b"}) {
        Var p = model.params().get(pname);
        model.params().zero_grads();
        Rng noise(33);
        total_loss(model, sched, item, 5, noise, 1.0, 1.0);
        std::int64_t idx = p->value.size() / 3;
        double analytic = p->grad.empty() ? 0.0 : p->grad[idx];
        const double h = 1e-5;
        double keep = p->value[idx];
        p->value[idx] = keep + h;
        double hi = eval(false);
        p->value[idx] = keep - h;
        double lo = eval(false);
        p->value[idx] = keep;
        double fd = (hi - lo) / (2 * h);
        CHECK(std::abs(fd - analytic) / std::max({1e-8, std::abs(fd), std::abs(analytic)}) < 1e-4);
    }
}

TEST_CASE("train: fixed seed reproduces the loss trace bit for bit") {
    auto cases = read_dataset_manifest(phantom_manifest());
    PreprocessOptions pre;
    pre.target_size = 32;
    TrainConfig cfg;
    cfg.model = tiny_cfg();
    cfg.tier = Tier::ABC;
    cfg.node_grid = GridSpec{3, 4, 4};
    cfg.batch_size = 2;
    cfg.max_iters = 6;
    cfg.schedule_T = 20;
    cfg.beta_end = 0.1;
    cfg.seed = 99;
    cfg.log_every = 1;
    auto items = load_train_items(cases, pre, cfg.node_grid, cfg.edge_policy);
    REQUIRE(!items.empty());

    auto r1 = train(cfg, items, "/tmp/vseg_train_run1");
    auto r2 = train(cfg, items, "/tmp/vseg_train_run2");
    REQUIRE(r1.trace.size() == r2.trace.size());
    for (std::size_t i = 0; i < r1.trace.size(); ++i) {
        CHECK(r1.trace[i].total == r2.trace[i].total);
        CHECK(r1.trace[i].denoising == r2.trace[i].denoising);
        CHECK(r1.trace[i].graph == r2.trace[i].graph);
    }
    CHECK(!r1.diverged);
    // checkpoints of identical runs are bit-identical
    auto slurp = [](const std::string& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    };
    CHECK(slurp(r1.checkpoint_path) == slurp(r2.checkpoint_path));
}

TEST_CASE("train: short overfit run reduces the denoising loss") {
    Rng rng(6);
    std::vector<TrainItem> items;
    items.push_back(make_item(rng, 16));
    TrainConfig cfg;
    cfg.model = tiny_cfg();
    cfg.tier = Tier::A;
    cfg.batch_size = 4;
    cfg.max_iters = 220;
    cfg.schedule_T = 25;
    cfg.beta_end = 0.1;
    cfg.lr = 3e-4;
    cfg.seed = 5;
    auto res = train(cfg, items, "/tmp/vseg_train_overfit");
    REQUIRE(!res.diverged);
    double early = 0, late = 0;
    for (int i = 5; i < 15; ++i) early += res.trace[static_cast<std::size_t>(i)].denoising;
    for (int i = cfg.max_iters - 10; i < cfg.max_iters; ++i)
        late += res.trace[static_cast<std::size_t>(i)].denoising;
    CHECK(late < early * 0.7);
}

TEST_CASE("train config round trip") {
    TrainConfig cfg;
    cfg.model = tiny_cfg();
    cfg.tier = Tier::AB;
    cfg.node_grid = GridSpec{3, 16, 16};
    cfg.seed = 1234;
    cfg.graph_loss_weight = 0.5;
    Config c;
    cfg.to_config(c);
    TrainConfig back = TrainConfig::from_config(c);
    CHECK(back.tier == Tier::AB);
    CHECK(back.node_grid.gh == 16);
    CHECK(back.node_grid.gd == 3);
    CHECK(back.seed == 1234);
    CHECK(back.graph_loss_weight == 0.5);
    CHECK(back.model.depths == cfg.model.depths);

    TrainConfig bad;
    bad.lr = -1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
