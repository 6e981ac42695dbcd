#include "vseg/training.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

namespace vseg {

void TrainConfig::validate() const {
    if (lr <= 0 || batch_size <= 0 || max_iters <= 0 || schedule_T < 1)
        throw std::invalid_argument("train config: numeric fields must be positive");
    if (weight_decay < 0 || graph_loss_weight < 0)
        throw std::invalid_argument("train config: negative weight");
}

void TrainConfig::to_config(Config& c) const {
    c.set_double("train.lr", lr);
    c.set_int("train.batch_size", batch_size);
    c.set_int("train.max_iters", max_iters);
    c.set("train.seed", std::to_string(seed));
    c.set("train.tier", tier_name(tier));
    c.set("train.node_grid", std::to_string(node_grid.gh) + "x" + std::to_string(node_grid.gw) +
                                 "x" + std::to_string(node_grid.gd));
    c.set_int("schedule.T", schedule_T);
    c.set_double("schedule.beta_start", beta_start);
    c.set_double("schedule.beta_end", beta_end);
    c.set_double("train.weight_decay", weight_decay);
    c.set_double("train.graph_loss_weight", graph_loss_weight);
    c.set_int("train.checkpoint_every", checkpoint_every);
    c.set_int("train.log_every", log_every);
    c.set_double("train.edge_background_speed", edge_policy.background_speed);
    c.set_double("train.edge_tau_factor", edge_policy.tau_factor);
    model.to_config(c);
}

TrainConfig TrainConfig::from_config(const Config& c) {
    TrainConfig t;
    t.lr = c.get_double("train.lr", t.lr);
    t.batch_size = c.get_int("train.batch_size", t.batch_size);
    t.max_iters = c.get_int("train.max_iters", t.max_iters);
    t.seed = std::stoull(c.get_str("train.seed", "0"));
    t.tier = parse_tier(c.get_str("train.tier", "ABC"));
    t.node_grid = parse_grid(c.get_str("train.node_grid", "32x32x3"));
    t.schedule_T = c.get_int("schedule.T", t.schedule_T);
    t.beta_start = c.get_double("schedule.beta_start", t.beta_start);
    t.beta_end = c.get_double("schedule.beta_end", t.beta_end);
    t.weight_decay = c.get_double("train.weight_decay", t.weight_decay);
    t.graph_loss_weight = c.get_double("train.graph_loss_weight", t.graph_loss_weight);
    t.checkpoint_every = c.get_int("train.checkpoint_every", t.checkpoint_every);
    t.log_every = c.get_int("train.log_every", t.log_every);
    t.edge_policy.background_speed = c.get_double("train.edge_background_speed", 1e-3);
    t.edge_policy.tau_factor = c.get_double("train.edge_tau_factor", 3.0);
    t.model = ModelConfig::from_config(c);
    t.validate();
    return t;
}

std::vector<TrainItem> load_train_items(const std::vector<DatasetCase>& cases,
                                        const PreprocessOptions& pre, const GridSpec& node_grid,
                                        const EdgePolicy& policy) {
    std::vector<TrainItem> items;
    for (const auto& c : cases) {
        Volume ct = io::read_nifti(c.ct_path);
        Volume mask = io::read_nifti(c.mask_path);
        Volume liver(ct.nz(), ct.ny(), ct.nx(), 1.0);  // phantoms: whole volume
        liver.spacing = ct.spacing;
        auto prep = preprocess_case(ct, liver, &mask, pre);
        for (int s = 1; s <= prep.ct.nz() - 2; ++s) {
            Tensor block = mask_block_at(prep.vessel, s);
            Volume block_vol(3, prep.ct.ny(), prep.ct.nx());
            block_vol.spacing = prep.ct.spacing;
            for (std::int64_t i = 0; i < block_vol.size(); ++i) block_vol[i] = block[i];
            TrainItem item{condition_block_at(prep.ct, s), central_mask_at(prep.vessel, s),
                           GraphContext(build_graph(block_vol, node_grid, policy))};
            items.push_back(std::move(item));
        }
    }
    return items;
}

LossTerms total_loss(const GuidedDiffusionModel& model, const NoiseSchedule& sched,
                     const TrainItem& item, int t, Rng& rng, double graph_weight,
                     double grad_scale) {
    Tensor x0 = mask_to_signal(item.mask_center);
    Tensor eps = rng.normal_tensor(x0.shape());
    NoisyState st = forward_sample(x0, t, eps, sched);

    const GraphContext* ctx = model.tier() == Tier::ABC ? &item.graph : nullptr;
    auto out = model.denoise_step(st.x_t, item.cond, t, ctx);

    Var den = mse_loss(out.eps_hat,
                       make_constant(eps.reshaped({1, eps.dim(0), eps.dim(1)})));
    LossTerms terms;
    terms.denoising = den->value[0];
    Var total = den;
    if (model.tier() == Tier::ABC) {
        std::vector<std::uint8_t> labels;
        labels.reserve(static_cast<std::size_t>(item.graph.graph.n_nodes()));
        for (const auto& n : item.graph.graph.nodes) labels.push_back(n.label);
        Var gl = graph_loss(out.node_probs, labels);
        terms.graph = gl->value[0];
        total = add(total, scale(gl, graph_weight));
    }
    terms.total = total->value[0];
    if (!std::isfinite(terms.denoising) || !std::isfinite(terms.graph))
        throw std::runtime_error("total_loss: non-finite loss term");
    backward(scale(total, grad_scale));
    return terms;
}

TrainResult train(const TrainConfig& cfg, const std::vector<TrainItem>& dataset,
                  const std::string& out_dir, const TrainLogger& logger) {
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    std::filesystem::create_directories(out_dir);

    GuidedDiffusionModel model(cfg.model, cfg.tier, cfg.seed);
    NoiseSchedule sched = make_linear_schedule(cfg.schedule_T, cfg.beta_start, cfg.beta_end);
    nn::AdamW opt(model.params().vars(), cfg.lr, cfg.weight_decay);

    Rng run_rng(cfg.seed);
    Rng batch_rng = run_rng.fork(11);
    Rng noise_rng = run_rng.fork(12);

    TrainResult res;
    res.trace.reserve(static_cast<std::size_t>(cfg.max_iters));
    double initial_loss = 0.0;
    int initial_count = 0;
    int over_count = 0;

    Config ck_cfg;
    cfg.to_config(ck_cfg);

    auto save = [&](const std::string& name) {
        std::string path = out_dir + "/" + name;
        save_checkpoint(path, model, ck_cfg);
        return path;
    };

    for (int iter = 0; iter < cfg.max_iters; ++iter) {
        opt.zero_grad();
        LossTerms batch{};
        bool skipped = false;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const TrainItem& item =
                dataset[static_cast<std::size_t>(batch_rng.uniform_int(0, static_cast<int>(dataset.size()) - 1))];
            int t = batch_rng.uniform_int(1, sched.T);
            try {
                LossTerms lt = total_loss(model, sched, item, t, noise_rng,
                                          cfg.graph_loss_weight, 1.0 / cfg.batch_size);
                batch.total += lt.total / cfg.batch_size;
                batch.denoising += lt.denoising / cfg.batch_size;
                batch.graph += lt.graph / cfg.batch_size;
            } catch (const std::runtime_error& e) {
                std::cerr << "iter " << iter << " batch " << b << ": " << e.what()
                          << " (step aborted)\n";
                skipped = true;
                break;
            }
        }
        if (!skipped) opt.step();
        res.trace.push_back(batch);
        if (logger && (iter % cfg.log_every == 0 || iter + 1 == cfg.max_iters)) logger(iter, batch);

        if (initial_count < 10) {
            initial_loss += batch.total;
            ++initial_count;
        } else {
            double baseline = initial_loss / initial_count;
            over_count = batch.total > 10.0 * baseline ? over_count + 1 : 0;
            if (over_count >= 100) {
                std::cerr << "divergence: loss " << batch.total << " > 10x initial " << baseline
                          << " for 100 consecutive steps at iter " << iter << "\n";
                res.diverged = true;
                res.checkpoint_path = save("diverged.ckpt");
                return res;
            }
        }
        if (cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0)
            save("iter_" + std::to_string(iter + 1) + ".ckpt");
    }
    res.checkpoint_path = save("final.ckpt");
    write_loss_csv(out_dir + "/loss_trace.csv", res.trace, 1);
    return res;
}

void write_loss_csv(const std::string& path, const std::vector<LossTerms>& trace, int log_every) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.precision(12);
    f << "iter,total,denoising,graph\n";
    for (std::size_t i = 0; i < trace.size(); i += static_cast<std::size_t>(log_every))
        f << i << "," << trace[i].total << "," << trace[i].denoising << "," << trace[i].graph << "\n";
    if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace vseg
