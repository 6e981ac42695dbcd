#include "vseg/inference.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "vseg/data_pipeline.hpp"
#include "vseg/metrics.hpp"

namespace vseg {

SampleResult sample_chain(const NoisePredictor& predict, const NoiseSchedule& sched, int h, int w,
                          std::uint64_t seed, int steps) {
    if (steps != sched.T)
        throw std::invalid_argument("sample: step count does not match the trained schedule (" +
                                    std::to_string(steps) + " vs T=" + std::to_string(sched.T) + ")");
    Rng rng(seed);
    Tensor x = rng.normal_tensor({h, w});
    for (int t = sched.T; t >= 1; --t) {
        Tensor eps_hat = predict(x, t);
        Tensor z = t > 1 ? rng.normal_tensor(x.shape()) : Tensor();
        x = posterior_step(x, eps_hat, t, sched, z);
        if (!x.all_finite())
            throw std::runtime_error("sample: non-finite state at t=" + std::to_string(t));
    }
    SampleResult r;
    r.signal = x;
    r.mask = signal_to_mask(x);
    r.seed = seed;
    r.steps = steps;
    return r;
}

SampleResult sample(const GuidedDiffusionModel& model, const NoiseSchedule& sched,
                    const ConditionBlock& c, const GraphContext* ctx, std::uint64_t seed,
                    int steps) {
    c.validate();
    auto predict = [&](const Tensor& x_t, int t) {
        auto out = model.denoise_step(x_t, c, t, ctx);
        return out.eps_hat->value.reshaped({c.height(), c.width()});
    };
    return sample_chain(predict, sched, c.height(), c.width(), seed, steps);
}

Tensor majority_vote(const std::vector<Tensor>& masks) {
    if (masks.empty()) throw std::invalid_argument("ensemble: empty seed list");
    Tensor out(masks.front().shape());
    int k = static_cast<int>(masks.size());
    for (std::int64_t i = 0; i < out.size(); ++i) {
        int votes = 0;
        for (const auto& m : masks) {
            if (!m.same_shape(out)) throw std::invalid_argument("ensemble: mask shape mismatch");
            votes += m[i] >= 0.5 ? 1 : 0;
        }
        out[i] = 2 * votes >= k ? 1.0 : 0.0;  // ties go to foreground
    }
    return out;
}

Tensor ensemble(const GuidedDiffusionModel& model, const NoiseSchedule& sched,
                const ConditionBlock& c, const GraphContext* ctx,
                const std::vector<std::uint64_t>& seeds, int steps) {
    if (seeds.empty()) throw std::invalid_argument("ensemble: empty seed list");
    std::vector<Tensor> masks;
    masks.reserve(seeds.size());
    for (std::uint64_t s : seeds) masks.push_back(sample(model, sched, c, ctx, s, steps).mask);
    return majority_vote(masks);
}

GraphMode parse_graph_mode(const std::string& s) {
    if (s == "full") return GraphMode::Full;
    if (s == "empty") return GraphMode::Empty;
    if (s == "knn") return GraphMode::Knn;
    throw std::invalid_argument("graph mode must be full, empty, or knn");
}

Volume predict_volume(const GuidedDiffusionModel& model, const NoiseSchedule& sched,
                      const Volume& ct_norm, const PredictOptions& opts,
                      Volume* mean_signal_out) {
    if (opts.seeds.empty()) throw std::invalid_argument("predict: empty seed list");
    std::unique_ptr<GraphContext> ctx;
    if (model.tier() == Tier::ABC) {
        std::array<int, 3> shape{3, ct_norm.ny(), ct_norm.nx()};
        switch (opts.graph_mode) {
            case GraphMode::Full: ctx = std::make_unique<GraphContext>(full_graph(opts.node_grid, shape)); break;
            case GraphMode::Empty: ctx = std::make_unique<GraphContext>(empty_graph(opts.node_grid, shape)); break;
            case GraphMode::Knn:
                ctx = std::make_unique<GraphContext>(knn_graph(opts.node_grid, shape, opts.knn_k));
                break;
        }
    }
    Volume pred(ct_norm.nz(), ct_norm.ny(), ct_norm.nx());
    pred.spacing = ct_norm.spacing;
    Volume mean_signal = pred;
    std::int64_t plane = static_cast<std::int64_t>(ct_norm.ny()) * ct_norm.nx();
    for (int s = 1; s <= ct_norm.nz() - 2; ++s) {
        ConditionBlock c = condition_block_at(ct_norm, s);
        std::vector<Tensor> masks;
        Tensor acc({ct_norm.ny(), ct_norm.nx()});
        for (std::uint64_t seed : opts.seeds) {
            std::uint64_t chain_seed = seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(s + 1));
            auto r = sample(model, sched, c, ctx.get(), chain_seed, opts.steps);
            masks.push_back(r.mask);
            for (std::int64_t i = 0; i < acc.size(); ++i) acc[i] += r.signal[i];
        }
        Tensor voted = majority_vote(masks);
        for (std::int64_t i = 0; i < plane; ++i) {
            pred[s * plane + i] = voted[i];
            mean_signal[s * plane + i] = acc[i] / static_cast<double>(opts.seeds.size());
        }
    }
    if (opts.postprocess) pred = remove_small_components(pred, opts.postprocess_frac);
    if (mean_signal_out) *mean_signal_out = mean_signal;
    return pred;
}

Volume rescale(const Volume& v, int target_h, int target_w) {
    if (target_h <= 0 || target_w <= 0) throw std::invalid_argument("rescale: non-positive target");
    if (target_h == v.ny() && target_w == v.nx()) return v;
    return v.is_binary() ? resize_inplane_nearest(v, target_h, target_w)
                         : resize_inplane_bilinear(v, target_h, target_w);
}

Volume remove_small_components(const Volume& mask3d, double frac) {
    if (!mask3d.is_binary()) throw std::invalid_argument("remove_small_components: non-binary mask");
    auto comps = connected_components26(mask3d);
    if (comps.count() == 0) return mask3d;
    std::int64_t largest = 0;
    for (auto s : comps.sizes) largest = std::max(largest, s);
    double cutoff = frac * static_cast<double>(largest);
    Volume out = mask3d;
    for (std::int64_t i = 0; i < out.size(); ++i) {
        int label = comps.labels[static_cast<std::size_t>(i)];
        if (label > 0 && static_cast<double>(comps.sizes[static_cast<std::size_t>(label - 1)]) < cutoff)
            out[i] = 0.0;
    }
    return out;
}

}  // namespace vseg
