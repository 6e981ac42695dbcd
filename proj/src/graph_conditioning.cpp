#include "vseg/graph_conditioning.hpp"

#include <cmath>
#include <stdexcept>

namespace vseg {

LiifGeometry liif_geometry(const VesselGraph& g, int d, int h, int w) {
    LiifGeometry geom;
    geom.n_nodes = g.n_nodes();
    geom.corners.reserve(static_cast<std::size_t>(geom.n_nodes) * 8);
    geom.weights.reserve(static_cast<std::size_t>(geom.n_nodes) * 8);
    geom.offsets.reserve(static_cast<std::size_t>(geom.n_nodes) * 8);
    const std::array<int, 3> sizes{d, h, w};
    for (int i = 0; i < geom.n_nodes; ++i) {
        auto u = g.normalized_pos(i);
        std::array<int, 3> lo;
        std::array<double, 3> frac;
        for (int a = 0; a < 3; ++a) {
            if (u[a] < -1.0 - 1e-9 || u[a] > 1.0 + 1e-9)
                throw std::invalid_argument("liif: node outside [-1,1]^3");
            int n = sizes[a];
            if (n == 1) {
                lo[a] = 0;
                frac[a] = 0.0;
                continue;
            }
            double idx = (std::clamp(u[a], -1.0, 1.0) + 1.0) * 0.5 * (n - 1);
            int base = std::min(static_cast<int>(std::floor(idx)), n - 2);
            lo[a] = base;
            frac[a] = idx - base;
        }
        for (int b = 0; b < 8; ++b) {
            int bz = (b >> 2) & 1, by = (b >> 1) & 1, bx = b & 1;
            std::array<int, 3> corner{std::min(lo[0] + bz, sizes[0] - 1),
                                      std::min(lo[1] + by, sizes[1] - 1),
                                      std::min(lo[2] + bx, sizes[2] - 1)};
            // opposing-volume weight: per axis (1-t) for the low corner, t for the high
            double wgt = (bz ? frac[0] : 1.0 - frac[0]) * (by ? frac[1] : 1.0 - frac[1]) *
                         (bx ? frac[2] : 1.0 - frac[2]);
            // collapsed axes contribute a zero-weight duplicate corner
            if (sizes[0] == 1 && bz) wgt = 0.0;
            if (sizes[1] == 1 && by) wgt = 0.0;
            if (sizes[2] == 1 && bx) wgt = 0.0;
            geom.corners.push_back(corner);
            geom.weights.push_back(wgt);
            geom.offsets.push_back({frac[0] - bz, frac[1] - by, frac[2] - bx});
        }
    }
    return geom;
}

const LiifGeometry& GraphContext::geometry(int d, int h, int w) const {
    std::array<int, 3> key{d, h, w};
    auto it = geom_.find(key);
    if (it == geom_.end()) it = geom_.emplace(key, liif_geometry(graph, d, h, w)).first;
    return it->second;
}

Var liif_integrate(const Var& level, const LiifGeometry& geom, const nn::Linear& lfi,
                   int slice_groups) {
    if (geom.n_nodes == 0) throw std::invalid_argument("liif: empty node set");
    Var vol = regroup_to_depth(level, slice_groups);  // [c, D, H, W]
    const int n = geom.n_nodes;
    Var acc;
    for (int b = 0; b < 8; ++b) {
        std::vector<std::array<int, 3>> cells(static_cast<std::size_t>(n));
        Tensor wgts({n});
        Tensor offs({n, 3});
        for (int i = 0; i < n; ++i) {
            cells[static_cast<std::size_t>(i)] = geom.corners[static_cast<std::size_t>(i) * 8 + b];
            wgts[i] = geom.weights[static_cast<std::size_t>(i) * 8 + b];
            for (int a = 0; a < 3; ++a)
                offs[static_cast<std::int64_t>(i) * 3 + a] =
                    geom.offsets[static_cast<std::size_t>(i) * 8 + b][static_cast<std::size_t>(a)];
        }
        Var sampled = gather_cells3d(vol, cells);                      // [n, c]
        Var with_pos = concat_cols(sampled, make_constant(offs));      // [n, c+3]
        Var term = row_scale(lfi(with_pos), wgts);                     // [n, d]
        acc = acc ? add(acc, term) : term;
    }
    return acc;
}

GraphAttentionLayer::GraphAttentionLayer(nn::ParamRegistry& reg, Rng& rng, const std::string& name,
                                         int in_dim, int attn_dim, double slope_, bool concat_mode_)
    : slope(slope_), concat_mode(concat_mode_) {
    w = nn::Linear(reg, rng, name + ".w", in_dim, attn_dim, false);
    if (concat_mode) w_right = nn::Linear(reg, rng, name + ".wr", in_dim, attn_dim, false);
    attn_vec = reg.create(name + ".a", nn::kaiming_init(rng, {attn_dim}, attn_dim));
}

AttentionOut gatv2_attention(const Var& feats, const AdjPtr& adj,
                             const GraphAttentionLayer& layer) {
    if (feats->value.dim(0) != adj->n_nodes)
        throw std::invalid_argument("gatv2: feature rows != node count");
    AttentionOut out;
    if (!layer.concat_mode) {
        Var u = linear_nobias(feats, layer.w.w);
        Var logits = gat_edge_logits(u, layer.attn_vec, adj, layer.slope);
        out.alpha = segment_softmax(logits, adj);
        out.features = edge_aggregate(out.alpha, u, adj);
    } else {
        Var ul = linear_nobias(feats, layer.w.w);
        Var ur = linear_nobias(feats, layer.w_right.w);
        Var logits = gat_edge_logits2(ul, ur, layer.attn_vec, adj, layer.slope);
        out.alpha = segment_softmax(logits, adj);
        out.features = edge_aggregate(out.alpha, ur, adj);
    }
    return out;
}

Var multiscale_concat(const std::vector<Var>& per_scale) {
    if (per_scale.empty()) throw std::invalid_argument("multiscale_concat: no scales");
    Var out = per_scale.front();
    for (std::size_t k = 1; k < per_scale.size(); ++k) {
        if (per_scale[k]->value.dim(0) != out->value.dim(0))
            throw std::invalid_argument("multiscale_concat: node count mismatch across scales");
        out = concat_cols(out, per_scale[k]);
    }
    return out;
}

Var graph_loss(const Var& probs, const std::vector<std::uint8_t>& labels) {
    Tensor lab({static_cast<int>(labels.size())});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] > 1) throw std::invalid_argument("graph_loss: label outside {0,1}");
        lab[static_cast<std::int64_t>(i)] = labels[i];
    }
    return bce_loss(probs, lab, kGraphLossClamp);
}

FusedCondition fuse(const Var& f_c_bottleneck, const Var& node_feats, const VesselGraph& g) {
    if (f_c_bottleneck->value.ndim() != 3)
        throw std::invalid_argument("fuse: bottleneck must be [C,H,W]");
    int cb = f_c_bottleneck->value.dim(0);
    int hb = f_c_bottleneck->value.dim(1), wb = f_c_bottleneck->value.dim(2);
    if (node_feats->value.ndim() != 2 || node_feats->value.dim(1) != cb)
        throw std::invalid_argument("fuse: node feature channels do not match the bottleneck");
    std::vector<int> cells(static_cast<std::size_t>(g.n_nodes()));
    for (int i = 0; i < g.n_nodes(); ++i) {
        auto u = g.normalized_pos(i);
        int cy = static_cast<int>(std::llround((u[1] + 1.0) * 0.5 * (hb - 1)));
        int cx = static_cast<int>(std::llround((u[2] + 1.0) * 0.5 * (wb - 1)));
        cells[static_cast<std::size_t>(i)] =
            std::clamp(cy, 0, hb - 1) * wb + std::clamp(cx, 0, wb - 1);
    }
    // mean per cell: nodes sharing a cell (the 3 slices at matched resolution)
    // average instead of summing, keeping the grid on the feature scale
    std::vector<int> count(static_cast<std::size_t>(hb) * wb, 0);
    for (int c : cells) ++count[static_cast<std::size_t>(c)];
    Tensor inv({g.n_nodes()});
    for (int i = 0; i < g.n_nodes(); ++i)
        inv[i] = 1.0 / count[static_cast<std::size_t>(cells[static_cast<std::size_t>(i)])];
    FusedCondition fc;
    fc.f_v_grid = scatter_nodes_grid(row_scale(node_feats, inv), cells, hb, wb);
    fc.fused = add(f_c_bottleneck, fc.f_v_grid);
    return fc;
}

GraphConditioner::GraphConditioner(nn::ParamRegistry& reg, Rng& rng, const ModelConfig& cfg)
    : cfg_(cfg) {
    auto scales = cfg.effective_scales();
    for (std::size_t s = 0; s < scales.size(); ++s) {
        int k = scales[s];
        int per_slice = cfg.cond_channels(k) / 3;
        lfi_.push_back(nn::Linear(reg, rng, "gc.lfi" + std::to_string(k), per_slice + 3,
                                  cfg.liif_dim, true));
        gat_.push_back(GraphAttentionLayer(reg, rng, "gc.gat" + std::to_string(k), cfg.liif_dim,
                                           cfg.attn_dim, cfg.leaky_slope, cfg.gatv2_concat));
    }
    int fv_dim = cfg.attn_dim * static_cast<int>(scales.size());
    head_ = nn::Linear(reg, rng, "gc.head", fv_dim, 1, true);
    out_proj_ = nn::Linear(reg, rng, "gc.proj", fv_dim, cfg.cond_channels(cfg.depths - 1), true);
}

GraphConditioner::Output GraphConditioner::forward(const FeaturePyramid& pyr,
                                                   const GraphContext& ctx) const {
    auto scales = cfg_.effective_scales();
    if (pyr.depth() != cfg_.depths)
        throw std::invalid_argument("graph conditioner: pyramid depth mismatch");
    Output out;
    std::vector<Var> per_scale;
    for (std::size_t s = 0; s < scales.size(); ++s) {
        const Var& level = pyr.levels[static_cast<std::size_t>(scales[s])];
        const auto& geom = ctx.geometry(3, level->value.dim(1), level->value.dim(2));
        Var fhat = liif_integrate(level, geom, lfi_[s]);
        auto att = gatv2_attention(fhat, ctx.adj, gat_[s]);
        per_scale.push_back(att.features);
        out.alphas.push_back(att.alpha);
    }
    out.f_v = multiscale_concat(per_scale);
    Var logits = head_(out.f_v);
    out.node_probs = reshape(sigmoid_v(logits), {out.f_v->value.dim(0)});
    Var projected = out_proj_(out.f_v);
    out.fused = fuse(pyr.bottleneck(), projected, ctx.graph);
    return out;
}

}  // namespace vseg
