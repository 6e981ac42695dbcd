#pragma once

#include <map>
#include <vector>

#include "vseg/conditioning.hpp"
#include "vseg/core/nn.hpp"
#include "vseg/vessel_graph.hpp"

namespace vseg {

// Interpolation geometry of graph nodes against one feature lattice: the 8
// enclosing corners per node with their opposing-volume weights (sum 1) and
// cell-local offsets. Degenerate axes collapse onto a single plane.
struct LiifGeometry {
    int n_nodes = 0;
    std::vector<std::array<int, 3>> corners;    // 8 per node, (z,y,x) lattice coords
    std::vector<double> weights;                // 8 per node
    std::vector<std::array<double, 3>> offsets; // node minus corner, in cell units
};

LiifGeometry liif_geometry(const VesselGraph& g, int d, int h, int w);

// A graph plus everything reusable across timesteps: attention adjacency and
// per-resolution interpolation geometry.
struct GraphContext {
    VesselGraph graph;
    AdjPtr adj;

    explicit GraphContext(VesselGraph g) : graph(std::move(g)), adj(build_adjacency_ptr(graph)) {}
    const LiifGeometry& geometry(int d, int h, int w) const;

private:
    mutable std::map<std::array<int, 3>, LiifGeometry> geom_;
};

// Local feature integration: samples the grouped slice features at each
// node's enclosing lattice corners, embeds the relative offsets, and blends
// with the opposing-volume weights.
Var liif_integrate(const Var& level, const LiifGeometry& geom, const nn::Linear& lfi,
                   int slice_groups = 3);

struct GraphAttentionLayer {
    nn::Linear w;        // shared projection (no bias)
    nn::Linear w_right;  // second projection, concat variant only
    Var attn_vec;
    double slope = 0.2;
    bool concat_mode = false;

    GraphAttentionLayer() = default;
    GraphAttentionLayer(nn::ParamRegistry& reg, Rng& rng, const std::string& name, int in_dim,
                        int attn_dim, double slope, bool concat_mode);
};

struct AttentionOut {
    Var features;  // [N, attn_dim]
    Var alpha;     // [E] attention coefficient per directed edge
};

AttentionOut gatv2_attention(const Var& feats, const AdjPtr& adj,
                             const GraphAttentionLayer& layer);

// Per-node concatenation across scales.
Var multiscale_concat(const std::vector<Var>& per_scale);

// Binary cross-entropy over per-node probabilities, clamped at 1e-7.
Var graph_loss(const Var& probs, const std::vector<std::uint8_t>& labels);
constexpr double kGraphLossClamp = 1e-7;

struct FusedCondition {
    Var fused;      // f_c bottleneck + scattered node features
    Var f_v_grid;   // the scattered node-feature grid alone
};

// Scatter projected node features onto the bottleneck grid (nearest cell,
// summed per cell) and add them to the conditioning bottleneck.
FusedCondition fuse(const Var& f_c_bottleneck, const Var& node_feats, const VesselGraph& g);

// Component (C): multiscale graph-attention conditioning.
class GraphConditioner {
public:
    GraphConditioner() = default;
    GraphConditioner(nn::ParamRegistry& reg, Rng& rng, const ModelConfig& cfg);

    struct Output {
        FusedCondition fused;
        Var node_probs;           // [N]
        Var f_v;                  // [N, attn_dim * n_scales]
        std::vector<Var> alphas;  // per configured scale
    };

    Output forward(const FeaturePyramid& pyr, const GraphContext& ctx) const;

private:
    ModelConfig cfg_;
    std::vector<nn::Linear> lfi_;
    std::vector<GraphAttentionLayer> gat_;
    nn::Linear head_;
    nn::Linear out_proj_;
};

}  // namespace vseg
