#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "vseg/core/tensor.hpp"

namespace vseg {

// Reverse-mode autodiff over Tensor. Nodes form a DAG; creation order is a
// valid topological order, so backward() walks reachable nodes by id.
struct AgNode {
    Tensor value;
    Tensor grad;  // allocated lazily on first accumulation
    bool requires_grad = false;
    std::int64_t id = 0;
    std::vector<std::shared_ptr<AgNode>> parents;
    std::function<void(AgNode&)> backprop;  // pulls this->grad into parents

    void accumulate(const Tensor& g);
    Tensor& ensure_grad();
};

using Var = std::shared_ptr<AgNode>;

Var make_leaf(Tensor value, bool requires_grad);
Var make_constant(Tensor value);

// Runs reverse accumulation from a scalar (size-1) loss node.
void backward(const Var& loss);
void zero_grad(const std::vector<Var>& params);

// ---- elementwise / scalar ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var silu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var sigmoid_v(const Var& a);
Var reshape(const Var& a, std::vector<int> shape);

// ---- reductions / losses ----
Var sum(const Var& a);
Var mean(const Var& a);
Var mse_loss(const Var& pred, const Var& target);
// Mean binary cross-entropy with probability clamping; labels in {0,1}.
Var bce_loss(const Var& probs, const Tensor& labels, double clamp_eps);

// ---- dense layers ----
// x: [M,I], w: [O,I], optional bias [O] -> [M,O]
Var linear(const Var& x, const Var& w, const Var& b);
Var linear_nobias(const Var& x, const Var& w);

// ---- conv / image ops (no batch dim; tensors are [C,H,W]) ----
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int groups);
Var upsample_nearest2(const Var& x);
Var concat_channels(const Var& a, const Var& b);
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps);
// bias: [C] broadcast over H,W
Var add_bias_chw(const Var& x, const Var& bias);

// ---- node/graph ops ----
// x: [M,p] ++ [M,q] -> [M,p+q]
Var concat_cols(const Var& a, const Var& b);
// rows scaled by constant per-row weights: out[m,:] = s[m] * x[m,:]
Var row_scale(const Var& x, const Tensor& s);
// out[m,:] = x[idx[m],:]
Var gather_rows(const Var& x, const std::vector<int>& idx);
// vol: [C,D,H,W]; integer lattice coords (z,y,x) per row -> [M,C]
Var gather_cells3d(const Var& vol, const std::vector<std::array<int, 3>>& cells);
// [G*c,H,W] -> [c,G,H,W] (channel groups become the depth axis)
Var regroup_to_depth(const Var& x, int gcount);
// Scatter node vectors into a [C,H,W] grid by flat cell index (sum per cell).
Var scatter_nodes_grid(const Var& x, const std::vector<int>& cell, int h, int w);

// Directed edge structure for attention: edges sorted by destination node,
// seg[i]..seg[i+1] indexes the incoming edges of node i.
struct DirectedAdjacency {
    std::vector<int> src;
    std::vector<int> dst;
    std::vector<int> seg;  // size n_nodes+1
    int n_nodes = 0;
    int n_edges() const { return static_cast<int>(src.size()); }
};

// Attention ops hold the adjacency by shared pointer: one structure serves
// every scale and timestep without copies.
using AdjPtr = std::shared_ptr<const DirectedAdjacency>;

// Per-edge logits s_e = a . leaky_relu(U[src_e] + U[dst_e]); U: [N,d], a: [d].
Var gat_edge_logits(const Var& u, const Var& a, const AdjPtr& adj, double slope);
// Same but standard GATv2 concat variant: s_e = a . lrelu(Ul[dst] + Ur[src])
// (two half-projections replace W[f_i || f_j]).
Var gat_edge_logits2(const Var& ul, const Var& ur, const Var& a,
                     const AdjPtr& adj, double slope);
// Softmax over each destination segment.
Var segment_softmax(const Var& logits, const AdjPtr& adj);
// out[i] = sum over incoming edges e of alpha_e * U[src_e].
Var edge_aggregate(const Var& alpha, const Var& u, const AdjPtr& adj);

}  // namespace vseg
