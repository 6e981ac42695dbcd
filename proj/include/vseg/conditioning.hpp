#pragma once

#include <array>
#include <string>
#include <vector>

#include "vseg/config.hpp"
#include "vseg/core/nn.hpp"

namespace vseg {

// Three consecutive CT slices (2.5D block), channel-stacked, already
// clipped/normalized by the data pipeline.
struct ConditionBlock {
    Tensor slices;  // [3,H,W]
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    int center_index = 0;

    int height() const { return slices.dim(1); }
    int width() const { return slices.dim(2); }
    void validate() const;
};

// Per-timestep multiscale conditioning features, one grid per encoder depth.
// Level k has spatial size input/2^k.
struct FeaturePyramid {
    std::vector<Var> levels;
    int t = 0;

    int depth() const { return static_cast<int>(levels.size()); }
    const Var& bottleneck() const { return levels.back(); }
};

struct ModelConfig {
    int depths = 4;
    int base_width = 32;   // denoiser channels at depth 0, doubling per depth
    int cond_width = 8;    // conditioning encoder channels per slice at depth 0
    int temb_dim = 64;
    int gn_groups = 4;
    int liif_dim = 16;     // local-feature-integration output dim per scale
    int attn_dim = 16;     // graph-attention output dim per scale
    double leaky_slope = 0.2;
    bool gatv2_concat = false;  // concat combination instead of the additive one
    bool merge_noisy_all_depths = true;
    bool fuse_all_depths = false;  // inject the fused condition at every decoder depth
    std::vector<int> scales;  // pyramid levels feeding the graph branch; empty = all

    std::vector<int> effective_scales() const;
    int denoiser_width(int depth) const { return base_width << depth; }
    int cond_channels(int depth) const { return 3 * (cond_width << depth); }

    void to_config(Config& c) const;
    static ModelConfig from_config(const Config& c);
};

// Component (A): the denoising UNet over [noisy mask || 3 CT slices].
class DenoiserNet {
public:
    DenoiserNet() = default;
    DenoiserNet(nn::ParamRegistry& reg, Rng& rng, const ModelConfig& cfg);

    // Encoder features per depth for one noisy input; these are the "noisy
    // features" the conditioning encoder merges.
    std::vector<Var> encode(const Var& x4, int t) const;
    // Decoder from encoder features; fused may be null (tier A).
    Var decode(const std::vector<Var>& enc, int t, const Var& fused) const;

    int input_channels() const { return 4; }

private:
    Var temb_stage(int t, int stage_channels, const nn::Linear& proj) const;

    ModelConfig cfg_;
    nn::Conv2d stem_;
    struct Stage {
        nn::Conv2d c1, c2;
        nn::GroupNorm n1, n2;
        nn::Linear temb;
    };
    std::vector<Stage> enc_;
    std::vector<nn::Conv2d> down_;
    std::vector<nn::Conv2d> up_;  // post-upsample channel reduction
    std::vector<Stage> dec_;
    nn::Conv2d head_;
    nn::Linear temb_fc1_, temb_fc2_;
    nn::Conv2d fuse_proj_;  // conditioning channels -> bottleneck channels
    std::vector<nn::Conv2d> fuse_dec_;  // per-decoder-depth injection (config-gated)
};

// Component (B): dynamic conditioning encoder. Grouped convolutions keep the
// three slices in separate channel groups; noisy features from (A) are merged
// in through 1x1 projections so the embedding adapts over time.
class DynamicEncoderNet {
public:
    DynamicEncoderNet() = default;
    DynamicEncoderNet(nn::ParamRegistry& reg, Rng& rng, const ModelConfig& cfg);

    FeaturePyramid forward(const ConditionBlock& c, int t, const std::vector<Var>& noisy_feats) const;

    // first grouped stage only, exposed for the slice-separation contract
    Var stem(const Var& slices) const;

private:
    ModelConfig cfg_;
    nn::Conv2d stem_;  // groups=3, no bias
    struct Stage {
        nn::Conv2d c1, c2;
        nn::GroupNorm n1, n2;
    };
    std::vector<Stage> stages_;
    std::vector<nn::Conv2d> down_;
    std::vector<nn::Conv2d> merge_;  // (A) depth-k channels -> (B) depth-k channels
};

}  // namespace vseg
