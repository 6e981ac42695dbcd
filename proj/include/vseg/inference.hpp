#pragma once

#include <string>
#include <vector>

#include "vseg/graph_conditioning.hpp"
#include "vseg/model.hpp"

namespace vseg {

struct SampleResult {
    Tensor signal;  // pre-threshold real grid (the {-1,+1}-range chain output)
    Tensor mask;    // thresholded central-slice mask
    std::uint64_t seed = 0;
    int steps = 0;
};

using NoisePredictor = std::function<Tensor(const Tensor& x_t, int t)>;

// Full reverse chain from Gaussian noise. `steps` must match the trained
// schedule: there is no step-skipping sampler.
SampleResult sample_chain(const NoisePredictor& predict, const NoiseSchedule& sched, int h, int w,
                          std::uint64_t seed, int steps);

// Reverse chain with fused conditioning from the model at every step.
SampleResult sample(const GuidedDiffusionModel& model, const NoiseSchedule& sched,
                    const ConditionBlock& c, const GraphContext* ctx, std::uint64_t seed,
                    int steps);

// Per-voxel majority vote over seeds; ties resolve to foreground.
Tensor ensemble(const GuidedDiffusionModel& model, const NoiseSchedule& sched,
                const ConditionBlock& c, const GraphContext* ctx,
                const std::vector<std::uint64_t>& seeds, int steps);
Tensor majority_vote(const std::vector<Tensor>& masks);

enum class GraphMode { Full, Empty, Knn };
GraphMode parse_graph_mode(const std::string& s);

struct PredictOptions {
    std::vector<std::uint64_t> seeds{0};
    int steps = 0;  // must equal the schedule T
    GraphMode graph_mode = GraphMode::Full;
    int knn_k = 8;
    GridSpec node_grid{3, 32, 32};
    bool postprocess = true;
    double postprocess_frac = 0.01;
};

// Segments every central slice of a preprocessed CT volume: per-slice reverse
// chains (ensembled over seeds), assembled into a 3D mask, optional
// small-component removal. Border slices without a full 2.5D block stay empty.
Volume predict_volume(const GuidedDiffusionModel& model, const NoiseSchedule& sched,
                      const Volume& ct_norm, const PredictOptions& opts,
                      Volume* mean_signal_out = nullptr);

// Rescale to the target resolution: nearest-neighbor for binary grids,
// bilinear for probability grids.
Volume rescale(const Volume& v, int target_h, int target_w);

// Deletes every 26-connected region smaller than frac x the largest region.
Volume remove_small_components(const Volume& mask3d, double frac = 0.01);

}  // namespace vseg
