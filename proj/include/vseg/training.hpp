#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vseg/data_pipeline.hpp"
#include "vseg/graph_conditioning.hpp"
#include "vseg/model.hpp"

namespace vseg {

struct TrainConfig {
    double lr = 1e-4;
    int batch_size = 10;
    int max_iters = 1000;
    std::uint64_t seed = 0;
    Tier tier = Tier::ABC;
    GridSpec node_grid{3, 32, 32};
    int schedule_T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    double weight_decay = 1e-2;
    double graph_loss_weight = 1.0;
    int checkpoint_every = 0;  // 0 = final only
    int log_every = 25;
    ModelConfig model;
    EdgePolicy edge_policy;

    void validate() const;
    void to_config(Config& c) const;
    static TrainConfig from_config(const Config& c);
};

// One training item: aligned mask/CT pair with its prebuilt ground-truth graph.
struct TrainItem {
    ConditionBlock cond;
    Tensor mask_center;   // [H,W] binary
    GraphContext graph;   // built from the 3-slice ground-truth mask block
};

// Loads a phantom-style dataset manifest into training items (graphs built
// once per case slice; they are immutable afterwards).
std::vector<TrainItem> load_train_items(const std::vector<DatasetCase>& cases,
                                        const PreprocessOptions& pre, const GridSpec& node_grid,
                                        const EdgePolicy& policy);

struct LossTerms {
    double total = 0, denoising = 0, graph = 0;
};

// Per-sample total loss (Eq. of the combined objective): draws (t, eps) from
// the rng, runs the enabled components, accumulates gradients into the model
// parameters at the given weight. NaN in either term raises.
LossTerms total_loss(const GuidedDiffusionModel& model, const NoiseSchedule& sched,
                     const TrainItem& item, int t, Rng& rng, double graph_weight,
                     double grad_scale);

struct TrainResult {
    std::string checkpoint_path;
    std::vector<LossTerms> trace;
    bool diverged = false;
};

using TrainLogger = std::function<void(int iter, const LossTerms&)>;

TrainResult train(const TrainConfig& cfg, const std::vector<TrainItem>& dataset,
                  const std::string& out_dir, const TrainLogger& logger = nullptr);

void write_loss_csv(const std::string& path, const std::vector<LossTerms>& trace, int log_every);

}  // namespace vseg
