#pragma once

#include <memory>
#include <string>

#include "vseg/conditioning.hpp"
#include "vseg/diffusion.hpp"
#include "vseg/graph_conditioning.hpp"

namespace vseg {

// Cumulative ablation tiers: (A) vanilla conditioning only, (A+B) dynamic
// conditioning, (A+B+C) multiscale graph-attention conditioning.
enum class Tier { A, AB, ABC };

Tier parse_tier(const std::string& s);
std::string tier_name(Tier t);

class GuidedDiffusionModel {
public:
    GuidedDiffusionModel(const ModelConfig& cfg, Tier tier, std::uint64_t init_seed);

    struct StepOutput {
        Var eps_hat;                  // [1,H,W]
        Var node_probs;               // [N], only for tier ABC
        std::vector<Var> alphas;      // per-scale edge attention, tier ABC
    };

    // One reverse-process network evaluation. ctx must be provided for tier
    // ABC and may be null otherwise.
    StepOutput denoise_step(const Tensor& x_t, const ConditionBlock& c, int t,
                            const GraphContext* ctx) const;

    // The conditioning pyramid alone (component B), exposed for inspection.
    FeaturePyramid embed_condition(const ConditionBlock& c, int t, const std::vector<Var>& noisy_feats) const;
    const DenoiserNet& denoiser() const { return den_; }
    const DynamicEncoderNet& encoder() const { return enc_; }
    const GraphConditioner& graph_conditioner() const { return gc_; }

    nn::ParamRegistry& params() { return reg_; }
    const nn::ParamRegistry& params() const { return reg_; }
    const ModelConfig& config() const { return cfg_; }
    Tier tier() const { return tier_; }
    std::uint64_t init_seed() const { return init_seed_; }

private:
    ModelConfig cfg_;
    Tier tier_;
    std::uint64_t init_seed_;
    nn::ParamRegistry reg_;
    DenoiserNet den_;
    DynamicEncoderNet enc_;
    GraphConditioner gc_;
};

// Self-describing checkpoint: canonical config text (model, tier, schedule,
// anything the caller added) followed by every named parameter tensor.
void save_checkpoint(const std::string& path, const GuidedDiffusionModel& model,
                     const Config& extra);

struct Checkpoint {
    Config config;
    std::unique_ptr<GuidedDiffusionModel> model;
    NoiseSchedule schedule;
};

Checkpoint load_checkpoint(const std::string& path);

// Schedule <-> config keys (schedule.T, schedule.beta_start, schedule.beta_end)
void schedule_to_config(const NoiseSchedule& s, Config& c);
NoiseSchedule schedule_from_config(const Config& c);

}  // namespace vseg
