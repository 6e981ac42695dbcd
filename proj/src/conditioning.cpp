#include "vseg/conditioning.hpp"

#include <sstream>
#include <stdexcept>

namespace vseg {

void ConditionBlock::validate() const {
    if (slices.ndim() != 3 || slices.dim(0) != 3)
        throw std::invalid_argument("condition block must be [3,H,W]");
    if (!slices.all_finite()) throw std::invalid_argument("condition block has non-finite values");
}

std::vector<int> ModelConfig::effective_scales() const {
    if (!scales.empty()) {
        for (int s : scales)
            if (s < 0 || s >= depths) throw std::invalid_argument("scale index out of range");
        return scales;
    }
    std::vector<int> all(static_cast<std::size_t>(depths));
    for (int k = 0; k < depths; ++k) all[static_cast<std::size_t>(k)] = k;
    return all;
}

void ModelConfig::to_config(Config& c) const {
    c.set_int("model.depths", depths);
    c.set_int("model.base_width", base_width);
    c.set_int("model.cond_width", cond_width);
    c.set_int("model.temb_dim", temb_dim);
    c.set_int("model.gn_groups", gn_groups);
    c.set_int("model.liif_dim", liif_dim);
    c.set_int("model.attn_dim", attn_dim);
    c.set_double("model.leaky_slope", leaky_slope);
    c.set_bool("model.gatv2_concat", gatv2_concat);
    c.set_bool("model.merge_noisy_all_depths", merge_noisy_all_depths);
    c.set_bool("model.fuse_all_depths", fuse_all_depths);
    std::ostringstream sc;
    for (std::size_t i = 0; i < scales.size(); ++i) sc << (i ? "," : "") << scales[i];
    c.set("model.scales", scales.empty() ? "all" : sc.str());
}

ModelConfig ModelConfig::from_config(const Config& c) {
    ModelConfig m;
    m.depths = c.get_int("model.depths", m.depths);
    m.base_width = c.get_int("model.base_width", m.base_width);
    m.cond_width = c.get_int("model.cond_width", m.cond_width);
    m.temb_dim = c.get_int("model.temb_dim", m.temb_dim);
    m.gn_groups = c.get_int("model.gn_groups", m.gn_groups);
    m.liif_dim = c.get_int("model.liif_dim", m.liif_dim);
    m.attn_dim = c.get_int("model.attn_dim", m.attn_dim);
    m.leaky_slope = c.get_double("model.leaky_slope", m.leaky_slope);
    m.gatv2_concat = c.get_bool("model.gatv2_concat", m.gatv2_concat);
    m.merge_noisy_all_depths = c.get_bool("model.merge_noisy_all_depths", m.merge_noisy_all_depths);
    m.fuse_all_depths = c.get_bool("model.fuse_all_depths", m.fuse_all_depths);
    std::string sc = c.get_str("model.scales", "all");
    if (sc != "all") {
        std::istringstream is(sc);
        std::string tok;
        while (std::getline(is, tok, ',')) m.scales.push_back(std::stoi(tok));
    }
    if (m.depths < 2) throw std::invalid_argument("model.depths must be >= 2");
    return m;
}

// ---------------------------------------------------------------------------
// Component (A)
// ---------------------------------------------------------------------------

DenoiserNet::DenoiserNet(nn::ParamRegistry& reg, Rng& rng, const ModelConfig& cfg) : cfg_(cfg) {
    int w0 = cfg.base_width;
    stem_ = nn::Conv2d(reg, rng, "den.stem", 4, w0, 3, 1, 1, 1, true);
    int temb_hidden = 2 * cfg.temb_dim;
    temb_fc1_ = nn::Linear(reg, rng, "den.temb1", cfg.temb_dim, temb_hidden, true);
    temb_fc2_ = nn::Linear(reg, rng, "den.temb2", temb_hidden, temb_hidden, true);
    for (int k = 0; k < cfg.depths; ++k) {
        int w = cfg.denoiser_width(k);
        std::string p = "den.enc" + std::to_string(k);
        Stage s;
        s.c1 = nn::Conv2d(reg, rng, p + ".c1", w, w, 3, 1, 1, 1, true);
        s.c2 = nn::Conv2d(reg, rng, p + ".c2", w, w, 3, 1, 1, 1, true);
        s.c2.w->value.fill(0.0);  // residual branch starts at zero
        s.c2.b->value.fill(0.0);
        s.n1 = nn::GroupNorm(reg, p + ".n1", w, cfg.gn_groups);
        s.n2 = nn::GroupNorm(reg, p + ".n2", w, cfg.gn_groups);
        s.temb = nn::Linear(reg, rng, p + ".temb", temb_hidden, w, true);
        enc_.push_back(s);
        if (k + 1 < cfg.depths)
            down_.push_back(nn::Conv2d(reg, rng, "den.down" + std::to_string(k), w,
                                       cfg.denoiser_width(k + 1), 3, 2, 1, 1, true));
    }
    for (int k = cfg.depths - 2; k >= 0; --k) {
        int w = cfg.denoiser_width(k);
        std::string p = "den.dec" + std::to_string(k);
        up_.push_back(nn::Conv2d(reg, rng, p + ".up", cfg.denoiser_width(k + 1), w, 3, 1, 1, 1, true));
        Stage s;
        s.c1 = nn::Conv2d(reg, rng, p + ".c1", 2 * w, w, 3, 1, 1, 1, true);
        s.c2 = nn::Conv2d(reg, rng, p + ".c2", w, w, 3, 1, 1, 1, true);
        s.c2.w->value.fill(0.0);
        s.c2.b->value.fill(0.0);
        s.n1 = nn::GroupNorm(reg, p + ".n1", 2 * w, cfg.gn_groups);
        s.n2 = nn::GroupNorm(reg, p + ".n2", w, cfg.gn_groups);
        s.temb = nn::Linear(reg, rng, p + ".temb", temb_hidden, w, true);
        dec_.push_back(s);
    }
    head_ = nn::Conv2d(reg, rng, "den.head", w0, 1, 3, 1, 1, 1, true);
    head_.w->value.fill(0.0);  // identity-like start for the reverse process
    head_.b->value.fill(0.0);
    int cond_bott = cfg.cond_channels(cfg.depths - 1);
    fuse_proj_ = nn::Conv2d(reg, rng, "den.fuse", cond_bott, cfg.denoiser_width(cfg.depths - 1), 1,
                            1, 0, 1, true);
    if (cfg.fuse_all_depths)
        for (int k = cfg.depths - 2; k >= 0; --k)
            fuse_dec_.push_back(nn::Conv2d(reg, rng, "den.fusedec" + std::to_string(k), cond_bott,
                                           cfg.denoiser_width(k), 1, 1, 0, 1, true));
}

Var DenoiserNet::temb_stage(int t, int /*stage_channels*/, const nn::Linear& proj) const {
    Var e = make_constant(nn::sinusoidal_embedding(t, cfg_.temb_dim));
    Var h = silu(temb_fc1_(e));
    h = silu(temb_fc2_(h));
    Var out = proj(h);  // [1, C]
    return reshape(out, {out->value.dim(1)});
}

std::vector<Var> DenoiserNet::encode(const Var& x4, int t) const {
    if (x4->value.ndim() != 3 || x4->value.dim(0) != 4)
        throw std::invalid_argument("denoiser input must be [4,H,W]");
    std::vector<Var> feats;
    Var h = stem_(x4);
    for (int k = 0; k < cfg_.depths; ++k) {
        const Stage& s = enc_[static_cast<std::size_t>(k)];
        Var r = s.c1(silu(s.n1(h)));
        r = add_bias_chw(r, temb_stage(t, 0, s.temb));
        r = s.c2(silu(s.n2(r)));
        h = add(h, r);  // residual around each stage
        feats.push_back(h);
        if (k + 1 < cfg_.depths) h = down_[static_cast<std::size_t>(k)](h);
    }
    return feats;
}

Var DenoiserNet::decode(const std::vector<Var>& enc, int t, const Var& fused) const {
    if (static_cast<int>(enc.size()) != cfg_.depths)
        throw std::invalid_argument("decode: feature count != depths");
    Var h = enc.back();
    if (fused) h = add(h, fuse_proj_(fused));
    Var fused_up = fused;
    for (int i = 0; i < cfg_.depths - 1; ++i) {
        int k = cfg_.depths - 2 - i;
        h = up_[static_cast<std::size_t>(i)](upsample_nearest2(h));
        Var cat = concat_channels(h, enc[static_cast<std::size_t>(k)]);
        const Stage& s = dec_[static_cast<std::size_t>(i)];
        Var r = s.c1(silu(s.n1(cat)));
        r = add_bias_chw(r, temb_stage(t, 0, s.temb));
        r = s.c2(silu(s.n2(r)));
        h = add(h, r);
        if (cfg_.fuse_all_depths && fused) {
            fused_up = upsample_nearest2(fused_up);
            h = add(h, fuse_dec_[static_cast<std::size_t>(i)](fused_up));
        }
    }
    return head_(h);  // [1,H,W]
}

// ---------------------------------------------------------------------------
// Component (B)
// ---------------------------------------------------------------------------

DynamicEncoderNet::DynamicEncoderNet(nn::ParamRegistry& reg, Rng& rng, const ModelConfig& cfg)
    : cfg_(cfg) {
    // stem is bias-free so a zeroed slice yields an exactly-zero channel group
    stem_ = nn::Conv2d(reg, rng, "cond.stem", 3, cfg.cond_channels(0), 3, 1, 1, 3, false);
    for (int k = 0; k < cfg.depths; ++k) {
        int w = cfg.cond_channels(k);
        std::string p = "cond.s" + std::to_string(k);
        Stage s;
        s.c1 = nn::Conv2d(reg, rng, p + ".c1", w, w, 3, 1, 1, 3, true);
        s.c2 = nn::Conv2d(reg, rng, p + ".c2", w, w, 3, 1, 1, 3, true);
        s.c2.w->value.fill(0.0);
        s.c2.b->value.fill(0.0);
        s.n1 = nn::GroupNorm(reg, p + ".n1", w, 3);
        s.n2 = nn::GroupNorm(reg, p + ".n2", w, 3);
        stages_.push_back(s);
        if (k + 1 < cfg.depths)
            down_.push_back(nn::Conv2d(reg, rng, "cond.down" + std::to_string(k), w,
                                       cfg.cond_channels(k + 1), 3, 2, 1, 3, true));
        merge_.push_back(nn::Conv2d(reg, rng, "cond.merge" + std::to_string(k),
                                    cfg.denoiser_width(k), w, 1, 1, 0, 1, true));
    }
}

Var DynamicEncoderNet::stem(const Var& slices) const { return silu(stem_(slices)); }

FeaturePyramid DynamicEncoderNet::forward(const ConditionBlock& c, int t,
                                          const std::vector<Var>& noisy_feats) const {
    c.validate();
    if (static_cast<int>(noisy_feats.size()) != cfg_.depths)
        throw std::invalid_argument("conditioning: noisy feature depth mismatch");
    FeaturePyramid pyr;
    pyr.t = t;
    Var h = stem(make_constant(c.slices));
    for (int k = 0; k < cfg_.depths; ++k) {
        const Stage& s = stages_[static_cast<std::size_t>(k)];
        Var r = s.c1(silu(s.n1(h)));
        r = s.c2(silu(s.n2(r)));
        h = add(h, r);
        if (cfg_.merge_noisy_all_depths || k == cfg_.depths - 1)
            h = add(h, merge_[static_cast<std::size_t>(k)](noisy_feats[static_cast<std::size_t>(k)]));
        pyr.levels.push_back(h);
        if (k + 1 < cfg_.depths) h = down_[static_cast<std::size_t>(k)](h);
    }
    return pyr;
}

}  // namespace vseg
