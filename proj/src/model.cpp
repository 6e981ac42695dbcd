#include "vseg/model.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace vseg {

Tier parse_tier(const std::string& s) {
    if (s == "A" || s == "a") return Tier::A;
    if (s == "AB" || s == "ab") return Tier::AB;
    if (s == "ABC" || s == "abc") return Tier::ABC;
    throw std::invalid_argument("tier must be one of A, AB, ABC");
}

std::string tier_name(Tier t) {
    switch (t) {
        case Tier::A: return "A";
        case Tier::AB: return "AB";
        case Tier::ABC: return "ABC";
    }
    return "?";
}

GuidedDiffusionModel::GuidedDiffusionModel(const ModelConfig& cfg, Tier tier, std::uint64_t init_seed)
    : cfg_(cfg), tier_(tier), init_seed_(init_seed) {
    Rng rng(init_seed);
    den_ = DenoiserNet(reg_, rng, cfg_);
    enc_ = DynamicEncoderNet(reg_, rng, cfg_);
    gc_ = GraphConditioner(reg_, rng, cfg_);
}

FeaturePyramid GuidedDiffusionModel::embed_condition(const ConditionBlock& c, int t,
                                                     const std::vector<Var>& noisy_feats) const {
    if (t < 1) throw std::out_of_range("embed_condition: t must be >= 1");
    return enc_.forward(c, t, noisy_feats);
}

GuidedDiffusionModel::StepOutput GuidedDiffusionModel::denoise_step(const Tensor& x_t,
                                                                    const ConditionBlock& c, int t,
                                                                    const GraphContext* ctx) const {
    c.validate();
    if (x_t.ndim() != 2 || x_t.dim(0) != c.height() || x_t.dim(1) != c.width())
        throw std::invalid_argument("denoise_step: x_t is not aligned with the condition block");
    int div = 1 << (cfg_.depths - 1);
    if (x_t.dim(0) % div != 0 || x_t.dim(1) % div != 0)
        throw std::invalid_argument("denoise_step: spatial size must divide 2^(depths-1)");
    if (t < 1) throw std::out_of_range("denoise_step: t must be >= 1");
    if (tier_ == Tier::ABC && ctx == nullptr)
        throw std::invalid_argument("denoise_step: graph conditioning enabled but no graph given");

    Var x = make_constant(x_t.reshaped({1, x_t.dim(0), x_t.dim(1)}));
    Var x4 = concat_channels(x, make_constant(c.slices));
    std::vector<Var> enc_feats = den_.encode(x4, t);

    StepOutput out;
    Var fused;
    if (tier_ != Tier::A) {
        FeaturePyramid pyr = enc_.forward(c, t, enc_feats);
        if (tier_ == Tier::ABC) {
            auto gout = gc_.forward(pyr, *ctx);
            fused = gout.fused.fused;
            out.node_probs = gout.node_probs;
            out.alphas = std::move(gout.alphas);
        } else {
            fused = pyr.bottleneck();
        }
    }
    out.eps_hat = den_.decode(enc_feats, t, fused);
    return out;
}

void schedule_to_config(const NoiseSchedule& s, Config& c) {
    c.set_int("schedule.T", s.T);
    c.set_double("schedule.beta_start", s.beta_start);
    c.set_double("schedule.beta_end", s.beta_end);
}

NoiseSchedule schedule_from_config(const Config& c) {
    return make_linear_schedule(c.get_int("schedule.T", 1000),
                                c.get_double("schedule.beta_start", 1e-4),
                                c.get_double("schedule.beta_end", 0.02));
}

namespace {
constexpr char kMagic[8] = {'V', 'S', 'E', 'G', 'C', 'K', 'P', '1'};
}

void save_checkpoint(const std::string& path, const GuidedDiffusionModel& model,
                     const Config& extra) {
    Config c = extra;
    model.config().to_config(c);
    c.set("model.tier", tier_name(model.tier()));
    c.set("model.init_seed", std::to_string(model.init_seed()));
    std::string text = c.to_text();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write checkpoint " + path);
    f.write(kMagic, 8);
    std::uint64_t tl = text.size();
    f.write(reinterpret_cast<const char*>(&tl), 8);
    f.write(text.data(), static_cast<std::streamsize>(tl));
    std::uint64_t np = model.params().entries().size();
    f.write(reinterpret_cast<const char*>(&np), 8);
    for (const auto& [name, var] : model.params().entries()) {
        std::uint64_t nl = name.size();
        f.write(reinterpret_cast<const char*>(&nl), 8);
        f.write(name.data(), static_cast<std::streamsize>(nl));
        std::uint32_t nd = static_cast<std::uint32_t>(var->value.ndim());
        f.write(reinterpret_cast<const char*>(&nd), 4);
        for (int d = 0; d < var->value.ndim(); ++d) {
            std::int32_t dim = var->value.dim(d);
            f.write(reinterpret_cast<const char*>(&dim), 4);
        }
        f.write(reinterpret_cast<const char*>(var->value.data()),
                var->value.size() * static_cast<std::int64_t>(sizeof(double)));
    }
    if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error(path + ": not a checkpoint file");
    std::uint64_t tl = 0;
    f.read(reinterpret_cast<char*>(&tl), 8);
    std::string text(tl, '\0');
    f.read(text.data(), static_cast<std::streamsize>(tl));

    Checkpoint ck;
    ck.config = Config::parse(text);
    ck.schedule = schedule_from_config(ck.config);
    ModelConfig mc = ModelConfig::from_config(ck.config);
    Tier tier = parse_tier(ck.config.get_str("model.tier", "ABC"));
    std::uint64_t seed = std::stoull(ck.config.get_str("model.init_seed", "0"));
    ck.model = std::make_unique<GuidedDiffusionModel>(mc, tier, seed);

    std::uint64_t np = 0;
    f.read(reinterpret_cast<char*>(&np), 8);
    for (std::uint64_t p = 0; p < np; ++p) {
        std::uint64_t nl = 0;
        f.read(reinterpret_cast<char*>(&nl), 8);
        std::string name(nl, '\0');
        f.read(name.data(), static_cast<std::streamsize>(nl));
        std::uint32_t nd = 0;
        f.read(reinterpret_cast<char*>(&nd), 4);
        std::vector<int> shape(nd);
        for (auto& d : shape) {
            std::int32_t dim = 0;
            f.read(reinterpret_cast<char*>(&dim), 4);
            d = dim;
        }
        Var var = ck.model->params().get(name);
        if (var->value.shape() != shape)
            throw std::runtime_error(path + ": parameter shape mismatch for " + name);
        f.read(reinterpret_cast<char*>(var->value.data()),
               var->value.size() * static_cast<std::int64_t>(sizeof(double)));
    }
    if (!f) throw std::runtime_error(path + ": truncated checkpoint");
    return ck;
}

}  // namespace vseg
