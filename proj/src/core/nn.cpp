#include "vseg/core/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace vseg::nn {

Var ParamRegistry::create(const std::string& name, Tensor init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    Var v = make_leaf(std::move(init), true);
    index_[name] = params_.size();
    params_.emplace_back(name, v);
    return v;
}

Var ParamRegistry::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return params_[it->second].second;
}

std::vector<Var> ParamRegistry::vars() const {
    std::vector<Var> out;
    out.reserve(params_.size());
    for (auto& [n, v] : params_) out.push_back(v);
    return out;
}

std::int64_t ParamRegistry::total_size() const {
    std::int64_t n = 0;
    for (auto& [_, v] : params_) n += v->value.size();
    return n;
}

void ParamRegistry::zero_grads() {
    for (auto& [_, v] : params_)
        if (!v->grad.empty()) v->grad.fill(0.0);
}

Tensor kaiming_init(Rng& rng, std::vector<int> shape, int fan_in) {
    double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    Tensor t = rng.normal_tensor(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] *= std;
    return t;
}

namespace {

Tensor bias_init(Rng& rng, int n, int fan_in) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return rng.uniform_tensor({n}, -bound, bound);
}

}  // namespace

Conv2d::Conv2d(ParamRegistry& reg, Rng& rng, const std::string& name, int cin, int cout, int k,
               int stride_, int pad_, int groups_, bool bias)
    : stride(stride_), pad(pad_), groups(groups_) {
    int cg = cin / groups_;
    w = reg.create(name + ".w", kaiming_init(rng, {cout, cg, k, k}, cg * k * k));
    if (bias) b = reg.create(name + ".b", bias_init(rng, cout, cg * k * k));
}

Linear::Linear(ParamRegistry& reg, Rng& rng, const std::string& name, int in, int out, bool bias) {
    w = reg.create(name + ".w", kaiming_init(rng, {out, in}, in));
    if (bias) b = reg.create(name + ".b", bias_init(rng, out, in));
}

GroupNorm::GroupNorm(ParamRegistry& reg, const std::string& name, int channels, int groups_)
    : groups(groups_) {
    gamma = reg.create(name + ".g", Tensor::full({channels}, 1.0));
    beta = reg.create(name + ".b", Tensor::zeros({channels}));
}

Tensor sinusoidal_embedding(int t, int dim) {
    Tensor e({1, dim});
    int half = dim / 2;
    for (int k = 0; k < half; ++k) {
        double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
        e[k] = std::sin(t * freq);
        e[half + k] = std::cos(t * freq);
    }
    return e;
}

AdamW::AdamW(std::vector<Var> params, double lr, double weight_decay, double beta1, double beta2,
             double eps)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(Tensor::zeros(p->value.shape()));
        v_.emplace_back(Tensor::zeros(p->value.shape()));
    }
}

void AdamW::step() {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (p->grad.empty()) continue;
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::int64_t k = 0; k < p->value.size(); ++k) {
            double g = p->grad[k];
            m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
            v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
            double mhat = m[k] / bc1;
            double vhat = v[k] / bc2;
            p->value[k] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * p->value[k]);
        }
    }
}

}  // namespace vseg::nn
