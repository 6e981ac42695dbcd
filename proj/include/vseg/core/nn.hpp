#pragma once

#include <map>
#include <string>
#include <vector>

#include "vseg/core/autograd.hpp"
#include "vseg/core/tensor.hpp"

namespace vseg::nn {

// Named parameter table. Leaves live here across iterations; graphs reference
// them, the optimizer mutates their values in place.
class ParamRegistry {
public:
    Var create(const std::string& name, Tensor init);
    Var get(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    const std::vector<std::pair<std::string, Var>>& entries() const { return params_; }
    std::vector<Var> vars() const;
    std::int64_t total_size() const;
    void zero_grads();

private:
    std::vector<std::pair<std::string, Var>> params_;
    std::map<std::string, std::size_t> index_;
};

Tensor kaiming_init(Rng& rng, std::vector<int> shape, int fan_in);

struct Conv2d {
    Var w, b;  // b may be null
    int stride = 1, pad = 1, groups = 1;

    Conv2d() = default;
    Conv2d(ParamRegistry& reg, Rng& rng, const std::string& name, int cin, int cout, int k,
           int stride, int pad, int groups, bool bias);
    Var operator()(const Var& x) const { return conv2d(x, w, b, stride, pad, groups); }
};

struct Linear {
    Var w, b;  // b may be null

    Linear() = default;
    Linear(ParamRegistry& reg, Rng& rng, const std::string& name, int in, int out, bool bias);
    Var operator()(const Var& x) const { return linear(x, w, b); }
};

struct GroupNorm {
    Var gamma, beta;
    int groups = 1;
    double eps = 1e-5;

    GroupNorm() = default;
    GroupNorm(ParamRegistry& reg, const std::string& name, int channels, int groups);
    Var operator()(const Var& x) const { return group_norm(x, gamma, beta, groups, eps); }
};

// Sinusoidal position encoding of an integer timestep.
Tensor sinusoidal_embedding(int t, int dim);

// Decoupled weight decay Adam.
class AdamW {
public:
    AdamW(std::vector<Var> params, double lr, double weight_decay,
          double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step();
    void zero_grad() { vseg::zero_grad(params_); }
    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

private:
    std::vector<Var> params_;
    std::vector<Tensor> m_, v_;
    double lr_, wd_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
};

}  // namespace vseg::nn
