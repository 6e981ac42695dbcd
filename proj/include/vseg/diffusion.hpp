#pragma once

#include <string>
#include <vector>

#include "vseg/core/tensor.hpp"

namespace vseg {

// Forward-process variance schedule: beta_t and cumulative alpha_bar_t for
// t in [1,T] (stored 0-indexed at t-1).
struct NoiseSchedule {
    int T = 0;
    double beta_start = 0.0, beta_end = 0.0;
    std::vector<double> beta;
    std::vector<double> alpha_bar;

    double beta_at(int t) const;       // t in [1,T]
    double alpha_bar_at(int t) const;  // t in [1,T]
    void validate() const;

    std::string to_kv() const;
    static NoiseSchedule from_kv(const std::string& text);
};

struct NoisyState {
    Tensor x_t;
    int t = 0;
    Tensor eps;  // the Gaussian draw used (retained during training)
};

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end);

// x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps
NoisyState forward_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

// x_{t-1} = (x_t - beta_t/sqrt(1-abar_t) eps_hat)/sqrt(1-beta_t) + sqrt(beta_t) z
Tensor posterior_step(const Tensor& x_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched,
                      const Tensor& z);
Tensor posterior_step_deterministic(const Tensor& x_t, const Tensor& eps_hat, int t,
                                    const NoiseSchedule& sched);

// mean squared error
double denoising_loss(const Tensor& eps_true, const Tensor& eps_hat);
// d(loss)/d(eps_hat), elementwise
Tensor denoising_loss_grad(const Tensor& eps_true, const Tensor& eps_hat);

// {0,1} mask <-> {-1,+1} diffusion value range
Tensor mask_to_signal(const Tensor& mask01);
Tensor signal_to_mask(const Tensor& signal);  // threshold at 0

}  // namespace vseg
