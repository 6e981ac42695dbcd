#include "vseg/diffusion.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace vseg {

double NoiseSchedule::beta_at(int t) const {
    if (t < 1 || t > T) throw std::out_of_range("timestep out of [1,T]");
    return beta[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar_at(int t) const {
    if (t < 1 || t > T) throw std::out_of_range("timestep out of [1,T]");
    return alpha_bar[static_cast<std::size_t>(t - 1)];
}

void NoiseSchedule::validate() const {
    if (T < 1 || static_cast<int>(beta.size()) != T || static_cast<int>(alpha_bar.size()) != T)
        throw std::invalid_argument("schedule: bad length");
    double prod = 1.0;
    for (int i = 0; i < T; ++i) {
        double b = beta[static_cast<std::size_t>(i)];
        if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("schedule: beta outside (0,1)");
        if (i > 0 && !(b > beta[static_cast<std::size_t>(i - 1)]) && T > 1)
            throw std::invalid_argument("schedule: beta not strictly increasing");
        prod *= 1.0 - b;
        if (std::abs(alpha_bar[static_cast<std::size_t>(i)] - prod) > 1e-12)
            throw std::invalid_argument("schedule: alpha_bar inconsistent with beta");
        if (i > 0 && !(alpha_bar[static_cast<std::size_t>(i)] < alpha_bar[static_cast<std::size_t>(i - 1)]))
            throw std::invalid_argument("schedule: alpha_bar not strictly decreasing");
    }
}

std::string NoiseSchedule::to_kv() const {
    std::ostringstream os;
    os.precision(17);
    os << "T = " << T << "\n";
    os << "beta_start = " << beta_start << "\n";
    os << "beta_end = " << beta_end << "\n";
    return os.str();
}

NoiseSchedule NoiseSchedule::from_kv(const std::string& text) {
    int T = 0;
    double b0 = 0.0, b1 = 0.0;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string key, eq;
        if (!(ls >> key >> eq) || eq != "=") continue;
        if (key == "T") ls >> T;
        else if (key == "beta_start") ls >> b0;
        else if (key == "beta_end") ls >> b1;
    }
    return make_linear_schedule(T, b0, b1);
}

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw std::invalid_argument("schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start < 1.0) || !(beta_end > 0.0 && beta_end < 1.0))
        throw std::invalid_argument("schedule: endpoints must lie in (0,1)");
    if (beta_start > beta_end) throw std::invalid_argument("schedule: beta_start > beta_end");
    if (T > 1 && beta_start == beta_end)
        throw std::invalid_argument("schedule: equal endpoints give a non-increasing beta for T > 1");
    NoiseSchedule s;
    s.T = T;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.beta.resize(static_cast<std::size_t>(T));
    s.alpha_bar.resize(static_cast<std::size_t>(T));
    double prod = 1.0;
    for (int i = 0; i < T; ++i) {
        double b = T == 1 ? beta_start
                          : beta_start + (beta_end - beta_start) * static_cast<double>(i) /
                                             static_cast<double>(T - 1);
        s.beta[static_cast<std::size_t>(i)] = b;
        prod *= 1.0 - b;
        s.alpha_bar[static_cast<std::size_t>(i)] = prod;
    }
    s.validate();
    return s;
}

NoisyState forward_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    if (!x0.same_shape(eps))
        throw std::invalid_argument("forward_sample: x0/eps shape mismatch");
    double ab = sched.alpha_bar_at(t);
    double c0 = std::sqrt(ab), c1 = std::sqrt(1.0 - ab);
    NoisyState st;
    st.t = t;
    st.eps = eps;
    st.x_t = Tensor(x0.shape());
    for (std::int64_t i = 0; i < x0.size(); ++i) st.x_t[i] = c0 * x0[i] + c1 * eps[i];
    return st;
}

Tensor posterior_step(const Tensor& x_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched,
                      const Tensor& z) {
    if (!x_t.same_shape(eps_hat)) throw std::invalid_argument("posterior_step: shape mismatch");
    double b = sched.beta_at(t);
    double ab = sched.alpha_bar_at(t);
    double noise_coef = b / std::sqrt(1.0 - ab);
    double inv = 1.0 / std::sqrt(1.0 - b);
    double sigma = std::sqrt(b);
    Tensor out(x_t.shape());
    bool stochastic = !z.empty();
    if (stochastic && !z.same_shape(x_t)) throw std::invalid_argument("posterior_step: z shape mismatch");
    for (std::int64_t i = 0; i < x_t.size(); ++i) {
        double mu = (x_t[i] - noise_coef * eps_hat[i]) * inv;
        out[i] = stochastic ? mu + sigma * z[i] : mu;
    }
    return out;
}

Tensor posterior_step_deterministic(const Tensor& x_t, const Tensor& eps_hat, int t,
                                    const NoiseSchedule& sched) {
    return posterior_step(x_t, eps_hat, t, sched, Tensor());
}

double denoising_loss(const Tensor& eps_true, const Tensor& eps_hat) {
    if (!eps_true.same_shape(eps_hat)) throw std::invalid_argument("denoising_loss: shape mismatch");
    double s = 0.0;
    for (std::int64_t i = 0; i < eps_true.size(); ++i) {
        double d = eps_true[i] - eps_hat[i];
        s += d * d;
    }
    return s / static_cast<double>(eps_true.size());
}

Tensor denoising_loss_grad(const Tensor& eps_true, const Tensor& eps_hat) {
    if (!eps_true.same_shape(eps_hat)) throw std::invalid_argument("denoising_loss: shape mismatch");
    Tensor g(eps_hat.shape());
    double c = 2.0 / static_cast<double>(eps_hat.size());
    for (std::int64_t i = 0; i < eps_hat.size(); ++i) g[i] = c * (eps_hat[i] - eps_true[i]);
    return g;
}

Tensor mask_to_signal(const Tensor& mask01) {
    Tensor out = mask01;
    for (std::int64_t i = 0; i < out.size(); ++i) {
        double v = out[i];
        if (v != 0.0 && v != 1.0) throw std::invalid_argument("mask_to_signal: non-binary mask");
        out[i] = v * 2.0 - 1.0;
    }
    return out;
}

Tensor signal_to_mask(const Tensor& signal) {
    Tensor out = signal;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? 1.0 : 0.0;
    return out;
}

}  // namespace vseg
