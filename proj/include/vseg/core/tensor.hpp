#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace vseg {

// Dense double-precision n-d array, row-major.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, double fill);
    Tensor(std::vector<int> shape, std::vector<double> data);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, double v) { return Tensor(std::move(shape), v); }
    static Tensor scalar(double v) { return Tensor({1}, v); }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const;
    int ndim() const { return static_cast<int>(shape_.size()); }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    Tensor reshaped(std::vector<int> shape) const;
    void fill(double v);
    bool all_finite() const;
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    std::string shape_str() const;

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

std::int64_t shape_numel(const std::vector<int>& shape);

// Seeded stream of randoms. Each consumer forks its own stream so draw order
// in one component cannot perturb another.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    double normal() { return normal_(eng_); }
    double uniform() { return uniform_(eng_); }
    // inclusive bounds
    int uniform_int(int lo, int hi) {
        return std::uniform_int_distribution<int>(lo, hi)(eng_);
    }
    std::uint64_t raw() { return eng_(); }

    Tensor normal_tensor(std::vector<int> shape);
    Tensor uniform_tensor(std::vector<int> shape, double lo, double hi);

    Rng fork(std::uint64_t stream) {
        return Rng(eng_() ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
    }

private:
    std::mt19937_64 eng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace vseg
