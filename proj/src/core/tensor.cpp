#include "vseg/core/tensor.hpp"

#include <cmath>
#include <sstream>

namespace vseg {

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("negative tensor dimension");
        n *= d;
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), 0.0) {}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size()))
        throw std::invalid_argument("tensor shape does not match data size");
}

int Tensor::dim(int i) const {
    if (i < 0 || i >= ndim()) throw std::out_of_range("tensor dim index");
    return shape_[static_cast<std::size_t>(i)];
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
    if (shape_numel(shape) != size())
        throw std::invalid_argument("reshape changes element count");
    Tensor out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
}

void Tensor::fill(double v) {
    for (auto& x : data_) x = v;
}

bool Tensor::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ")";
    return os.str();
}

Tensor Rng::normal_tensor(std::vector<int> shape) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = normal();
    return t;
}

Tensor Rng::uniform_tensor(std::vector<int> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = lo + (hi - lo) * uniform();
    return t;
}

}  // namespace vseg
