#include "ftea/tensor.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ftea {

namespace {
size_t checked_numel(const std::vector<int>& dims) {
    if (dims.empty()) throw std::invalid_argument("Tensor: rank must be >= 1");
    size_t n = 1;
    for (int d : dims) {
        if (d <= 0) throw std::invalid_argument("Tensor: nonpositive extent " + std::to_string(d));
        n *= static_cast<size_t>(d);
    }
    return n;
}
}  // namespace

Tensor::Tensor(std::vector<int> dims) : dims_(std::move(dims)), data_(checked_numel(dims_), 0.0) {}

Tensor::Tensor(std::vector<int> dims, std::vector<double> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
    if (checked_numel(dims_) != data_.size())
        throw std::invalid_argument("Tensor: dims " + dims_str() + " do not match data length " +
                                    std::to_string(data_.size()));
}

Tensor Tensor::full(std::vector<int> dims, double value) {
    Tensor t(std::move(dims));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string Tensor::dims_str() const {
    std::string s = "[";
    for (size_t i = 0; i < dims_.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(dims_[i]);
    }
    return s + "]";
}

}  // namespace ftea
