#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace ftea {

// Dense row-major array of doubles. Dims are positive extents; the flat
// data length always equals the product of dims.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> dims);
    Tensor(std::vector<int> dims, std::vector<double> data);

    static Tensor full(std::vector<int> dims, double value);
    static Tensor scalar(double value) { return Tensor({1}, {value}); }

    int rank() const { return static_cast<int>(dims_.size()); }
    int dim(int i) const { return dims_[static_cast<size_t>(i)]; }
    const std::vector<int>& dims() const { return dims_; }
    long long numel() const { return static_cast<long long>(data_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    double& operator[](long long i) { return data_[static_cast<size_t>(i)]; }
    double operator[](long long i) const { return data_[static_cast<size_t>(i)]; }

    // rank-3 [C,H,W] accessors
    double& at3(int c, int h, int w) {
        return data_[(static_cast<size_t>(c) * dims_[1] + h) * dims_[2] + w];
    }
    double at3(int c, int h, int w) const {
        return data_[(static_cast<size_t>(c) * dims_[1] + h) * dims_[2] + w];
    }
    // rank-2 [R,C] accessors
    double& at2(int r, int c) { return data_[static_cast<size_t>(r) * dims_[1] + c]; }
    double at2(int r, int c) const { return data_[static_cast<size_t>(r) * dims_[1] + c]; }

    bool same_dims(const Tensor& other) const { return dims_ == other.dims_; }
    bool all_finite() const;
    std::string dims_str() const;

private:
    std::vector<int> dims_;
    std::vector<double> data_;
};

}  // namespace ftea
