#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace sdkd {

// Dense row-major tensor of doubles. The whole compute core runs in double
// precision; 32-bit floats appear only at the serialization boundary.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape, double fill = 0.0);
    Tensor(std::initializer_list<int> shape, double fill = 0.0);

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // indexed access for the common ranks
    double& at(int a, int b) { return data_[static_cast<size_t>(a) * shape_[1] + b]; }
    double at(int a, int b) const { return data_[static_cast<size_t>(a) * shape_[1] + b]; }
    double& at(int a, int b, int c) {
        return data_[(static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c];
    }
    double at(int a, int b, int c) const {
        return data_[(static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c];
    }
    double& at(int a, int b, int c, int d) {
        return data_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }
    double at(int a, int b, int c, int d) const {
        return data_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }

    // view with a new shape over the same data (size must match)
    Tensor reshaped(std::vector<int> new_shape) const;

    void fill(double v);
    bool all_finite() const;
    double max_abs() const;
    double min_value() const;
    double max_value() const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_str() const;

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

// elementwise helpers used outside the autograd tape
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);

double sum(const Tensor& a);
double sum_sq(const Tensor& a);
double mean(const Tensor& a);

}  // namespace sdkd
