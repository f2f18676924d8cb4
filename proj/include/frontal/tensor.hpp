#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace frontal {

// Dense row-major tensor of doubles, rank <= 4. Image batches use the
// [batch, channel, height, width] convention with values in [0,1].
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double value);
    static Tensor scalar(double value);
    static Tensor from(std::vector<int> shape, std::vector<double> values);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    long size() const { return static_cast<long>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](long i) { return data_[static_cast<size_t>(i)]; }
    double operator[](long i) const { return data_[static_cast<size_t>(i)]; }

    // Element access for rank-4 tensors.
    double& at(int b, int c, int h, int w) { return data_[static_cast<size_t>(index(b, c, h, w))]; }
    double at(int b, int c, int h, int w) const { return data_[static_cast<size_t>(index(b, c, h, w))]; }
    long index(int b, int c, int h, int w) const {
        return ((static_cast<long>(b) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    double item() const;  // value of a single-element tensor

    Tensor reshaped(std::vector<int> shape) const;

    std::string shape_str() const;
    static std::string shape_str(const std::vector<int>& shape);
    static long shape_size(const std::vector<int>& shape);

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

}  // namespace frontal
