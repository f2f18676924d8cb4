#include "frontal/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace frontal {

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    long n = shape_size(shape_);
    if (n < 0) throw std::invalid_argument("Tensor: negative dimension in " + shape_str(shape_));
    data_.assign(static_cast<size_t>(n), 0.0);
}

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int> shape, double value) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = value;
    return t;
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values) {
    if (shape_size(shape) != static_cast<long>(values.size()))
        throw std::invalid_argument("Tensor::from: " + std::to_string(values.size()) +
                                    " values for shape " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

double Tensor::item() const {
    if (data_.size() != 1)
        throw std::logic_error("Tensor::item on tensor of shape " + shape_str());
    return data_[0];
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
    if (shape_size(shape) != size())
        throw std::invalid_argument("reshape " + shape_str() + " -> " + shape_str(shape));
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
}

std::string Tensor::shape_str() const { return shape_str(shape_); }

std::string Tensor::shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

long Tensor::shape_size(const std::vector<int>& shape) {
    long n = 1;
    for (int d : shape) {
        if (d < 0) return -1;
        n *= d;
    }
    return n;
}

}  // namespace frontal
