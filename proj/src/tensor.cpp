#include "stainfocus/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace stainfocus {

std::size_t element_count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int extent : shape) {
        if (extent < 0) throw std::invalid_argument("negative tensor extent in " + stainfocus::shape_string(shape));
        n *= static_cast<std::size_t>(extent);
    }
    return shape.empty() ? 0 : n;
}

std::string shape_string(const std::vector<int>& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
    out << ']';
    return out.str();
}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != element_count(shape_)) {
        throw std::invalid_argument("tensor value count " + std::to_string(data_.size()) +
                                    " does not match shape " + stainfocus::shape_string(shape_));
    }
}

int Tensor::dim(int axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank()) throw std::out_of_range("tensor axis out of range");
    return shape_[static_cast<std::size_t>(axis)];
}

int Tensor::cols() const noexcept {
    if (shape_.empty()) return 0;
    if (shape_.size() == 1) return 1;
    int c = 1;
    for (std::size_t i = 1; i < shape_.size(); ++i) c *= shape_[i];
    return c;
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
    if (element_count(shape) != data_.size()) {
        throw std::invalid_argument("cannot reshape " + stainfocus::shape_string(shape_) + " to " + stainfocus::shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

std::string Tensor::shape_string() const { return stainfocus::shape_string(shape_); }

}  // namespace stainfocus
