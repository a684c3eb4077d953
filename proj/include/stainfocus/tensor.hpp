#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace stainfocus {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// Dense row-major double tensor. Shapes are small vectors of positive extents.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0);
    Tensor(std::vector<int> shape, std::vector<double> values);

    static Tensor scalar(double value) { return Tensor({1}, value); }

    [[nodiscard]] const std::vector<int>& shape() const noexcept { return shape_; }
    [[nodiscard]] int rank() const noexcept { return static_cast<int>(shape_.size()); }
    [[nodiscard]] int dim(int axis) const;
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    [[nodiscard]] double* data() noexcept { return data_.data(); }
    [[nodiscard]] const double* data() const noexcept { return data_.data(); }
    [[nodiscard]] std::span<double> values() noexcept { return data_; }
    [[nodiscard]] std::span<const double> values() const noexcept { return data_; }
    [[nodiscard]] const std::vector<double>& storage() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    // 2-D view: rows = dim(0), cols = product of the remaining extents.
    [[nodiscard]] int rows() const noexcept { return shape_.empty() ? 0 : shape_[0]; }
    [[nodiscard]] int cols() const noexcept;
    [[nodiscard]] MatrixMap matrix() noexcept { return {data_.data(), rows(), cols()}; }
    [[nodiscard]] ConstMatrixMap matrix() const noexcept { return {data_.data(), rows(), cols()}; }

    [[nodiscard]] Tensor reshaped(std::vector<int> shape) const;
    [[nodiscard]] bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
    void fill(double value);
    [[nodiscard]] std::string shape_string() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

std::size_t element_count(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

}  // namespace stainfocus
