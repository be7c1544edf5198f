#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace paracolor::nn {

using Shape = std::vector<int>;

std::int64_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. Image tensors use NCHW layout.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double value);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    int dim(std::size_t axis) const { return shape_.at(axis); }
    std::int64_t size() const noexcept { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const noexcept { return data_.empty(); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // NCHW element access; the tensor must be rank 4.
    double& at(int n, int c, int y, int x);
    double at(int n, int c, int y, int x) const;

    double item() const;

    Tensor reshaped(Shape shape) const&;
    Tensor reshaped(Shape shape) &&;

    void fill(double value);
    void add_(const Tensor& other);
    void scale_(double factor);

    bool all_finite() const noexcept;

private:
    Shape shape_;
    std::vector<double> data_;
};

}  // namespace paracolor::nn
