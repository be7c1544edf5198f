#include "paracolor/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "paracolor/error.hpp"

namespace paracolor::nn {

std::int64_t element_count(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw UsageError("negative tensor dimension in " + shape_string(shape));
        n *= d;
    }
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(element_count(shape_)), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (element_count(shape_) != static_cast<std::int64_t>(data_.size()))
        throw UsageError("tensor data size does not match shape " + shape_string(shape_));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, value); }

double& Tensor::at(int n, int c, int y, int x) {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
}

double Tensor::at(int n, int c, int y, int x) const {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
}

double Tensor::item() const {
    if (data_.size() != 1) throw UsageError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const& {
    Tensor copy = *this;
    return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
    if (element_count(shape) != size())
        throw UsageError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    shape_ = std::move(shape);
    return std::move(*this);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::add_(const Tensor& other) {
    if (other.size() != size()) throw UsageError("add_: size mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

void Tensor::scale_(double factor) {
    for (double& v : data_) v *= factor;
}

bool Tensor::all_finite() const noexcept {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace paracolor::nn
