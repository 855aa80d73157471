#include "fooloc/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "fooloc/error.hpp"

namespace fooloc {

std::size_t shape_size(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape)
{
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? ", " : "") << shape[i];
    }
    out << ']';
    return out.str();
}

Tensor::Tensor(Shape shape, double fill)
  : shape_(std::move(shape))
  , data_(shape_size(shape_), fill)
{ }

Tensor::Tensor(Shape shape, std::vector<double> data)
  : shape_(std::move(shape))
  , data_(std::move(data))
{
    if (shape_size(shape_) != data_.size()) {
        throw ContractError("tensor shape " + shape_string(shape_) + " does not match " +
                            std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::scalar(double value)
{
    return Tensor(Shape{}, std::vector<double>{value});
}

Tensor Tensor::vector(std::vector<double> values)
{
    const std::size_t n = values.size();
    return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
{
    return Tensor(Shape{rows, cols}, std::move(values));
}

std::size_t Tensor::dim(std::size_t axis) const
{
    require(axis < shape_.size(), "axis " + std::to_string(axis) + " out of range for shape " +
                                      shape_string(shape_));
    return shape_[axis];
}

double& Tensor::at(std::size_t row, std::size_t col)
{
    return data_[row * shape_.back() + col];
}

double Tensor::at(std::size_t row, std::size_t col) const
{
    return data_[row * shape_.back() + col];
}

double Tensor::item() const
{
    require(data_.size() == 1, "item() needs a single-element tensor, got shape " +
                                   shape_string(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const
{
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const
{
    for (double v : data_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

} // namespace fooloc
