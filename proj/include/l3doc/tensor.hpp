#pragma once

#include <cstddef>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace l3doc {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Every extent is positive and the element count always equals the product
/// of the extents. A scalar is represented with shape {1}.
class Tensor {
public:
    Tensor() : shape_{1}, data_(1, 0.0) {}
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }
    static Tensor vector(std::initializer_list<double> values);
    /// i.i.d. normal(mean, stddev) entries drawn from `rng`.
    static Tensor normal(Shape shape, double mean, double stddev, std::mt19937_64& rng);

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
    [[nodiscard]] std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool is_scalar() const noexcept { return data_.size() == 1; }

    [[nodiscard]] std::span<double> data() noexcept { return data_; }
    [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
    [[nodiscard]] const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::initializer_list<std::size_t> index);
    [[nodiscard]] double at(std::initializer_list<std::size_t> index) const;

    [[nodiscard]] double item() const;

    /// Same data viewed under a different shape with identical element count.
    [[nodiscard]] Tensor reshaped(Shape shape) const;

    [[nodiscard]] bool all_finite() const noexcept;
    void fill(double v);

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    [[nodiscard]] std::size_t offset(std::initializer_list<std::size_t> index) const;

    Shape shape_;
    std::vector<double> data_;
};

[[nodiscard]] double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace l3doc
